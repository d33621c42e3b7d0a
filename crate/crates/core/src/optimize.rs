//! Derivative-free minimisation over a parameter box: Nelder-Mead in
//! unit-cube coordinates with projection onto the box, restarted from a
//! randomly shifted Halton set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{rng_from_seed, ParamBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    /// Total objective evaluations across all restarts.
    pub max_evals: usize,
    /// Simplex diameter, in unit-cube coordinates, that counts as converged.
    pub tolerance: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { max_evals: 4000, tolerance: 1e-6, n_restarts: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: [f64; 3],
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

const PRIMES: [u32; 3] = [2, 3, 5];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// Halton points `1..=n` in bases (2, 3, 5) with a Cranley-Patterson shift.
pub fn shifted_halton(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng_from_seed(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shift: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    (1..=n as u64)
        .map(|i| std::array::from_fn(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract()))
        .collect()
}

fn clamp_unit(p: [f64; 3]) -> [f64; 3] {
    p.map(|v| v.clamp(0.0, 1.0))
}

fn diameter(simplex: &[[f64; 3]; 4]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            let s: f64 = (0..3).map(|k| (simplex[i][k] - simplex[j][k]).powi(2)).sum();
            d = d.max(s.sqrt());
        }
    }
    d
}

fn affine(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    // a + t (b - a)
    std::array::from_fn(|k| a[k] + t * (b[k] - a[k]))
}

/// One Nelder-Mead run on the unit cube. `f` takes unit-cube coordinates.
fn nelder_mead_unit<F: FnMut(&[f64; 3]) -> f64>(
    f: &mut F,
    start: [f64; 3],
    tolerance: f64,
    max_evals: usize,
) -> ([f64; 3], f64, usize, bool) {
    let step = 0.1;
    let mut simplex = [start; 4];
    for k in 0..3 {
        let mut v = start;
        v[k] = if v[k] + step <= 1.0 { v[k] + step } else { v[k] - step };
        simplex[k + 1] = v;
    }
    let mut values = [0.0; 4];
    let mut evals = 0;
    for i in 0..4 {
        values[i] = f(&simplex[i]);
        evals += 1;
    }

    let mut converged = false;
    while evals < max_evals {
        // Sort ascending by value.
        let mut order = [0usize, 1, 2, 3];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        if diameter(&simplex) < tolerance {
            converged = true;
            break;
        }

        let centroid: [f64; 3] = std::array::from_fn(|k| (simplex[0][k] + simplex[1][k] + simplex[2][k]) / 3.0);
        let worst = simplex[3];

        let reflected = clamp_unit(affine(&centroid, &worst, -1.0));
        let f_r = f(&reflected);
        evals += 1;

        if f_r < values[0] {
            let expanded = clamp_unit(affine(&centroid, &worst, -2.0));
            let f_e = f(&expanded);
            evals += 1;
            if f_e < f_r {
                simplex[3] = expanded;
                values[3] = f_e;
            } else {
                simplex[3] = reflected;
                values[3] = f_r;
            }
            continue;
        }
        if f_r < values[2] {
            simplex[3] = reflected;
            values[3] = f_r;
            continue;
        }

        let (contracted, f_c) = if f_r < values[3] {
            let p = affine(&centroid, &reflected, 0.5);
            let v = f(&p);
            (p, v)
        } else {
            let p = affine(&centroid, &worst, 0.5);
            let v = f(&p);
            (p, v)
        };
        evals += 1;
        if f_c < values[3].min(f_r) {
            simplex[3] = contracted;
            values[3] = f_c;
            continue;
        }

        // Shrink toward the best vertex.
        for i in 1..4 {
            simplex[i] = affine(&simplex[0], &simplex[i], 0.5);
            values[i] = f(&simplex[i]);
            evals += 1;
        }
    }

    let best = (0..4).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    if !converged {
        converged = diameter(&simplex) < tolerance;
    }
    (simplex[best], values[best], evals, converged)
}

fn lexicographic_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    for k in 0..3 {
        match a[k].total_cmp(&b[k]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Minimises `f` (taking box coordinates) over `bounds`. Non-finite values
/// are treated as `+inf`. Ties between restarts go to the lowest value, then
/// to the lexicographically smallest point.
pub fn minimize_box<F: FnMut(&[f64; 3]) -> f64>(mut f: F, bounds: &ParamBox, settings: &OptimizerSettings) -> Minimum {
    let restarts = settings.n_restarts.max(1);
    let per_run = (settings.max_evals / restarts).max(8);
    let mut objective = |u: &[f64; 3]| {
        let v = f(&bounds.from_unit(u));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut best: Option<([f64; 3], f64, bool)> = None;
    let mut n_evals = 0;
    for start in shifted_halton(restarts, settings.seed) {
        let (u, v, evals, conv) = nelder_mead_unit(&mut objective, start, settings.tolerance, per_run);
        n_evals += evals;
        let x = bounds.from_unit(&u);
        let better = match &best {
            None => true,
            Some((bx, bv, _)) => v < *bv || (v == *bv && lexicographic_less(&x, bx)),
        };
        if better {
            best = Some((x, v, conv));
        }
    }
    let (x, value, converged) = best.expect("at least one restart");
    Minimum { x, value, n_evals, converged, restarts_used: restarts }
}
