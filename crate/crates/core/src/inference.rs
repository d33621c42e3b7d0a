//! Sandwich covariance `V^{-1} Omega V^{-T}` for the contrast estimator and
//! the resulting per-coordinate confidence intervals.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contrast::ContrastEvaluator;
use crate::error::{Error, Result};
use crate::model::ThetaCir;
use crate::quad::integrate_from_origin;
use crate::special::LFunction;

/// Relative finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Condition number above which `V` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn fd_steps(theta: &ThetaCir) -> [f64; 3] {
    theta.to_array().map(|v| FD_STEP * v.abs().max(1.0))
}

/// Shape `a` of the stationary law below which `l` is not square integrable.
const MIN_SHAPE: f64 = 0.5;

/// Difference points for one coordinate: `(f(plus) - f(minus)) / span`.
#[derive(Debug, Clone, Copy)]
struct Stencil<T> {
    plus: T,
    minus: T,
    span: f64,
}

impl<T> Stencil<T> {
    fn map<U>(&self, f: impl Fn(&T) -> U) -> Stencil<U> {
        Stencil { plus: f(&self.plus), minus: f(&self.minus), span: self.span }
    }

    fn diff(&self, f: impl Fn(&T) -> f64) -> f64 {
        (f(&self.plus) - f(&self.minus)) / self.span
    }
}

fn shape(v: &[f64; 3]) -> f64 {
    2.0 * v[0] * v[1] / v[2]
}

/// Central stencils `theta +- h_k e_k`. A stencil that would cross
/// `a = 1/2`, where `l` stops being square integrable, becomes one-sided in
/// the direction that increases `a`.
fn stencil(theta: &ThetaCir, steps: &[f64; 3]) -> Result<[Stencil<ThetaCir>; 3]> {
    let base = theta.to_array();
    if !(shape(&base) > MIN_SHAPE) {
        return Err(Error::Domain(format!("||l||^2 diverges for a = {} <= 1/2", shape(&base))));
    }
    let mut out = [Stencil { plus: *theta, minus: *theta, span: 1.0 }; 3];
    for k in 0..3 {
        let mut lo = base;
        let mut hi = base;
        lo[k] -= steps[k];
        hi[k] += steps[k];
        if lo[k] <= 0.0 {
            return Err(Error::Boundary { coord: k });
        }
        let mut span = 2.0 * steps[k];
        if shape(&lo).min(shape(&hi)) <= MIN_SHAPE {
            // a grows with kappa and mu and falls with sigma^2.
            if k == 2 {
                hi = base;
            } else {
                lo = base;
            }
            span = steps[k];
            if shape(&lo).min(shape(&hi)) <= MIN_SHAPE {
                return Err(Error::Domain(format!("no admissible stencil in coordinate {k} at a = {}", shape(&base))));
            }
        }
        out[k] = Stencil { plus: ThetaCir::from_array(hi)?, minus: ThetaCir::from_array(lo)?, span };
    }
    Ok(out)
}

fn stencil_functions(theta: &ThetaCir, delta: f64, steps: &[f64; 3]) -> Result<[Stencil<LFunction>; 3]> {
    Ok(stencil(theta, steps)?.map(|s| s.map(|th| LFunction::new(th, delta))))
}

fn difference(fs: &[Stencil<LFunction>; 3], x: f64) -> [f64; 3] {
    std::array::from_fn(|k| fs[k].diff(|l| l.eval(x)))
}

/// Finite-difference gradient of `l_theta(x)` in `theta`.
pub fn grad_l(theta: &ThetaCir, x: f64, delta: f64) -> Result<[f64; 3]> {
    grad_l_with_steps(theta, x, delta, &fd_steps(theta))
}

pub fn grad_l_with_steps(theta: &ThetaCir, x: f64, delta: f64, steps: &[f64; 3]) -> Result<[f64; 3]> {
    let fs = stencil_functions(theta, delta, steps)?;
    Ok(difference(&fs, x))
}

/// Finite-difference gradient of the closed-form `||l_theta||^2`.
pub fn grad_norm_sq(theta: &ThetaCir, delta: f64) -> Result<[f64; 3]> {
    let fs = stencil_functions(theta, delta, &fd_steps(theta))?;
    let mut g = [0.0; 3];
    for k in 0..3 {
        g[k] = (fs[k].plus.norm_sq()? - fs[k].minus.norm_sq()?) / fs[k].span;
    }
    Ok(g)
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `V_{jk} = 2 <d_j l, d_k l>` by quadrature over the stationary support.
pub fn hessian_v(theta: &ThetaCir, delta: f64) -> Result<Matrix3<f64>> {
    let fs = stencil_functions(theta, delta, &fd_steps(theta))?;
    let min_a = fs.iter().flat_map(|s| [s.plus.gamma.a, s.minus.gamma.a]).fold(f64::INFINITY, f64::min);
    let x_max = fs.iter().flat_map(|s| [s.plus.support_cutoff(), s.minus.support_cutoff()]).fold(0.0, f64::max);
    let power = (2.0 * (min_a - 1.0)).max(-0.999);
    let mut v = Matrix3::zeros();
    for j in 0..3 {
        for k in j..3 {
            let val = 2.0 * integrate_from_origin(|x| {
                let g = difference(&fs, x);
                g[j] * g[k]
            }, power, x_max);
            v[(j, k)] = val;
            v[(k, j)] = val;
        }
    }
    let v = (v + v.transpose()) * 0.5;
    let cond = condition_number(&v);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(cond));
    }
    Ok(v)
}

/// Per-pair score `s_i = grad ||l||^2 - 2 phi(y_{i+1}) u*_{grad l}(y_i)`.
pub fn score_series(theta: &ThetaCir, eval: &ContrastEvaluator) -> Result<Vec<[f64; 3]>> {
    let delta = eval.config().delta;
    let fs = stencil_functions(theta, delta, &fd_steps(theta))?;
    let grad_norm = grad_norm_sq(theta, delta)?;
    let phi = eval.phi_series();
    let mut du: Vec<Vec<f64>> = Vec::with_capacity(3);
    for k in 0..3 {
        let hi = eval.u_star_series_for(&fs[k].plus)?;
        let lo = eval.u_star_series_for(&fs[k].minus)?;
        du.push(hi.iter().zip(&lo).map(|(a, b)| (a - b) / fs[k].span).collect());
    }
    Ok((0..phi.len()).map(|i| std::array::from_fn(|k| grad_norm[k] - 2.0 * phi[i] * du[k][i])).collect())
}

/// Default Bartlett truncation lag `floor(1.2 n^{1/3})`.
pub fn default_lag(n: usize) -> usize {
    (1.2 * (n as f64).cbrt()).floor() as usize
}

/// Bartlett-weighted long-run covariance of the demeaned scores.
pub fn long_run_omega(scores: &[[f64; 3]], lag: usize) -> Result<Matrix3<f64>> {
    let n = scores.len();
    if lag >= n {
        return Err(Error::Length { needed: lag + 1, got: n });
    }
    let mean = scores.iter().fold(Vector3::zeros(), |acc, s| acc + Vector3::from(*s)) / n as f64;
    let d: Vec<Vector3<f64>> = scores.iter().map(|s| Vector3::from(*s) - mean).collect();
    let autocov = |j: usize| -> Matrix3<f64> {
        d[j..].iter().zip(&d[..n - j]).fold(Matrix3::zeros(), |acc, (a, b)| acc + a * b.transpose()) / n as f64
    };
    let mut omega = autocov(0);
    for j in 1..=lag {
        let w = 1.0 - j as f64 / (lag + 1) as f64;
        let c = autocov(j);
        omega += (c + c.transpose()) * w;
    }
    Ok((omega + omega.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResult {
    pub v_hat: [[f64; 3]; 3],
    pub omega_hat: [[f64; 3]; 3],
    pub sigma_hat: [[f64; 3]; 3],
    pub hac_lag: usize,
}

impl CovarianceResult {
    pub fn sigma(&self) -> Matrix3<f64> {
        from_rows(&self.sigma_hat)
    }
}

/// `Sigma = V^{-1} Omega V^{-T}`, symmetrised.
pub fn sandwich(v: &Matrix3<f64>, omega: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let cond = condition_number(v);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(cond));
    }
    let v_inv = v.try_inverse().ok_or(Error::Singular(f64::INFINITY))?;
    let s = v_inv * omega * v_inv.transpose();
    Ok((s + s.transpose()) * 0.5)
}

/// Hessian, long-run score variance and sandwich at `theta_hat`.
pub fn covariance(theta_hat: &ThetaCir, eval: &ContrastEvaluator, lag: Option<usize>) -> Result<CovarianceResult> {
    let v = hessian_v(theta_hat, eval.config().delta)?;
    let scores = score_series(theta_hat, eval)?;
    let lag = lag.unwrap_or_else(|| default_lag(scores.len()));
    let omega = long_run_omega(&scores, lag)?;
    let sigma = sandwich(&v, &omega)?;
    Ok(CovarianceResult { v_hat: to_rows(&v), omega_hat: to_rows(&omega), sigma_hat: to_rows(&sigma), hac_lag: lag })
}

/// Two-sided standard normal quantile `z_{1 - (1 - level)/2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + 0.5 * level))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIntervals {
    pub level: f64,
    pub estimate: [f64; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl ConfidenceIntervals {
    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, theta: &ThetaCir) -> [bool; 3] {
        let t = theta.to_array();
        std::array::from_fn(|k| self.lower[k] <= t[k] && t[k] <= self.upper[k])
    }

    /// Rows `param, lower, estimate, upper, width`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["param", "lower", "estimate", "upper", "width"])?;
        for k in 0..3 {
            wtr.write_record([
                ThetaCir::NAMES[k].to_string(),
                self.lower[k].to_string(),
                self.estimate[k].to_string(),
                self.upper[k].to_string(),
                self.width(k).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `theta_hat_k +- z sqrt(Sigma_kk / n)` from `V` and `Omega`.
pub fn confidence_intervals(
    theta_hat: &ThetaCir,
    v: &Matrix3<f64>,
    omega: &Matrix3<f64>,
    n: usize,
    level: f64,
) -> Result<ConfidenceIntervals> {
    intervals_from_sigma(theta_hat, &sandwich(v, omega)?, n, level)
}

pub fn intervals_from_sigma(theta_hat: &ThetaCir, sigma: &Matrix3<f64>, n: usize, level: f64) -> Result<ConfidenceIntervals> {
    if n == 0 {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    let z = normal_quantile(level)?;
    let est = theta_hat.to_array();
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    for k in 0..3 {
        let var = sigma[(k, k)];
        if var < 0.0 || var.is_nan() {
            return Err(Error::NegativeVariance { coord: k, value: var });
        }
        let half = z * (var / n as f64).sqrt();
        lower[k] = est[k] - half;
        upper[k] = est[k] + half;
    }
    Ok(ConfidenceIntervals { level, estimate: est, lower, upper })
}
