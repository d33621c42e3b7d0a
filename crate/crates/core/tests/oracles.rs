//! Library results checked against independent numerical references.

mod common;

use svcontrast::contrast::{empirical_contrast, u_star, ContrastConfig};
use svcontrast::inference::hessian_v;
use svcontrast::model::{rng_from_seed, simulate, ParamBox, DEFAULT_DELTA};
use svcontrast::optimize::{minimize_box, OptimizerSettings};
use svcontrast::special::{cf_log_chisq, l_distance_sq};
use svcontrast::{ModelConfig, NoiseSpec, ThetaCir};

use common::{l_smooth_part, power_weighted_integral, shape_rate, theta0};

#[test]
fn noise_cf_matches_empirical_cf() {
    let noise = NoiseSpec::new(0.1).unwrap();
    let mut rng = rng_from_seed(21);
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    for t in [0.5, 1.0, 2.0, 5.0] {
        let (re, im) = draws.iter().fold((0.0, 0.0), |(r, i), &e| (r + (t * e).cos(), i + (t * e).sin()));
        let exact = cf_log_chisq(t, &noise);
        let err = ((re / n as f64 - exact.re).powi(2) + (im / n as f64 - exact.im).powi(2)).sqrt();
        assert!(err < 5.0 / (n as f64).sqrt(), "t={t}: {err}");
    }
}

#[test]
fn contrast_is_stable_under_grid_refinement() {
    let model = ModelConfig::new(theta0(), DEFAULT_DELTA, NoiseSpec::new(0.1).unwrap(), 1000).unwrap();
    let y = simulate(&model, 8).unwrap().y;
    let coarse = ContrastConfig::new(0.1).with_cutoff(10.0);
    let fine = ContrastConfig { n_nodes: 2 * coarse.n_nodes, ..coarse.clone() };
    for th in [theta0(), ThetaCir::new(4.6, 0.026, 0.44).unwrap()] {
        let a = empirical_contrast(&th, &y, &coarse).unwrap();
        let b = empirical_contrast(&th, &y, &fine).unwrap();
        assert!((a - b).abs() <= 1e-4 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn inverse_transform_is_real() {
    let cfg = ContrastConfig::new(0.1);
    let mut rng = rng_from_seed(5);
    let bx = ParamBox::reference();
    for _ in 0..1000 {
        let th = ThetaCir::from_array(bx.sample(&mut rng)).unwrap();
        let y = rand::Rng::random_range(&mut rng, -3.0..3.0);
        u_star(y, &th, &cfg).unwrap();
    }
}

#[test]
fn population_distance_is_minimised_at_its_anchor() {
    let bx = ParamBox::reference();
    let target = ThetaCir::new(4.3, 0.034, 0.38).unwrap();
    let scale = l_distance_sq(&ThetaCir::from_array(bx.center()).unwrap(), &target, DEFAULT_DELTA);
    let min = minimize_box(
        |v| ThetaCir::from_array(*v).map(|th| l_distance_sq(&th, &target, DEFAULT_DELTA) / scale).unwrap_or(f64::INFINITY),
        &bx,
        &OptimizerSettings { tolerance: 1e-9, ..Default::default() },
    );
    let t = target.to_array();
    for k in 0..3 {
        assert!((min.x[k] - t[k]).abs() < 2e-2 * t[k], "{:?}", min.x);
    }
}

#[test]
fn v_diagonal_matches_quadrature_of_squared_derivative() {
    let th = ThetaCir::new(4.0, 0.04, 0.4).unwrap();
    let v = hessian_v(&th, DEFAULT_DELTA).unwrap();
    let (a, c) = shape_rate(&th);
    let t = th.to_array();
    for k in 0..3 {
        let h = 1e-4 * t[k];
        let shifted = |s: f64| {
            let mut p = t;
            p[k] += s;
            let th = ThetaCir::from_array(p).unwrap();
            (shape_rate(&th).0, l_smooth_part(&th, DEFAULT_DELTA))
        };
        let ((ap, hp), (am, hm)) = (shifted(h), shifted(-h));
        // (d l / d theta_k)^2 divided by x^{2a-2}; only logarithmic at the origin.
        let k_fn = move |x: f64| {
            let d = (x.powf(ap - 1.0) * hp(x) - x.powf(am - 1.0) * hm(x)) / (2.0 * h);
            d * d * x.powf(2.0 - 2.0 * a)
        };
        let oracle = 2.0 * power_weighted_integral(2.0 * a - 2.0, k_fn, 1.0 / c, 60.0 / c, 1e-12);
        let rel = (v[(k, k)] - oracle).abs() / oracle;
        assert!(rel < 1e-6, "V[{k}{k}] = {} vs {oracle} ({rel:.1e})", v[(k, k)]);
    }
}
