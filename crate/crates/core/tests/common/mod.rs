//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use quadrature::double_exponential::integrate;
use statrs::function::gamma::ln_gamma;
use svcontrast::ThetaCir;

/// Tanh-sinh integral over `[a, b]` to a relative target.
pub fn de(f: impl Fn(f64) -> f64 + Copy, a: f64, b: f64, rel: f64) -> f64 {
    let rough = integrate(f, a, b, 1e-30).integral;
    integrate(f, a, b, (rel * rough.abs()).max(1e-300)).integral
}

/// `int_0^inf x^p h(x) dx` for `p > -1` and `h` smooth with exponential decay
/// by `x_max`. The origin panel `[0, x1]` is mapped through
/// `x = x1 u^{1/(p+1)}`, which turns `x^p dx` into a constant times `du`.
pub fn power_weighted_integral(p: f64, h: impl Fn(f64) -> f64 + Copy, x1: f64, x_max: f64, rel: f64) -> f64 {
    let q = 1.0 / (p + 1.0);
    let head = x1.powf(p + 1.0) / (p + 1.0) * de(move |u: f64| h(x1 * u.powf(q)), 0.0, 1.0, rel);
    let mut tail = 0.0;
    let panels = 16;
    let step = (x_max - x1) / panels as f64;
    for k in 0..panels {
        let a = x1 + k as f64 * step;
        tail += de(move |x: f64| x.powf(p) * h(x), a, a + step, rel);
    }
    head + tail
}

/// `(a, c)` of the stationary Gamma law, computed directly.
pub fn shape_rate(th: &ThetaCir) -> (f64, f64) {
    (2.0 * th.kappa * th.mu / th.sigma_sq, 2.0 * th.kappa / th.sigma_sq)
}

/// `(alpha1, alpha2, alpha3)` written out from the Euler drift and diffusion.
pub fn alphas(th: &ThetaCir, delta: f64) -> (f64, f64, f64) {
    let r = 1.0 - th.kappa * delta;
    let m = th.kappa * th.mu * delta;
    (r * r, 2.0 * r * m + th.sigma_sq * delta, m * m)
}

/// `l(x) = x^{a-1} h_l(x)`; returns `h_l`.
pub fn l_smooth_part(th: &ThetaCir, delta: f64) -> impl Fn(f64) -> f64 + Copy {
    let (a, c) = shape_rate(th);
    let (a1, a2, a3) = alphas(th, delta);
    let log_norm = a * c.ln() - ln_gamma(a);
    move |x: f64| (a1 * x * x + a2 * x + a3) * (log_norm - c * x).exp()
}

pub fn theta0() -> ThetaCir {
    ThetaCir::new(4.0, 0.03, 0.4).unwrap()
}
