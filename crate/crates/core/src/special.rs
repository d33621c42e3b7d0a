//! Complex Gamma function and the closed-form Fourier-domain objects of the
//! CIR model: the stationary Gamma characteristic function, the log-chi-squared
//! noise characteristic function, `l(x) = (b^2 + s^2)(x) g(x; a, c)`, its
//! Fourier transform and its squared L2 norm.
//!
//! Fourier convention: `f*(t) = int e^{itx} f(x) dx`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{stationary_params, GammaStationary, NoiseSpec, ThetaCir};
use crate::quad;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn is_pole(z: Complex64) -> bool {
    z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round()
}

/// `ln Gamma(z)` for `Re z >= 1/2` (Lanczos, g = 7).
fn ln_gamma_right(z: Complex64) -> Complex64 {
    let z = z - 1.0;
    let mut acc = Complex64::new(LANCZOS_COEFFS[0], 0.0);
    for (k, &p) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += p / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Complex Gamma function, with the reflection formula for `Re z < 1/2`.
pub fn complex_gamma(z: Complex64) -> Result<Complex64> {
    if is_pole(z) {
        return Err(Error::Pole(z.re));
    }
    if z.re < 0.5 {
        let s = (PI * z).sin();
        Ok(PI / (s * ln_gamma_right(1.0 - z).exp()))
    } else {
        Ok(ln_gamma_right(z).exp())
    }
}

/// Real `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // ln Gamma(x) = ln pi - ln sin(pi x) - ln Gamma(1 - x)
        PI.ln() - (PI * x).sin().ln() - ln_gamma_right(Complex64::new(1.0 - x, 0.0)).re
    } else {
        ln_gamma_right(Complex64::new(x, 0.0)).re
    }
}

/// Characteristic function of Gamma(a, c): `(1 - it/c)^(-a)`, principal branch.
pub fn cf_gamma(t: f64, g: &GammaStationary) -> Complex64 {
    (-g.a * Complex64::new(1.0, -t / g.c).ln()).exp()
}

/// Characteristic function of the scaled log-chi-squared noise:
/// `pi^{-1/2} 2^{i beta t} Gamma(1/2 + i beta t) exp(-i C~ t)`.
pub fn cf_log_chisq(t: f64, noise: &NoiseSpec) -> Complex64 {
    let y = noise.beta * t;
    // Gamma(1/2 + iy) has no poles, and Re = 1/2 sits on the Lanczos side.
    let gamma = ln_gamma_right(Complex64::new(0.5, y));
    let phase = Complex64::new(0.0, y * std::f64::consts::LN_2 - noise.c_tilde * t);
    (gamma + phase - 0.5 * PI.ln()).exp()
}

/// Gamma(a, c) density (shape `a`, rate `c`); zero for `x < 0`.
pub fn gamma_pdf(x: f64, a: f64, c: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return match a.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Equal) => c,
            _ => f64::INFINITY,
        };
    }
    (a * c.ln() + (a - 1.0) * x.ln() - c * x - ln_gamma(a)).exp()
}

/// Coefficients of `b^2(x) + s^2(x) = alpha1 x^2 + alpha2 x + alpha3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCoeffs {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl AlphaCoeffs {
    pub fn new(theta: &ThetaCir, delta: f64) -> Self {
        let r = 1.0 - theta.kappa * delta;
        let drift = theta.kappa * theta.mu * delta;
        Self {
            alpha1: r * r,
            alpha2: 2.0 * r * drift + theta.sigma_sq * delta,
            alpha3: drift * drift,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.alpha1 * x + self.alpha2) * x + self.alpha3
    }
}

/// Coefficients of the quartic `(alpha1 x^2 + alpha2 x + alpha3)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaCoeffs {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
}

impl From<AlphaCoeffs> for BetaCoeffs {
    fn from(al: AlphaCoeffs) -> Self {
        let AlphaCoeffs { alpha1, alpha2, alpha3 } = al;
        Self {
            beta1: alpha1 * alpha1,
            beta2: 2.0 * alpha1 * alpha2,
            beta3: 2.0 * alpha1 * alpha3 + alpha2 * alpha2,
            beta4: 2.0 * alpha2 * alpha3,
            beta5: alpha3 * alpha3,
        }
    }
}

/// The function `l(x) = (alpha1 x^2 + alpha2 x + alpha3) g(x; a, c)` for one
/// parameter value, with its transform and norm.
#[derive(Debug, Clone, Copy)]
pub struct LFunction {
    pub alpha: AlphaCoeffs,
    pub gamma: GammaStationary,
    ln_gamma_a: f64,
}

impl LFunction {
    pub fn new(theta: &ThetaCir, delta: f64) -> Self {
        Self::from_parts(AlphaCoeffs::new(theta, delta), stationary_params(theta))
    }

    pub fn from_parts(alpha: AlphaCoeffs, gamma: GammaStationary) -> Self {
        Self { alpha, gamma, ln_gamma_a: ln_gamma(gamma.a) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let GammaStationary { a, c, .. } = self.gamma;
        let poly = self.alpha.eval(x);
        if x == 0.0 {
            return poly * gamma_pdf(0.0, a, c);
        }
        poly * (a * c.ln() + (a - 1.0) * x.ln() - c * x - self.ln_gamma_a).exp()
    }

    /// `l*(t) = alpha1 a(a+1)/c^2 w^{-a-2} + alpha2 a/c w^{-a-1} + alpha3 w^{-a}`,
    /// with `w = 1 - it/c`.
    pub fn cf(&self, t: f64) -> Complex64 {
        let GammaStationary { a, c, .. } = self.gamma;
        let ln_w = Complex64::new(1.0, -t / c).ln();
        let base = (-a * ln_w).exp();
        let inv_w = (-ln_w).exp();
        let AlphaCoeffs { alpha1, alpha2, alpha3 } = self.alpha;
        base * (alpha1 * a * (a + 1.0) / (c * c) * inv_w * inv_w + alpha2 * a / c * inv_w + alpha3)
    }

    /// `int l(x) dx = l*(0)`, from the Gamma moments.
    pub fn integral(&self) -> f64 {
        let GammaStationary { a, c, .. } = self.gamma;
        self.alpha.alpha1 * a * (a + 1.0) / (c * c) + self.alpha.alpha2 * a / c + self.alpha.alpha3
    }

    /// Closed-form `||l||_2^2`; diverges for `a <= 1/2`.
    pub fn norm_sq(&self) -> Result<f64> {
        let GammaStationary { a, c, .. } = self.gamma;
        if !(a > 0.5) {
            return Err(Error::Domain(format!("||l||^2 diverges for a = {a} <= 1/2")));
        }
        let b = BetaCoeffs::from(self.alpha);
        let lg2 = 2.0 * self.ln_gamma_a;
        // int x^k g^2 dx = 2^{-(2a+k-1)} c^{1-k} Gamma(2a+k-1) / Gamma(a)^2
        let term = |k: i32| -> f64 {
            let s = 2.0 * a + k as f64 - 1.0;
            (-s * std::f64::consts::LN_2 + (1 - k) as f64 * c.ln() + ln_gamma(s) - lg2).exp()
        };
        Ok(b.beta1 * term(4) + b.beta2 * term(3) + b.beta3 * term(2) + b.beta4 * term(1) + b.beta5 * term(0))
    }

    /// Upper integration limit beyond which `l` and its relatives are negligible.
    pub fn support_cutoff(&self) -> f64 {
        quad::gamma_tail_cutoff(self.gamma.a + 4.0, self.gamma.c, 1e-14)
    }
}

pub fn l_of_x(x: f64, theta: &ThetaCir, delta: f64) -> f64 {
    LFunction::new(theta, delta).eval(x)
}

pub fn cf_l(t: f64, theta: &ThetaCir, delta: f64) -> Complex64 {
    LFunction::new(theta, delta).cf(t)
}

pub fn l2_norm_sq(theta: &ThetaCir, delta: f64) -> Result<f64> {
    LFunction::new(theta, delta).norm_sq()
}

/// `<l_theta1, l_theta2>` by quadrature in the state variable.
pub fn l_inner_product(theta1: &ThetaCir, theta2: &ThetaCir, delta: f64) -> f64 {
    let f1 = LFunction::new(theta1, delta);
    let f2 = LFunction::new(theta2, delta);
    let x_max = f1.support_cutoff().max(f2.support_cutoff());
    let power = (f1.gamma.a - 1.0) + (f2.gamma.a - 1.0);
    quad::integrate_from_origin(|x| f1.eval(x) * f2.eval(x), power.max(-0.999), x_max)
}

/// `||l_theta1 - l_theta2||^2` by quadrature of the squared difference.
pub fn l_distance_sq(theta1: &ThetaCir, theta2: &ThetaCir, delta: f64) -> f64 {
    let f1 = LFunction::new(theta1, delta);
    let f2 = LFunction::new(theta2, delta);
    let x_max = f1.support_cutoff().max(f2.support_cutoff());
    let power = 2.0 * (f1.gamma.a.min(f2.gamma.a) - 1.0);
    quad::integrate_from_origin(|x| (f1.eval(x) - f2.eval(x)).powi(2), power.max(-0.999), x_max)
}
