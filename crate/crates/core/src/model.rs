//! CIR stochastic-volatility state-space model.
//!
//! ```text
//! Y_i     = X_i + eps_i
//! X_{i+1} = X_i + kappa (mu - X_i) delta + sigma sqrt(delta X_i) eta_{i+1}
//! ```
//!
//! `eps` is a centred, scaled log-chi-squared variable and `eta` is standard
//! normal. The hidden chain starts from its stationary Gamma(a, c) law.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of `log(Z^2)` used throughout, both by the simulator and by the
/// noise characteristic function. Kept at the rounded value so the two agree.
pub const LOG_CHISQ_MEAN: f64 = -1.27;

/// Positivity floor applied after each Euler step.
pub const X_FLOOR: f64 = 1e-12;

/// Daily sampling interval, the library default.
pub const DEFAULT_DELTA: f64 = 1.0 / 252.0;

/// Parameter triple `(kappa, mu, sigma^2)`, always in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaRaw")]
pub struct ThetaCir {
    pub kappa: f64,
    pub mu: f64,
    pub sigma_sq: f64,
}

#[derive(Deserialize)]
struct ThetaRaw {
    kappa: f64,
    mu: f64,
    sigma_sq: f64,
}

impl TryFrom<ThetaRaw> for ThetaCir {
    type Error = Error;

    fn try_from(raw: ThetaRaw) -> Result<Self> {
        ThetaCir::new(raw.kappa, raw.mu, raw.sigma_sq)
    }
}

impl ThetaCir {
    pub const DIM: usize = 3;
    pub const NAMES: [&'static str; 3] = ["kappa", "mu", "sigma_sq"];

    pub fn new(kappa: f64, mu: f64, sigma_sq: f64) -> Result<Self> {
        for (name, v) in Self::NAMES.iter().zip([kappa, mu, sigma_sq]) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { kappa, mu, sigma_sq })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.kappa, self.mu, self.sigma_sq]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }
}

/// Stationary Gamma law of the hidden chain: shape `a`, rate `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaStationary {
    pub a: f64,
    pub c: f64,
    pub feller_ok: bool,
}

impl GammaStationary {
    pub fn mean(&self) -> f64 {
        self.a / self.c
    }

    pub fn variance(&self) -> f64 {
        self.a / (self.c * self.c)
    }
}

pub fn stationary_params(theta: &ThetaCir) -> GammaStationary {
    let a = 2.0 * theta.kappa * theta.mu / theta.sigma_sq;
    let c = 2.0 * theta.kappa / theta.sigma_sq;
    GammaStationary { a, c, feller_ok: a >= 1.0 && c > 0.0 }
}

/// One-step conditional mean `b` and standard deviation `s` of the hidden chain.
pub fn drift_diffusion(theta: &ThetaCir, delta: f64, x: f64) -> Result<(f64, f64)> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("state must be non-negative, got {x}")));
    }
    let b = (1.0 - theta.kappa * delta) * x + theta.kappa * theta.mu * delta;
    let s = theta.sigma() * (delta * x).sqrt();
    Ok((b, s))
}

/// Scaled log-chi-squared observation noise `eps = beta (log Z^2 - C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseRaw", into = "NoiseRaw")]
pub struct NoiseSpec {
    pub s_eps_sq: f64,
    pub beta: f64,
    pub c_tilde: f64,
}

#[derive(Serialize, Deserialize)]
struct NoiseRaw {
    s_eps_sq: f64,
}

impl TryFrom<NoiseRaw> for NoiseSpec {
    type Error = Error;

    fn try_from(raw: NoiseRaw) -> Result<Self> {
        NoiseSpec::new(raw.s_eps_sq)
    }
}

impl From<NoiseSpec> for NoiseRaw {
    fn from(n: NoiseSpec) -> Self {
        NoiseRaw { s_eps_sq: n.s_eps_sq }
    }
}

impl NoiseSpec {
    pub fn new(s_eps_sq: f64) -> Result<Self> {
        if !(s_eps_sq.is_finite() && s_eps_sq > 0.0) {
            return Err(Error::InvalidParameter(format!("s_eps_sq must be positive, got {s_eps_sq}")));
        }
        let beta = (2.0 * s_eps_sq).sqrt() / std::f64::consts::PI;
        Ok(Self { s_eps_sq, beta, c_tilde: beta * LOG_CHISQ_MEAN })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.beta * ((z * z).ln() - LOG_CHISQ_MEAN)
    }

    /// Exact log-density of `eps`, from the change of variables `W = log Z^2`.
    pub fn ln_pdf(&self, eps: f64) -> f64 {
        let w = eps / self.beta + LOG_CHISQ_MEAN;
        -0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * w - 0.5 * w.exp() - self.beta.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfigDoc", into = "ModelConfigDoc")]
pub struct ModelConfig {
    pub theta: ThetaCir,
    pub delta: f64,
    pub noise: NoiseSpec,
    pub n: usize,
}

/// Flat JSON layout: `{kappa, mu, sigma_sq, delta, s_eps_sq, n}`.
#[derive(Serialize, Deserialize)]
struct ModelConfigDoc {
    kappa: f64,
    mu: f64,
    sigma_sq: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    s_eps_sq: f64,
    n: usize,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl TryFrom<ModelConfigDoc> for ModelConfig {
    type Error = Error;

    fn try_from(d: ModelConfigDoc) -> Result<Self> {
        ModelConfig::new(ThetaCir::new(d.kappa, d.mu, d.sigma_sq)?, d.delta, NoiseSpec::new(d.s_eps_sq)?, d.n)
    }
}

impl From<ModelConfig> for ModelConfigDoc {
    fn from(c: ModelConfig) -> Self {
        ModelConfigDoc {
            kappa: c.theta.kappa,
            mu: c.theta.mu,
            sigma_sq: c.theta.sigma_sq,
            delta: c.delta,
            s_eps_sq: c.noise.s_eps_sq,
            n: c.n,
        }
    }
}

impl ModelConfig {
    pub fn new(theta: ThetaCir, delta: f64, noise: NoiseSpec, n: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if n < 2 {
            return Err(Error::Length { needed: 2, got: n });
        }
        Ok(Self { theta, delta, noise, n })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Axis-aligned parameter box, one closed interval per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxDoc", into = "BoxDoc")]
pub struct ParamBox {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct BoxDoc {
    kappa: [f64; 2],
    mu: [f64; 2],
    sigma_sq: [f64; 2],
}

impl TryFrom<BoxDoc> for ParamBox {
    type Error = Error;

    fn try_from(d: BoxDoc) -> Result<Self> {
        ParamBox::new([d.kappa[0], d.mu[0], d.sigma_sq[0]], [d.kappa[1], d.mu[1], d.sigma_sq[1]])
    }
}

impl From<ParamBox> for BoxDoc {
    fn from(b: ParamBox) -> Self {
        BoxDoc {
            kappa: [b.lower[0], b.upper[0]],
            mu: [b.lower[1], b.upper[1]],
            sigma_sq: [b.lower[2], b.upper[2]],
        }
    }
}

impl ParamBox {
    pub fn new(lower: [f64; 3], upper: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            if !(lower[k] > 0.0 && lower[k] <= upper[k] && upper[k].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "bad interval for {}: [{}, {}]",
                    ThetaCir::NAMES[k],
                    lower[k],
                    upper[k]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[3, 5] x [0.02, 0.04] x [0.3, 0.5]`, centred on `(4, 0.03, 0.4)`.
    pub fn reference() -> Self {
        Self { lower: [3.0, 0.02, 0.3], upper: [5.0, 0.04, 0.5] }
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|k| 0.5 * (self.lower[k] + self.upper[k]))
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, v: &[f64; 3]) -> bool {
        (0..3).all(|k| v[k] >= self.lower[k] && v[k] <= self.upper[k])
    }

    pub fn clamp(&self, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| v[k].clamp(self.lower[k], self.upper[k]))
    }

    /// Maps unit-cube coordinates into the box.
    pub fn from_unit(&self, u: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.lower[k] + u[k] * self.width(k))
    }

    pub fn to_unit(&self, v: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| {
            let w = self.width(k);
            if w > 0.0 {
                (v[k] - self.lower[k]) / w
            } else {
                0.0
            }
        })
    }

    /// Uniform draw from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        std::array::from_fn(|k| self.lower[k] + rng.random::<f64>() * self.width(k))
    }
}

/// Simulated path: `x` has `n + 1` states, `y` has `n` observations with
/// `y[i] = x[i] + eps_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub truncation_count: usize,
}

impl Trajectory {
    /// Two-column CSV `x,y`, one row per observation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y"])?;
        for (x, y) in self.x.iter().zip(&self.y) {
            wtr.write_record([x.to_string(), y.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads the `y` column of a CSV file with a header row.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::InvalidParameter("observation CSV has no `y` column".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("cannot parse observation `{field}`")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Euler simulation with full truncation at [`X_FLOOR`].
pub fn simulate(config: &ModelConfig, seed: u64) -> Result<Trajectory> {
    let ModelConfig { theta, delta, noise, n } = *config;
    let g = stationary_params(&theta);
    let mut rng = rng_from_seed(seed);
    let init = Gamma::new(g.a, 1.0 / g.c)
        .map_err(|e| Error::InvalidParameter(format!("stationary law: {e}")))?;

    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n);
    let mut truncation_count = 0;
    let mut state = rng.sample(init).max(X_FLOOR);
    x.push(state);
    let sd_scale = theta.sigma() * delta.sqrt();
    for _ in 0..n {
        y.push(state + noise.sample(&mut rng));
        let eta: f64 = rng.sample(StandardNormal);
        let mut next = state + theta.kappa * (theta.mu - state) * delta + sd_scale * state.max(0.0).sqrt() * eta;
        if next < X_FLOOR {
            next = X_FLOOR;
            truncation_count += 1;
        }
        state = next;
        x.push(state);
    }
    Ok(Trajectory { x, y, seed, truncation_count })
}
