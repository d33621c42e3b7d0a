//! Filtering baselines on the augmented state `(X, kappa, mu, sigma^2)`:
//! an extended Kalman filter and three auxiliary particle filters.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rng_from_seed, stationary_params, NoiseSpec, ParamBox, ThetaCir, DEFAULT_DELTA, X_FLOOR};

/// Log of the smallest first-stage weight treated as non-zero.
pub const LN_MIN_WEIGHT: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// State variance above which the EKF is declared divergent.
pub const EKF_BLOWUP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default = "default_particles")]
    pub m_particles: usize,
    #[serde(default = "ParamBox::reference")]
    pub prior_box: ParamBox,
    /// Random-walk variances for `(kappa, mu, sigma^2)`.
    #[serde(default = "default_q")]
    pub q_diag: [f64; 3],
    #[serde(default = "default_bandwidth")]
    pub h_bandwidth: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub s_eps_sq: f64,
}

fn default_particles() -> usize {
    5000
}

fn default_q() -> [f64; 3] {
    [1e-3, 1e-5, 1e-4]
}

fn default_bandwidth() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl FilterConfig {
    pub fn new(s_eps_sq: f64) -> Self {
        Self {
            m_particles: default_particles(),
            prior_box: ParamBox::reference(),
            q_diag: default_q(),
            h_bandwidth: default_bandwidth(),
            seed: 0,
            delta: DEFAULT_DELTA,
            s_eps_sq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_particles < 100 {
            return Err(Error::InvalidParameter(format!("m_particles must be >= 100, got {}", self.m_particles)));
        }
        if self.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::InvalidParameter(format!("q_diag entries must be >= 0, got {:?}", self.q_diag)));
        }
        if !(self.h_bandwidth > 0.0 && self.h_bandwidth < 1.0) {
            return Err(Error::InvalidParameter(format!("h_bandwidth must lie in (0, 1), got {}", self.h_bandwidth)));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        NoiseSpec::new(self.s_eps_sq)?;
        Ok(())
    }

    /// Liu-West shrinkage factor `a = sqrt(1 - h^2)`.
    pub fn shrinkage(&self) -> f64 {
        (1.0 - self.h_bandwidth * self.h_bandwidth).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Apf,
    Apfs,
    Ksapf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Apf => "apf",
            FilterKind::Apfs => "apfs",
            FilterKind::Ksapf => "ksapf",
        }
    }
}

/// Filtered parameter mean after one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub step: usize,
    pub kappa: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    /// Effective sample size; the EKF reports `NaN`.
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub kind: FilterKind,
    /// Parameter mean after the last observation. May leave the prior box.
    pub estimate: [f64; 3],
    pub path: Vec<PathRow>,
    /// Filtered state mean after each observation.
    pub state_mean: Vec<f64>,
}

impl FilterResult {
    /// Rows `step, kappa, mu, sigma_sq, ess`.
    pub fn write_path_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.path {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_path_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_path_csv(std::fs::File::create(path)?)
    }
}

pub fn run_filter(kind: FilterKind, y: &[f64], cfg: &FilterConfig) -> Result<FilterResult> {
    match kind {
        FilterKind::Ekf => ekf_augmented(y, cfg),
        FilterKind::Apf => apf(y, cfg, true),
        FilterKind::Apfs => apf(y, cfg, false),
        FilterKind::Ksapf => ksapf(y, cfg),
    }
}

/// Gaussian initial condition for the EKF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfInit {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl EkfInit {
    /// Moments of the uniform prior, with the state at the stationary law of
    /// the prior centre.
    pub fn from_prior(prior: &ParamBox) -> Result<Self> {
        let c = prior.center();
        let g = stationary_params(&ThetaCir::from_array(c)?);
        let mean = Vector4::new(g.mean(), c[0], c[1], c[2]);
        let var = |k: usize| prior.width(k).powi(2) / 12.0;
        let cov = Matrix4::from_diagonal(&Vector4::new(g.variance(), var(0), var(1), var(2)));
        Ok(Self { mean, cov })
    }
}

pub fn ekf_augmented(y: &[f64], cfg: &FilterConfig) -> Result<FilterResult> {
    ekf_with_init(y, cfg, &EkfInit::from_prior(&cfg.prior_box)?)
}

/// Extended Kalman filter on `(X, kappa, mu, sigma^2)` with the observation
/// `Y = X + eps` and `Var(eps) = s_eps^2`.
pub fn ekf_with_init(y: &[f64], cfg: &FilterConfig, init: &EkfInit) -> Result<FilterResult> {
    if y.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    cfg.validate()?;
    let delta = cfg.delta;
    let r = cfg.s_eps_sq;
    let mut m = init.mean;
    let mut p = init.cov;
    let mut path = Vec::with_capacity(y.len());
    let mut state_mean = Vec::with_capacity(y.len());
    for (step, &obs) in y.iter().enumerate() {
        if step > 0 {
            let (x, kappa, mu, s2) = (m[0], m[1], m[2], m[3]);
            let f = Matrix4::new(
                1.0 - kappa * delta, (mu - x) * delta, kappa * delta, 0.0,
                0.0, 1.0, 0.0, 0.0,
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            );
            let q = Matrix4::from_diagonal(&Vector4::new(
                s2.max(0.0) * delta * x.max(0.0),
                cfg.q_diag[0],
                cfg.q_diag[1],
                cfg.q_diag[2],
            ));
            m[0] = x + kappa * (mu - x) * delta;
            p = f * p * f.transpose() + q;
        }
        let s = p[(0, 0)] + r;
        let k = p.column(0) / s;
        let innov = obs - m[0];
        m += k * innov;
        // (I - K H) P with H = e_0, then symmetrised.
        let kh_p = k * p.row(0);
        p -= kh_p;
        p = (p + p.transpose()) * 0.5;
        if !(m.iter().all(|v| v.is_finite()) && p[(0, 0)].abs() < EKF_BLOWUP && p.iter().all(|v| v.is_finite())) {
            return Err(Error::Diverged { step });
        }
        path.push(PathRow { step, kappa: m[1], mu: m[2], sigma_sq: m[3], ess: f64::NAN });
        state_mean.push(m[0]);
    }
    Ok(FilterResult { kind: FilterKind::Ekf, estimate: [m[1], m[2], m[3]], path, state_mean })
}

/// Weighted particle cloud on the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub states: Vec<f64>,
    pub params: Vec<[f64; 3]>,
    /// Normalised weights.
    pub weights: Vec<f64>,
}

impl ParticleCloud {
    /// Parameters drawn uniformly from `prior`, states from the stationary law
    /// of each particle's parameters.
    pub fn from_prior<R: Rng + ?Sized>(m: usize, prior: &ParamBox, rng: &mut R) -> Result<Self> {
        let mut states = Vec::with_capacity(m);
        let mut params = Vec::with_capacity(m);
        for _ in 0..m {
            let th = prior.sample(rng);
            let g = stationary_params(&ThetaCir::from_array(th)?);
            let gamma = Gamma::new(g.a, 1.0 / g.c)
                .map_err(|e| Error::InvalidParameter(format!("stationary law: {e}")))?;
            states.push(gamma.sample(rng).max(X_FLOOR));
            params.push(th);
        }
        Ok(Self { states, params, weights: vec![1.0 / m as f64; m] })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn param_mean(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (p, w) in self.params.iter().zip(&self.weights) {
            for k in 0..3 {
                out[k] += w * p[k];
            }
        }
        out
    }

    pub fn state_mean(&self) -> f64 {
        self.states.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    /// Weighted covariance of the parameters.
    pub fn param_cov(&self) -> Matrix3<f64> {
        let mean = Vector3::from(self.param_mean());
        self.params.iter().zip(&self.weights).fold(Matrix3::zeros(), |acc, (p, &w)| {
            let d = Vector3::from(*p) - mean;
            acc + d * d.transpose() * w
        })
    }

    /// Sets weights from log-weights; returns `false` if all are `-inf`.
    fn set_log_weights(&mut self, lw: &[f64]) -> bool {
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return false;
        }
        let mut total = 0.0;
        for (w, &l) in self.weights.iter_mut().zip(lw) {
            *w = (l - max).exp();
            total += *w;
        }
        for w in &mut self.weights {
            *w /= total;
        }
        true
    }
}

/// Systematic resampling of normalised `weights` into `m` ancestor indices.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let u0: f64 = rng.random::<f64>() / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..m {
        let u = u0 + i as f64 / m as f64;
        while u > cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

fn normalise_log(lw: &[f64]) -> Option<Vec<f64>> {
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / total).collect())
}

fn cir_mean(x: f64, p: &[f64; 3], delta: f64) -> f64 {
    x + p[0] * (p[1] - x) * delta
}

fn cir_step(x: f64, p: &[f64; 3], delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let eta: f64 = StandardNormal.sample(rng);
    let next = cir_mean(x, p, delta) + (p[2] * delta * x.max(0.0)).sqrt() * eta;
    next.max(X_FLOOR)
}

#[derive(Debug, Clone, Copy)]
enum ParamMove {
    /// Random walk with the given standard deviations.
    Walk([f64; 3]),
    Static,
    /// Liu-West kernel: shrink toward the mean by `a`, jitter with `h^2 V`.
    Kernel { a: f64, h: f64 },
}

/// Auxiliary particle filter. With `time_varying` the parameters follow a
/// Gaussian random walk; otherwise they are drawn once from the prior.
pub fn apf(y: &[f64], cfg: &FilterConfig, time_varying: bool) -> Result<FilterResult> {
    let (kind, mv) = if time_varying {
        (FilterKind::Apf, ParamMove::Walk(cfg.q_diag.map(f64::sqrt)))
    } else {
        (FilterKind::Apfs, ParamMove::Static)
    };
    particle_filter(y, cfg, kind, mv)
}

/// Auxiliary particle filter with Liu-West kernel smoothing of the parameters.
pub fn ksapf(y: &[f64], cfg: &FilterConfig) -> Result<FilterResult> {
    particle_filter(y, cfg, FilterKind::Ksapf, ParamMove::Kernel { a: cfg.shrinkage(), h: cfg.h_bandwidth })
}

fn particle_filter(y: &[f64], cfg: &FilterConfig, kind: FilterKind, mv: ParamMove) -> Result<FilterResult> {
    if y.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    cfg.validate()?;
    let noise = NoiseSpec::new(cfg.s_eps_sq)?;
    let delta = cfg.delta;
    let m = cfg.m_particles;
    let mut rng = rng_from_seed(cfg.seed);
    let mut cloud = ParticleCloud::from_prior(m, &cfg.prior_box, &mut rng)?;
    let mut path = Vec::with_capacity(y.len());
    let mut state_mean = Vec::with_capacity(y.len());

    let lw: Vec<f64> = cloud.states.iter().map(|&x| noise.ln_pdf(y[0] - x)).collect();
    if !cloud.set_log_weights(&lw) {
        return Err(Error::Degenerate { step: 0 });
    }
    record(&cloud, 0, &mut path, &mut state_mean);

    let mut first = vec![0.0; m];
    let mut centres = vec![[0.0; 3]; m];
    for (step, &obs) in y.iter().enumerate().skip(1) {
        // Parameter location used for both stages.
        let kernel = match mv {
            ParamMove::Kernel { a, h } => {
                let mean = Vector3::from(cloud.param_mean());
                let chol = (cloud.param_cov() * (h * h) + Matrix3::identity() * 1e-300).cholesky();
                Some((a, mean, chol.map(|c| c.l())))
            }
            _ => None,
        };
        for j in 0..m {
            centres[j] = match kernel {
                Some((a, mean, _)) => std::array::from_fn(|k| a * cloud.params[j][k] + (1.0 - a) * mean[k]),
                None => cloud.params[j],
            };
            let pred = cir_mean(cloud.states[j], &centres[j], delta);
            first[j] = cloud.weights[j].ln() + noise.ln_pdf(obs - pred);
        }
        let max_first = first.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max_first >= LN_MIN_WEIGHT) {
            return Err(Error::Degenerate { step });
        }
        let first_w = normalise_log(&first).ok_or(Error::Degenerate { step })?;
        let ancestors = systematic_resample(&first_w, m, &mut rng);

        let mut states = Vec::with_capacity(m);
        let mut params = Vec::with_capacity(m);
        let mut lw = Vec::with_capacity(m);
        for &j in &ancestors {
            let theta = match (mv, kernel) {
                (ParamMove::Walk(sd), _) => std::array::from_fn(|k| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (cloud.params[j][k] + sd[k] * e).abs()
                }),
                (ParamMove::Kernel { .. }, Some((_, _, Some(l)))) => {
                    let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                    let d = l * z;
                    std::array::from_fn(|k| (centres[j][k] + d[k]).abs())
                }
                _ => centres[j],
            };
            let x = cir_step(cloud.states[j], &theta, delta, &mut rng);
            let pred = cir_mean(cloud.states[j], &centres[j], delta);
            lw.push(noise.ln_pdf(obs - x) - noise.ln_pdf(obs - pred));
            states.push(x);
            params.push(theta);
        }
        cloud.states = states;
        cloud.params = params;
        if !cloud.set_log_weights(&lw) {
            return Err(Error::Degenerate { step });
        }
        record(&cloud, step, &mut path, &mut state_mean);
    }
    let estimate = cloud.param_mean();
    Ok(FilterResult { kind, estimate, path, state_mean })
}

fn record(cloud: &ParticleCloud, step: usize, path: &mut Vec<PathRow>, state_mean: &mut Vec<f64>) {
    let [kappa, mu, sigma_sq] = cloud.param_mean();
    let ess = cloud.ess();
    log::trace!("step {step}: ess {ess:.1}");
    path.push(PathRow { step, kappa, mu, sigma_sq, ess });
    state_mean.push(cloud.state_mean());
}
