//! Monte-Carlo studies: repeated simulation and estimation with every
//! requested method, MSE and timing summaries, interval coverage, and the
//! CSV, JSON and SVG artifacts written from them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_filter, FilterConfig, FilterKind};
use crate::contrast::{minimize_with, ContrastConfig, ContrastEvaluator, EstimateResult, PhiCase};
use crate::error::{Error, Result};
use crate::inference::{covariance, intervals_from_sigma, ConfidenceIntervals, CovarianceResult};
use crate::model::{simulate, ModelConfig, NoiseSpec, ParamBox, ThetaCir, DEFAULT_DELTA};
use crate::optimize::OptimizerSettings;

/// Largest tolerated fraction of failed replications per method.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Contrast,
    Ekf,
    Apf,
    Apfs,
    Ksapf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Contrast, Method::Ekf, Method::Apf, Method::Apfs, Method::Ksapf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Contrast => "contrast",
            Method::Ekf => "ekf",
            Method::Apf => "apf",
            Method::Apfs => "apfs",
            Method::Ksapf => "ksapf",
        }
    }

    fn filter_kind(self) -> Option<FilterKind> {
        match self {
            Method::Contrast => None,
            Method::Ekf => Some(FilterKind::Ekf),
            Method::Apf => Some(FilterKind::Apf),
            Method::Apfs => Some(FilterKind::Apfs),
            Method::Ksapf => Some(FilterKind::Ksapf),
        }
    }
}

/// Contrast settings shared by every replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSettings {
    #[serde(default)]
    pub t_cutoff: Option<f64>,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub phi_case: PhiCase,
}

fn default_nodes() -> usize {
    256
}

impl Default for ContrastSettings {
    fn default() -> Self {
        Self { t_cutoff: None, n_nodes: default_nodes(), phi_case: PhiCase::Quadratic }
    }
}

/// Particle-filter settings shared by every replication; the seed is set per
/// replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    #[serde(default = "default_particles")]
    pub m_particles: usize,
    #[serde(default = "default_q")]
    pub q_diag: [f64; 3],
    #[serde(default = "default_bandwidth")]
    pub h_bandwidth: f64,
}

fn default_particles() -> usize {
    FilterConfig::new(1.0).m_particles
}

fn default_q() -> [f64; 3] {
    FilterConfig::new(1.0).q_diag
}

fn default_bandwidth() -> f64 {
    FilterConfig::new(1.0).h_bandwidth
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { m_particles: default_particles(), q_diag: default_q(), h_bandwidth: default_bandwidth() }
    }
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub theta0: ThetaCir,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub s_eps_sq: f64,
    pub n_obs: usize,
    pub n_reps: usize,
    pub methods: Vec<Method>,
    #[serde(default = "ParamBox::reference", rename = "box")]
    pub bounds: ParamBox,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub contrast: ContrastSettings,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub filter: FilterSettings,
    /// Also compute sandwich intervals for the contrast estimate.
    #[serde(default)]
    pub intervals: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl StudyConfig {
    pub fn new(theta0: ThetaCir, s_eps_sq: f64, n_obs: usize, n_reps: usize, methods: Vec<Method>) -> Self {
        Self {
            theta0,
            delta: DEFAULT_DELTA,
            s_eps_sq,
            n_obs,
            n_reps,
            methods,
            bounds: ParamBox::reference(),
            base_seed: 0,
            contrast: ContrastSettings::default(),
            optimizer: OptimizerSettings::default(),
            filter: FilterSettings::default(),
            intervals: false,
            level: default_level(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::InvalidParameter("n_reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods must not be empty".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {}", self.level)));
        }
        self.model()?;
        self.contrast_config().validate()?;
        if self.methods.iter().any(|m| m.filter_kind().is_some()) {
            self.filter_config(0).validate()?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.theta0, self.delta, NoiseSpec::new(self.s_eps_sq)?, self.n_obs)
    }

    pub fn contrast_config(&self) -> ContrastConfig {
        ContrastConfig {
            t_cutoff: self.contrast.t_cutoff,
            n_nodes: self.contrast.n_nodes,
            phi_case: self.contrast.phi_case,
            s_eps_sq: self.s_eps_sq,
            delta: self.delta,
        }
    }

    pub fn filter_config(&self, seed: u64) -> FilterConfig {
        FilterConfig {
            m_particles: self.filter.m_particles,
            prior_box: self.bounds,
            q_diag: self.filter.q_diag,
            h_bandwidth: self.filter.h_bandwidth,
            seed,
            delta: self.delta,
            s_eps_sq: self.s_eps_sq,
        }
    }

    /// Seed of replication `r`.
    pub fn seed(&self, r: usize) -> u64 {
        self.base_seed.wrapping_add(r as u64)
    }
}

/// Contrast estimate, with optional sandwich intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastFit {
    pub estimate: EstimateResult,
    pub covariance: Option<CovarianceResult>,
    pub intervals: Option<ConfidenceIntervals>,
}

/// Fits the contrast estimator to `y`. With `level`, also computes the
/// sandwich covariance and intervals at the estimate.
pub fn fit_contrast(
    y: &[f64],
    bounds: &ParamBox,
    cfg: &ContrastConfig,
    opt: &OptimizerSettings,
    level: Option<f64>,
) -> Result<ContrastFit> {
    let center = ThetaCir::from_array(bounds.center())?;
    let t = cfg.resolve_cutoff(&center)?;
    let eval = ContrastEvaluator::new(y, cfg, t)?;
    let estimate = minimize_with(&eval, bounds, opt)?;
    let (covariance, intervals) = match level {
        Some(level) => {
            let cov = covariance(&estimate.theta_hat, &eval, None)?;
            let ci = intervals_from_sigma(&estimate.theta_hat, &cov.sigma(), y.len(), level)?;
            (Some(cov), Some(ci))
        }
        None => (None, None),
    };
    Ok(ContrastFit { estimate, covariance, intervals })
}

/// `(1/N) sum_r sum_j (theta_hat_j^r - theta0_j)^2`.
pub fn mse(estimates: &[[f64; 3]], theta0: &ThetaCir) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Length { needed: 1, got: 0 });
    }
    let t = theta0.to_array();
    let total: f64 = estimates.iter().map(|e| (0..3).map(|k| (e[k] - t[k]).powi(2)).sum::<f64>()).sum();
    Ok(total / estimates.len() as f64)
}

pub fn mse_dyn(estimates: &[Vec<f64>], theta0: &ThetaCir) -> Result<f64> {
    let fixed = estimates
        .iter()
        .map(|e| {
            <[f64; 3]>::try_from(e.as_slice())
                .map_err(|_| Error::InvalidParameter(format!("estimate has {} coordinates, expected 3", e.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    mse(&fixed, theta0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: Option<[f64; 3]>,
    pub wall_clock_s: f64,
    pub error: Option<String>,
    /// Contrast only, when intervals were requested.
    pub intervals: Option<ConfidenceIntervals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// `(replication index, estimate)` for successful replications.
    pub estimates: Vec<(usize, [f64; 3])>,
    pub mse: f64,
    /// Mean wall-clock seconds per successful replication.
    pub wall_clock_s: f64,
    pub failures: usize,
}

impl MethodSummary {
    pub fn estimate_array(&self) -> Vec<[f64; 3]> {
        self.estimates.iter().map(|(_, e)| *e).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCStudyResult {
    pub theta0: ThetaCir,
    pub n_obs: usize,
    pub replications: Vec<Replication>,
    pub methods: Vec<MethodSummary>,
    /// Fraction of contrast intervals containing `theta0`, per coordinate.
    pub coverage: Option<[f64; 3]>,
    pub mean_ci_width: Option<[f64; 3]>,
}

impl MCStudyResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn run_method(method: Method, y: &[f64], cfg: &StudyConfig, seed: u64) -> MethodOutcome {
    let start = Instant::now();
    let res: Result<([f64; 3], Option<ConfidenceIntervals>)> = match method.filter_kind() {
        None => fit_contrast(y, &cfg.bounds, &cfg.contrast_config(), &cfg.optimizer, cfg.intervals.then_some(cfg.level))
            .map(|fit| (fit.estimate.theta_hat.to_array(), fit.intervals)),
        Some(kind) => run_filter(kind, y, &cfg.filter_config(seed)).map(|r| (r.estimate, None)),
    };
    let wall_clock_s = start.elapsed().as_secs_f64();
    match res {
        Ok((estimate, intervals)) => MethodOutcome { method, estimate: Some(estimate), wall_clock_s, error: None, intervals },
        Err(e) => {
            log::warn!("{} failed on seed {seed}: {e}", method.name());
            MethodOutcome { method, estimate: None, wall_clock_s, error: Some(e.to_string()), intervals: None }
        }
    }
}

/// One replication: simulate with its seed, then run every method on the
/// same observations.
pub fn run_replication(cfg: &StudyConfig, index: usize) -> Result<Replication> {
    let seed = cfg.seed(index);
    let traj = simulate(&cfg.model()?, seed)?;
    let outcomes = cfg.methods.iter().map(|&m| run_method(m, &traj.y, cfg, seed)).collect();
    Ok(Replication { index, seed, outcomes })
}

pub fn run_study(cfg: &StudyConfig) -> Result<MCStudyResult> {
    cfg.validate()?;
    let mut replications = (0..cfg.n_reps).into_par_iter().map(|r| run_replication(cfg, r)).collect::<Result<Vec<_>>>()?;
    replications.sort_by_key(|r| r.index);
    summarise(cfg, replications)
}

fn summarise(cfg: &StudyConfig, replications: Vec<Replication>) -> Result<MCStudyResult> {
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (slot, &method) in cfg.methods.iter().enumerate() {
        let mut estimates = Vec::new();
        let mut clock = 0.0;
        for rep in &replications {
            let o = &rep.outcomes[slot];
            if let Some(e) = o.estimate {
                estimates.push((rep.index, e));
                clock += o.wall_clock_s;
            }
        }
        let failures = replications.len() - estimates.len();
        if failures as f64 > MAX_FAILURE_RATE * replications.len() as f64 {
            return Err(Error::Study(format!("{} failed in {failures} of {} replications", method.name(), replications.len())));
        }
        let arr: Vec<[f64; 3]> = estimates.iter().map(|(_, e)| *e).collect();
        let mse = mse(&arr, &cfg.theta0)?;
        methods.push(MethodSummary { method, mse, wall_clock_s: clock / arr.len() as f64, estimates, failures });
    }

    let (coverage, mean_ci_width) = match cfg.methods.iter().position(|&m| m == Method::Contrast) {
        Some(slot) if cfg.intervals => {
            let cis: Vec<&ConfidenceIntervals> =
                replications.iter().filter_map(|r| r.outcomes[slot].intervals.as_ref()).collect();
            coverage_of(&cis, &cfg.theta0)
        }
        _ => (None, None),
    };
    Ok(MCStudyResult { theta0: cfg.theta0, n_obs: cfg.n_obs, replications, methods, coverage, mean_ci_width })
}

fn coverage_of(cis: &[&ConfidenceIntervals], theta0: &ThetaCir) -> (Option<[f64; 3]>, Option<[f64; 3]>) {
    if cis.is_empty() {
        return (None, None);
    }
    let n = cis.len() as f64;
    let mut hits = [0.0; 3];
    let mut width = [0.0; 3];
    for ci in cis {
        let inside = ci.contains(theta0);
        for k in 0..3 {
            hits[k] += inside[k] as u8 as f64;
            width[k] += ci.width(k);
        }
    }
    (Some(hits.map(|h| h / n)), Some(width.map(|w| w / n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub theta0: ThetaCir,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub s_eps_sq: f64,
    pub n_values: Vec<usize>,
    pub n_reps: usize,
    #[serde(default = "ParamBox::reference", rename = "box")]
    pub bounds: ParamBox,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub contrast: ContrastSettings,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl CoverageConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        if cfg.n_values.is_empty() {
            return Err(Error::InvalidParameter("n_values must not be empty".into()));
        }
        for &n in &cfg.n_values {
            cfg.study(n).validate()?;
        }
        Ok(cfg)
    }

    /// Contrast-only study with intervals at sample size `n`.
    pub fn study(&self, n: usize) -> StudyConfig {
        StudyConfig {
            theta0: self.theta0,
            delta: self.delta,
            s_eps_sq: self.s_eps_sq,
            n_obs: n,
            n_reps: self.n_reps,
            methods: vec![Method::Contrast],
            bounds: self.bounds,
            base_seed: self.base_seed,
            contrast: self.contrast,
            optimizer: self.optimizer,
            filter: FilterSettings::default(),
            intervals: true,
            level: self.level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub coverage: [f64; 3],
    pub mean_width: [f64; 3],
    pub failures: usize,
}

pub fn run_coverage(cfg: &CoverageConfig) -> Result<Vec<CoverageRow>> {
    cfg.n_values
        .iter()
        .map(|&n| {
            let res = run_study(&cfg.study(n))?;
            let failures = res.methods[0].failures;
            match (res.coverage, res.mean_ci_width) {
                (Some(coverage), Some(mean_width)) => Ok(CoverageRow { n, coverage, mean_width, failures }),
                _ => Err(Error::Study(format!("no confidence intervals at n = {n}"))),
            }
        })
        .collect()
}

// ---- artifacts ----

/// `method, mse, wall_clock_s`.
pub fn write_mse_csv(result: &MCStudyResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "mse", "wall_clock_s"])?;
    for m in &result.methods {
        w.write_record([m.method.name().to_string(), m.mse.to_string(), m.wall_clock_s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `method, replication, kappa, mu, sigma_sq`.
pub fn write_estimates_csv(result: &MCStudyResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "replication", "kappa", "mu", "sigma_sq"])?;
    for m in &result.methods {
        for (r, e) in &m.estimates {
            w.write_record([m.method.name().to_string(), r.to_string(), e[0].to_string(), e[1].to_string(), e[2].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an estimates CSV back into `(method, estimates)` groups, in file order.
pub fn read_estimates_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<[f64; 3]>)>> {
    #[derive(Deserialize)]
    struct Row {
        method: String,
        kappa: f64,
        mu: f64,
        sigma_sq: f64,
    }
    let mut out: Vec<(String, Vec<[f64; 3]>)> = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize::<Row>() {
        let row = row?;
        let e = [row.kappa, row.mu, row.sigma_sq];
        match out.last_mut() {
            Some((m, v)) if *m == row.method => v.push(e),
            _ => out.push((row.method, vec![e])),
        }
    }
    Ok(out)
}

/// `n, coverage_kappa, coverage_mu, coverage_sigma_sq, width_kappa, width_mu, width_sigma_sq, failures`.
pub fn write_coverage_csv(rows: &[CoverageRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "n",
        "coverage_kappa",
        "coverage_mu",
        "coverage_sigma_sq",
        "width_kappa",
        "width_mu",
        "width_sigma_sq",
        "failures",
    ])?;
    for r in rows {
        let mut rec = vec![r.n.to_string()];
        rec.extend(r.coverage.iter().map(f64::to_string));
        rec.extend(r.mean_width.iter().map(f64::to_string));
        rec.push(r.failures.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Quartiles by linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> [f64; 5] {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return [f64::NAN; 5];
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    [v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]]
}

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// One panel per parameter with a box per method; the dashed line marks `theta0`.
pub fn boxplot_svg(result: &MCStudyResult) -> String {
    let width = 3.0 * PANEL_W + MARGIN;
    let mut s = svg_open(width, PANEL_H + 2.0 * MARGIN);
    let truth = result.theta0.to_array();
    for k in 0..3 {
        let x0 = MARGIN + k as f64 * PANEL_W;
        let stats: Vec<(Method, [f64; 5])> = result
            .methods
            .iter()
            .map(|m| (m.method, quartiles(&m.estimates.iter().map(|(_, e)| e[k]).collect::<Vec<_>>())))
            .collect();
        let (mut lo, mut hi) = (truth[k], truth[k]);
        for (_, q) in &stats {
            if q[0].is_finite() {
                lo = lo.min(q[0]);
                hi = hi.max(q[4]);
            }
        }
        let pad = 0.05 * (hi - lo).max(1e-12);
        let (lo, hi) = (lo - pad, hi + pad);
        let sy = |v: f64| MARGIN + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", x0 + PANEL_W / 2.0, MARGIN - 15.0, ThetaCir::NAMES[k]);
        let _ = writeln!(s, "<rect x=\"{x0}\" y=\"{MARGIN}\" width=\"{}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#999\"/>", PANEL_W - 20.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{hi:.4}</text><text x=\"{}\" y=\"{}\">{lo:.4}</text>", x0 + 2.0, MARGIN + 10.0, x0 + 2.0, MARGIN + PANEL_H - 2.0);
        let ty = sy(truth[k]);
        let _ = writeln!(s, "<line x1=\"{x0}\" x2=\"{}\" y1=\"{ty}\" y2=\"{ty}\" stroke=\"red\" stroke-dasharray=\"4 3\"/>", x0 + PANEL_W - 20.0);
        let slot = (PANEL_W - 20.0) / stats.len().max(1) as f64;
        for (i, (method, q)) in stats.iter().enumerate() {
            let cx = x0 + slot * (i as f64 + 0.5);
            let bw = slot * 0.5;
            if q[0].is_finite() {
                let _ = writeln!(s, "<line x1=\"{cx}\" x2=\"{cx}\" y1=\"{}\" y2=\"{}\" stroke=\"black\"/>", sy(q[0]), sy(q[4]));
                let _ = writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{}\" width=\"{bw}\" height=\"{}\" fill=\"#cde\" stroke=\"black\"/>",
                    cx - bw / 2.0,
                    sy(q[3]),
                    (sy(q[1]) - sy(q[3])).max(0.5)
                );
                let _ = writeln!(s, "<line x1=\"{}\" x2=\"{}\" y1=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"2\"/>", cx - bw / 2.0, cx + bw / 2.0, sy(q[2]), sy(q[2]));
            }
            let _ = writeln!(s, "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>", MARGIN + PANEL_H + 15.0, method.name());
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Coverage against sample size for each parameter, with the nominal level.
pub fn coverage_svg(rows: &[CoverageRow], level: f64) -> String {
    let width = PANEL_W * 2.0 + 2.0 * MARGIN;
    let height = PANEL_H + 2.0 * MARGIN;
    let mut s = svg_open(width, height);
    let (nmin, nmax) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.n as f64), b.max(r.n as f64)));
    let span = (nmax - nmin).max(1.0);
    let sx = |n: f64| MARGIN + 2.0 * PANEL_W * (n - nmin) / span;
    let sy = |c: f64| MARGIN + PANEL_H * (1.0 - c);
    let _ = writeln!(s, "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#999\"/>", 2.0 * PANEL_W);
    let ly = sy(level);
    let _ = writeln!(s, "<line x1=\"{MARGIN}\" x2=\"{}\" y1=\"{ly}\" y2=\"{ly}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>", MARGIN + 2.0 * PANEL_W);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{level}</text>", MARGIN - 30.0, ly + 4.0);
    let colours = ["#1f77b4", "#d62728", "#2ca02c"];
    for k in 0..3 {
        let pts: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.n as f64), sy(r.coverage[k]))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>", pts.join(" "), colours[k]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>", MARGIN + 10.0 + 90.0 * k as f64, MARGIN - 10.0, colours[k], ThetaCir::NAMES[k]);
    }
    for r in rows {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", sx(r.n as f64), MARGIN + PANEL_H + 15.0, r.n);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `mse.csv`, `estimates.csv`, `study.json` and `boxplot.svg` into `dir`.
pub fn write_study_artifacts(result: &MCStudyResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_mse_csv(result, dir.join("mse.csv"))?;
    write_estimates_csv(result, dir.join("estimates.csv"))?;
    write_json(result, dir.join("study.json"))?;
    fs::write(dir.join("boxplot.svg"), boxplot_svg(result))?;
    Ok(())
}

/// Writes `coverage.csv`, `coverage.json` and `coverage.svg` into `dir`.
pub fn write_coverage_artifacts(rows: &[CoverageRow], level: f64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_coverage_csv(rows, dir.join("coverage.csv"))?;
    write_json(&rows, dir.join("coverage.json"))?;
    fs::write(dir.join("coverage.svg"), coverage_svg(rows, level))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta0() -> ThetaCir {
        ThetaCir::new(4.0, 0.03, 0.4).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = theta0();
        assert_eq!(mse(&[t.to_array(); 4], &t).unwrap(), 0.0);
        assert_eq!(mse(&[[5.0, 0.03, 0.4]], &t).unwrap(), 1.0);
        let e = [[5.0, 0.03, 0.4], [4.0, 0.03, 0.4]];
        assert_eq!(mse(&e, &t).unwrap(), 0.5);
        assert!(mse(&[], &t).is_err());
        assert!(mse_dyn(&[vec![1.0, 2.0]], &t).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg = StudyConfig::from_json_str(
            r#"{"theta0":{"kappa":4,"mu":0.03,"sigma_sq":0.4},"s_eps_sq":0.1,"n_obs":100,"n_reps":2,"methods":["contrast","ksapf"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.delta, DEFAULT_DELTA);
        assert_eq!(cfg.bounds, ParamBox::reference());
        assert_eq!(cfg.filter.m_particles, 5000);
        assert_eq!(cfg.seed(3), 3);
        assert!(StudyConfig::from_json_str(r#"{"theta0":{"kappa":4,"mu":0.03,"sigma_sq":0.4},"s_eps_sq":0.1,"n_obs":100,"n_reps":0,"methods":["contrast"]}"#).is_err());
        assert!(StudyConfig::from_json_str(r#"{"theta0":{"kappa":4,"mu":0.03,"sigma_sq":0.4},"s_eps_sq":0.1,"n_obs":100,"n_reps":1,"methods":[]}"#).is_err());
        assert!(StudyConfig::from_json_str(r#"{"theta0":{"kappa":4,"mu":0.03,"sigma_sq":0.4},"s_eps_sq":0.1,"n_obs":100,"n_reps":1,"methods":["mcem"]}"#).is_err());
    }

    #[test]
    fn single_replication_study() {
        let cfg = StudyConfig::new(theta0(), 0.1, 200, 1, vec![Method::Contrast]);
        let res = run_study(&cfg).unwrap();
        let m = &res.methods[0];
        assert_eq!(m.estimates.len(), 1);
        let e = m.estimates[0].1;
        let direct: f64 = (0..3).map(|k| (e[k] - theta0().to_array()[k]).powi(2)).sum();
        assert_eq!(m.mse, direct);
    }

    #[test]
    fn study_is_deterministic_and_sorted() {
        let mut cfg = StudyConfig::new(theta0(), 0.1, 150, 4, vec![Method::Contrast, Method::Apfs, Method::Ekf]);
        cfg.filter.m_particles = 200;
        cfg.base_seed = 10;
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        for (ma, mb) in a.methods.iter().zip(&b.methods) {
            assert_eq!(ma.estimates, mb.estimates);
            assert_eq!(ma.mse.to_bits(), mb.mse.to_bits());
        }
        assert_eq!(a.replications.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
    }

    #[test]
    fn artifacts_round_trip_mse() {
        let mut cfg = StudyConfig::new(theta0(), 0.1, 120, 3, vec![Method::Contrast, Method::Ekf]);
        cfg.intervals = true;
        let res = run_study(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_study_artifacts(&res, dir.path()).unwrap();
        for (name, est) in read_estimates_csv(dir.path().join("estimates.csv")).unwrap() {
            let m = res.methods.iter().find(|m| m.method.name() == name).unwrap();
            assert!((mse(&est, &theta0()).unwrap() - m.mse).abs() < 1e-12);
        }
        let text = fs::read_to_string(dir.path().join("mse.csv")).unwrap();
        assert!(text.starts_with("method,mse,wall_clock_s\ncontrast,"));
        assert_eq!(text.lines().count(), 3);
        let svg = fs::read_to_string(dir.path().join("boxplot.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let back: MCStudyResult = serde_json::from_str(&fs::read_to_string(dir.path().join("study.json")).unwrap()).unwrap();
        assert_eq!(back, res);
    }

    #[test]
    fn quartile_interpolation() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(quartiles(&[4.0, 1.0]), [1.0, 1.75, 2.5, 3.25, 4.0]);
        assert!(quartiles(&[]).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn coverage_artifacts() {
        let rows = vec![
            CoverageRow { n: 500, coverage: [0.9, 0.95, 1.0], mean_width: [1.0, 0.01, 0.2], failures: 0 },
            CoverageRow { n: 1000, coverage: [0.92, 0.94, 0.96], mean_width: [0.7, 0.007, 0.14], failures: 1 },
        ];
        let dir = tempfile::tempdir().unwrap();
        write_coverage_artifacts(&rows, 0.95, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("n,coverage_kappa,coverage_mu,coverage_sigma_sq"));
        assert!(lines.next().unwrap().starts_with("500,0.9,0.95,1,"));
        assert!(fs::read_to_string(dir.path().join("coverage.svg")).unwrap().contains("polyline"));
    }
}
