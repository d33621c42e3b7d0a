use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use svcontrast::baselines::{run_filter, FilterKind};
use svcontrast::bench::{
    fit_contrast, run_coverage, run_study, write_coverage_artifacts, write_json, write_study_artifacts, ContrastSettings,
    CoverageConfig, FilterSettings, StudyConfig,
};
use svcontrast::contrast::ContrastConfig;
use svcontrast::model::{read_observations, simulate, ParamBox, DEFAULT_DELTA};
use svcontrast::optimize::OptimizerSettings;
use svcontrast::special::{cf_l, cf_log_chisq};
use svcontrast::{Error, ModelConfig, NoiseSpec, ThetaCir};

#[derive(Parser)]
#[command(name = "svcontrast", version, about = "Contrast estimation for a noisy CIR volatility model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write trajectory.csv
    Simulate(Common),
    /// Fit the contrast estimator (and sandwich intervals) to one series
    Estimate(Common),
    /// Monte-Carlo comparison of estimators: mse.csv, estimates.csv, boxplot.svg
    McStudy(Common),
    /// Interval coverage against sample size: coverage.csv, coverage.svg
    Coverage(Common),
    /// Run the filtering baselines on one simulated series
    CompareFilters(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed (or base seed) from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Also write characteristic functions as CSV (t, re, im)
    #[arg(long)]
    dump_cf: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `t, re, im` for `t` in `[0, 50]`.
fn dump_cf(path: &Path, f: impl Fn(f64) -> (f64, f64)) -> Result<()> {
    let mut text = String::from("t,re,im\n");
    for k in 0..=1000 {
        let t = k as f64 * 0.05;
        let (re, im) = f(t);
        text.push_str(&format!("{t},{re},{im}\n"));
    }
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn write_cfs(dir: &Path, theta: &ThetaCir, delta: f64, noise: &NoiseSpec) -> Result<()> {
    dump_cf(&dir.join("cf_noise.csv"), |t| {
        let c = cf_log_chisq(t, noise);
        (c.re, c.im)
    })?;
    dump_cf(&dir.join("cf_l.csv"), |t| {
        let c = cf_l(t, theta, delta);
        (c.re, c.im)
    })
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let cfg = ModelConfig::from_json_str(&read_config(&c.config)?)?;
    create_out(&c.out)?;
    let seed = c.seed.unwrap_or(0);
    let traj = simulate(&cfg, seed)?;
    traj.save_csv(c.out.join("trajectory.csv"))?;
    write_json(
        &serde_json::json!({ "seed": seed, "n": cfg.n, "truncation_count": traj.truncation_count }),
        c.out.join("simulation.json"),
    )?;
    if c.dump_cf {
        write_cfs(&c.out, &cfg.theta, cfg.delta, &cfg.noise)?;
    }
    log::info!("simulated {} observations, {} truncations", cfg.n, traj.truncation_count);
    Ok(())
}

fn default_level() -> Option<f64> {
    Some(0.95)
}

/// Observations come from a CSV file with a `y` column or from a simulation.
#[derive(Deserialize)]
struct EstimateDoc {
    #[serde(default)]
    observations: Option<PathBuf>,
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    s_eps_sq: Option<f64>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default = "ParamBox::reference", rename = "box")]
    bounds: ParamBox,
    #[serde(default)]
    contrast: ContrastSettings,
    #[serde(default)]
    optimizer: OptimizerSettings,
    /// Interval level; `null` skips the covariance.
    #[serde(default = "default_level")]
    level: Option<f64>,
}

fn cmd_estimate(c: &Common) -> Result<()> {
    let doc: EstimateDoc = serde_json::from_str(&read_config(&c.config)?).map_err(Error::from)?;
    let (y, s_eps_sq, delta) = match (&doc.observations, &doc.model) {
        (Some(path), None) => {
            let path = if path.is_relative() { c.config.parent().unwrap_or(Path::new(".")).join(path) } else { path.clone() };
            let file = fs::File::open(&path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let s = doc.s_eps_sq.ok_or_else(|| CliError::Usage("s_eps_sq is required with observations".into()))?;
            (read_observations(file)?, s, doc.delta.unwrap_or(DEFAULT_DELTA))
        }
        (None, Some(model)) => {
            let y = simulate(model, c.seed.unwrap_or(0))?.y;
            (y, doc.s_eps_sq.unwrap_or(model.noise.s_eps_sq), doc.delta.unwrap_or(model.delta))
        }
        _ => return Err(CliError::Usage("exactly one of `observations` and `model` must be given".into())),
    };
    let mut optimizer = doc.optimizer;
    if let Some(seed) = c.seed {
        optimizer.seed = seed;
    }
    let cfg = ContrastConfig {
        t_cutoff: doc.contrast.t_cutoff,
        n_nodes: doc.contrast.n_nodes,
        phi_case: doc.contrast.phi_case,
        s_eps_sq,
        delta,
    };
    cfg.validate()?;
    create_out(&c.out)?;
    let fit = fit_contrast(&y, &doc.bounds, &cfg, &optimizer, doc.level)?;
    write_json(&fit.estimate, c.out.join("estimate.json"))?;
    if let Some(cov) = &fit.covariance {
        write_json(cov, c.out.join("covariance.json"))?;
    }
    if let Some(ci) = &fit.intervals {
        write_json(ci, c.out.join("intervals.json"))?;
        ci.save_csv(c.out.join("intervals.csv"))?;
    }
    if c.dump_cf {
        write_cfs(&c.out, &fit.estimate.theta_hat, delta, &cfg.noise()?)?;
    }
    if fit.estimate.regularization_warning {
        log::warn!("inversion integrand grows strongly up to the cutoff; consider a smaller t_cutoff");
    }
    Ok(())
}

fn cmd_mc_study(c: &Common) -> Result<()> {
    let mut cfg = StudyConfig::from_json_str(&read_config(&c.config)?)?;
    if let Some(seed) = c.seed {
        cfg.base_seed = seed;
    }
    create_out(&c.out)?;
    let res = run_study(&cfg)?;
    write_study_artifacts(&res, &c.out)?;
    for m in &res.methods {
        log::info!("{}: mse {:.4}, {:.3} s per replication, {} failures", m.method.name(), m.mse, m.wall_clock_s, m.failures);
    }
    Ok(())
}

fn cmd_coverage(c: &Common) -> Result<()> {
    let mut cfg = CoverageConfig::from_json_str(&read_config(&c.config)?)?;
    if let Some(seed) = c.seed {
        cfg.base_seed = seed;
    }
    create_out(&c.out)?;
    let rows = run_coverage(&cfg)?;
    write_coverage_artifacts(&rows, cfg.level, &c.out)?;
    Ok(())
}

fn all_filters() -> Vec<FilterKind> {
    vec![FilterKind::Ekf, FilterKind::Apf, FilterKind::Apfs, FilterKind::Ksapf]
}

#[derive(Deserialize)]
struct FiltersDoc {
    model: ModelConfig,
    #[serde(default)]
    filter: FilterSettings,
    #[serde(default = "all_filters")]
    methods: Vec<FilterKind>,
    #[serde(default = "ParamBox::reference", rename = "box")]
    bounds: ParamBox,
}

fn cmd_compare_filters(c: &Common) -> Result<()> {
    let doc: FiltersDoc = serde_json::from_str(&read_config(&c.config)?).map_err(Error::from)?;
    if doc.methods.is_empty() {
        return Err(CliError::Usage("methods must not be empty".into()));
    }
    let seed = c.seed.unwrap_or(0);
    let mut study = StudyConfig::new(doc.model.theta, doc.model.noise.s_eps_sq, doc.model.n, 1, Vec::new());
    study.delta = doc.model.delta;
    study.bounds = doc.bounds;
    study.filter = doc.filter;
    let fcfg = study.filter_config(seed);
    fcfg.validate()?;
    create_out(&c.out)?;
    let y = simulate(&doc.model, seed)?.y;
    let mut summary = Vec::new();
    for kind in doc.methods {
        let start = std::time::Instant::now();
        let res = run_filter(kind, &y, &fcfg)?;
        let secs = start.elapsed().as_secs_f64();
        res.save_path_csv(c.out.join(format!("{}_path.csv", kind.name())))?;
        summary.push(serde_json::json!({ "method": kind.name(), "estimate": res.estimate, "wall_clock_s": secs }));
    }
    write_json(&summary, c.out.join("filters.json"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Estimate(c) | Command::McStudy(c) | Command::Coverage(c) | Command::CompareFilters(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Estimate(c) => cmd_estimate(c),
        Command::McStudy(c) => cmd_mc_study(c),
        Command::Coverage(c) => cmd_coverage(c),
        Command::CompareFilters(c) => cmd_compare_filters(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
