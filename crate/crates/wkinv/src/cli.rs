//! Command-line surface. Settings resolve as flag, then `--config` file,
//! then the sample's metadata sidecar.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wkinv_core::cf::{cf_on_grid, choose_epsilon};
use wkinv_core::invert::{choose_truncation, default_panels, invert_estimate};
use wkinv_core::joint::{choose_outer_truncation, default_x_panels, estimate_joint, JointConfig, DEFAULT_MAX_ITER};
use wkinv_core::sim::default_burn_in;
use wkinv_core::{simulate, MidpointRule, SimConfig, WorkloadSample};

use crate::config::{range_grid, read_json, EstimateConfig, ExperimentSpec, SimulationConfig};
use crate::error::{AppError, Result};
use crate::harness::{run_experiment, Outcome};
use crate::io::{read_sample, sha256_hex, write_cdf, write_cf, write_json, write_sample, Manifest, SampleMeta};

/// Default number of `x` points when only `x_max` is known.
const DEFAULT_X_POINTS: usize = 400;
const DEFAULT_S_MAX: f64 = 10.0;
const DEFAULT_S_STEP: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "wkinv", version, about = "Nonparametric job-size CDF estimation from sampled M/G/1 workload")]
pub struct Cli {
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate probed workload observations.
    Simulate(SimulateArgs),
    /// Estimate the job-size CF on a grid.
    EstimateCf(EstimateArgs),
    /// Estimate the job-size CDF by CF inversion.
    EstimateCdf(EstimateArgs),
    /// Estimate the arrival rate and the CDF jointly.
    Joint(EstimateArgs),
    /// Run a Monte-Carlo experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct EstimateArgs {
    /// Sample CSV (`index,t,V`).
    #[arg(long)]
    pub sample: PathBuf,
    /// JSON settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Smoothness parameter used by the automatic truncation `h = n^{1/(2(1+eta))}`.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub panels: Option<usize>,
    /// Project CDF values into [0, 1].
    #[arg(long)]
    pub clamp: Option<bool>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub s_step: Option<f64>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub x_step: Option<f64>,
    /// Outer truncation of the busy-fraction integral (joint only).
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed_base`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `runs/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_CONFIG } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let work = move || match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::EstimateCf(a) => cmd_estimate_cf(&a),
        Command::EstimateCdf(a) => cmd_estimate_cdf(&a),
        Command::Joint(a) => cmd_joint(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    };
    match cli.threads {
        Some(0) => Err(AppError::Config("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| AppError::Config(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg: SimulationConfig = read_json(&a.config)?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.xi = a.xi.unwrap_or(cfg.xi);
    cfg.burn_in = a.burn_in.or(cfg.burn_in);
    let model = cfg.model.build()?;
    let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(cfg.lambda * model.mean()));
    cfg.burn_in = Some(burn_in);
    cfg.model = cfg.model.materialized()?;
    let sim = SimConfig { lambda: cfg.lambda, xi: cfg.xi, n: cfg.n, burn_in: Some(burn_in), seed: cfg.seed };
    let sample = simulate(&model, &sim)?;
    let meta = SampleMeta {
        lambda: cfg.lambda,
        xi: cfg.xi,
        n: cfg.n,
        seed: Some(cfg.seed),
        burn_in: Some(burn_in),
        model: Some(cfg.model.clone()),
    };
    let path = a.out.join("sample.csv");
    write_sample(&path, &sample, &meta)?;
    log::info!("wrote {} observations to {}", sample.observations().len(), path.display());
    let mut manifest = Manifest::new("simulate", &cfg, Some(cfg.seed))?;
    manifest.outputs = vec!["sample.csv".into(), "sample.meta.json".into()];
    manifest.write(&a.out)?;
    Ok(())
}

/// Estimation settings after applying flag > file > sidecar precedence.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    sample: String,
    sample_sha256: String,
    n: usize,
    lambda: Option<f64>,
    xi: f64,
    epsilon: f64,
    eta: Option<f64>,
    settings: EstimateConfig,
}

struct Loaded {
    sample: WorkloadSample,
    resolved: Resolved,
}

fn merge(a: &EstimateArgs) -> Result<EstimateConfig> {
    let file: EstimateConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => EstimateConfig::default(),
    };
    Ok(EstimateConfig {
        lambda: a.lambda.or(file.lambda),
        xi: a.xi.or(file.xi),
        epsilon: a.epsilon.or(file.epsilon),
        eta: a.eta.or(file.eta),
        h: a.h.or(file.h),
        panels: a.panels.or(file.panels),
        clamp: a.clamp.or(file.clamp),
        s_max: a.s_max.or(file.s_max),
        s_step: a.s_step.or(file.s_step),
        x_max: a.x_max.or(file.x_max),
        x_step: a.x_step.or(file.x_step),
        k: a.k.or(file.k),
        tol: a.tol.or(file.tol),
        max_iter: a.max_iter.or(file.max_iter),
        omega: a.omega.or(file.omega),
        lambda0: a.lambda0.or(file.lambda0),
    })
}

/// Loads the sample; `need_lambda` is false for the joint estimator, which
/// uses a placeholder rate only to construct the sample.
fn load(a: &EstimateArgs, need_lambda: bool) -> Result<Loaded> {
    let settings = merge(a)?;
    let bytes = std::fs::read(&a.sample).map_err(|e| AppError::io(&a.sample, e))?;
    let file = read_sample(&a.sample)?;
    let meta = file.meta.clone();
    let lambda = settings.lambda.or(meta.as_ref().map(|m| m.lambda));
    let xi = settings
        .xi
        .or(meta.as_ref().map(|m| m.xi))
        .ok_or_else(|| AppError::Config("probe rate unknown: pass --xi or provide a sidecar".into()))?;
    if need_lambda && lambda.is_none() {
        return Err(AppError::Config("arrival rate unknown: pass --lambda or provide a sidecar".into()));
    }
    let eta = match settings.eta {
        Some(e) => Some(e),
        None => match meta.as_ref().and_then(|m| m.model.as_ref()) {
            Some(spec) => Some(spec.build()?.smoothness_eta()),
            None => None,
        },
    };
    let sample = file.into_sample(lambda.unwrap_or(1.0), xi).map_err(|e| e.context(a.sample.display()))?;
    let epsilon = match settings.epsilon {
        Some(e) => e,
        None => choose_epsilon(&sample),
    };
    let resolved = Resolved {
        sample: a.sample.display().to_string(),
        sample_sha256: sha256_hex(&bytes),
        n: sample.n(),
        lambda,
        xi,
        epsilon,
        eta,
        settings,
    };
    Ok(Loaded { sample, resolved })
}

fn uniform_grid(max: f64, step: f64, what: &str) -> Result<Vec<f64>> {
    range_grid(0.0, max, step).ok_or_else(|| AppError::Config(format!("{what} grid needs max >= 0 and step > 0")))
}

fn resolve_h(r: &Resolved) -> Result<f64> {
    match (r.settings.h, r.eta) {
        (Some(h), _) => Ok(h),
        (None, Some(eta)) => Ok(choose_truncation(r.n, eta)),
        (None, None) => Err(AppError::Config("truncation unknown: pass --h or --eta".into())),
    }
}

fn write_manifest(command: &str, out: &Path, resolved: &impl Serialize, outputs: &[&str]) -> Result<()> {
    let mut m = Manifest::new(command, resolved, None)?;
    m.outputs = outputs.iter().map(|s| s.to_string()).collect();
    m.write(out)?;
    Ok(())
}

fn cmd_estimate_cf(a: &EstimateArgs) -> Result<()> {
    let Loaded { sample, mut resolved } = load(a, true)?;
    let s_max = *resolved.settings.s_max.get_or_insert(DEFAULT_S_MAX);
    let s_step = *resolved.settings.s_step.get_or_insert(DEFAULT_S_STEP);
    let grid = uniform_grid(s_max, s_step, "s")?;
    let lambda = resolved.lambda.expect("checked by load");
    let cf = cf_on_grid(&sample, lambda, resolved.epsilon, &grid)?;
    if cf.truncated_count() > 0 {
        log::warn!("{} of {} grid points hit the denominator floor", cf.truncated_count(), grid.len());
    }
    write_cf(&a.out.join("cf.csv"), &cf)?;
    write_manifest("estimate-cf", &a.out, &resolved, &["cf.csv"])
}

fn x_grid_for(resolved: &mut Resolved, sample: &WorkloadSample) -> Result<Vec<f64>> {
    let x_max = match resolved.settings.x_max {
        Some(x) => x,
        None => choose_outer_truncation(sample)?,
    };
    let x_step = *resolved.settings.x_step.get_or_insert(x_max / DEFAULT_X_POINTS as f64);
    resolved.settings.x_max = Some(x_max);
    uniform_grid(x_max, x_step, "x")
}

fn cmd_estimate_cdf(a: &EstimateArgs) -> Result<()> {
    let Loaded { sample, mut resolved } = load(a, true)?;
    let h = resolve_h(&resolved)?;
    resolved.settings.h = Some(h);
    let x_grid = x_grid_for(&mut resolved, &sample)?;
    let x_max = x_grid.last().copied().unwrap_or(0.0);
    let panels = *resolved.settings.panels.get_or_insert(default_panels(h, x_max));
    let clamp = *resolved.settings.clamp.get_or_insert(false);
    let lambda = resolved.lambda.expect("checked by load");
    let rule = MidpointRule::new(h, panels)?;
    let cf = wkinv_core::cf::cf_on_midpoints(&sample, lambda, resolved.epsilon, rule)?;
    let cdf = invert_estimate(&cf, &x_grid, clamp)?;
    log::info!("h = {h}, panels = {panels}");
    write_cdf(&a.out.join("cdf.csv"), &cdf)?;
    write_manifest("estimate-cdf", &a.out, &resolved, &["cdf.csv"])
}

#[derive(Debug, Serialize)]
struct JointSummary {
    lambda_hat: f64,
    converged: bool,
    iterations: usize,
    residual: f64,
    h: f64,
    k: f64,
}

fn cmd_joint(a: &EstimateArgs) -> Result<()> {
    let Loaded { sample, mut resolved } = load(a, false)?;
    let h = resolve_h(&resolved)?;
    let s = &mut resolved.settings;
    s.h = Some(h);
    let k = match s.k {
        Some(k) => k,
        None => choose_outer_truncation(&sample)?,
    };
    s.k = Some(k);
    let mut config = JointConfig::new(h);
    config.k = Some(k);
    config.tol = *s.tol.get_or_insert(config.tol);
    config.max_iter = *s.max_iter.get_or_insert(DEFAULT_MAX_ITER);
    config.omega = *s.omega.get_or_insert(config.omega);
    config.lambda0 = Some(*s.lambda0.get_or_insert(resolved.xi));
    config.clamp = *s.clamp.get_or_insert(false);
    config.epsilon = Some(resolved.epsilon);
    config.s_panels = Some(*s.panels.get_or_insert(default_panels(h, k)));
    config.x_panels = Some(default_x_panels(h, k));
    let est = estimate_joint(&sample, &config)?;
    if !est.converged {
        log::warn!("joint iteration stopped after {} iterations (residual {})", est.iterations, est.residual);
    }
    let summary = JointSummary {
        lambda_hat: est.lambda_hat,
        converged: est.converged,
        iterations: est.iterations,
        residual: est.residual,
        h,
        k: est.k,
    };
    write_json(&a.out.join("joint.json"), &summary)?;
    write_cdf(&a.out.join("cdf.csv"), &est.cdf)?;
    write_manifest("joint", &a.out, &resolved, &["joint.json", "cdf.csv"])
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut spec: ExperimentSpec = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        spec.seed_base = seed;
    }
    let out = match &a.out {
        Some(o) => o.clone(),
        None => {
            let name = if spec.name.is_empty() { format!("{:?}", spec.experiment).to_lowercase() } else { spec.name.clone() };
            PathBuf::from("runs").join(name)
        }
    };
    let (outcome, manifest) = run_experiment(&spec, &out)?;
    match &outcome {
        Outcome::Risk(r) => {
            for s in &r.slopes {
                println!("{}: slope {:.4} (stderr {:.4})", s.name, s.slope, s.stderr);
            }
        }
        Outcome::Figure(f) => {
            for (k, h) in f.h_list.iter().enumerate() {
                println!("h={h}: median sup error {:.4}, best in {} reps", f.median_sup_error[k], f.best_counts[k]);
            }
        }
        Outcome::Martingale(m) => {
            for r in &m.rows {
                println!(
                    "s={} n={}: mean Z = {:.3e}{:+.3e}i (se {:.1e}, {:.1e}), max residual {:.1e}",
                    r.s, r.n, r.mean_re, r.mean_im, r.se_re, r.se_im, r.max_residual
                );
            }
        }
        Outcome::Joint(j) => {
            let mut ns: Vec<usize> = j.runs.iter().map(|r| r.n).collect();
            ns.dedup();
            for n in ns {
                println!("n={n}: median |relative error| {:.4}", j.median_abs_rel_error(n));
            }
        }
    }
    println!("wrote {} files to {}", manifest.outputs.len() + 1, out.display());
    Ok(())
}
