//! Monte-Carlo experiments. Replications run in parallel on the current
//! rayon pool; each one draws from its own seed and results are collected
//! by replication index, so reports do not depend on the thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use wkinv_core::cf::{cf_on_midpoints, choose_epsilon, error_representation_residual, estimate_gamma_eps, martingale_sum};
use wkinv_core::invert::{default_panels, invert_estimate};
use wkinv_core::joint::{estimate_joint, JointConfig};
use wkinv_core::sim::char_exponent;
use wkinv_core::{simulate, CdfEstimate, JobSizeModel, MidpointRule, SimConfig, WorkloadSample};

use crate::config::{EpsilonRule, ExperimentKind, ExperimentSpec, HRule};
use crate::error::{AppError, Result};
use crate::io::{write_curve, write_table, Manifest};

/// Seed of replication `r` at the `n_index`-th sample size:
/// `seed_base xor r`, with the size index in the high bits.
pub fn replication_seed(seed_base: u64, n_index: usize, r: usize) -> u64 {
    seed_base ^ (r as u64) ^ ((n_index as u64) << 40)
}

/// Runs `f` for every replication index, in parallel, keeping index order.
fn replicate<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..reps).into_par_iter().map(f).collect()
}

/// Sample mean and its standard error (sample standard deviation over `sqrt(m)`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Median; the mean of the two central values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slope {
    pub name: String,
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of `ln y` on `ln x`. The standard error propagates
/// the relative Monte-Carlo errors `se_i / y_i` through the regression
/// weights, so it is defined for two points as well.
pub fn log_log_slope(name: impl Into<String>, x: &[f64], y: &[f64], se: &[f64]) -> Option<Slope> {
    let pts: Vec<(f64, f64, f64)> = x
        .iter()
        .zip(y)
        .zip(se)
        .filter(|((&x, &y), _)| x > 0.0 && y > 0.0)
        .map(|((&x, &y), &se)| (x.ln(), y.ln(), se / y))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let var: f64 = pts.iter().map(|p| ((p.0 - mx) / sxx).powi(2) * p.2.powi(2)).sum();
    Some(Slope { name: name.into(), slope, stderr: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCell {
    /// `s` or `x`.
    pub param: f64,
    pub n: usize,
    pub mse: f64,
    pub se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    /// Column name of `RiskCell::param`.
    pub param_name: &'static str,
    pub cells: Vec<RiskCell>,
    pub slopes: Vec<Slope>,
    pub runtime_seconds: f64,
}

impl RiskReport {
    pub fn cell(&self, param: f64, n: usize) -> Option<&RiskCell> {
        self.cells.iter().find(|c| c.param == param && c.n == n)
    }

    pub fn slope(&self, name: &str) -> Option<&Slope> {
        self.slopes.iter().find(|s| s.name == name)
    }

    /// Writes `<stem>.csv` and `<stem>.slopes.csv`; returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let cells = dir.join(format!("{stem}.csv"));
        write_table(
            &cells,
            &[self.param_name, "n", "mse", "se", "reps"],
            self.cells
                .iter()
                .map(|c| vec![c.param.to_string(), c.n.to_string(), c.mse.to_string(), c.se.to_string(), c.reps.to_string()]),
        )?;
        let slopes = dir.join(format!("{stem}.slopes.csv"));
        write_table(
            &slopes,
            &["name", "slope", "stderr"],
            self.slopes.iter().map(|s| vec![s.name.clone(), s.slope.to_string(), s.stderr.to_string()]),
        )?;
        Ok(vec![cells, slopes])
    }
}

fn fmt_param(v: f64) -> String {
    format!("{v}")
}

/// Slope name for MSE against `n` at a fixed parameter, e.g. `n@s=2`.
pub fn n_slope_name(param_name: &str, param: f64) -> String {
    format!("n@{param_name}={}", fmt_param(param))
}

/// Slope name for MSE against `s` at a fixed sample size, e.g. `s@n=10000`.
pub fn s_slope_name(n: usize) -> String {
    format!("s@n={n}")
}

fn simulate_rep(spec: &ExperimentSpec, model: &JobSizeModel, n_index: usize, n: usize, r: usize) -> Result<WorkloadSample> {
    let config = SimConfig {
        lambda: spec.lambda,
        xi: spec.xi,
        n,
        burn_in: spec.burn_in,
        seed: replication_seed(spec.seed_base, n_index, r),
    };
    simulate(model, &config).map_err(|e| AppError::from(e).context(format!("simulation n={n} rep={r}")))
}

fn epsilon_for(spec: &ExperimentSpec, sample: &WorkloadSample) -> f64 {
    match spec.epsilon_rule {
        EpsilonRule::Auto => choose_epsilon(sample),
        EpsilonRule::Fixed(e) => e,
    }
}

/// Builds cells from per-replication squared errors `errs[rep][param]`.
fn cells_from(params: &[f64], n: usize, errs: &[Vec<f64>]) -> Vec<RiskCell> {
    params
        .iter()
        .enumerate()
        .map(|(k, &param)| {
            let column: Vec<f64> = errs.iter().map(|row| row[k]).collect();
            let (mse, se) = mean_se(&column);
            RiskCell { param, n, mse, se, reps: column.len() }
        })
        .collect()
}

fn n_slopes(param_name: &str, params: &[f64], n_grid: &[usize], cells: &[RiskCell]) -> Vec<Slope> {
    if n_grid.len() < 2 {
        return Vec::new();
    }
    params
        .iter()
        .filter_map(|&p| {
            let row: Vec<&RiskCell> = n_grid.iter().filter_map(|&n| cells.iter().find(|c| c.param == p && c.n == n)).collect();
            let x: Vec<f64> = row.iter().map(|c| c.n as f64).collect();
            let y: Vec<f64> = row.iter().map(|c| c.mse).collect();
            let se: Vec<f64> = row.iter().map(|c| c.se).collect();
            log_log_slope(n_slope_name(param_name, p), &x, &y, &se)
        })
        .collect()
}

/// Monte-Carlo MSE of the CF estimator over `s_grid x n_grid`, with slopes
/// of log-MSE against log-n per `s` and against log-s (over `s >= 2`) per `n`.
pub fn mc_cf_mse(spec: &ExperimentSpec) -> Result<RiskReport> {
    let start = Instant::now();
    let model = spec.validate()?;
    let truth: Vec<_> = spec.s_grid.iter().map(|&s| model.cf(s)).collect();
    let mut cells = Vec::new();
    for (i, &n) in spec.n_grid.iter().enumerate() {
        let errs = replicate(spec.replications, |r| {
            let sample = simulate_rep(spec, &model, i, n, r)?;
            let eps = epsilon_for(spec, &sample);
            Ok(spec
                .s_grid
                .iter()
                .zip(&truth)
                .map(|(&s, g)| (estimate_gamma_eps(&sample, spec.lambda, s, eps).0 - g).norm_sqr())
                .collect::<Vec<f64>>())
        })?;
        cells.extend(cells_from(&spec.s_grid, n, &errs));
    }
    let mut slopes = n_slopes("s", &spec.s_grid, &spec.n_grid, &cells);
    for &n in &spec.n_grid {
        let row: Vec<&RiskCell> = cells.iter().filter(|c| c.n == n && c.param >= 2.0).collect();
        let x: Vec<f64> = row.iter().map(|c| c.param).collect();
        let y: Vec<f64> = row.iter().map(|c| c.mse).collect();
        let se: Vec<f64> = row.iter().map(|c| c.se).collect();
        slopes.extend(log_log_slope(s_slope_name(n), &x, &y, &se));
    }
    Ok(RiskReport { param_name: "s", cells, slopes, runtime_seconds: start.elapsed().as_secs_f64() })
}

fn panels_for(spec: &ExperimentSpec, h: f64) -> usize {
    let x_max = spec.x_grid.iter().copied().fold(0.0, f64::max);
    spec.panels.unwrap_or_else(|| default_panels(h, x_max))
}

/// Known-rate CDF estimate of one sample at truncation `h`.
fn cdf_estimate(spec: &ExperimentSpec, sample: &WorkloadSample, h: f64, clamp: bool) -> Result<CdfEstimate> {
    let rule = MidpointRule::new(h, panels_for(spec, h))?;
    let eps = epsilon_for(spec, sample);
    let cf = cf_on_midpoints(sample, spec.lambda, eps, rule)?;
    Ok(invert_estimate(&cf, &spec.x_grid, clamp)?)
}

fn true_cdf(model: &JobSizeModel, x_grid: &[f64]) -> Result<Vec<f64>> {
    x_grid.iter().map(|&x| model.cdf(x).map_err(AppError::from)).collect()
}

/// Monte-Carlo MSE of the raw (unclamped) CDF estimator over
/// `x_grid x n_grid` with `h` from the spec's rule, and per-`x` slopes
/// against log-n.
pub fn mc_cdf_risk(spec: &ExperimentSpec) -> Result<RiskReport> {
    let start = Instant::now();
    let model = spec.validate()?;
    let rule = spec.h_rule.ok_or_else(|| AppError::Config("cdf_risk needs an h_rule".into()))?;
    let truth = true_cdf(&model, &spec.x_grid)?;
    let mut cells = Vec::new();
    for (i, &n) in spec.n_grid.iter().enumerate() {
        let h = rule.h_for(n);
        let errs = replicate(spec.replications, |r| {
            let sample = simulate_rep(spec, &model, i, n, r)?;
            let est = cdf_estimate(spec, &sample, h, false).map_err(|e| e.context(format!("n={n} rep={r}")))?;
            Ok(est.values.iter().zip(&truth).map(|(g, t)| (g - t).powi(2)).collect::<Vec<f64>>())
        })?;
        cells.extend(cells_from(&spec.x_grid, n, &errs));
    }
    let slopes = n_slopes("x", &spec.x_grid, &spec.n_grid, &cells);
    Ok(RiskReport { param_name: "x", cells, slopes, runtime_seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureReport {
    pub n: usize,
    pub h_list: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub truth: Vec<f64>,
    /// Curves of replication 0, one per `h`.
    pub curves: Vec<CdfEstimate>,
    /// `sup_x |G_hat - G|` indexed `[rep][h]`.
    pub sup_errors: Vec<Vec<f64>>,
    pub median_sup_error: Vec<f64>,
    /// Number of replications in which each `h` has the smallest sup error.
    pub best_counts: Vec<usize>,
    pub runtime_seconds: f64,
}

impl FigureReport {
    fn h_index(&self, h: f64) -> Option<usize> {
        self.h_list.iter().position(|&v| v == h)
    }

    pub fn median_sup_at(&self, h: f64) -> Option<f64> {
        self.h_index(h).map(|k| self.median_sup_error[k])
    }

    /// Fraction of replications whose best `h` lies in `set`.
    pub fn best_fraction(&self, set: &[f64]) -> f64 {
        let hits: usize = set.iter().filter_map(|&h| self.h_index(h)).map(|k| self.best_counts[k]).sum();
        hits as f64 / self.sup_errors.len() as f64
    }

    /// Writes `truth.csv`, `curve_h<h>.csv` per `h`, `sup_errors.csv` and `summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let truth = dir.join("truth.csv");
        write_curve(&truth, "G_true", &self.x_grid, &self.truth)?;
        out.push(truth);
        for (h, curve) in self.h_list.iter().zip(&self.curves) {
            let path = dir.join(format!("curve_h{h}.csv"));
            write_curve(&path, "G_hat", &curve.x_grid, &curve.values)?;
            out.push(path);
        }
        let sup = dir.join("sup_errors.csv");
        write_table(
            &sup,
            &["rep", "h", "sup_error"],
            self.sup_errors.iter().enumerate().flat_map(|(r, row)| {
                self.h_list.iter().zip(row).map(move |(h, e)| vec![r.to_string(), h.to_string(), e.to_string()])
            }),
        )?;
        out.push(sup);
        let summary = dir.join("summary.csv");
        let reps = self.sup_errors.len();
        write_table(
            &summary,
            &["h", "median_sup_error", "best_count", "reps"],
            self.h_list.iter().enumerate().map(|(k, h)| {
                vec![h.to_string(), self.median_sup_error[k].to_string(), self.best_counts[k].to_string(), reps.to_string()]
            }),
        )?;
        out.push(summary);
        Ok(out)
    }
}

/// CDF curves for each `h` in `h_list` at the first sample size, with the
/// sup-norm error over `x_grid` per replication.
pub fn reproduce_figure(spec: &ExperimentSpec) -> Result<FigureReport> {
    let start = Instant::now();
    let model = spec.validate()?;
    let n = spec.n_grid[0];
    let truth = true_cdf(&model, &spec.x_grid)?;
    let runs = replicate(spec.replications, |r| {
        let sample = simulate_rep(spec, &model, 0, n, r)?;
        let mut sups = Vec::with_capacity(spec.h_list.len());
        let mut curves = Vec::new();
        for &h in &spec.h_list {
            let est = cdf_estimate(spec, &sample, h, false).map_err(|e| e.context(format!("h={h} rep={r}")))?;
            sups.push(est.values.iter().zip(&truth).map(|(g, t)| (g - t).abs()).fold(0.0, f64::max));
            if r == 0 {
                curves.push(est);
            }
        }
        Ok((sups, curves))
    })?;
    let mut best_counts = vec![0; spec.h_list.len()];
    for (sups, _) in &runs {
        let best = (0..sups.len()).min_by(|&a, &b| sups[a].total_cmp(&sups[b])).expect("h_list is non-empty");
        best_counts[best] += 1;
    }
    let median_sup_error =
        (0..spec.h_list.len()).map(|k| median(&runs.iter().map(|(s, _)| s[k]).collect::<Vec<_>>())).collect();
    let mut runs = runs.into_iter();
    let (first, curves) = runs.next().expect("at least two replications");
    let mut sup_errors = vec![first];
    sup_errors.extend(runs.map(|(s, _)| s));
    Ok(FigureReport {
        n,
        h_list: spec.h_list.clone(),
        x_grid: spec.x_grid.clone(),
        truth,
        curves,
        sup_errors,
        median_sup_error,
        best_counts,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub s: f64,
    pub n: usize,
    /// Monte-Carlo mean of `(1/n) sum_j Z_j(s)`, real and imaginary parts.
    pub mean_re: f64,
    pub se_re: f64,
    pub mean_im: f64,
    pub se_im: f64,
    /// Largest residual of the error representation over replications
    /// (truncated replications excluded).
    pub max_residual: f64,
    pub truncated: usize,
    pub reps: usize,
}

impl MartingaleRow {
    /// Both parts of the mean lie within `k` standard errors of zero.
    pub fn centred_within(&self, k: f64) -> bool {
        let ok = |m: f64, se: f64| m.abs() <= k * se || (m == 0.0 && se == 0.0);
        ok(self.mean_re, self.se_re) && ok(self.mean_im, self.se_im)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub runtime_seconds: f64,
}

impl MartingaleReport {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let path = dir.join("martingale.csv");
        write_table(
            &path,
            &["s", "n", "mean_re", "se_re", "mean_im", "se_im", "max_residual", "truncated", "reps"],
            self.rows.iter().map(|r| {
                vec![
                    r.s.to_string(),
                    r.n.to_string(),
                    r.mean_re.to_string(),
                    r.se_re.to_string(),
                    r.mean_im.to_string(),
                    r.se_im.to_string(),
                    r.max_residual.to_string(),
                    r.truncated.to_string(),
                    r.reps.to_string(),
                ]
            }),
        )?;
        Ok(vec![path])
    }
}

/// Mean of the martingale increments under the true exponent, and the
/// residual of the error representation, per `(s, n)`.
pub fn martingale_diagnostic(spec: &ExperimentSpec) -> Result<MartingaleReport> {
    let start = Instant::now();
    let model = spec.validate()?;
    let mut rows = Vec::new();
    for (i, &n) in spec.n_grid.iter().enumerate() {
        let per_rep = replicate(spec.replications, |r| {
            let sample = simulate_rep(spec, &model, i, n, r)?;
            let eps = epsilon_for(spec, &sample);
            Ok(spec
                .s_grid
                .iter()
                .map(|&s| {
                    let z = martingale_sum(&sample, char_exponent(&model, spec.lambda, s), s) / sample.n() as f64;
                    let resid = error_representation_residual(&sample, spec.lambda, model.cf(s), s, eps);
                    (z, resid)
                })
                .collect::<Vec<_>>())
        })?;
        for (k, &s) in spec.s_grid.iter().enumerate() {
            let re: Vec<f64> = per_rep.iter().map(|row| row[k].0.re).collect();
            let im: Vec<f64> = per_rep.iter().map(|row| row[k].0.im).collect();
            let (mean_re, se_re) = mean_se(&re);
            let (mean_im, se_im) = mean_se(&im);
            let residuals: Vec<f64> = per_rep.iter().filter_map(|row| row[k].1).collect();
            rows.push(MartingaleRow {
                s,
                n,
                mean_re,
                se_re,
                mean_im,
                se_im,
                max_residual: residuals.iter().copied().fold(0.0, f64::max),
                truncated: per_rep.len() - residuals.len(),
                reps: per_rep.len(),
            });
        }
    }
    Ok(MartingaleReport { rows, runtime_seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointRun {
    pub n: usize,
    pub rep: usize,
    pub h: f64,
    pub k: f64,
    pub lambda_hat: f64,
    /// `(lambda_hat - lambda) / lambda`.
    pub rel_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointReport {
    pub lambda: f64,
    pub runs: Vec<JointRun>,
    pub runtime_seconds: f64,
}

impl JointReport {
    /// Median of `|rel_error|` at sample size `n`.
    pub fn median_abs_rel_error(&self, n: usize) -> f64 {
        median(&self.runs.iter().filter(|r| r.n == n).map(|r| r.rel_error.abs()).collect::<Vec<_>>())
    }

    /// Writes `joint_runs.csv` and `joint_summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let runs = dir.join("joint_runs.csv");
        write_table(
            &runs,
            &["n", "rep", "h", "k", "lambda_hat", "rel_error", "converged", "iterations", "residual"],
            self.runs.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    r.rep.to_string(),
                    r.h.to_string(),
                    r.k.to_string(),
                    r.lambda_hat.to_string(),
                    r.rel_error.to_string(),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    r.residual.to_string(),
                ]
            }),
        )?;
        let summary = dir.join("joint_summary.csv");
        let mut ns: Vec<usize> = self.runs.iter().map(|r| r.n).collect();
        ns.dedup();
        write_table(
            &summary,
            &["n", "median_abs_rel_error", "mse", "se", "converged", "reps"],
            ns.iter().map(|&n| {
                let sq: Vec<f64> = self.runs.iter().filter(|r| r.n == n).map(|r| r.rel_error.powi(2)).collect();
                let (mse, se) = mean_se(&sq);
                let converged = self.runs.iter().filter(|r| r.n == n && r.converged).count();
                vec![
                    n.to_string(),
                    self.median_abs_rel_error(n).to_string(),
                    mse.to_string(),
                    se.to_string(),
                    converged.to_string(),
                    sq.len().to_string(),
                ]
            }),
        )?;
        Ok(vec![runs, summary])
    }
}

/// Joint configuration for sample size `n` from a materialized spec.
pub fn joint_config_for(spec: &ExperimentSpec, model: &JobSizeModel, n: usize) -> JointConfig {
    let h = spec.h_rule.unwrap_or(HRule::Theorem2 { eta: model.smoothness_eta() }).h_for(n);
    let mut config = JointConfig::new(h);
    if let Some(j) = &spec.joint {
        config.k = j.k;
        config.omega = j.omega.unwrap_or(config.omega);
        config.tol = j.tol.unwrap_or(config.tol);
        config.max_iter = j.max_iter.unwrap_or(config.max_iter);
        config.lambda0 = j.lambda0;
        config.clamp = j.clamp.unwrap_or(config.clamp);
    }
    config.epsilon = match spec.epsilon_rule {
        EpsilonRule::Auto => None,
        EpsilonRule::Fixed(e) => Some(e),
    };
    config
}

/// Joint rate estimation error over replications.
pub fn joint_experiment(spec: &ExperimentSpec) -> Result<JointReport> {
    let start = Instant::now();
    let model = spec.validate()?;
    let mut runs = Vec::new();
    for (i, &n) in spec.n_grid.iter().enumerate() {
        let config = joint_config_for(spec, &model, n);
        runs.extend(replicate(spec.replications, |r| {
            let sample = simulate_rep(spec, &model, i, n, r)?;
            let est = estimate_joint(&sample, &config).map_err(|e| AppError::from(e).context(format!("joint n={n} rep={r}")))?;
            Ok(JointRun {
                n,
                rep: r,
                h: config.h,
                k: est.k,
                lambda_hat: est.lambda_hat,
                rel_error: (est.lambda_hat - spec.lambda) / spec.lambda,
                converged: est.converged,
                iterations: est.iterations,
                residual: est.residual,
            })
        })?);
    }
    Ok(JointReport { lambda: spec.lambda, runs, runtime_seconds: start.elapsed().as_secs_f64() })
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Risk(RiskReport),
    Figure(FigureReport),
    Martingale(MartingaleReport),
    Joint(JointReport),
}

impl Outcome {
    pub fn runtime_seconds(&self) -> f64 {
        match self {
            Outcome::Risk(r) => r.runtime_seconds,
            Outcome::Figure(r) => r.runtime_seconds,
            Outcome::Martingale(r) => r.runtime_seconds,
            Outcome::Joint(r) => r.runtime_seconds,
        }
    }
}

/// Runs the experiment described by `spec`.
pub fn run(spec: &ExperimentSpec) -> Result<Outcome> {
    Ok(match spec.experiment {
        ExperimentKind::CfMse => Outcome::Risk(mc_cf_mse(spec)?),
        ExperimentKind::CdfRisk => Outcome::Risk(mc_cdf_risk(spec)?),
        ExperimentKind::Figure => Outcome::Figure(reproduce_figure(spec)?),
        ExperimentKind::Martingale => Outcome::Martingale(martingale_diagnostic(spec)?),
        ExperimentKind::Joint => Outcome::Joint(joint_experiment(spec)?),
    })
}

/// Materializes `spec`, runs it and writes its tables plus
/// `experiment.manifest.json` under `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<(Outcome, Manifest)> {
    let spec = spec.materialized()?;
    let outcome = run(&spec)?;
    let files = match &outcome {
        Outcome::Risk(r) => r.write(out_dir, "report")?,
        Outcome::Figure(r) => r.write(out_dir)?,
        Outcome::Martingale(r) => r.write(out_dir)?,
        Outcome::Joint(r) => r.write(out_dir)?,
    };
    let mut manifest = Manifest::new("experiment", &spec, Some(spec.seed_base))?;
    manifest.outputs = files.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect();
    manifest.runtime_seconds = Some(outcome.runtime_seconds());
    manifest.write(out_dir)?;
    Ok((outcome, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelSpec;

    fn spec(kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            experiment: kind,
            model: ModelSpec::Exponential { rate: 1.0, eta: None },
            lambda: 0.5,
            xi: 1.0,
            n_grid: vec![200, 800],
            s_grid: vec![0.0, 1.0, 2.0, 4.0],
            x_grid: vec![0.5, 1.0, 2.0],
            h_list: vec![1.0, 3.0],
            replications: 6,
            seed_base: 11,
            h_rule: Some(HRule::Theorem2 { eta: 1.0 }),
            epsilon_rule: EpsilonRule::Auto,
            burn_in: Some(200),
            panels: Some(512),
            joint: None,
        }
    }

    #[test]
    fn stats_helpers() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x = [1e3, 4e3, 1.6e4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 7.0 * v.powf(-0.75)).collect();
        let s = log_log_slope("a", &x, &y, &[0.0; 3]).unwrap();
        assert!((s.slope + 0.75).abs() < 1e-12);
        assert_eq!(s.stderr, 0.0);
        // relative error r on each point: var = r^2 * sum w_i^2 = r^2 / Sxx
        let r = 0.1;
        let se: Vec<f64> = y.iter().map(|v| r * v).collect();
        let s = log_log_slope("a", &x, &y, &se).unwrap();
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / 3.0;
        let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
        assert!((s.stderr - r / sxx.sqrt()).abs() < 1e-12);
        assert!(log_log_slope("a", &[1.0], &[1.0], &[0.0]).is_none());
    }

    #[test]
    fn seeds_are_distinct_across_reps_and_sizes() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..4 {
            for r in 0..1000 {
                assert!(seen.insert(replication_seed(99, i, r)));
            }
        }
        assert_eq!(replication_seed(5, 0, 3), 5 ^ 3);
    }

    #[test]
    fn cf_mse_report_shape() {
        let rep = mc_cf_mse(&spec(ExperimentKind::CfMse)).unwrap();
        assert_eq!(rep.cells.len(), 8);
        assert!(rep.cells.iter().all(|c| c.mse >= 0.0 && c.reps == 6));
        // gamma_hat(0) = 1 exactly
        assert_eq!(rep.cell(0.0, 200).unwrap().mse, 0.0);
        assert!(rep.slope("n@s=1").is_some());
        assert!(rep.slope("s@n=800").is_some());
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let s = spec(ExperimentKind::CdfRisk);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| mc_cdf_risk(&s)).unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| mc_cdf_risk(&s)).unwrap();
        assert_eq!(one.cells, four.cells);
        assert_eq!(one.slopes, four.slopes);
    }

    #[test]
    fn martingale_increments_vanish_at_zero() {
        let mut s = spec(ExperimentKind::Martingale);
        s.s_grid = vec![0.0, 1.0];
        let rep = martingale_diagnostic(&s).unwrap();
        let zero = &rep.rows[0];
        assert_eq!((zero.mean_re, zero.mean_im, zero.se_re, zero.se_im), (0.0, 0.0, 0.0, 0.0));
        assert!(zero.centred_within(4.0));
        assert!(rep.rows.iter().all(|r| r.max_residual <= 1e-10));
    }

    #[test]
    fn figure_report_bookkeeping() {
        let mut s = spec(ExperimentKind::Figure);
        s.n_grid = vec![200];
        let rep = reproduce_figure(&s).unwrap();
        assert_eq!(rep.n, 200);
        assert_eq!(rep.curves.len(), 2);
        assert_eq!(rep.sup_errors.len(), 6);
        assert_eq!(rep.best_counts.iter().sum::<usize>(), 6);
        assert!((rep.best_fraction(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
