//! JSON configuration documents: job-size models, simulation runs,
//! estimation settings and Monte-Carlo experiment specs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wkinv_core::joint::DEFAULT_MAX_ITER;
use wkinv_core::sim::default_burn_in;
use wkinv_core::JobSizeModel;

use crate::error::{AppError, Result};

/// Job-size law as written in config files, e.g.
/// `{"kind": "gamma_mixture", "alpha": [2, 6], "beta": [3.5, 90], "p": [0.6, 0.4]}`.
/// `beta` is a rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    #[serde(alias = "GammaMixture")]
    GammaMixture {
        alpha: Vec<f64>,
        beta: Vec<f64>,
        p: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    #[serde(alias = "LogNormal")]
    LogNormal {
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    #[serde(alias = "TruncatedNormal")]
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    #[serde(alias = "Exponential")]
    Exponential {
        #[serde(alias = "beta")]
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<JobSizeModel> {
        let (model, eta) = match self {
            ModelSpec::GammaMixture { alpha, beta, p, eta } => (JobSizeModel::gamma_mixture(alpha, beta, p), eta),
            ModelSpec::LogNormal { mu, sigma, eta } => (JobSizeModel::log_normal(*mu, *sigma), eta),
            ModelSpec::TruncatedNormal { mu, sigma, eta } => (JobSizeModel::truncated_normal(*mu, *sigma), eta),
            ModelSpec::Exponential { rate, eta } => (JobSizeModel::exponential(*rate), eta),
        };
        let model = model?;
        Ok(match eta {
            Some(e) => model.with_eta(*e)?,
            None => model,
        })
    }

    /// Same spec with the smoothness parameter written out.
    pub fn materialized(&self) -> Result<Self> {
        let eta_value = Some(self.build()?.smoothness_eta());
        let mut out = self.clone();
        match &mut out {
            ModelSpec::GammaMixture { eta, .. }
            | ModelSpec::LogNormal { eta, .. }
            | ModelSpec::TruncatedNormal { eta, .. }
            | ModelSpec::Exponential { eta, .. } => *eta = eta_value,
        }
        Ok(out)
    }
}

/// Config for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: ModelSpec,
    pub lambda: f64,
    pub xi: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Settings shared by the estimation subcommands. Every field is optional;
/// command-line flags take precedence, then this file, then the sample's
/// metadata sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub lambda: Option<f64>,
    pub xi: Option<f64>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub h: Option<f64>,
    pub panels: Option<usize>,
    pub clamp: Option<bool>,
    pub s_max: Option<f64>,
    pub s_step: Option<f64>,
    pub x_max: Option<f64>,
    pub x_step: Option<f64>,
    pub k: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub omega: Option<f64>,
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// CF mean-squared error over `(s, n)`.
    CfMse,
    /// CDF mean-squared error over `(x, n)` with a truncation rule.
    CdfRisk,
    /// CDF curves for several truncations at one sample size.
    Figure,
    /// Mean of the martingale increments and the error-representation residual.
    Martingale,
    /// Joint arrival-rate estimation error.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HRule {
    /// `h_n = n^{1/(2(1+eta))}`.
    Theorem2 { eta: f64 },
    Fixed(f64),
}

impl HRule {
    pub fn h_for(&self, n: usize) -> f64 {
        match *self {
            HRule::Theorem2 { eta } => wkinv_core::invert::choose_truncation(n, eta),
            HRule::Fixed(h) => h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    #[default]
    Auto,
    Fixed(f64),
}

/// Settings of the joint-rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct JointSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

/// `start, start + step, ...` up to `stop` inclusive (within rounding).
pub fn range_grid(start: f64, stop: f64, step: f64) -> Option<Vec<f64>> {
    if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
        return None;
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Some((0..=count).map(|i| start + i as f64 * step).collect())
}

fn grid<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    match GridSpec::deserialize(d)? {
        GridSpec::List(v) => Ok(v),
        GridSpec::Range { start, stop, step } => {
            range_grid(start, stop, step).ok_or_else(|| serde::de::Error::custom("range grid needs step > 0 and stop >= start"))
        }
    }
}

/// A Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub lambda: f64,
    pub xi: f64,
    pub n_grid: Vec<usize>,
    /// A list, or `{"start": a, "stop": b, "step": d}`.
    #[serde(default, skip_serializing_if = "Vec::is_empty", deserialize_with = "grid")]
    pub s_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", deserialize_with = "grid")]
    pub x_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub h_list: Vec<f64>,
    pub replications: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_rule: Option<HRule>,
    #[serde(default)]
    pub epsilon_rule: EpsilonRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Quadrature panels; `None` uses `max(4096, ceil(64 h (1 + x_max)))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointSettings>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<JobSizeModel> {
        let model = self.model.build()?;
        let bad = |m: String| Err(AppError::Config(m));
        if !(self.lambda > 0.0 && self.xi > 0.0) {
            return bad(format!("lambda and xi must be positive (lambda={}, xi={})", self.lambda, self.xi));
        }
        let rho = self.lambda * model.mean();
        if rho >= 1.0 {
            return bad(format!("unstable configuration: rho = {rho} >= 1"));
        }
        if self.replications < 2 {
            return bad(format!("replications must be at least 2, got {}", self.replications));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] < 2 {
            return bad("n_grid must be non-empty, strictly increasing and >= 2".into());
        }
        let needs = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(AppError::Config(format!("{:?} experiment needs a non-empty {name}", self.experiment)));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(AppError::Config(format!("{name} must be finite and nonnegative")));
            }
            Ok(())
        };
        match self.experiment {
            ExperimentKind::CfMse | ExperimentKind::Martingale => needs("s_grid", &self.s_grid)?,
            ExperimentKind::CdfRisk => {
                needs("x_grid", &self.x_grid)?;
                if self.h_rule.is_none() {
                    return bad("cdf_risk needs an h_rule".into());
                }
            }
            ExperimentKind::Figure => {
                needs("x_grid", &self.x_grid)?;
                needs("h_list", &self.h_list)?;
                if self.n_grid.len() != 1 {
                    return bad("figure experiments take a single sample size in n_grid".into());
                }
            }
            ExperimentKind::Joint => {}
        }
        if let Some(HRule::Fixed(h)) | Some(HRule::Theorem2 { eta: h }) = self.h_rule {
            if !(h > 0.0) {
                return bad("h_rule parameter must be positive".into());
            }
        }
        if let EpsilonRule::Fixed(e) = self.epsilon_rule {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("epsilon must lie in (0, 1), got {e}"));
            }
        }
        Ok(model)
    }

    /// Copy with data-independent defaults written out (model eta, burn-in,
    /// the default h rule).
    pub fn materialized(&self) -> Result<Self> {
        let model = self.validate()?;
        let mut out = self.clone();
        out.model = self.model.materialized()?;
        out.burn_in = Some(self.burn_in.unwrap_or_else(|| default_burn_in(self.lambda * model.mean())));
        if out.h_rule.is_none() && matches!(self.experiment, ExperimentKind::Joint) {
            out.h_rule = Some(HRule::Theorem2 { eta: model.smoothness_eta() });
        }
        if matches!(self.experiment, ExperimentKind::Joint) {
            let j = out.joint.get_or_insert_with(JointSettings::default);
            j.omega.get_or_insert(0.5);
            j.tol.get_or_insert(1e-6);
            j.max_iter.get_or_insert(DEFAULT_MAX_ITER);
            j.lambda0.get_or_insert(self.xi);
            j.clamp.get_or_insert(false);
        }
        Ok(out)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| AppError::Json { path: path.to_path_buf(), source })
}
