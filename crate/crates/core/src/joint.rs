//! Joint estimation of the arrival rate and the job-size CDF when the rate
//! is unknown, by matching the empirical busy fraction to
//! `lambda * int_0^k (1 - G_hat(x; lambda)) dx`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Float;

use crate::cf::{cf_on_midpoints, choose_epsilon, truncation_value};
use crate::error::{config_err, numeric_err, Result};
use crate::invert::{default_panels, CdfEstimate, MidpointRule};
use crate::sim::WorkloadSample;

/// The update contracts slowly (the equation holds for every rate when
/// `G_hat` is exact), so hundreds of iterations are typical.
pub const DEFAULT_MAX_ITER: usize = 5000;

const REANCHOR: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    /// Truncation of the inversion integral.
    pub h: f64,
    /// Outer truncation of the busy-fraction integral; `None` selects
    /// [`choose_outer_truncation`].
    pub k: Option<f64>,
    /// Relative step tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Damping weight of the fixed-point update.
    pub omega: f64,
    /// Starting rate; `None` starts from the probe rate `xi`.
    pub lambda0: Option<f64>,
    pub epsilon: Option<f64>,
    pub s_panels: Option<usize>,
    pub x_panels: Option<usize>,
    /// Project `G_hat(x; lambda)` into `[0, 1]` inside the iteration. Off by
    /// default: truncating the upward excursions near `G = 1` inflates the
    /// tail integral over the whole of `(0, k]` and biases the rate low.
    pub clamp: bool,
}

impl JointConfig {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            k: None,
            tol: 1e-6,
            max_iter: DEFAULT_MAX_ITER,
            omega: 0.5,
            lambda0: None,
            epsilon: None,
            s_panels: None,
            x_panels: None,
            clamp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub lambda_hat: f64,
    /// `G_hat(.; lambda_hat)` on the nodes of the busy-fraction quadrature.
    pub cdf: CdfEstimate,
    pub k: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Last relative step `|lambda_{m+1} - lambda_m| / lambda_m`.
    pub residual: f64,
    /// Iterates `lambda_0, lambda_1, ...`.
    pub trace: Vec<f64>,
}

/// `max(1.2 * max V, 5 * mean of the positive V)`.
pub fn choose_outer_truncation(sample: &WorkloadSample) -> Result<f64> {
    let (count, sum, max) = sample
        .observations()
        .iter()
        .filter(|&&v| v > 0.0)
        .fold((0usize, 0.0, 0.0f64), |(c, s, m), &v| (c + 1, s + v, m.max(v)));
    if count == 0 {
        return Err(config_err!("sample has no busy observations"));
    }
    Ok((1.2 * max).max(5.0 * sum / count as f64))
}

/// A CDF family indexed by the arrival rate, evaluated on fixed quadrature
/// nodes over `(0, k]`.
pub trait RateIndexedCdf {
    fn x_nodes(&self) -> &[f64];
    fn x_step(&self) -> f64;
    fn cdf(&self, lambda: f64) -> Vec<f64>;

    /// `int_0^k (1 - G(x; lambda)) dx` by the midpoint rule.
    fn tail_integral(&self, lambda: f64) -> f64 {
        self.cdf(lambda).iter().map(|g| 1.0 - g).sum::<f64>() * self.x_step()
    }
}

/// Outcome of the damped fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSolution {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub trace: Vec<f64>,
}

/// Iterates `lambda <- (1 - omega) lambda + omega * busy / I(lambda)`.
pub fn solve_rate<F: RateIndexedCdf + ?Sized>(
    family: &F,
    busy: f64,
    lambda0: f64,
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RateSolution> {
    if !(lambda0 > 0.0 && omega > 0.0 && omega <= 1.0 && tol > 0.0) {
        return Err(config_err!("need lambda0 > 0, omega in (0, 1], tol > 0"));
    }
    let mut lambda = lambda0;
    let mut trace = alloc::vec![lambda];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let integral = family.tail_integral(lambda);
        if !(integral > 0.0) || !integral.is_finite() {
            return Err(numeric_err!(
                "busy-fraction integral is {integral} at iterate {iteration} (lambda = {lambda}); trace {trace:?}"
            ));
        }
        let next = (1.0 - omega) * lambda + omega * busy / integral;
        residual = (next - lambda).abs() / lambda;
        lambda = next;
        trace.push(lambda);
        if residual <= tol {
            return Ok(RateSolution { lambda, iterations: iteration, converged: true, residual, trace });
        }
    }
    Ok(RateSolution { lambda, iterations: max_iter, converged: false, residual, trace })
}

/// A fixed CDF that does not depend on the rate (noise-free oracle).
pub struct FixedCdf {
    nodes: Vec<f64>,
    step: f64,
    values: Vec<f64>,
}

impl FixedCdf {
    pub fn new<G: Fn(f64) -> f64>(cdf: G, k: f64, x_panels: usize) -> Result<Self> {
        let rule = MidpointRule::new(k, x_panels)?;
        let nodes = rule.nodes();
        let values = nodes.iter().map(|&x| cdf(x)).collect();
        Ok(Self { nodes, step: rule.step(), values })
    }
}

impl RateIndexedCdf for FixedCdf {
    fn x_nodes(&self) -> &[f64] {
        &self.nodes
    }
    fn x_step(&self) -> f64 {
        self.step
    }
    fn cdf(&self, _lambda: f64) -> Vec<f64> {
        self.values.clone()
    }
}

/// The inversion estimator as a function of the rate. The CF estimate is
/// affine in `1/lambda` (`1 + (phi_hat + is)/lambda`) except at truncated
/// nodes, so the raw inversion splits as `offset(x) + slope(x) / lambda`;
/// both parts are computed once.
pub struct SampleCdfFamily {
    nodes: Vec<f64>,
    step: f64,
    offset: Vec<f64>,
    slope: Vec<f64>,
    h: f64,
    s_panels: usize,
    clamp: bool,
}

impl SampleCdfFamily {
    pub fn new(
        sample: &WorkloadSample,
        h: f64,
        k: f64,
        epsilon: f64,
        s_panels: usize,
        x_panels: usize,
        clamp: bool,
    ) -> Result<Self> {
        let s_rule = MidpointRule::new(h, s_panels)?;
        let x_rule = MidpointRule::new(k, x_panels)?;
        // with lambda = 1 the estimate is 1 + (phi_hat + is)
        let unit = cf_on_midpoints(sample, 1.0, epsilon, s_rule)?;
        let fixed = truncation_value(epsilon);
        let ds = s_rule.step();
        let mut w_offset = Vec::with_capacity(unit.grid.len());
        let mut w_slope = Vec::with_capacity(unit.grid.len());
        for ((&s, &g), &t) in unit.grid.iter().zip(&unit.values).zip(&unit.truncated) {
            if !(g.re.is_finite() && g.im.is_finite()) {
                return Err(numeric_err!("non-finite CF estimate at s = {s}"));
            }
            let scale = ds / s;
            if t {
                w_offset.push(fixed * scale);
                w_slope.push(Complex64::new(0.0, 0.0));
            } else {
                w_offset.push(Complex64::new(scale, 0.0));
                w_slope.push((g - 1.0) * scale);
            }
        }
        let nodes = x_rule.nodes();
        let dx = x_rule.step();
        let mut acc_a = vec![0.0; nodes.len()];
        let mut acc_b = vec![0.0; nodes.len()];
        for ((&s, wo), ws) in unit.grid.iter().zip(&w_offset).zip(&w_slope) {
            // e^{-isx} along the uniform x nodes, re-anchored every REANCHOR steps
            let step = Complex64::from_polar(1.0, -s * dx);
            let mut rot = Complex64::new(1.0, 0.0);
            for (m, &x) in nodes.iter().enumerate() {
                if m % REANCHOR == 0 {
                    let (sin, cos) = (s * x).sin_cos();
                    rot = Complex64::new(cos, -sin);
                } else {
                    rot *= step;
                }
                acc_a[m] += wo.re * rot.im + wo.im * rot.re;
                acc_b[m] += ws.re * rot.im + ws.im * rot.re;
            }
        }
        let offset = acc_a.iter().map(|a| 0.5 - a / PI).collect();
        let slope = acc_b.iter().map(|b| -b / PI).collect();
        Ok(Self { nodes, step: x_rule.step(), offset, slope, h, s_panels, clamp })
    }

    fn estimate(&self, lambda: f64) -> CdfEstimate {
        CdfEstimate {
            x_grid: self.nodes.clone(),
            values: self.cdf(lambda),
            h: self.h,
            quadrature_panels: self.s_panels,
            clamped: self.clamp,
        }
    }
}

impl SampleCdfFamily {
    /// Root of `busy = lambda * I(lambda)` for the unclamped family. With
    /// `I(lambda) = P - Q / lambda` the equation is linear in `lambda`:
    /// `lambda = (busy + Q) / P`. `None` when the root is not positive.
    pub fn unclamped_root(&self, busy: f64) -> Option<f64> {
        let p: f64 = self.offset.iter().map(|a| 1.0 - a).sum::<f64>() * self.step;
        let q: f64 = self.slope.iter().sum::<f64>() * self.step;
        let root = (busy + q) / p;
        (root > 0.0 && root.is_finite()).then_some(root)
    }
}

impl RateIndexedCdf for SampleCdfFamily {
    fn x_nodes(&self) -> &[f64] {
        &self.nodes
    }
    fn x_step(&self) -> f64 {
        self.step
    }
    fn cdf(&self, lambda: f64) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.slope)
            .map(|(a, b)| {
                let g = a + b / lambda;
                if self.clamp {
                    g.clamp(0.0, 1.0)
                } else {
                    g
                }
            })
            .collect()
    }
}

/// Default node count for the busy-fraction integral: `max(512, ceil(4 h k))`.
pub fn default_x_panels(h: f64, k: f64) -> usize {
    let wanted = (4.0 * h * k).ceil();
    if wanted.is_finite() {
        (wanted as usize).max(512)
    } else {
        512
    }
}

/// Simultaneous estimate of the arrival rate and the job-size CDF.
pub fn estimate_joint(sample: &WorkloadSample, config: &JointConfig) -> Result<JointEstimate> {
    let busy = sample.busy_fraction();
    if !(busy > 0.0 && busy < 1.0) {
        return Err(config_err!("busy fraction must lie strictly inside (0, 1), got {busy}"));
    }
    if !(config.h > 0.0 && config.tol > 0.0) {
        return Err(config_err!("h and tol must be positive"));
    }
    let k = match config.k {
        Some(k) if k > 0.0 => k,
        Some(k) => return Err(config_err!("k must be positive, got {k}")),
        None => choose_outer_truncation(sample)?,
    };
    let epsilon = config.epsilon.unwrap_or_else(|| choose_epsilon(sample));
    let s_panels = config.s_panels.unwrap_or_else(|| default_panels(config.h, k));
    let x_panels = config.x_panels.unwrap_or_else(|| default_x_panels(config.h, k));
    let family = SampleCdfFamily::new(sample, config.h, k, epsilon, s_panels, x_panels, config.clamp)?;
    let lambda0 = config.lambda0.unwrap_or(sample.xi());
    let sol = solve_rate(&family, busy, lambda0, config.omega, config.tol, config.max_iter)?;
    Ok(JointEstimate {
        lambda_hat: sol.lambda,
        cdf: family.estimate(sol.lambda),
        k,
        iterations: sol.iterations,
        converged: sol.converged,
        residual: sol.residual,
        trace: sol.trace,
    })
}
