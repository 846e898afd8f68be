//! Truncated Fourier inversion of a characteristic function into a CDF.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Float;

use crate::cf::CfEstimate;
use crate::error::{config_err, numeric_err, Result};

/// Smallest panel count accepted by the inversion routines.
pub const MIN_PANELS: usize = 16;

/// Composite midpoint rule with `panels` equal panels on `(0, h]`. The
/// rule never touches `s = 0`, where the inversion integrand has a
/// removable singularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointRule {
    h: f64,
    panels: usize,
}

impl MidpointRule {
    pub fn new(h: f64, panels: usize) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(config_err!("truncation h must be positive, got {h}"));
        }
        if panels < MIN_PANELS {
            return Err(config_err!("need at least {MIN_PANELS} panels, got {panels}"));
        }
        Ok(Self { h, panels })
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn panels(&self) -> usize {
        self.panels
    }
    pub fn step(&self) -> f64 {
        self.h / self.panels as f64
    }
    pub fn nodes(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.panels).map(|k| (k as f64 + 0.5) * step).collect()
    }
}

/// Panel count resolving the `e^{-isx}` oscillation up to `x_max`:
/// `max(4096, ceil(64 h (1 + x_max)))`.
pub fn default_panels(h: f64, x_max: f64) -> usize {
    let wanted = (64.0 * h * (1.0 + x_max.max(0.0))).ceil();
    if wanted.is_finite() {
        (wanted as usize).max(4096)
    } else {
        4096
    }
}

/// `n^{1/(2(1+eta))}`.
pub fn choose_truncation(n: usize, eta: f64) -> f64 {
    (n.max(1) as f64).powf(1.0 / (2.0 * (1.0 + eta)))
}

/// Bound `C0 h^{-eta} / eta` on the neglected tail of the inversion
/// integral (CF scale).
pub fn truncation_bias_bound(eta: f64, c0: f64, h: f64) -> f64 {
    c0 * h.powf(-eta) / eta
}

/// [`truncation_bias_bound`] on the CDF scale (divided by pi).
pub fn truncation_bias_bound_cdf(eta: f64, c0: f64, h: f64) -> f64 {
    truncation_bias_bound(eta, c0, h) / PI
}

/// Estimated CDF on an `x` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfEstimate {
    pub x_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub h: f64,
    pub quadrature_panels: usize,
    pub clamped: bool,
}

/// Weighted node values `step * cf(s_k) / s_k`, checked for finiteness.
fn weights(nodes: &[f64], values: &[Complex64], step: f64) -> Result<Vec<Complex64>> {
    nodes
        .iter()
        .zip(values)
        .map(|(&s, &v)| {
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v * (step / s))
            } else {
                Err(numeric_err!("non-finite CF value {v} at s = {s}"))
            }
        })
        .collect()
}

/// `1/2 - (1/pi) sum_k Im{w_k e^{-i s_k x}}`.
fn invert_weighted(nodes: &[f64], weights: &[Complex64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (&s, w) in nodes.iter().zip(weights) {
        let (sin, cos) = (s * x).sin_cos();
        // Im{(a + ib)(cos - i sin)} = b cos - a sin
        acc += w.im * cos - w.re * sin;
    }
    0.5 - acc / PI
}

/// Truncated inversion at a single point; `h == 0` gives exactly 1/2.
pub fn invert_cdf<F>(cf: F, x: f64, h: f64, panels: usize) -> Result<f64>
where
    F: Fn(f64) -> Complex64,
{
    if h == 0.0 {
        return Ok(0.5);
    }
    if !(x.is_finite() && x >= 0.0) {
        return Err(config_err!("x must be nonnegative, got {x}"));
    }
    let rule = MidpointRule::new(h, panels)?;
    let nodes = rule.nodes();
    let values: Vec<Complex64> = nodes.iter().map(|&s| cf(s)).collect();
    let w = weights(&nodes, &values, rule.step())?;
    Ok(invert_weighted(&nodes, &w, x))
}

fn check_x_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(config_err!("x grid must be finite and nonnegative"));
    }
    if x_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err!("x grid must be strictly increasing"));
    }
    Ok(())
}

fn finish(x_grid: &[f64], mut values: Vec<f64>, rule: MidpointRule, clamp: bool) -> CdfEstimate {
    if clamp {
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
    }
    CdfEstimate {
        x_grid: x_grid.to_vec(),
        values,
        h: rule.h,
        quadrature_panels: rule.panels,
        clamped: clamp,
    }
}

/// Inverts an exact (closure) CF on an increasing `x` grid.
pub fn invert_on_grid<F>(cf: F, x_grid: &[f64], rule: MidpointRule, clamp: bool) -> Result<CdfEstimate>
where
    F: Fn(f64) -> Complex64,
{
    check_x_grid(x_grid)?;
    let nodes = rule.nodes();
    let values: Vec<Complex64> = nodes.iter().map(|&s| cf(s)).collect();
    let w = weights(&nodes, &values, rule.step())?;
    let out = x_grid.iter().map(|&x| invert_weighted(&nodes, &w, x)).collect();
    Ok(finish(x_grid, out, rule, clamp))
}

/// Inverts a CF estimate computed on the nodes of a midpoint rule
/// (see [`crate::cf::cf_on_midpoints`]).
pub fn invert_estimate(estimate: &CfEstimate, x_grid: &[f64], clamp: bool) -> Result<CdfEstimate> {
    let rule = estimate
        .rule
        .ok_or_else(|| config_err!("CF estimate was not computed on a midpoint rule"))?;
    check_x_grid(x_grid)?;
    let w = weights(&estimate.grid, &estimate.values, rule.step())?;
    let out = x_grid.iter().map(|&x| invert_weighted(&estimate.grid, &w, x)).collect();
    Ok(finish(x_grid, out, rule, clamp))
}
