//! Z-estimator of the characteristic exponent and the truncation-modified
//! job-size CF estimator built on it.

use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{config_err, numeric_err, Result};
use crate::invert::MidpointRule;
use crate::sim::WorkloadSample;

/// Default denominator floor for the modified estimator.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Nodes between direct re-evaluations of `e^{isV}` in the rotation recurrence.
const REANCHOR: usize = 64;
/// Observations processed together in [`cf_on_midpoints`].
const LANES: usize = 8;

/// Estimated job-size CF on a grid of `s` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CfEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<Complex64>,
    pub epsilon: f64,
    /// `true` where the empirical workload CF fell to `epsilon` or below.
    pub truncated: Vec<bool>,
    pub lambda_used: f64,
    /// Set when `grid` is exactly the node set of a midpoint rule.
    pub rule: Option<MidpointRule>,
}

impl CfEstimate {
    pub fn truncated_count(&self) -> usize {
        self.truncated.iter().filter(|&&t| t).count()
    }
}

/// Sufficient statistics of a sample at one `s`.
#[derive(Debug, Clone, Copy)]
struct Sums {
    /// `sum_{j=1}^n e^{isV_j}`
    ecf: Complex64,
    first: Complex64,
    last: Complex64,
    zeros: usize,
    n: usize,
}

fn zeros_after_first(sample: &WorkloadSample) -> usize {
    sample.observations()[1..].iter().filter(|&&v| v == 0.0).count()
}

fn sums_at(sample: &WorkloadSample, s: f64) -> Sums {
    let obs = sample.observations();
    let ecf = obs[1..].iter().map(|&v| cis(s * v)).sum();
    Sums {
        ecf,
        first: cis(s * obs[0]),
        last: cis(s * obs[obs.len() - 1]),
        zeros: zeros_after_first(sample),
        n: obs.len() - 1,
    }
}

#[inline]
fn cis(theta: f64) -> Complex64 {
    let (sin, cos) = theta.sin_cos();
    Complex64::new(cos, sin)
}

/// `(1/n) sum_{j=1}^n e^{isV_j}`; `V_0` is excluded.
pub fn empirical_cf(sample: &WorkloadSample, s: f64) -> Complex64 {
    if s == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    sums_at(sample, s).ecf / sample.n() as f64
}

fn phi_numerator(sums: &Sums, xi: f64, s: f64) -> Complex64 {
    let n = sums.n as f64;
    (sums.last - sums.first) * (xi / n) - Complex64::new(0.0, s * sums.zeros as f64 / n)
}

/// Pointwise Z-estimator of the characteristic exponent.
pub fn estimate_phi(sample: &WorkloadSample, s: f64) -> Result<Complex64> {
    if s == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let sums = sums_at(sample, s);
    let denom = sums.ecf / sums.n as f64;
    if denom.norm() == 0.0 {
        return Err(numeric_err!("empirical workload CF vanishes at s = {s}"));
    }
    Ok(phi_numerator(&sums, sample.xi(), s) / denom)
}

fn gamma_from_sums(sums: &Sums, xi: f64, lambda: f64, s: f64, epsilon: f64) -> (Complex64, bool) {
    let denom = sums.ecf / sums.n as f64;
    if denom.norm() <= epsilon {
        return (truncation_value(epsilon), true);
    }
    let phi = phi_numerator(sums, xi, s) / denom;
    ((phi + Complex64::new(0.0, s)) / lambda + 1.0, false)
}

/// Constant `(1 - eps)(1 + i)` substituted where the denominator is small.
pub fn truncation_value(epsilon: f64) -> Complex64 {
    Complex64::new(1.0 - epsilon, 1.0 - epsilon)
}

/// Modified CF estimate at `s`, and whether the truncation branch fired.
pub fn estimate_gamma_eps(sample: &WorkloadSample, lambda: f64, s: f64, epsilon: f64) -> (Complex64, bool) {
    if s == 0.0 {
        return (Complex64::new(1.0, 0.0), false);
    }
    gamma_from_sums(&sums_at(sample, s), sample.xi(), lambda, s, epsilon)
}

/// `min(0.01, zero_fraction / 2)`, falling back to the default when the
/// sample has no zeros.
pub fn choose_epsilon(sample: &WorkloadSample) -> f64 {
    let zf = sample.zero_fraction();
    if zf == 0.0 {
        log::warn!("sample has no idle observations; using default epsilon {DEFAULT_EPSILON}");
        return DEFAULT_EPSILON;
    }
    DEFAULT_EPSILON.min(0.5 * zf)
}

fn check_estimate_args(lambda: f64, epsilon: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(config_err!("lambda must be positive, got {lambda}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(config_err!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    Ok(())
}

/// Evaluates [`estimate_gamma_eps`] on an increasing grid of `s >= 0`.
pub fn cf_on_grid(sample: &WorkloadSample, lambda: f64, epsilon: f64, grid: &[f64]) -> Result<CfEstimate> {
    check_estimate_args(lambda, epsilon)?;
    if grid.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
        return Err(config_err!("grid must contain finite nonnegative values"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err!("grid must be strictly increasing"));
    }
    let (values, truncated) = grid.iter().map(|&s| estimate_gamma_eps(sample, lambda, s, epsilon)).unzip();
    Ok(CfEstimate {
        grid: grid.to_vec(),
        values,
        epsilon,
        truncated,
        lambda_used: lambda,
        rule: None,
    })
}

/// [`cf_on_grid`] specialised to the nodes of a midpoint rule. The workload
/// CF is accumulated with a rotation recurrence along the arithmetic grid,
/// re-anchored every few nodes; idle observations contribute a constant.
pub fn cf_on_midpoints(sample: &WorkloadSample, lambda: f64, epsilon: f64, rule: MidpointRule) -> Result<CfEstimate> {
    check_estimate_args(lambda, epsilon)?;
    let nodes = rule.nodes();
    let step = rule.step();
    let obs = sample.observations();
    let zeros = zeros_after_first(sample);

    let mut acc = alloc::vec![Complex64::new(zeros as f64, 0.0); nodes.len()];
    let busy: Vec<f64> = obs[1..].iter().copied().filter(|&v| v != 0.0).collect();
    // several observations at a time give independent multiply chains
    let mut groups = busy.chunks_exact(LANES);
    for g in &mut groups {
        let rot: [Complex64; LANES] = core::array::from_fn(|i| cis(step * g[i]));
        for (block, chunk) in acc.chunks_mut(REANCHOR).enumerate() {
            let s0 = nodes[block * REANCHOR];
            let mut z: [Complex64; LANES] = core::array::from_fn(|i| cis(s0 * g[i]));
            for slot in chunk {
                *slot += z.iter().sum::<Complex64>();
                for (zi, ri) in z.iter_mut().zip(&rot) {
                    *zi *= ri;
                }
            }
        }
    }
    for &v in groups.remainder() {
        let rot = cis(step * v);
        for (block, chunk) in acc.chunks_mut(REANCHOR).enumerate() {
            let mut z = cis(nodes[block * REANCHOR] * v);
            for slot in chunk {
                *slot += z;
                z *= rot;
            }
        }
    }

    let n = sample.n();
    let (first, last) = (obs[0], obs[n]);
    let mut values = Vec::with_capacity(nodes.len());
    let mut truncated = Vec::with_capacity(nodes.len());
    for (&s, &ecf) in nodes.iter().zip(&acc) {
        let sums = Sums { ecf, first: cis(s * first), last: cis(s * last), zeros, n };
        let (g, t) = gamma_from_sums(&sums, sample.xi(), lambda, s, epsilon);
        values.push(g);
        truncated.push(t);
    }
    Ok(CfEstimate {
        grid: nodes,
        values,
        epsilon,
        truncated,
        lambda_used: lambda,
        rule: Some(rule),
    })
}

/// `sum_{j=1}^n Z_j(s)` with
/// `Z_j(s) = (xi - phi) e^{isV_j} - xi e^{isV_{j-1}} - is 1{V_j = 0}`,
/// for a supplied (true) exponent value `phi = phi(s)`.
pub fn martingale_sum(sample: &WorkloadSample, phi: Complex64, s: f64) -> Complex64 {
    let xi = sample.xi();
    let i_s = Complex64::new(0.0, s);
    sample
        .observations()
        .windows(2)
        .map(|w| {
            let idle = if w[1] == 0.0 { i_s } else { Complex64::new(0.0, 0.0) };
            (xi - phi) * cis(s * w[1]) - xi * cis(s * w[0]) - idle
        })
        .sum()
}

/// `|lambda (gamma_hat - gamma) - sum Z_j / sum e^{isV_j}|`, the residual of
/// the martingale representation of the estimation error. `None` when the
/// truncation branch fires at `s`.
pub fn error_representation_residual(
    sample: &WorkloadSample,
    lambda: f64,
    true_cf: Complex64,
    s: f64,
    epsilon: f64,
) -> Option<f64> {
    let (g, truncated) = estimate_gamma_eps(sample, lambda, s, epsilon);
    if truncated {
        return None;
    }
    let phi = lambda * (true_cf - 1.0) - Complex64::new(0.0, s);
    let ratio = martingale_sum(sample, phi, s) / sums_at(sample, s).ecf;
    Some((lambda * (g - true_cf) - ratio).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{presets, JobSizeModel};
    use crate::sim::{char_exponent, simulate, SimConfig};
    use alloc::vec;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn sample(obs: Vec<f64>, xi: f64) -> WorkloadSample {
        WorkloadSample::from_observations(obs, 1.0, xi).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn empirical_cf_basics() {
        let idle = sample(vec![0.0; 6], 1.0);
        for &s in &[0.0, 1.0, 17.0] {
            assert_eq!(empirical_cf(&idle, s), c(1.0, 0.0));
        }
        let any = sample(vec![0.3, 2.0, 5.5], 1.0);
        assert_eq!(empirical_cf(&any, 0.0), c(1.0, 0.0));
        let one = sample(vec![7.0, PI], 1.0);
        assert!((empirical_cf(&one, 1.0) - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn phi_hand_evaluation() {
        let s = sample(vec![1.0, 0.0], 1.0);
        assert_eq!(estimate_phi(&s, 0.0).unwrap(), c(0.0, 0.0));
        let got = estimate_phi(&s, PI / 2.0).unwrap();
        let want = c(1.0, -(1.0 + PI / 2.0));
        assert!((got - want).norm() < 1e-12, "{got}");
    }

    #[test]
    fn truncation_branch() {
        let s = sample(vec![0.0, 0.0, PI], 1.0);
        let (g, t) = estimate_gamma_eps(&s, 1.0, 1.0, 0.02);
        assert!(t);
        assert_eq!(g, c(0.98, 0.98));
        assert_eq!(estimate_gamma_eps(&s, 1.0, 0.0, 0.02), (c(1.0, 0.0), false));
    }

    #[test]
    fn epsilon_rule() {
        let half = sample(vec![0.0, 1.0, 0.0, 1.0], 1.0);
        assert_eq!(choose_epsilon(&half), 0.01);
        let mut obs = vec![1.0; 1000];
        obs[10] = 0.0;
        obs[20] = 0.0;
        obs[30] = 0.0;
        obs[40] = 0.0;
        assert!((choose_epsilon(&sample(obs, 1.0)) - 0.002).abs() < 1e-15);
        assert_eq!(choose_epsilon(&sample(vec![1.0, 2.0], 1.0)), 0.01);
    }

    #[test]
    fn grid_matches_scalar_calls() {
        let s = sample(vec![0.2, 0.0, 1.3, 0.7, 0.0, 2.2], 0.8);
        let grid = [0.0, 0.5, 3.0];
        let est = cf_on_grid(&s, 0.7, 0.01, &grid).unwrap();
        assert_eq!(est.values[0], c(1.0, 0.0));
        for (k, &x) in grid.iter().enumerate() {
            let (g, t) = estimate_gamma_eps(&s, 0.7, x, 0.01);
            assert_eq!(est.values[k], g);
            assert_eq!(est.truncated[k], t);
        }
        assert!(cf_on_grid(&s, 0.7, 0.01, &[1.0, 1.0]).is_err());
        assert!(cf_on_grid(&s, 0.7, 0.01, &[-1.0]).is_err());
        assert!(cf_on_grid(&s, 0.7, 1.5, &[1.0]).is_err());
    }

    #[test]
    fn midpoint_recurrence_matches_direct() {
        let m = presets::bimodal_gamma();
        let s = simulate(&m, &SimConfig { lambda: 1.0, xi: 1.0, n: 3000, burn_in: None, seed: 5 }).unwrap();
        let rule = MidpointRule::new(12.0, 1000).unwrap();
        let fast = cf_on_midpoints(&s, 1.0, 0.01, rule).unwrap();
        let slow = cf_on_grid(&s, 1.0, 0.01, &rule.nodes()).unwrap();
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
        assert_eq!(fast.truncated, slow.truncated);
    }

    #[test]
    fn consistency_with_truth() {
        let m = presets::bimodal_gamma();
        let s = simulate(&m, &SimConfig { lambda: 1.0, xi: 1.0, n: 10_000, burn_in: None, seed: 21 }).unwrap();
        let phi = estimate_phi(&s, 1.0).unwrap();
        assert!((phi - char_exponent(&m, 1.0, 1.0)).norm() <= 0.1);
        let eps = choose_epsilon(&s);
        assert_eq!(eps, 0.01);
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let est = cf_on_grid(&s, 1.0, eps, &grid).unwrap();
        assert_eq!(est.truncated_count(), 0);
    }

    #[test]
    fn representation_identity_on_simulated_data() {
        let m = JobSizeModel::exponential(1.0).unwrap();
        let s = simulate(&m, &SimConfig { lambda: 0.5, xi: 1.0, n: 2000, burn_in: None, seed: 8 }).unwrap();
        for &x in &[0.0, 1.0, 5.0, 13.0] {
            let r = error_representation_residual(&s, 0.5, m.cf(x), x, 0.01).unwrap();
            assert!(r <= 1e-10, "s={x}: {r}");
        }
        assert_eq!(martingale_sum(&s, c(0.0, 0.0), 0.0), c(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn plug_in_identity(
            obs in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..8.0], 2..40),
            lambda in 0.1f64..3.0,
            xi in 0.1f64..3.0,
            s in 0.01f64..20.0,
        ) {
            let sample = WorkloadSample::from_observations(obs, lambda, xi).unwrap();
            let m = presets::two_phase_gamma();
            let (g, truncated) = estimate_gamma_eps(&sample, lambda, s, 0.01);
            prop_assume!(!truncated);
            let phi_hat = estimate_phi(&sample, s).unwrap();
            let lhs = lambda * (g - m.cf(s));
            let rhs = phi_hat - char_exponent(&m, lambda, s);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + phi_hat.norm()));
        }

        #[test]
        fn empirical_cf_bounded(obs in proptest::collection::vec(0.0f64..50.0, 2..60), s in -30.0f64..30.0) {
            let sample = WorkloadSample::from_observations(obs, 1.0, 1.0).unwrap();
            prop_assert!(empirical_cf(&sample, s).norm() <= 1.0 + 1e-12);
        }
    }
}
