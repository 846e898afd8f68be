//! Exact event-driven simulation of the M/G/1 workload probed at Poisson
//! epochs, and the closed-form transition laws used to check it.

use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::dist::JobSizeModel;
use crate::error::{config_err, numeric_err, Result};

/// ChaCha stream ids; each clock draws from its own sub-stream of the seed.
const ARRIVAL_STREAM: u64 = 0;
const JOB_STREAM: u64 = 1;
const PROBE_STREAM: u64 = 2;

/// Probe observations `(V_0, ..., V_n)` plus the metadata that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSample {
    observations: Vec<f64>,
    times: Option<Vec<f64>>,
    lambda: f64,
    xi: f64,
    rho: Option<f64>,
    seed: Option<u64>,
    burn_in_discarded: usize,
    model: Option<JobSizeModel>,
}

impl WorkloadSample {
    /// Wraps externally observed workload levels. Needs at least two
    /// nonnegative finite observations.
    pub fn from_observations(observations: Vec<f64>, lambda: f64, xi: f64) -> Result<Self> {
        if observations.len() < 2 {
            return Err(config_err!("a workload sample needs at least 2 observations, got {}", observations.len()));
        }
        if let Some((i, v)) = observations.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(config_err!("observation {i} is not a nonnegative finite level: {v}"));
        }
        if !(lambda.is_finite() && lambda > 0.0) || !(xi.is_finite() && xi > 0.0) {
            return Err(config_err!("lambda and xi must be positive (lambda={lambda}, xi={xi})"));
        }
        Ok(Self {
            observations,
            times: None,
            lambda,
            xi,
            rho: None,
            seed: None,
            burn_in_discarded: 0,
            model: None,
        })
    }

    /// Attaches probe epochs; must match the observation count.
    pub fn with_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.len() != self.observations.len() {
            return Err(config_err!("{} times for {} observations", times.len(), self.observations.len()));
        }
        self.times = Some(times);
        Ok(self)
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }
    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }
    /// Number of transitions `n` (one less than the observation count).
    pub fn n(&self) -> usize {
        self.observations.len() - 1
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }
    pub fn rho(&self) -> Option<f64> {
        self.rho
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn burn_in_discarded(&self) -> usize {
        self.burn_in_discarded
    }
    pub fn model(&self) -> Option<&JobSizeModel> {
        self.model.as_ref()
    }

    /// Fraction of observations that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.observations.iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.observations.len() as f64
    }

    /// Fraction of observations that are strictly positive.
    pub fn busy_fraction(&self) -> f64 {
        1.0 - self.zero_fraction()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub lambda: f64,
    pub xi: f64,
    pub n: usize,
    /// Probe observations discarded before recording; `None` selects
    /// [`default_burn_in`].
    pub burn_in: Option<usize>,
    pub seed: u64,
}

/// `max(1000, ceil(20 / (1 - rho)))`.
pub fn default_burn_in(rho: f64) -> usize {
    let scaled = (20.0 / (1.0 - rho)).ceil();
    if scaled.is_finite() {
        (scaled as usize).max(1000)
    } else {
        usize::MAX
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn check_rates(model: &JobSizeModel, lambda: f64, xi: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) || !(xi.is_finite() && xi > 0.0) {
        return Err(config_err!("lambda and xi must be positive (lambda={lambda}, xi={xi})"));
    }
    let rho = lambda * model.mean();
    if !(rho < 1.0) {
        return Err(config_err!("unstable queue: rho = lambda * E[B] = {rho} >= 1"));
    }
    Ok(rho)
}

/// Simulates the workload from `V(0) = 0`, discards the burn-in probes and
/// returns `n + 1` probe observations.
pub fn simulate(model: &JobSizeModel, config: &SimConfig) -> Result<WorkloadSample> {
    let rho = check_rates(model, config.lambda, config.xi)?;
    if config.n < 2 {
        return Err(config_err!("n must be at least 2, got {}", config.n));
    }
    let burn_in = config.burn_in.unwrap_or_else(|| default_burn_in(rho));
    let total = burn_in
        .checked_add(config.n + 1)
        .ok_or_else(|| config_err!("burn-in {burn_in} too large"))?;

    let arrival_gap = Exp::new(config.lambda).map_err(|e| config_err!("{e}"))?;
    let probe_gap = Exp::new(config.xi).map_err(|e| config_err!("{e}"))?;
    let sampler = model.sampler();
    let mut arrivals = stream(config.seed, ARRIVAL_STREAM);
    let mut jobs = stream(config.seed, JOB_STREAM);
    let mut probes = stream(config.seed, PROBE_STREAM);

    let mut observations = Vec::with_capacity(config.n + 1);
    let mut times = Vec::with_capacity(config.n + 1);
    let mut now = 0.0;
    let mut level = 0.0;
    let mut next_arrival = arrival_gap.sample(&mut arrivals);
    let mut next_probe = probe_gap.sample(&mut probes);
    let mut seen = 0usize;
    while seen < total {
        if next_arrival < next_probe {
            level = drain(level, next_arrival - now) + sampler.sample(&mut jobs);
            now = next_arrival;
            next_arrival += arrival_gap.sample(&mut arrivals);
        } else {
            level = drain(level, next_probe - now);
            now = next_probe;
            if seen >= burn_in {
                observations.push(level);
                times.push(now);
            }
            seen += 1;
            next_probe += probe_gap.sample(&mut probes);
        }
    }
    Ok(WorkloadSample {
        observations,
        times: Some(times),
        lambda: config.lambda,
        xi: config.xi,
        rho: Some(rho),
        seed: Some(config.seed),
        burn_in_discarded: burn_in,
        model: Some(model.clone()),
    })
}

/// Unit-rate drain over `elapsed`, reflected at an exact zero.
#[inline]
pub fn drain(level: f64, elapsed: f64) -> f64 {
    if elapsed >= level {
        0.0
    } else {
        level - elapsed
    }
}

/// Draws `count` independent workload levels observed one exponential(`xi`)
/// probe gap after starting at `v_prev`.
pub fn one_gap_transitions(
    model: &JobSizeModel,
    lambda: f64,
    xi: f64,
    v_prev: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_rates(model, lambda, xi)?;
    let arrival_gap = Exp::new(lambda).map_err(|e| config_err!("{e}"))?;
    let probe_gap = Exp::new(xi).map_err(|e| config_err!("{e}"))?;
    let sampler = model.sampler();
    let mut arrivals = stream(seed, ARRIVAL_STREAM);
    let mut jobs = stream(seed, JOB_STREAM);
    let mut probes = stream(seed, PROBE_STREAM);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let horizon = probe_gap.sample(&mut probes);
        let mut now = 0.0;
        let mut level = v_prev;
        loop {
            let next = now + arrival_gap.sample(&mut arrivals);
            if next >= horizon {
                out.push(drain(level, horizon - now));
                break;
            }
            level = drain(level, next - now) + sampler.sample(&mut jobs);
            now = next;
        }
    }
    Ok(out)
}

/// Characteristic exponent of the net input, `lambda (cf(s) - 1) - i s`.
pub fn char_exponent(model: &JobSizeModel, lambda: f64, s: f64) -> Complex64 {
    lambda * (model.cf(s) - 1.0) - Complex64::new(0.0, s)
}

/// Laplace exponent of the net input, `s - lambda (1 - E e^{-sB})`, `s >= 0`.
pub fn lst_exponent(model: &JobSizeModel, lambda: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    s - lambda * (1.0 - model.laplace(s))
}

/// Inverse of [`lst_exponent`] on `(0, inf)`, by bisection on `[0, q + lambda]`.
pub fn psi_inverse(model: &JobSizeModel, lambda: f64, q: f64) -> Result<f64> {
    if !(q.is_finite() && q > 0.0) {
        return Err(config_err!("psi_inverse needs q > 0, got {q}"));
    }
    if !(lambda * model.mean() < 1.0) {
        return Err(config_err!("unstable queue: rho >= 1"));
    }
    let mut lo = 0.0;
    let mut hi = q + lambda;
    if !(lst_exponent(model, lambda, hi) >= q) {
        return Err(numeric_err!("failed to bracket psi({q}) in [0, {hi}]"));
    }
    // run to full double precision; the bracket halves every step
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lst_exponent(model, lambda, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lo_gap = (q - lst_exponent(model, lambda, lo)).abs();
    let hi_gap = (lst_exponent(model, lambda, hi) - q).abs();
    Ok(if lo_gap < hi_gap && lo > 0.0 { lo } else { hi })
}

/// `P(V_j = 0 | V_{j-1} = v_prev) = xi e^{-psi(xi) v_prev} / psi(xi)`.
pub fn conditional_atom_oracle(model: &JobSizeModel, lambda: f64, xi: f64, v_prev: f64) -> Result<f64> {
    let psi = psi_inverse(model, lambda, xi)?;
    Ok(xi * (-psi * v_prev).exp() / psi)
}

/// `E[e^{isV_j} | V_{j-1} = v_prev]` for one exponential probe gap.
pub fn conditional_cf_oracle(
    model: &JobSizeModel,
    lambda: f64,
    xi: f64,
    v_prev: f64,
    s: f64,
) -> Result<Complex64> {
    if s == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let atom = conditional_atom_oracle(model, lambda, xi, v_prev)?;
    let phi = char_exponent(model, lambda, s);
    let i_s = Complex64::new(0.0, s);
    Ok(xi / (xi - phi) * (Complex64::new(0.0, s * v_prev).exp() + i_s / xi * atom))
}

/// Stationary workload CF, `E e^{isV} = -is (1 - rho) / phi(s)`.
pub fn stationary_workload_cf(model: &JobSizeModel, lambda: f64, s: f64) -> Complex64 {
    if s == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let rho = lambda * model.mean();
    Complex64::new(0.0, -s) * (1.0 - rho) / char_exponent(model, lambda, s)
}
