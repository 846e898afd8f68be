//! Job-size laws with exact CDFs, characteristic functions, Laplace
//! transforms, samplers and smoothness parameters.

use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};

use crate::error::{config_err, Error, Result};
use crate::quad;
use crate::special::{gamma_p, normal_cdf, normal_pdf};

/// Absolute tolerance for quadrature-backed transforms.
pub const TRANSFORM_TOL: f64 = 1e-8;
/// Standard-normal quantile beyond which less than 1e-10 mass remains.
const TAIL_Z: f64 = 6.5;
/// Default smoothness for the folded normal, whose CF decays faster than
/// any polynomial.
pub const FOLDED_NORMAL_DEFAULT_ETA: f64 = 8.0;

/// One Gamma component with shape `alpha` and *rate* `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaComponent {
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    GammaMixture(Vec<GammaComponent>),
    LogNormal { mu: f64, sigma: f64 },
    /// Absolute value of a normal variable, `|N(mu, sigma^2)|`.
    TruncatedNormal { mu: f64, sigma: f64 },
    Exponential { rate: f64 },
}

/// A job-size law together with its smoothness parameter `eta`
/// (`|cf(s)| s^eta` stays bounded as `s` grows).
#[derive(Debug, Clone, PartialEq)]
pub struct JobSizeModel {
    family: Family,
    eta: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err!("{name} must be positive and finite, got {v}"))
    }
}

impl JobSizeModel {
    pub fn gamma_mixture(alpha: &[f64], beta: &[f64], p: &[f64]) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() || alpha.len() != p.len() {
            return Err(config_err!(
                "gamma mixture needs equal, non-empty alpha/beta/p vectors (got {}, {}, {})",
                alpha.len(),
                beta.len(),
                p.len()
            ));
        }
        let mut components = Vec::with_capacity(alpha.len());
        for ((&a, &b), &w) in alpha.iter().zip(beta).zip(p) {
            positive("alpha", a)?;
            positive("beta", b)?;
            positive("p", w)?;
            components.push(GammaComponent { alpha: a, beta: b, weight: w });
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config_err!("mixture weights must sum to 1, got {total}"));
        }
        let eta = alpha.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { family: Family::GammaMixture(components), eta })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        positive("rate", rate)?;
        Ok(Self { family: Family::Exponential { rate }, eta: 1.0 })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(config_err!("mu must be finite"));
        }
        positive("sigma", sigma)?;
        Ok(Self { family: Family::LogNormal { mu, sigma }, eta: 2.0 })
    }

    pub fn truncated_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(config_err!("mu must be finite"));
        }
        positive("sigma", sigma)?;
        Ok(Self {
            family: Family::TruncatedNormal { mu, sigma },
            eta: FOLDED_NORMAL_DEFAULT_ETA,
        })
    }

    /// Overrides the smoothness parameter.
    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        positive("eta", eta)?;
        self.eta = eta;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn smoothness_eta(&self) -> f64 {
        self.eta
    }

    /// Characteristic function `E e^{isB}`.
    pub fn cf(&self, s: f64) -> Complex64 {
        if s == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        match &self.family {
            Family::GammaMixture(cs) => cs
                .iter()
                .map(|c| c.weight * gamma_cf(c.alpha, c.beta, s))
                .sum(),
            Family::Exponential { rate } => Complex64::new(*rate, 0.0) / Complex64::new(*rate, -s),
            Family::LogNormal { .. } | Family::TruncatedNormal { .. } => {
                // hermitian by construction: evaluate at |s| and conjugate
                let z = self
                    .transform_by_quadrature(|x| Complex64::new(0.0, s.abs() * x).exp())
                    .unwrap_or_else(|_| Complex64::new(f64::NAN, f64::NAN));
                let z = clamp_unit(z);
                if s < 0.0 {
                    z.conj()
                } else {
                    z
                }
            }
        }
    }

    /// Laplace transform `E e^{-sB}` for `s >= 0`.
    pub fn laplace(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 1.0;
        }
        match &self.family {
            Family::GammaMixture(cs) => cs
                .iter()
                .map(|c| c.weight * (c.beta / (c.beta + s)).powf(c.alpha))
                .sum(),
            Family::Exponential { rate } => rate / (rate + s),
            Family::LogNormal { .. } | Family::TruncatedNormal { .. } => self
                .transform_by_quadrature(|x| Complex64::new((-s * x).exp(), 0.0))
                .map(|z| z.re.clamp(0.0, 1.0))
                .unwrap_or(f64::NAN),
        }
    }

    /// `E f(B)` by quadrature for the laws without closed-form transforms.
    fn transform_by_quadrature<F>(&self, f: F) -> Result<Complex64>
    where
        F: Fn(f64) -> Complex64,
    {
        match self.family {
            Family::LogNormal { mu, sigma } => quad::integrate_complex(
                |z| f((mu + sigma * z).exp()) * normal_pdf(z),
                -TAIL_Z,
                TAIL_Z,
                TRANSFORM_TOL,
            ),
            Family::TruncatedNormal { mu, sigma } => {
                let upper = mu.abs() + TAIL_Z * sigma;
                let lower = (mu.abs() - TAIL_Z * sigma).max(0.0);
                quad::integrate_complex(
                    |x| f(x) * folded_density(mu, sigma, x),
                    lower,
                    upper,
                    TRANSFORM_TOL,
                )
            }
            _ => Err(Error::Domain("closed-form family".into())),
        }
    }

    /// Density at `x >= 0`.
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::GammaMixture(cs) => cs
                .iter()
                .map(|c| c.weight * gamma_density(c.alpha, c.beta, x))
                .sum(),
            Family::Exponential { rate } => rate * (-rate * x).exp(),
            Family::LogNormal { mu, sigma } => {
                if x == 0.0 {
                    0.0
                } else {
                    normal_pdf((x.ln() - mu) / sigma) / (sigma * x)
                }
            }
            Family::TruncatedNormal { mu, sigma } => folded_density(*mu, *sigma, x),
        }
    }

    /// Cumulative distribution function; `x` must be nonnegative.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(alloc::format!("cdf requires x >= 0, got {x}")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let v = match &self.family {
            Family::GammaMixture(cs) => cs.iter().map(|c| c.weight * gamma_p(c.alpha, c.beta * x)).sum(),
            Family::Exponential { rate } => -(-rate * x).exp_m1(),
            Family::LogNormal { mu, sigma } => normal_cdf((x.ln() - mu) / sigma),
            Family::TruncatedNormal { mu, sigma } => {
                normal_cdf((x - mu) / sigma) - normal_cdf((-x - mu) / sigma)
            }
        };
        Ok(v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        match &self.family {
            Family::GammaMixture(cs) => cs.iter().map(|c| c.weight * c.alpha / c.beta).sum(),
            Family::Exponential { rate } => 1.0 / rate,
            Family::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Family::TruncatedNormal { .. } => self.moment_by_quadrature(1),
        }
    }

    pub fn moment3(&self) -> f64 {
        match &self.family {
            Family::GammaMixture(cs) => cs
                .iter()
                .map(|c| c.weight * c.alpha * (c.alpha + 1.0) * (c.alpha + 2.0) / c.beta.powi(3))
                .sum(),
            Family::Exponential { rate } => 6.0 / rate.powi(3),
            Family::LogNormal { mu, sigma } => (3.0 * mu + 4.5 * sigma * sigma).exp(),
            Family::TruncatedNormal { .. } => self.moment_by_quadrature(3),
        }
    }

    fn moment_by_quadrature(&self, k: i32) -> f64 {
        self.transform_by_quadrature(|x| Complex64::new(x.powi(k), 0.0))
            .map(|z| z.re)
            .unwrap_or(f64::NAN)
    }

    /// Builds a reusable sampler.
    pub fn sampler(&self) -> JobSampler {
        let inner = match &self.family {
            Family::GammaMixture(cs) => {
                let mut cumulative = Vec::with_capacity(cs.len());
                let mut acc = 0.0;
                let mut gammas = Vec::with_capacity(cs.len());
                for c in cs {
                    acc += c.weight;
                    cumulative.push(acc);
                    gammas.push(Gamma::new(c.alpha, 1.0 / c.beta).expect("validated gamma parameters"));
                }
                SamplerKind::GammaMixture { cumulative, gammas }
            }
            Family::Exponential { rate } => {
                SamplerKind::Exponential(Exp::new(*rate).expect("validated rate"))
            }
            Family::LogNormal { mu, sigma } => {
                SamplerKind::LogNormal(Normal::new(*mu, *sigma).expect("validated sigma"))
            }
            Family::TruncatedNormal { mu, sigma } => {
                SamplerKind::Folded(Normal::new(*mu, *sigma).expect("validated sigma"))
            }
        };
        JobSampler { inner }
    }

    /// Draws one job size. Prefer [`JobSizeModel::sampler`] in loops.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    /// Constant `C0 = sum p_j beta_j^alpha_j + 1` bounding `|cf(s)| s^eta`
    /// for a gamma mixture at `s >= 1`.
    pub fn gamma_tail_constant(&self) -> Option<f64> {
        match &self.family {
            Family::GammaMixture(cs) => Some(cs.iter().map(|c| c.weight * c.beta.powf(c.alpha)).sum::<f64>() + 1.0),
            Family::Exponential { rate } => Some(rate + 1.0),
            _ => None,
        }
    }
}

fn clamp_unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

/// `(beta / (beta - i s))^alpha` on the principal branch.
fn gamma_cf(alpha: f64, beta: f64, s: f64) -> Complex64 {
    let ratio = beta * beta / (beta * beta + s * s);
    let modulus = ratio.powf(0.5 * alpha);
    let angle = alpha * (s / beta).atan();
    Complex64::from_polar(modulus, angle)
}

fn gamma_density(alpha: f64, beta: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if alpha == 1.0 {
            beta
        } else if alpha < 1.0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    ((alpha - 1.0) * x.ln() + alpha * beta.ln() - beta * x - libm::lgamma(alpha)).exp()
}

fn folded_density(mu: f64, sigma: f64, x: f64) -> f64 {
    (normal_pdf((x - mu) / sigma) + normal_pdf((x + mu) / sigma)) / sigma
}

enum SamplerKind {
    GammaMixture { cumulative: Vec<f64>, gammas: Vec<Gamma<f64>> },
    Exponential(Exp<f64>),
    LogNormal(Normal<f64>),
    Folded(Normal<f64>),
}

/// Sampler for a [`JobSizeModel`] with the distribution objects prebuilt.
pub struct JobSampler {
    inner: SamplerKind,
}

impl JobSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.inner {
            SamplerKind::GammaMixture { cumulative, gammas } => {
                let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let j = cumulative.iter().position(|&c| u < c).unwrap_or(gammas.len() - 1);
                gammas[j].sample(rng)
            }
            SamplerKind::Exponential(d) => d.sample(rng),
            SamplerKind::LogNormal(d) => d.sample(rng).exp(),
            SamplerKind::Folded(d) => d.sample(rng).abs(),
        }
    }
}

/// Named job-size laws used throughout the experiments.
pub mod presets {
    use super::JobSizeModel;

    /// Bimodal three-component gamma mixture, mean 0.92175.
    pub fn bimodal_gamma() -> JobSizeModel {
        JobSizeModel::gamma_mixture(&[2.0, 6.0, 1.0], &[3.5, 90.0, 0.09], &[0.6, 0.35, 0.05]).unwrap()
    }

    /// Two-component gamma mixture, mean 1.05.
    pub fn two_phase_gamma() -> JobSizeModel {
        JobSizeModel::gamma_mixture(&[1.5, 5.0], &[0.8, 10.0], &[0.4, 0.6]).unwrap()
    }

    /// Log-normal with `mu = 0.2`, `sigma = 0.5`.
    pub fn log_normal_moderate() -> JobSizeModel {
        JobSizeModel::log_normal(0.2, 0.5).unwrap()
    }

    /// `|N(0.5, 0.1^2)|`.
    pub fn folded_normal_narrow() -> JobSizeModel {
        JobSizeModel::truncated_normal(0.5, 0.1).unwrap()
    }
}
