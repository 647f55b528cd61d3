//! Densities of the hierarchical Poisson-Gamma model.
//!
//! ```text
//! y_ij | lambda_j  ~ Poisson(lambda_j)
//! lambda_j | a, b  ~ Gamma(shape = a, rate = b)
//! a ~ Exponential(rate = alpha_rate),  b ~ Exponential(rate = beta_rate)
//! ```
//!
//! Gamma is always shape-rate (mean = shape / rate) and the exponential is
//! parameterized by its rate (mean = 1 / rate).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be a positive finite number, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("rate vector has {got} entries but the dataset has {expected} sites")]
    Misaligned { expected: usize, got: usize },
}

fn check_positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NonPositive { name, value })
    }
}

/// Rates of the exponential hyperpriors on the Gamma shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorSpec {
    alpha_rate: f64,
    beta_rate: f64,
}

impl HyperPriorSpec {
    /// The Exponential(0.1) / Exponential(0.1) meta-analytical baseline.
    pub const META_ANALYTICAL: HyperPriorSpec = HyperPriorSpec {
        alpha_rate: 0.1,
        beta_rate: 0.1,
    };

    pub fn new(alpha_rate: f64, beta_rate: f64) -> Result<Self, ModelError> {
        Ok(Self {
            alpha_rate: check_positive("alpha_rate", alpha_rate)?,
            beta_rate: check_positive("beta_rate", beta_rate)?,
        })
    }

    pub fn alpha_rate(&self) -> f64 {
        self.alpha_rate
    }

    pub fn beta_rate(&self) -> f64 {
        self.beta_rate
    }
}

/// Shape (`alpha`) and rate (`beta`) of the site-rate Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    alpha: f64,
    beta: f64,
}

impl HyperParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        Ok(Self {
            alpha: check_positive("alpha", alpha)?,
            beta: check_positive("beta", beta)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Prior mean of a site rate, `alpha / beta`.
    pub fn rate_mean(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// One positive rate per site, aligned with the dataset's site order.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRates(Vec<f64>);

impl SiteRates {
    pub fn new(lambdas: Vec<f64>) -> Result<Self, ModelError> {
        for &l in &lambdas {
            check_positive("lambda", l)?;
        }
        Ok(Self(lambdas))
    }

    pub(crate) fn from_vec_unchecked(lambdas: Vec<f64>) -> Self {
        Self(lambdas)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shape-rate Gamma parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        gamma_ln_pdf(x, self.shape, self.rate)
    }
}

pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn exponential_ln_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    rate.ln() - rate * x
}

/// `ln(y!)` via the log-Gamma function.
pub fn ln_factorial(y: u32) -> f64 {
    ln_gamma(f64::from(y) + 1.0)
}

pub fn poisson_ln_pmf(y: u32, lambda: f64) -> f64 {
    let y_f = f64::from(y);
    if y == 0 {
        return -lambda;
    }
    y_f * lambda.ln() - lambda - ln_factorial(y)
}

pub fn log_likelihood(dataset: &Dataset, rates: &SiteRates) -> Result<f64, ModelError> {
    if rates.len() != dataset.n_sites() {
        return Err(ModelError::Misaligned {
            expected: dataset.n_sites(),
            got: rates.len(),
        });
    }
    Ok(dataset
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| poisson_ln_pmf(r.ae_count, rates.as_slice()[dataset.site_of(i)]))
        .sum())
}

pub fn log_hyperprior(spec: &HyperPriorSpec, hp: &HyperParams) -> f64 {
    exponential_ln_pdf(hp.alpha, spec.alpha_rate) + exponential_ln_pdf(hp.beta, spec.beta_rate)
}

pub fn log_rate_prior(hp: &HyperParams, rates: &SiteRates) -> f64 {
    rates
        .as_slice()
        .iter()
        .map(|&l| gamma_ln_pdf(l, hp.alpha, hp.beta))
        .sum()
}

/// Unnormalized log posterior of `(hp, rates)` given the data.
pub fn log_joint(
    dataset: &Dataset,
    spec: &HyperPriorSpec,
    hp: &HyperParams,
    rates: &SiteRates,
) -> Result<f64, ModelError> {
    Ok(log_likelihood(dataset, rates)? + log_rate_prior(hp, rates) + log_hyperprior(spec, hp))
}

/// Full conditional of one site rate: `Gamma(alpha + total, beta + size)`.
pub fn lambda_conditional(site_total: u64, site_size: usize, hp: &HyperParams) -> GammaParams {
    GammaParams {
        shape: hp.alpha + site_total as f64,
        rate: hp.beta + site_size as f64,
    }
}

/// `sum_j ln Gamma(lambda_j; alpha, beta)` from the sufficient statistics
/// `sum_j ln lambda_j` and `sum_j lambda_j` over `n_sites` rates.
pub(crate) fn rate_prior_from_sums(
    alpha: f64,
    beta: f64,
    n_sites: usize,
    sum_ln: f64,
    sum_lin: f64,
) -> f64 {
    let j = n_sites as f64;
    j * (alpha * beta.ln() - ln_gamma(alpha)) + (alpha - 1.0) * sum_ln - beta * sum_lin
}
