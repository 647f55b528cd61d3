//! Out-of-sample log predictive density for patients at unseen sites.
//!
//! For each pooled posterior sample `(alpha_i, beta_i)` one rate
//! `lambda_i ~ Gamma(alpha_i, beta_i)` is drawn and the patient's LPD is
//! `logsumexp_i ln Poisson(y | lambda_i) - ln S`.

use std::io::Write;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::model::poisson_ln_pmf;
use crate::rng;
use crate::sampler::{sample_gamma, PosteriorDraws};
use crate::stats;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("log_sum_exp of an empty vector")]
    EmptyVector,
    #[error("log_sum_exp input contains NaN or +inf")]
    InvalidValue,
    #[error("posterior draws are empty")]
    NoDraws,
    #[error("test set is empty")]
    EmptyTestSet,
}

/// `ln sum exp(v_i)` with max-shift. Entries may be `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyVector);
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(EvalError::InvalidValue);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// LPD of one observed count under the posterior predictive for a new site.
pub fn lpd_patient<R: Rng + ?Sized>(
    y_obs: u32,
    draws: &PosteriorDraws,
    rng: &mut R,
) -> Result<f64, EvalError> {
    let s = draws.n_samples();
    if s == 0 {
        return Err(EvalError::NoDraws);
    }
    let log_probs: Vec<f64> = draws
        .pooled_hyper()
        .map(|(alpha, beta)| poisson_ln_pmf(y_obs, sample_gamma(alpha, beta, rng)))
        .collect();
    Ok(log_sum_exp(&log_probs)? - (s as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LpdOptions {
    pub seed: u64,
    /// Patients in the same held-out site reuse one `lambda_new` stream
    /// instead of independent per-patient streams.
    pub share_per_site: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientLpd {
    pub patient_id: String,
    pub site_id: String,
    pub y_obs: u32,
    pub lpd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpdResult {
    pub per_patient: Vec<PatientLpd>,
    pub mean_lpd: f64,
    /// Sample SD across patients.
    pub sd_lpd: f64,
    /// Sample SD of per-site mean LPDs.
    pub sd_site_means: f64,
    pub n_posterior_samples: usize,
}

impl LpdResult {
    pub fn values(&self) -> Vec<f64> {
        self.per_patient.iter().map(|p| p.lpd).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "patient_id,site_id,y_obs,lpd")?;
        for p in &self.per_patient {
            writeln!(out, "{},{},{},{}", p.patient_id, p.site_id, p.y_obs, p.lpd)?;
        }
        Ok(())
    }
}

/// Evaluates every test patient. Each patient's `lambda_new` stream is
/// seeded from `(options.seed, patient index)` (or site index when
/// sharing), so the result does not depend on evaluation order.
pub fn lpd_dataset(
    test: &Dataset,
    draws: &PosteriorDraws,
    options: LpdOptions,
) -> Result<LpdResult, EvalError> {
    if test.n_patients() == 0 {
        return Err(EvalError::EmptyTestSet);
    }
    if draws.n_samples() == 0 {
        return Err(EvalError::NoDraws);
    }
    let per_patient = test
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let tag = if options.share_per_site {
                test.site_of(i) as u64
            } else {
                i as u64
            };
            let mut rng = rng::stream(options.seed, &[tag]);
            Ok(PatientLpd {
                patient_id: r.patient_id.clone(),
                site_id: r.site_id.clone(),
                y_obs: r.ae_count,
                lpd: lpd_patient(r.ae_count, draws, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let values: Vec<f64> = per_patient.iter().map(|p| p.lpd).collect();
    let site_means: Vec<f64> = (0..test.n_sites())
        .map(|s| stats::mean(test.site_members(s).iter().map(|&i| values[i])))
        .collect();
    Ok(LpdResult {
        mean_lpd: stats::mean(values.iter().copied()),
        sd_lpd: stats::sample_sd(&values),
        sd_site_means: stats::sample_sd(&site_means),
        per_patient,
        n_posterior_samples: draws.n_samples(),
    })
}
