//! Python bindings for `aeprior`. The core crate is imported as `aecore`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use aecore::crossval::{make_folds, run_cv_experiment, stratify_sites};
use aecore::data::{dataset_to_string, parse_dataset};
use aecore::elicitation::{self, ElicitationConfig, PromptStrategy, ReplayTransport, ThreadSleeper};
use aecore::evaluation::{lpd_dataset, LpdOptions};
use aecore::experiment::{CvCondition, ExperimentContext};
use aecore::{load_dataset, DatasetFormat, HyperParams, McmcConfig};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn strategy(s: &str) -> PyResult<PromptStrategy> {
    s.parse().map_err(value_err)
}

#[pyclass(frozen, module = "aeprior")]
struct Dataset(aecore::Dataset);

#[pymethods]
impl Dataset {
    /// Rows of `(site_id, patient_id, ae_count)`.
    #[new]
    fn new(rows: Vec<(String, String, u32)>) -> PyResult<Self> {
        let records = rows
            .into_iter()
            .map(|(site_id, patient_id, ae_count)| aecore::PatientRecord {
                patient_id,
                site_id,
                ae_count,
            })
            .collect();
        aecore::Dataset::from_records(records).map(Dataset).map_err(value_err)
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        load_dataset(&path, DatasetFormat::Csv).map(Dataset).map_err(value_err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_dataset(text).map(Dataset).map_err(value_err)
    }

    #[getter]
    fn n_patients(&self) -> usize {
        self.0.n_patients()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.0.n_sites()
    }

    #[getter]
    fn site_ids(&self) -> Vec<String> {
        self.0.site_ids().to_vec()
    }

    fn rows(&self) -> Vec<(String, String, u32)> {
        self.0
            .records()
            .iter()
            .map(|r| (r.site_id.clone(), r.patient_id.clone(), r.ae_count))
            .collect()
    }

    fn subset(&self, site_ids: Vec<String>) -> PyResult<Self> {
        self.0
            .subset_sites(&site_ids)
            .map(Dataset)
            .ok_or_else(|| PyValueError::new_err("no matching sites"))
    }

    fn summary(&self) -> BTreeMap<&'static str, f64> {
        let s = self.0.summary();
        BTreeMap::from([
            ("n_patients", s.n_patients as f64),
            ("n_sites", s.n_sites as f64),
            ("mean_site_size", s.mean_site_size),
            ("min_site_size", s.min_site_size as f64),
            ("max_site_size", s.max_site_size as f64),
            ("min_count", f64::from(s.min_count)),
            ("max_count", f64::from(s.max_count)),
        ])
    }

    fn to_csv(&self) -> String {
        dataset_to_string(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.n_patients()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n_patients={}, n_sites={})", self.0.n_patients(), self.0.n_sites())
    }
}

#[pyclass(frozen, from_py_object, module = "aeprior")]
#[derive(Clone, Copy)]
struct HyperPriorSpec(aecore::HyperPriorSpec);

#[pymethods]
impl HyperPriorSpec {
    #[new]
    #[pyo3(signature = (alpha_rate=0.1, beta_rate=0.1))]
    fn new(alpha_rate: f64, beta_rate: f64) -> PyResult<Self> {
        aecore::HyperPriorSpec::new(alpha_rate, beta_rate)
            .map(HyperPriorSpec)
            .map_err(value_err)
    }

    #[getter]
    fn alpha_rate(&self) -> f64 {
        self.0.alpha_rate()
    }

    #[getter]
    fn beta_rate(&self) -> f64 {
        self.0.beta_rate()
    }

    fn __repr__(&self) -> String {
        format!(
            "HyperPriorSpec(alpha_rate={}, beta_rate={})",
            self.0.alpha_rate(),
            self.0.beta_rate()
        )
    }
}

#[pyclass(frozen, module = "aeprior")]
struct Posterior(aecore::PosteriorDraws);

#[pymethods]
impl Posterior {
    #[getter]
    fn n_chains(&self) -> usize {
        self.0.n_chains()
    }

    #[getter]
    fn n_draws(&self) -> usize {
        self.0.n_draws()
    }

    #[getter]
    fn site_ids(&self) -> Vec<String> {
        self.0.site_ids.clone()
    }

    /// `[chain][draw]`
    #[getter]
    fn alpha(&self) -> Vec<Vec<f64>> {
        self.0.alpha.clone()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        self.0.beta.clone()
    }

    /// `[chain][draw]` draws of one site's rate.
    fn lambdas(&self, site: usize) -> PyResult<Vec<Vec<f64>>> {
        if site >= self.0.n_sites() {
            return Err(PyValueError::new_err(format!("site index {site} out of range")));
        }
        Ok((0..self.0.n_chains())
            .map(|c| (0..self.0.n_draws()).map(|d| self.0.lambda(c, d, site)).collect())
            .collect())
    }

    /// Parameter name to R-hat; degenerate values are `inf`.
    fn rhat(&self) -> BTreeMap<String, f64> {
        self.0
            .diagnostics
            .rhat
            .iter()
            .map(|e| (e.parameter.clone(), e.rhat.as_f64()))
            .collect()
    }

    #[getter]
    fn max_rhat(&self) -> Option<f64> {
        self.0.diagnostics.max_rhat()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.diagnostics.converged(self.0.config.rhat_threshold)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.diagnostics.warnings.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Posterior(n_chains={}, n_draws={}, n_sites={})",
            self.0.n_chains(),
            self.0.n_draws(),
            self.0.n_sites()
        )
    }
}

/// Fits the hierarchical model. `freeze` fixes `(alpha, beta)`.
#[pyfunction]
#[pyo3(signature = (dataset, spec=None, *, n_chains=4, n_warmup=1000, n_draws=1000, seed=0, freeze=None, no_data=false))]
#[allow(clippy::too_many_arguments)]
fn run_mcmc(
    py: Python<'_>,
    dataset: &Dataset,
    spec: Option<HyperPriorSpec>,
    n_chains: usize,
    n_warmup: usize,
    n_draws: usize,
    seed: u64,
    freeze: Option<(f64, f64)>,
    no_data: bool,
) -> PyResult<Posterior> {
    let freeze_hyperparams = freeze
        .map(|(a, b)| HyperParams::new(a, b))
        .transpose()
        .map_err(value_err)?;
    let config = McmcConfig {
        n_chains,
        n_warmup,
        n_draws,
        seed,
        freeze_hyperparams,
        no_data,
        ..McmcConfig::default()
    };
    let spec = spec.map_or(aecore::HyperPriorSpec::META_ANALYTICAL, |s| s.0);
    py.detach(|| aecore::run_mcmc(&dataset.0, &spec, &config))
        .map(Posterior)
        .map_err(runtime_err)
}

/// Per-patient log predictive density of `test` under `posterior`.
/// Returns `(mean, sd, per_patient)`.
#[pyfunction]
#[pyo3(signature = (test, posterior, seed=0, share_per_site=false))]
fn lpd(
    py: Python<'_>,
    test: &Dataset,
    posterior: &Posterior,
    seed: u64,
    share_per_site: bool,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let opts = LpdOptions { seed, share_per_site };
    let r = py
        .detach(|| lpd_dataset(&test.0, &posterior.0, opts))
        .map_err(runtime_err)?;
    Ok((r.mean_lpd, r.sd_lpd, r.values()))
}

#[pyfunction]
fn log_sum_exp(values: Vec<f64>) -> PyResult<f64> {
    aecore::evaluation::log_sum_exp(&values).map_err(value_err)
}

/// Split R-hat; `inf` when every chain is constant.
#[pyfunction]
fn compute_rhat(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    aecore::compute_rhat(&chains).map(|r| r.as_f64()).map_err(value_err)
}

#[pyfunction]
fn build_prompt(strategy: &str) -> PyResult<&'static str> {
    Ok(elicitation::build_prompt(self::strategy(strategy)?))
}

/// Returns `(alpha_rate, beta_rate)`.
#[pyfunction]
fn parse_response(raw: &str) -> PyResult<(f64, f64)> {
    elicitation::parse_response(raw)
        .map(|r| (r.alpha_rate, r.beta_rate))
        .map_err(value_err)
}

/// Elicits one aggregated prior by replaying a fixture file.
#[pyfunction]
#[pyo3(signature = (fixtures, model_id, strategy, temperature, n_queries=5, slot_base=0))]
fn elicit_from_fixtures(
    fixtures: PathBuf,
    model_id: &str,
    strategy: &str,
    temperature: f64,
    n_queries: usize,
    slot_base: u64,
) -> PyResult<HyperPriorSpec> {
    let transport = ReplayTransport::load(&fixtures).map_err(value_err)?;
    let config = ElicitationConfig {
        model_id: model_id.to_string(),
        temperature,
        n_queries,
        ..ElicitationConfig::default()
    };
    elicitation::elicit_prior(self::strategy(strategy)?, &config, &transport, slot_base, &ThreadSleeper)
        .map(|a| HyperPriorSpec(a.spec))
        .map_err(runtime_err)
}

/// Stratum label to site ids.
#[pyfunction]
fn stratify(dataset: &Dataset) -> BTreeMap<String, Vec<String>> {
    stratify_sites(&dataset.0)
        .into_iter()
        .map(|s| (s.label.to_string(), s.site_ids))
        .collect()
}

/// Site id to fold index.
#[pyfunction]
fn assign_folds(dataset: &Dataset, k: usize, seed: u64) -> PyResult<BTreeMap<String, usize>> {
    make_folds(&stratify_sites(&dataset.0), k, seed)
        .map(|f| f.fold_of_site)
        .map_err(value_err)
}

/// Cross-validates the meta-analytical baseline and any
/// `(model_id, strategy, temperature)` conditions. LLM conditions need
/// `fixtures`. Returns `(label, pooled_mean, pooled_sd)` per condition.
#[pyfunction]
#[pyo3(signature = (dataset, k=5, seed=0, conditions=vec![], fixtures=None, *, n_warmup=1000, n_draws=1000))]
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    py: Python<'_>,
    dataset: &Dataset,
    k: usize,
    seed: u64,
    conditions: Vec<(String, String, f64)>,
    fixtures: Option<PathBuf>,
    n_warmup: usize,
    n_draws: usize,
) -> PyResult<Vec<(String, f64, f64)>> {
    let mut conds = vec![CvCondition::MetaAnalytical];
    for (m, s, t) in &conditions {
        conds.push(CvCondition::llm(m, strategy(s)?, *t));
    }
    let transport = fixtures
        .map(|p| ReplayTransport::load(&p))
        .transpose()
        .map_err(value_err)?;
    let mcmc = McmcConfig {
        n_warmup,
        n_draws,
        ..McmcConfig::default()
    };
    let mut ctx = ExperimentContext::new(seed, mcmc, ElicitationConfig::default());
    if let Some(t) = &transport {
        ctx = ctx.with_transport(t);
    }
    let (_, results) = py
        .detach(|| run_cv_experiment(&dataset.0, &conds, k, &ctx))
        .map_err(runtime_err)?;
    Ok(results
        .into_iter()
        .map(|r| (r.condition.label(), r.pooled_mean, r.pooled_sd))
        .collect())
}

#[pymodule]
fn aeprior(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<HyperPriorSpec>()?;
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(run_mcmc, m)?)?;
    m.add_function(wrap_pyfunction!(lpd, m)?)?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(compute_rhat, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(elicit_from_fixtures, m)?)?;
    m.add_function(wrap_pyfunction!(stratify, m)?)?;
    m.add_function(wrap_pyfunction!(assign_folds, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
