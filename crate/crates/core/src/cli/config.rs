//! TOML run configuration. Secrets come only from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::CliError;
use crate::efficiency::{EfficiencyConfig, SplitSpec, DEFAULT_RHOS};
use crate::elicitation::{Aggregation, ElicitationConfig, PromptStrategy};
use crate::sampler::McmcConfig;

pub const API_KEY_VAR: &str = "LLM_API_KEY";
pub const ENDPOINT_VAR: &str = "LLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub mcmc: McmcSection,
    pub elicitation: ElicitationSection,
    pub fit: FitSection,
    pub cv: CvSection,
    pub efficiency: EfficiencySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
            mcmc: McmcSection::default(),
            elicitation: ElicitationSection::default(),
            fit: FitSection::default(),
            cv: CvSection::default(),
            efficiency: EfficiencySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub adapt_target_accept: f64,
    pub rhat_threshold: f64,
    pub initial_step: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            n_chains: d.n_chains,
            n_warmup: d.n_warmup,
            n_draws: d.n_draws,
            adapt_target_accept: d.adapt_target_accept,
            rhat_threshold: d.rhat_threshold,
            initial_step: d.initial_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitationSection {
    pub endpoint_url: Option<String>,
    pub models: Vec<String>,
    pub strategies: Vec<PromptStrategy>,
    pub temperatures: Vec<f64>,
    pub n_queries: usize,
    pub max_retries: u32,
    /// Seconds.
    pub backoff_base: f64,
    /// Seconds.
    pub timeout: f64,
    pub strict: bool,
    pub aggregation: Aggregation,
    pub concurrency: usize,
    pub fixtures: Option<PathBuf>,
    pub live: bool,
    /// Append live exchanges to this fixture file.
    pub record: Option<PathBuf>,
}

impl Default for ElicitationSection {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            models: vec!["llama-3.3-70b-instruct".into(), "medgemma-27b-it".into()],
            strategies: PromptStrategy::ALL.to_vec(),
            temperatures: vec![0.1, 0.5, 1.0],
            n_queries: 5,
            max_retries: 5,
            backoff_base: 1.0,
            timeout: 60.0,
            strict: false,
            aggregation: Aggregation::Mean,
            concurrency: 1,
            fixtures: None,
            live: false,
            record: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub alpha_rate: f64,
    pub beta_rate: f64,
    pub freeze_alpha: Option<f64>,
    pub freeze_beta: Option<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            alpha_rate: 0.1,
            beta_rate: 0.1,
            freeze_alpha: None,
            freeze_beta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: usize,
    pub include_baseline: bool,
    pub share_lambda_per_site: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            k: 5,
            include_baseline: true,
            share_lambda_per_site: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySection {
    pub train_fraction: f64,
    pub rhos: Vec<f64>,
    pub n_replications: usize,
    pub nested: bool,
    pub model: String,
    pub strategy: PromptStrategy,
    pub temperature: f64,
    /// Fractions at which the meta-analytical baseline runs; empty disables it.
    pub baseline_rhos: Vec<f64>,
}

impl Default for EfficiencySection {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            rhos: DEFAULT_RHOS.to_vec(),
            n_replications: 20,
            nested: true,
            model: "llama-3.3-70b-instruct".into(),
            strategy: PromptStrategy::Blind,
            temperature: 1.0,
            baseline_rhos: vec![1.0],
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.elicitation.fixtures.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.elicitation.record.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.out);
        Ok(cfg)
    }

    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            n_chains: self.mcmc.n_chains,
            n_warmup: self.mcmc.n_warmup,
            n_draws: self.mcmc.n_draws,
            seed: self.seed,
            adapt_target_accept: self.mcmc.adapt_target_accept,
            rhat_threshold: self.mcmc.rhat_threshold,
            initial_step: self.mcmc.initial_step,
            freeze_hyperparams: None,
            no_data: false,
        }
    }

    /// Base elicitation settings. The endpoint may be overridden by
    /// `LLM_ENDPOINT`; the key is read from `LLM_API_KEY`.
    pub fn elicitation_config(&self) -> ElicitationConfig {
        let e = &self.elicitation;
        ElicitationConfig {
            endpoint_url: std::env::var(ENDPOINT_VAR)
                .ok()
                .or_else(|| e.endpoint_url.clone())
                .unwrap_or_default(),
            model_id: e.models.first().cloned().unwrap_or_default(),
            temperature: e.temperatures.first().copied().unwrap_or(1.0),
            n_queries: e.n_queries,
            max_retries: e.max_retries,
            backoff_base: Duration::from_secs_f64(e.backoff_base),
            timeout: Duration::from_secs_f64(e.timeout),
            strict: e.strict,
            aggregation: e.aggregation,
            concurrency: e.concurrency,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn efficiency_config(&self, split_seed: u64) -> EfficiencyConfig {
        EfficiencyConfig {
            split: SplitSpec {
                train_fraction: self.efficiency.train_fraction,
                seed: split_seed,
            },
            n_replications: self.efficiency.n_replications,
            nested: self.efficiency.nested,
        }
    }
}
