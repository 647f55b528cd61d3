//! Pieces shared by the cross-validation and sample-efficiency experiments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::elicitation::{
    elicit_prior, AggregatedPrior, ChatTransport, ElicitError, ElicitationConfig, PromptStrategy,
    Sleeper, ThreadSleeper,
};
use crate::evaluation::{lpd_dataset, EvalError, LpdOptions, LpdResult};
use crate::model::HyperPriorSpec;
use crate::rng;
use crate::sampler::{run_mcmc, McmcConfig, SamplerError};

const MCMC_TAG: u64 = 0x6d636d63;
const LPD_TAG: u64 = 0x6c7064;

/// Where a cell's hyperprior comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CvCondition {
    /// Fixed Exponential(0.1) rates on both hyperparameters.
    MetaAnalytical,
    Llm {
        model_id: String,
        strategy: PromptStrategy,
        temperature: f64,
    },
}

impl CvCondition {
    pub fn llm(model_id: &str, strategy: PromptStrategy, temperature: f64) -> Self {
        CvCondition::Llm {
            model_id: model_id.to_string(),
            strategy,
            temperature,
        }
    }

    /// Stable identifier; also the seed tag for the condition's streams.
    pub fn label(&self) -> String {
        match self {
            CvCondition::MetaAnalytical => "meta_analytical".into(),
            CvCondition::Llm {
                model_id,
                strategy,
                temperature,
            } => format!("{model_id}/{strategy}/{temperature}"),
        }
    }

    pub fn tag(&self) -> u64 {
        rng::label_tag(&self.label())
    }

    pub fn model_name(&self) -> String {
        match self {
            CvCondition::MetaAnalytical => "Meta-analytical".into(),
            CvCondition::Llm { model_id, .. } => display_model(model_id),
        }
    }

    pub fn prompt_name(&self) -> &'static str {
        match self {
            CvCondition::MetaAnalytical => "-",
            CvCondition::Llm { strategy, .. } => strategy.display_name(),
        }
    }

    pub fn temperature_name(&self) -> String {
        match self {
            CvCondition::MetaAnalytical => "-".into(),
            CvCondition::Llm { temperature, .. } => format!("{temperature:.1}"),
        }
    }
}

impl fmt::Display for CvCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Short display names for the model identifiers used in the experiments.
pub fn display_model(model_id: &str) -> String {
    match model_id {
        "llama-3.3-70b-instruct" => "Llama 3.3".into(),
        "medgemma-27b-it" => "MedGemma".into(),
        other => other.into(),
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{context}: {source}")]
    Elicit {
        context: String,
        #[source]
        source: ElicitError,
    },
    #[error("{context}: {source}")]
    Sampler {
        context: String,
        #[source]
        source: SamplerError,
    },
    #[error("{context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error("{context}: LLM condition requires a transport")]
    MissingTransport { context: String },
    #[error("{0}")]
    Setup(String),
}

/// Settings and services shared by every experiment cell.
pub struct ExperimentContext<'a> {
    pub seed: u64,
    /// Chain settings; the `seed` field is replaced per cell.
    pub mcmc: McmcConfig,
    pub elicit: ElicitationConfig,
    pub transport: Option<&'a dyn ChatTransport>,
    pub sleeper: &'a dyn Sleeper,
    pub lpd_share_per_site: bool,
}

impl<'a> ExperimentContext<'a> {
    pub fn new(seed: u64, mcmc: McmcConfig, elicit: ElicitationConfig) -> Self {
        Self {
            seed,
            mcmc,
            elicit,
            transport: None,
            sleeper: &ThreadSleeper,
            lpd_share_per_site: false,
        }
    }

    pub fn with_transport(mut self, transport: &'a dyn ChatTransport) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn with_sleeper(mut self, sleeper: &'a dyn Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }
}

/// Output of one fit/evaluate cycle.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub spec: HyperPriorSpec,
    pub elicitation: Option<AggregatedPrior>,
    pub lpd: LpdResult,
    pub max_rhat: Option<f64>,
    pub rhat_warnings: usize,
}

/// Resolves the prior for one cell. LLM conditions run a fresh
/// elicitation batch on slots `slot_base..slot_base + n_queries`.
pub fn resolve_prior(
    condition: &CvCondition,
    ctx: &ExperimentContext<'_>,
    slot_base: u64,
    context: &str,
) -> Result<(HyperPriorSpec, Option<AggregatedPrior>), ExperimentError> {
    match condition {
        CvCondition::MetaAnalytical => Ok((HyperPriorSpec::META_ANALYTICAL, None)),
        CvCondition::Llm {
            model_id,
            strategy,
            temperature,
        } => {
            let transport = ctx.transport.ok_or_else(|| ExperimentError::MissingTransport {
                context: context.to_string(),
            })?;
            let cfg = ctx.elicit.for_condition(model_id, *temperature);
            let agg = elicit_prior(*strategy, &cfg, transport, slot_base, ctx.sleeper).map_err(
                |source| ExperimentError::Elicit {
                    context: context.to_string(),
                    source,
                },
            )?;
            Ok((agg.spec, Some(agg)))
        }
    }
}

/// Resolves the prior, fits on `train`, and evaluates on `test`.
/// `seed_path` identifies the cell; MCMC and LPD streams hang off it.
pub fn run_cell(
    condition: &CvCondition,
    train: &Dataset,
    test: &Dataset,
    ctx: &ExperimentContext<'_>,
    slot_base: u64,
    seed_path: &[u64],
    context: &str,
) -> Result<CellOutcome, ExperimentError> {
    let (spec, elicitation) = resolve_prior(condition, ctx, slot_base, context)?;
    let mut path = vec![condition.tag()];
    path.extend_from_slice(seed_path);

    let mut mcmc = ctx.mcmc.clone();
    path.push(MCMC_TAG);
    mcmc.seed = rng::derive_seed(ctx.seed, &path);
    let draws = run_mcmc(train, &spec, &mcmc).map_err(|source| ExperimentError::Sampler {
        context: context.to_string(),
        source,
    })?;

    *path.last_mut().expect("non-empty path") = LPD_TAG;
    let options = LpdOptions {
        seed: rng::derive_seed(ctx.seed, &path),
        share_per_site: ctx.lpd_share_per_site,
    };
    let lpd = lpd_dataset(test, &draws, options).map_err(|source| ExperimentError::Eval {
        context: context.to_string(),
        source,
    })?;
    Ok(CellOutcome {
        spec,
        elicitation,
        lpd,
        max_rhat: draws.diagnostics.max_rhat(),
        rhat_warnings: draws.diagnostics.warnings.len(),
    })
}
