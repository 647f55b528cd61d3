//! Hierarchical Poisson-Gamma models of adverse-event counts in multi-center
//! trials, with hyperpriors elicited from a language model and evaluated by
//! out-of-sample log predictive density.

pub mod cli;
pub mod crossval;
pub mod data;
pub mod efficiency;
pub mod elicitation;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use data::{load_dataset, summarize, Dataset, DatasetFormat, DatasetSummary, PatientRecord};
pub use model::{HyperParams, HyperPriorSpec, SiteRates};
pub use sampler::{compute_rhat, run_mcmc, McmcConfig, PosteriorDraws};
