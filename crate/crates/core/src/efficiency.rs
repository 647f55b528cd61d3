//! Sample-efficiency experiment: a fixed stratified train/test split with
//! the training sites subsampled at several fractions and replicated.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossval::stratify_sites;
use crate::data::Dataset;
use crate::elicitation::AggregatedPrior;
use crate::experiment::{run_cell, CvCondition, ExperimentContext, ExperimentError};
use crate::model::HyperPriorSpec;
use crate::rng;
use crate::stats;

const SPLIT_TAG: u64 = 0x73706c6974;
const SUBSAMPLE_TAG: u64 = 0x737562;

pub const DEFAULT_RHOS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// `round(x * n)` with halves rounded up, tolerant of representation
/// error (0.7 * 5 lands on 3.5).
fn round_half_up(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

/// Site-level stratified split. Each stratum sends `round(f * n)` of its
/// sites (at least one, at most `n - 1`) to training; strata with fewer
/// than two sites go entirely to training.
pub fn train_test_split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split, ExperimentError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(ExperimentError::Setup(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    let mut warnings = Vec::new();
    for (i, stratum) in stratify_sites(dataset).into_iter().enumerate() {
        let n = stratum.site_ids.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            warnings.push(format!(
                "stratum {} has {n} site(s); all assigned to training",
                stratum.label
            ));
            train_ids.extend(stratum.site_ids);
            continue;
        }
        let mut sites = stratum.site_ids;
        sites.shuffle(&mut rng::stream(spec.seed, &[SPLIT_TAG, i as u64]));
        let n_train = round_half_up(spec.train_fraction, n).clamp(1, n - 1);
        test_ids.extend(sites.split_off(n_train));
        train_ids.extend(sites);
    }
    let train = dataset
        .subset_sites(&train_ids)
        .ok_or_else(|| ExperimentError::Setup("training split is empty".into()))?;
    let test = dataset
        .subset_sites(&test_ids)
        .ok_or_else(|| ExperimentError::Setup("test split is empty".into()))?;
    Ok(Split {
        train,
        test,
        warnings,
    })
}

/// Keeps `round(rho * n)` sites (minimum one) of each nonempty training
/// stratum. With `nested`, the shuffle ignores `rho`, so for one seed the
/// retained sets grow monotonically with `rho`.
pub fn subsample_training(train: &Dataset, rho: f64, seed: u64, nested: bool) -> Dataset {
    assert!(rho > 0.0 && rho <= 1.0, "rho must lie in (0, 1], got {rho}");
    if rho >= 1.0 {
        return train.clone();
    }
    let mut keep = Vec::new();
    for (i, stratum) in stratify_sites(train).into_iter().enumerate() {
        let n = stratum.site_ids.len();
        if n == 0 {
            continue;
        }
        let mut tags = vec![SUBSAMPLE_TAG, i as u64];
        if !nested {
            tags.push(rho.to_bits());
        }
        let mut sites = stratum.site_ids;
        sites.shuffle(&mut rng::stream(seed, &tags));
        sites.truncate(round_half_up(rho, n).max(1));
        keep.extend(sites);
    }
    train
        .subset_sites(&keep)
        .expect("at least one site per nonempty stratum is retained")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfficiencyConfig {
    pub split: SplitSpec,
    pub n_replications: usize,
    pub nested: bool,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            n_replications: 20,
            nested: true,
        }
    }
}

/// One condition and the training fractions it is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyArm {
    pub condition: CvCondition,
    pub rhos: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRun {
    pub condition: String,
    pub rho: f64,
    /// 1-based.
    pub replication: usize,
    pub spec: HyperPriorSpec,
    pub n_train_patients: usize,
    pub n_train_sites: usize,
    pub lpd_mean: f64,
    pub test_set_hash: String,
    pub max_rhat: Option<f64>,
    #[serde(skip)]
    pub elicitation: Option<AggregatedPrior>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyCell {
    pub condition: CvCondition,
    pub rho: f64,
    pub n_runs: usize,
    pub lpd_mean: f64,
    pub lpd_sd: f64,
    pub train_patients_mean: f64,
    pub train_patients_min: usize,
    pub train_patients_max: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyResult {
    pub runs: Vec<EfficiencyRun>,
    pub cells: Vec<EfficiencyCell>,
    pub test_site_ids: Vec<String>,
    pub n_test_patients: usize,
    pub n_full_train_patients: usize,
    pub split_warnings: Vec<String>,
}

fn site_set_hash(dataset: &Dataset) -> String {
    let mut ids = dataset.site_ids().to_vec();
    ids.sort();
    hex::encode(&Sha256::digest(ids.join("\n").as_bytes())[..8])
}

/// Runs every `(arm, rho, replication)` cell against one fixed test set.
///
/// The subsample for replication `r` depends only on `(ctx.seed, r)`, so
/// all arms see the same training sites at a given `(rho, r)`. LLM arms
/// elicit a fresh prior per cell.
pub fn run_efficiency_experiment(
    dataset: &Dataset,
    arms: &[EfficiencyArm],
    config: &EfficiencyConfig,
    ctx: &ExperimentContext<'_>,
) -> Result<EfficiencyResult, ExperimentError> {
    if config.n_replications == 0 {
        return Err(ExperimentError::Setup("n_replications must be positive".into()));
    }
    for arm in arms {
        if let Some(r) = arm.rhos.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(ExperimentError::Setup(format!("rho must lie in (0, 1], got {r}")));
        }
    }
    let split = train_test_split(dataset, &config.split)?;
    let test_hash = site_set_hash(&split.test);
    let n_queries = ctx.elicit.n_queries as u64;
    let n_reps = config.n_replications;

    let mut cells = Vec::new();
    for (a, arm) in arms.iter().enumerate() {
        for (ri, &rho) in arm.rhos.iter().enumerate() {
            for rep in 0..n_reps {
                cells.push((a, ri, rho, rep));
            }
        }
    }

    let runs = cells
        .par_iter()
        .map(|&(a, ri, rho, rep)| {
            let condition = &arms[a].condition;
            let context = format!(
                "efficiency condition {condition}, rho {rho}, replication {}",
                rep + 1
            );
            let sub_seed = rng::derive_seed(ctx.seed, &[SUBSAMPLE_TAG, rep as u64]);
            let train = subsample_training(&split.train, rho, sub_seed, config.nested);
            let slot = (ri as u64 * n_reps as u64 + rep as u64) * n_queries;
            let cell = run_cell(
                condition,
                &train,
                &split.test,
                ctx,
                slot,
                &[rho.to_bits(), rep as u64],
                &context,
            )?;
            Ok(EfficiencyRun {
                condition: condition.label(),
                rho,
                replication: rep + 1,
                spec: cell.spec,
                n_train_patients: train.n_patients(),
                n_train_sites: train.n_sites(),
                lpd_mean: cell.lpd.mean_lpd,
                test_set_hash: test_hash.clone(),
                max_rhat: cell.max_rhat,
                elicitation: cell.elicitation,
            })
        })
        .collect::<Result<Vec<EfficiencyRun>, ExperimentError>>()?;

    let cells = runs
        .chunks(n_reps)
        .zip(cells.iter().step_by(n_reps))
        .map(|(chunk, &(a, _, rho, _))| {
            let lpds: Vec<f64> = chunk.iter().map(|r| r.lpd_mean).collect();
            let counts: Vec<usize> = chunk.iter().map(|r| r.n_train_patients).collect();
            EfficiencyCell {
                condition: arms[a].condition.clone(),
                rho,
                n_runs: chunk.len(),
                lpd_mean: stats::mean(lpds.iter().copied()),
                lpd_sd: stats::sample_sd(&lpds),
                train_patients_mean: stats::mean(counts.iter().map(|&c| c as f64)),
                train_patients_min: counts.iter().copied().min().unwrap_or(0),
                train_patients_max: counts.iter().copied().max().unwrap_or(0),
            }
        })
        .collect();

    Ok(EfficiencyResult {
        runs,
        cells,
        test_site_ids: split.test.site_ids().to_vec(),
        n_test_patients: split.test.n_patients(),
        n_full_train_patients: split.train.n_patients(),
        split_warnings: split.warnings,
    })
}
