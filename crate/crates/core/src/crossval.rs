//! Site-stratified k-fold cross-validation.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::elicitation::AggregatedPrior;
use crate::evaluation::PatientLpd;
use crate::experiment::{run_cell, CvCondition, ExperimentContext, ExperimentError};
use crate::model::HyperPriorSpec;
use crate::rng;
use crate::stats;

const FOLD_TAG: u64 = 0x666f6c64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumLabel {
    Small,
    Medium,
    Large,
}

impl StratumLabel {
    pub const ALL: [StratumLabel; 3] = [StratumLabel::Small, StratumLabel::Medium, StratumLabel::Large];

    /// `<= 2` patients small, `3..=4` medium, `>= 5` large.
    pub fn of_size(n_patients: usize) -> Self {
        match n_patients {
            0..=2 => StratumLabel::Small,
            3..=4 => StratumLabel::Medium,
            _ => StratumLabel::Large,
        }
    }
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StratumLabel::Small => "small",
            StratumLabel::Medium => "medium",
            StratumLabel::Large => "large",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteStratum {
    pub label: StratumLabel,
    /// Site ids in dataset order.
    pub site_ids: Vec<String>,
}

/// Always returns the three strata in Small, Medium, Large order; some may
/// be empty.
pub fn stratify_sites(dataset: &Dataset) -> Vec<SiteStratum> {
    let mut strata: Vec<SiteStratum> = StratumLabel::ALL
        .iter()
        .map(|&label| SiteStratum {
            label,
            site_ids: Vec::new(),
        })
        .collect();
    for (s, id) in dataset.site_ids().iter().enumerate() {
        let label = StratumLabel::of_size(dataset.site_size(s));
        strata[label as usize].site_ids.push(id.clone());
    }
    strata
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CvError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} exceeds the number of sites ({n_sites})")]
    KExceedsSites { k: usize, n_sites: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of_site: BTreeMap<String, usize>,
    /// `composition[fold][stratum]` site counts.
    pub composition: Vec<[usize; 3]>,
}

impl FoldAssignment {
    pub fn test_sites(&self, fold: usize) -> Vec<String> {
        self.fold_of_site
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn train_sites(&self, fold: usize) -> Vec<String> {
        self.fold_of_site
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.composition.iter().map(|c| c.iter().sum()).collect()
    }
}

/// Shuffles each stratum with a seeded stream and deals its sites
/// round-robin across `k` folds. The dealing position carries over from
/// one stratum to the next so total fold sizes also stay within one site.
pub fn make_folds(strata: &[SiteStratum], k: usize, seed: u64) -> Result<FoldAssignment, CvError> {
    if k < 2 {
        return Err(CvError::KTooSmall(k));
    }
    let n_sites: usize = strata.iter().map(|s| s.site_ids.len()).sum();
    if k > n_sites {
        return Err(CvError::KExceedsSites { k, n_sites });
    }
    let mut fold_of_site = BTreeMap::new();
    let mut composition = vec![[0usize; 3]; k];
    let mut next = 0usize;
    for (i, stratum) in strata.iter().enumerate() {
        let mut sites = stratum.site_ids.clone();
        sites.shuffle(&mut rng::stream(seed, &[FOLD_TAG, i as u64]));
        for site in sites {
            composition[next][stratum.label as usize] += 1;
            fold_of_site.insert(site, next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment {
        k,
        seed,
        fold_of_site,
        composition,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub spec: HyperPriorSpec,
    pub n_train_sites: usize,
    pub n_test_sites: usize,
    pub n_test_patients: usize,
    pub lpd_mean: f64,
    pub lpd_sd: f64,
    pub max_rhat: Option<f64>,
    pub rhat_warnings: usize,
    #[serde(skip)]
    pub per_patient: Vec<PatientLpd>,
    #[serde(skip)]
    pub site_means: Vec<f64>,
    #[serde(skip)]
    pub elicitation: Option<AggregatedPrior>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub condition: CvCondition,
    pub per_fold: Vec<FoldResult>,
    /// Mean LPD over all held-out patients.
    pub pooled_mean: f64,
    /// SD over all held-out patients.
    pub pooled_sd: f64,
    /// SD of the per-fold mean LPDs.
    pub fold_sd: f64,
    /// SD of per-site mean LPDs over all held-out sites.
    pub site_sd: f64,
}

impl CvResult {
    pub fn elicitation_records(&self) -> usize {
        self.per_fold
            .iter()
            .filter_map(|f| f.elicitation.as_ref())
            .map(|a| a.records.len())
            .sum()
    }
}

/// Cross-validates every condition over the same fold assignment.
///
/// LLM conditions elicit a fresh prior per fold on slots
/// `fold * n_queries ..`. Cells run in parallel; each cell's streams
/// depend only on `(ctx.seed, condition, fold)`.
pub fn run_cv_experiment(
    dataset: &Dataset,
    conditions: &[CvCondition],
    k: usize,
    ctx: &ExperimentContext<'_>,
) -> Result<(FoldAssignment, Vec<CvResult>), ExperimentError> {
    let folds = make_folds(&stratify_sites(dataset), k, rng::derive_seed(ctx.seed, &[FOLD_TAG]))
        .map_err(|e| ExperimentError::Setup(e.to_string()))?;
    let n_queries = ctx.elicit.n_queries as u64;

    let cells: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(c, fold)| {
            let condition = &conditions[c];
            let context = format!("cv condition {condition}, fold {fold}");
            let test_ids = folds.test_sites(fold);
            let train_ids = folds.train_sites(fold);
            let test = dataset
                .subset_sites(&test_ids)
                .ok_or_else(|| ExperimentError::Setup(format!("{context}: empty test fold")))?;
            let train = dataset
                .subset_sites(&train_ids)
                .ok_or_else(|| ExperimentError::Setup(format!("{context}: empty training set")))?;
            let cell = run_cell(
                condition,
                &train,
                &test,
                ctx,
                fold as u64 * n_queries,
                &[fold as u64],
                &context,
            )?;
            let site_means = (0..test.n_sites())
                .map(|s| {
                    stats::mean(test.site_members(s).iter().map(|&i| cell.lpd.per_patient[i].lpd))
                })
                .collect();
            Ok(FoldResult {
                fold,
                spec: cell.spec,
                n_train_sites: train.n_sites(),
                n_test_sites: test.n_sites(),
                n_test_patients: test.n_patients(),
                lpd_mean: cell.lpd.mean_lpd,
                lpd_sd: cell.lpd.sd_lpd,
                max_rhat: cell.max_rhat,
                rhat_warnings: cell.rhat_warnings,
                per_patient: cell.lpd.per_patient,
                site_means,
                elicitation: cell.elicitation,
            })
        })
        .collect::<Result<Vec<FoldResult>, ExperimentError>>()?;

    let mut outcomes = outcomes.into_iter();
    let results = conditions
        .iter()
        .map(|condition| {
            let per_fold: Vec<FoldResult> = outcomes.by_ref().take(k).collect();
            let all: Vec<f64> = per_fold
                .iter()
                .flat_map(|f| f.per_patient.iter().map(|p| p.lpd))
                .collect();
            let fold_means: Vec<f64> = per_fold.iter().map(|f| f.lpd_mean).collect();
            let site_means: Vec<f64> = per_fold.iter().flat_map(|f| f.site_means.iter().copied()).collect();
            CvResult {
                condition: condition.clone(),
                pooled_mean: stats::mean(all.iter().copied()),
                pooled_sd: stats::sample_sd(&all),
                fold_sd: stats::sample_sd(&fold_means),
                site_sd: stats::sample_sd(&site_means),
                per_fold,
            }
        })
        .collect();
    Ok((folds, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn sized(sizes: &[usize]) -> Dataset {
        let mut recs = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            for p in 0..n {
                recs.push(PatientRecord {
                    patient_id: format!("s{s}p{p}"),
                    site_id: format!("s{s}"),
                    ae_count: 1,
                });
            }
        }
        Dataset::from_records(recs).unwrap()
    }

    fn stratum(n: usize) -> SiteStratum {
        SiteStratum {
            label: StratumLabel::Small,
            site_ids: (0..n).map(|i| format!("site{i:02}")).collect(),
        }
    }

    #[test]
    fn thresholds() {
        let strata = stratify_sites(&sized(&[1, 2, 3, 4, 5, 27]));
        assert_eq!(strata[0].site_ids, ["s0", "s1"]);
        assert_eq!(strata[1].site_ids, ["s2", "s3"]);
        assert_eq!(strata[2].site_ids, ["s4", "s5"]);
        let strata = stratify_sites(&sized(&[1, 1, 1]));
        assert_eq!(strata[0].site_ids.len(), 3);
        assert!(strata[1].site_ids.is_empty() && strata[2].site_ids.is_empty());
    }

    #[test]
    fn even_and_uneven_division() {
        let f = make_folds(&[stratum(10)], 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let f = make_folds(&[stratum(11)], 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_folds(&[stratum(20)], 5, 3).unwrap();
        assert_eq!(a, make_folds(&[stratum(20)], 5, 3).unwrap());
        assert_ne!(a.fold_of_site, make_folds(&[stratum(20)], 5, 4).unwrap().fold_of_site);
    }

    #[test]
    fn k_validation() {
        assert_eq!(make_folds(&[stratum(3)], 1, 0).unwrap_err(), CvError::KTooSmall(1));
        assert_eq!(
            make_folds(&[stratum(3)], 5, 0).unwrap_err(),
            CvError::KExceedsSites { k: 5, n_sites: 3 }
        );
    }

    #[test]
    fn train_and_test_partition() {
        let f = make_folds(&[stratum(7)], 3, 0).unwrap();
        for fold in 0..3 {
            let mut all = f.test_sites(fold);
            all.extend(f.train_sites(fold));
            all.sort();
            assert_eq!(all, stratum(7).site_ids);
        }
    }
}
