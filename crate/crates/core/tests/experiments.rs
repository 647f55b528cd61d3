mod common;

use std::collections::{BTreeSet, HashSet};

use aeprior::crossval::{make_folds, run_cv_experiment, stratify_sites, StratumLabel};
use aeprior::efficiency::{
    run_efficiency_experiment, subsample_training, train_test_split, EfficiencyArm, EfficiencyConfig, SplitSpec,
};
use aeprior::elicitation::{
    build_prompt, ChatRequest, ElicitationConfig, FixtureRecord, PromptStrategy, ReplayTransport,
};
use aeprior::experiment::{CvCondition, ExperimentContext, ExperimentError};
use aeprior::McmcConfig;

fn quick_mcmc() -> McmcConfig {
    McmcConfig {
        n_warmup: 100,
        n_draws: 100,
        n_chains: 2,
        ..McmcConfig::default()
    }
}

const MODEL: &str = "fixture-model";

fn fixtures(responses: &[&str]) -> ReplayTransport {
    let mut recs = Vec::new();
    for s in PromptStrategy::ALL {
        for t in [0.1, 1.0] {
            let req = ChatRequest::user(MODEL, build_prompt(s), t);
            for (slot, r) in responses.iter().enumerate() {
                recs.push(FixtureRecord::new(&req, Some(s), slot as u64, r));
            }
        }
    }
    ReplayTransport::from_records(recs)
}

fn good_fixtures() -> ReplayTransport {
    fixtures(&[
        r#"{"alpha_rate": 0.2, "beta_rate": 0.3}"#,
        r#"{"alpha_rate": 0.4, "beta_rate": 0.5}"#,
        "not json",
        r#"```json
{"alpha_rate": 0.6, "beta_rate": 0.7}
```"#,
    ])
}

fn data() -> aeprior::Dataset {
    common::sized(&[1, 1, 2, 2, 1, 3, 4, 3, 5, 6, 1, 2, 7, 3, 1, 2, 4, 5, 1, 2])
}

#[test]
fn strata_and_folds_cover_every_site() {
    let d = data();
    let strata = stratify_sites(&d);
    assert_eq!(strata.iter().map(|s| s.label).collect::<Vec<_>>(), StratumLabel::ALL);
    let folds = make_folds(&strata, 4, 1).unwrap();
    assert_eq!(folds.fold_of_site.len(), d.n_sites());
    for (i, stratum) in strata.iter().enumerate() {
        let per_fold: Vec<usize> = folds.composition.iter().map(|c| c[i]).collect();
        let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
        assert!(hi - lo <= 1, "{:?}: {per_fold:?}", stratum.label);
    }
    let sizes = folds.fold_sizes();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

#[test]
fn cv_holds_out_every_patient_once() {
    let d = data();
    let transport = good_fixtures();
    let ctx = ExperimentContext::new(3, quick_mcmc(), ElicitationConfig { n_queries: 4, ..Default::default() })
        .with_transport(&transport);
    let conditions = vec![CvCondition::MetaAnalytical, CvCondition::llm(MODEL, PromptStrategy::Blind, 1.0)];
    let (folds, results) = run_cv_experiment(&d, &conditions, 4, &ctx).unwrap();
    assert_eq!(folds.k, 4);
    for r in &results {
        let held: Vec<&str> = r.per_fold.iter().flat_map(|f| f.per_patient.iter().map(|p| p.patient_id.as_str())).collect();
        let unique: HashSet<&str> = held.iter().copied().collect();
        assert_eq!(held.len(), d.n_patients());
        assert_eq!(unique.len(), d.n_patients());
        assert!(r.pooled_mean.is_finite() && r.pooled_sd > 0.0);
    }
    assert_eq!(results[0].elicitation_records(), 0);
    assert_eq!(results[1].elicitation_records(), 4 * 4);
    // three of four fixture responses parse; the mean of (0.2, 0.4, 0.6)
    for f in &results[1].per_fold {
        assert!((f.spec.alpha_rate() - 0.4).abs() < 1e-12);
        let slots: Vec<u64> = f.elicitation.as_ref().unwrap().records.iter().map(|r| r.slot).collect();
        assert_eq!(slots, (f.fold as u64 * 4..f.fold as u64 * 4 + 4).collect::<Vec<_>>());
    }
    assert_eq!(results[0].per_fold[0].spec, aeprior::HyperPriorSpec::META_ANALYTICAL);
}

#[test]
fn cv_is_deterministic_across_thread_counts() {
    let d = data();
    let transport = good_fixtures();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let ctx = ExperimentContext::new(8, quick_mcmc(), ElicitationConfig { n_queries: 4, ..Default::default() })
                .with_transport(&transport);
            let conds = vec![CvCondition::MetaAnalytical, CvCondition::llm(MODEL, PromptStrategy::DiseaseInformed, 0.1)];
            let (_, r) = run_cv_experiment(&d, &conds, 3, &ctx).unwrap();
            r.iter().map(|c| (c.pooled_mean, c.pooled_sd, c.fold_sd)).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn llm_condition_without_transport_fails() {
    let ctx = ExperimentContext::new(0, quick_mcmc(), ElicitationConfig::default());
    let err = run_cv_experiment(&data(), &[CvCondition::llm(MODEL, PromptStrategy::Blind, 1.0)], 3, &ctx).unwrap_err();
    assert!(matches!(err, ExperimentError::MissingTransport { .. }));
}

#[test]
fn all_failed_elicitation_propagates() {
    let transport = fixtures(&["nope", "still nope"]);
    let ctx = ExperimentContext::new(0, quick_mcmc(), ElicitationConfig { n_queries: 2, ..Default::default() })
        .with_transport(&transport);
    let err = run_cv_experiment(&data(), &[CvCondition::llm(MODEL, PromptStrategy::Blind, 1.0)], 3, &ctx).unwrap_err();
    assert!(matches!(err, ExperimentError::Elicit { .. }), "{err}");
}

#[test]
fn split_is_site_level_and_stratified() {
    let d = common::sized(&(0..30).map(|i| [1, 3, 6][i % 3]).collect::<Vec<_>>());
    let s = train_test_split(&d, &SplitSpec { train_fraction: 0.7, seed: 2 }).unwrap();
    assert_eq!((s.train.n_sites(), s.test.n_sites()), (21, 9));
    let train: BTreeSet<_> = s.train.site_ids().iter().collect();
    assert!(s.test.site_ids().iter().all(|id| !train.contains(id)));
    assert_eq!(s.train.n_patients() + s.test.n_patients(), d.n_patients());
}

#[test]
fn nested_subsamples_grow_monotonically() {
    let d = common::sized(&(0..40).map(|i| 1 + i % 7).collect::<Vec<_>>());
    let mut prev: BTreeSet<String> = BTreeSet::new();
    for rho in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let sub = subsample_training(&d, rho, 5, true);
        let ids: BTreeSet<String> = sub.site_ids().iter().cloned().collect();
        assert!(prev.is_subset(&ids), "rho {rho}");
        prev = ids;
    }
    assert_eq!(prev.len(), 40);
}

#[test]
fn efficiency_shares_test_set_and_subsamples_across_arms() {
    let d = common::sized(&(0..30).map(|i| [1, 2, 3, 5][i % 4]).collect::<Vec<_>>());
    let transport = good_fixtures();
    let ctx = ExperimentContext::new(4, quick_mcmc(), ElicitationConfig { n_queries: 4, ..Default::default() })
        .with_transport(&transport);
    let arms = vec![
        EfficiencyArm { condition: CvCondition::llm(MODEL, PromptStrategy::Blind, 1.0), rhos: vec![0.5, 1.0] },
        EfficiencyArm { condition: CvCondition::MetaAnalytical, rhos: vec![0.5, 1.0] },
    ];
    let config = EfficiencyConfig { split: SplitSpec { train_fraction: 0.7, seed: 1 }, n_replications: 3, nested: true };
    let r = run_efficiency_experiment(&d, &arms, &config, &ctx).unwrap();
    assert_eq!(r.runs.len(), 2 * 2 * 3);
    assert_eq!(r.cells.len(), 4);
    assert!(r.cells.iter().all(|c| c.n_runs == 3));
    let hashes: HashSet<&str> = r.runs.iter().map(|x| x.test_set_hash.as_str()).collect();
    assert_eq!(hashes.len(), 1);
    let llm: Vec<_> = r.runs.iter().filter(|x| x.condition != "meta_analytical").collect();
    let base: Vec<_> = r.runs.iter().filter(|x| x.condition == "meta_analytical").collect();
    for (a, b) in llm.iter().zip(&base) {
        assert_eq!((a.rho, a.replication, a.n_train_patients), (b.rho, b.replication, b.n_train_patients));
    }
    assert!(llm.iter().all(|x| x.elicitation.as_ref().unwrap().records.len() == 4));
    let again = run_efficiency_experiment(&d, &arms, &config, &ctx).unwrap();
    assert_eq!(
        r.runs.iter().map(|x| x.lpd_mean).collect::<Vec<_>>(),
        again.runs.iter().map(|x| x.lpd_mean).collect::<Vec<_>>()
    );
}

#[test]
fn efficiency_rejects_bad_rho() {
    let ctx = ExperimentContext::new(0, quick_mcmc(), ElicitationConfig::default());
    let arms = vec![EfficiencyArm { condition: CvCondition::MetaAnalytical, rhos: vec![0.0] }];
    assert!(run_efficiency_experiment(&data(), &arms, &EfficiencyConfig::default(), &ctx).is_err());
}
