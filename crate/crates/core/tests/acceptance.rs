//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 9 and 10 need the curated NCT00617669 control-arm file; point
//! `AEPRIOR_TRIAL_DATA` at it to enable them.

mod common;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use aeprior::crossval::run_cv_experiment;
use aeprior::efficiency::{run_efficiency_experiment, EfficiencyArm, EfficiencyConfig, SplitSpec, DEFAULT_RHOS};
use aeprior::elicitation::{
    build_prompt, parse_response, ChatRequest, ElicitationConfig, FixtureRecord, ParseError, PromptStrategy,
    ReplayTransport,
};
use aeprior::evaluation::lpd_patient;
use aeprior::experiment::{CvCondition, ExperimentContext};
use aeprior::{compute_rhat, rng, run_mcmc, DatasetFormat, HyperParams, HyperPriorSpec, McmcConfig, PosteriorDraws};
use rand_distr::{Distribution, StandardNormal};

const DATA_VAR: &str = "AEPRIOR_TRIAL_DATA";
const SEED: u64 = 20240611;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn quick_mcmc() -> McmcConfig {
    McmcConfig {
        n_chains: 2,
        n_warmup: 150,
        n_draws: 150,
        ..McmcConfig::default()
    }
}

fn within_budget(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn conjugate_oracle() -> Outcome {
    let t = Instant::now();
    let d = common::dataset(&[("site", &[3, 0, 4])]);
    let config = McmcConfig {
        n_chains: 4,
        n_draws: 1000,
        seed: SEED,
        freeze_hyperparams: Some(HyperParams::new(2.0, 0.5).unwrap()),
        ..McmcConfig::default()
    };
    let draws = run_mcmc(&d, &HyperPriorSpec::META_ANALYTICAL, &config).unwrap();
    let all = draws.lambda_chains(0).concat();
    let (m, v) = (common::mean(&all), common::variance(&all));
    let (em, ev) = (9.0 / 3.5, 9.0 / (3.5 * 3.5));
    let rel_m = (m - em).abs() / em;
    let rel_v = (v - ev).abs() / ev;
    let elapsed = t.elapsed();
    check(
        all.len() == 4000 && rel_m < 0.02 && rel_v < 0.10 && within_budget(elapsed, 5),
        format!(
            "{} draws, mean {m:.4} vs {em:.4} ({:.2}%), var {v:.4} vs {ev:.4} ({:.2}%), {elapsed:.1?}",
            all.len(),
            100.0 * rel_m,
            100.0 * rel_v
        ),
    )
}

fn nb_oracle() -> Outcome {
    let t = Instant::now();
    let exact = common::nb_ln_pmf(3, 2.0, 1.0);
    let hp = HyperParams::new(2.0, 1.0).unwrap();
    let mean_err = |s: usize, reps: u64| {
        let draws = PosteriorDraws::point_mass(hp, 1, s);
        let errs: Vec<f64> = (0..reps)
            .map(|r| (lpd_patient(3, &draws, &mut rng::stream(SEED, &[s as u64, r])).unwrap() - exact).abs())
            .collect();
        common::mean(&errs)
    };
    let draws = PosteriorDraws::point_mass(hp, 1, 1_000_000);
    let big = lpd_patient(3, &draws, &mut rng::stream(SEED, &[0])).unwrap();
    let (e4, e6) = (mean_err(10_000, 8), mean_err(1_000_000, 3));
    let elapsed = t.elapsed();
    check(
        (exact - 0.125f64.ln()).abs() < 1e-12 && (big - exact).abs() < 0.01 && e4 > e6 && within_budget(elapsed, 30),
        format!(
            "S=1e6 lpd {big:.5} vs ln 0.125 = {exact:.5}; mean |err| S=1e4 {e4:.5} > S=1e6 {e6:.5}; {elapsed:.1?}"
        ),
    )
}

fn parameter_recovery() -> Outcome {
    let t = Instant::now();
    let d = common::generate(200, 5, 2.0, 1.0, SEED);
    let config = McmcConfig {
        seed: SEED,
        ..McmcConfig::default()
    };
    let draws = run_mcmc(&d, &HyperPriorSpec::META_ANALYTICAL, &config).unwrap();
    let a: Vec<f64> = draws.alpha.concat();
    let b: Vec<f64> = draws.beta.concat();
    let za = (common::mean(&a) - 2.0).abs() / common::variance(&a).sqrt();
    let zb = (common::mean(&b) - 1.0).abs() / common::variance(&b).sqrt();
    let max_rhat = draws.diagnostics.max_rhat().unwrap();
    let elapsed = t.elapsed();
    check(
        za < 3.0 && zb < 3.0 && max_rhat < 1.1 && within_budget(elapsed, 120),
        format!(
            "alpha {:.3} ({za:.2} SD), beta {:.3} ({zb:.2} SD), max R-hat {max_rhat:.4}, {elapsed:.1?}",
            common::mean(&a),
            common::mean(&b)
        ),
    )
}

fn rhat_calibration() -> Outcome {
    let mut r = rng::stream(SEED, &[4]);
    let iid: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..1000).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    let offset: Vec<Vec<f64>> = iid
        .iter()
        .enumerate()
        .map(|(c, xs)| xs.iter().map(|x| x + 10.0 * c as f64).collect())
        .collect();
    let a = compute_rhat(&iid).unwrap().as_f64();
    let b = compute_rhat(&offset).unwrap().as_f64();
    check(
        (0.99..=1.01).contains(&a) && b > 1.5,
        format!("i.i.d. {a:.4}, offset {b:.2}"),
    )
}

fn prompt_goldens() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut bad = Vec::new();
    for (s, file) in [
        (PromptStrategy::Blind, "prompt_blind.txt"),
        (PromptStrategy::DiseaseInformed, "prompt_disease_informed.txt"),
    ] {
        let golden = fs::read(dir.join(file)).unwrap();
        if build_prompt(s).as_bytes() != golden.as_slice() {
            bad.push(file);
        }
    }
    check(bad.is_empty(), format!("2 prompts byte-compared, mismatches: {bad:?}"))
}

fn parser_corpus() -> Outcome {
    let valid = [
        (r#"{"alpha_rate": 0.5, "beta_rate": 0.1}"#, 0.5, 0.1),
        ("```json\n{\"alpha_rate\": 0.1, \"beta_rate\": 1.0}\n```", 0.1, 1.0),
        ("```json\n{\"alpha_rate\": 0.1, \"beta_rate\": 2.0}\n```", 0.1, 2.0),
        ("```\n{\"alpha_rate\": 0.1, \"beta_rate\": 2.0}\n```", 0.1, 2.0),
    ];
    let ok = valid.iter().all(|(raw, a, b)| {
        parse_response(raw).is_ok_and(|r| r.alpha_rate == *a && r.beta_rate == *b)
    });
    let malformed = [
        "",
        "not json",
        "[0.5, 0.1]",
        r#"{"beta_rate": 0.1}"#,
        r#"{"alpha_rate": 0.1}"#,
        r#"{"alpha_rate": -1, "beta_rate": 0.5}"#,
        r#"{"alpha_rate": 0.5, "beta_rate": 0}"#,
        r#"{"alpha_rate": "0.5", "beta_rate": 0.1}"#,
        r#"{"alpha_rate": 0.5, "beta_rate": null}"#,
        r#"{"alpha_rate": 0.5, "beta_rate": 0.1"#,
        "```json\n```",
        r#"{'alpha_rate': 0.5, 'beta_rate': 0.1}"#,
    ];
    let named = malformed
        .iter()
        .filter(|raw| {
            matches!(
                parse_response(raw),
                Err(ParseError::Empty
                    | ParseError::InvalidJson(_)
                    | ParseError::NotAnObject
                    | ParseError::MissingField(_)
                    | ParseError::NotNumeric { .. }
                    | ParseError::NonPositive { .. })
            )
        })
        .count();
    check(
        ok && named == malformed.len() && named >= 10,
        format!("{} valid parsed to stated values: {ok}; {named}/{} malformed rejected", valid.len(), malformed.len()),
    )
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        r#"dataset = "{}"
seed = {SEED}

[mcmc]
n_chains = 2
n_warmup = 150
n_draws = 150

[elicitation]
models = ["llama-3.3-70b-instruct", "medgemma-27b-it"]
strategies = ["blind", "disease_informed"]
temperatures = [1.0]
fixtures = "{}"

[efficiency]
rhos = [0.4, 1.0]
n_replications = 3
"#,
        repo_path("data/synthetic_trial.csv").display(),
        repo_path("data/fixtures.jsonl").display()
    );
    fs::write(&path, text).unwrap();
    path
}

/// Every output except the run manifests, which record the thread count.
fn outputs(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["audit", "results", "reports"] {
        let Ok(entries) = fs::read_dir(root.join(sub)) else {
            continue;
        };
        for e in entries {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if !name.starts_with("run_") {
                files.push((format!("{sub}/{name}"), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn pipeline_determinism() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut snapshots = Vec::new();
    for (run, threads) in [(0, "1"), (1, "1"), (2, "2")] {
        let out = dir.path().join(format!("out{run}"));
        for cmd in ["cv", "efficiency"] {
            let o = Command::new(env!("CARGO_BIN_EXE_aeprior"))
                .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads, cmd])
                .env_remove("LLM_API_KEY")
                .env_remove("LLM_ENDPOINT")
                .output()
                .unwrap();
            if !o.status.success() {
                return Fail(format!("{cmd} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
            }
        }
        snapshots.push(outputs(&out));
    }
    let n = snapshots[0].len();
    check(
        n >= 10 && snapshots.iter().all(|s| *s == snapshots[0]),
        format!("{n} output files identical over 2 runs and 1 vs 2 threads, {:.1?}", t.elapsed()),
    )
}

fn experiment_structure() -> Outcome {
    let data = aeprior::load_dataset(&repo_path("data/synthetic_trial.csv"), DatasetFormat::Csv).unwrap();
    let transport = ReplayTransport::load(&repo_path("data/fixtures.jsonl")).unwrap();
    let ctx = ExperimentContext::new(SEED, quick_mcmc(), ElicitationConfig::default()).with_transport(&transport);
    let k = 5;
    let conditions: Vec<CvCondition> = std::iter::once(CvCondition::MetaAnalytical)
        .chain(PromptStrategy::ALL.into_iter().map(|s| CvCondition::llm("medgemma-27b-it", s, 0.5)))
        .collect();
    let (_, cv) = run_cv_experiment(&data, &conditions, k, &ctx).unwrap();
    let per_condition: Vec<usize> = cv.iter().skip(1).map(|r| r.elicitation_records()).collect();
    let cv_ok = per_condition.iter().all(|&n| n == k * 5);

    let arms = vec![
        EfficiencyArm {
            condition: CvCondition::llm("llama-3.3-70b-instruct", PromptStrategy::Blind, 1.0),
            rhos: DEFAULT_RHOS.to_vec(),
        },
        EfficiencyArm {
            condition: CvCondition::MetaAnalytical,
            rhos: vec![1.0],
        },
    ];
    let config = EfficiencyConfig {
        split: SplitSpec {
            train_fraction: 0.7,
            seed: rng::derive_seed(SEED, &[1]),
        },
        ..EfficiencyConfig::default()
    };
    let eff = run_efficiency_experiment(&data, &arms, &config, &ctx).unwrap();
    let reps_ok = eff.cells.len() == DEFAULT_RHOS.len() + 1 && eff.cells.iter().all(|c| c.n_runs == 20);
    let hashes: HashSet<&str> = eff.runs.iter().map(|r| r.test_set_hash.as_str()).collect();
    check(
        cv_ok && reps_ok && hashes.len() == 1,
        format!(
            "CV records per LLM condition {per_condition:?} (want {}); {} efficiency cells x {:?} runs; {} distinct test set(s)",
            k * 5,
            eff.cells.len(),
            eff.cells.iter().map(|c| c.n_runs).collect::<HashSet<_>>(),
            hashes.len()
        ),
    )
}

fn trial_data() -> Option<aeprior::Dataset> {
    let path = std::env::var_os(DATA_VAR)?;
    Some(aeprior::load_dataset(Path::new(&path), DatasetFormat::Csv).expect("trial data file loads"))
}

fn default_ctx<'a>() -> ExperimentContext<'a> {
    ExperimentContext::new(
        SEED,
        McmcConfig {
            seed: SEED,
            ..McmcConfig::default()
        },
        ElicitationConfig::default(),
    )
}

fn split_config() -> EfficiencyConfig {
    EfficiencyConfig {
        split: SplitSpec {
            train_fraction: 0.7,
            seed: rng::derive_seed(SEED, &[1]),
        },
        ..EfficiencyConfig::default()
    }
}

fn trial_reproduction() -> Outcome {
    let Some(data) = trial_data() else {
        return Skip(format!("set {DATA_VAR} to the curated control-arm file"));
    };
    let s = data.summary();
    let ctx = default_ctx();
    let (_, cv) = run_cv_experiment(&data, &[CvCondition::MetaAnalytical], 5, &ctx).unwrap();
    let arms = vec![EfficiencyArm {
        condition: CvCondition::MetaAnalytical,
        rhos: vec![1.0],
    }];
    let eff = run_efficiency_experiment(&data, &arms, &split_config(), &ctx).unwrap();
    let cv_lpd = cv[0].pooled_mean;
    let eff_lpd = eff.cells[0].lpd_mean;
    check(
        s.n_patients == 468 && s.n_sites == 125 && (cv_lpd + 3.963).abs() <= 0.15 && (eff_lpd + 4.103).abs() <= 0.15,
        format!(
            "{} patients / {} sites; CV LPD {cv_lpd:.3} (target -3.963 ± 0.15); baseline {eff_lpd:.3} (target -4.103 ± 0.15)",
            s.n_patients, s.n_sites
        ),
    )
}

fn efficiency_trend() -> Outcome {
    let Some(data) = trial_data() else {
        return Skip(format!("set {DATA_VAR} to the curated control-arm file"));
    };
    let model = "fixture";
    let req = ChatRequest::user(model, build_prompt(PromptStrategy::Blind), 1.0);
    let transport = ReplayTransport::from_records([FixtureRecord::new(
        &req,
        Some(PromptStrategy::Blind),
        0,
        r#"{"alpha_rate": 0.5, "beta_rate": 0.1}"#,
    )]);
    let ctx = default_ctx().with_transport(&transport);
    let arms = vec![EfficiencyArm {
        condition: CvCondition::llm(model, PromptStrategy::Blind, 1.0),
        rhos: vec![0.8, 1.0],
    }];
    let eff = run_efficiency_experiment(&data, &arms, &split_config(), &ctx).unwrap();
    let (a, b) = (eff.cells[0].lpd_mean, eff.cells[1].lpd_mean);
    check((a - b).abs() < 0.05, format!("rho 0.8 {a:.3}, rho 1.0 {b:.3}, |diff| {:.3}", (a - b).abs()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("conjugate oracle", conjugate_oracle),
        ("negative-binomial LPD oracle", nb_oracle),
        ("parameter recovery", parameter_recovery),
        ("R-hat calibration", rhat_calibration),
        ("prompt golden files", prompt_goldens),
        ("parser corpus", parser_corpus),
        ("pipeline determinism", pipeline_determinism),
        ("experiment structure", experiment_structure),
        ("trial data reproduction", trial_reproduction),
        ("sample-efficiency trend", efficiency_trend),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Pass(d) => format!("PASS  {:>2}. {name}: {d}", i + 1),
            Skip(d) => format!("SKIP  {:>2}. {name}: {d}", i + 1),
            Fail(d) => {
                failed += 1;
                format!("FAIL  {:>2}. {name}: {d}", i + 1)
            }
        };
        println!("{line}");
    }
    println!("acceptance: {} criteria, {failed} failed", criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
