//! Command-line driver: config resolution, command dispatch, output layout.
//!
//! Outputs go under `<out>/audit`, `<out>/draws`, `<out>/results` and
//! `<out>/reports`. Every file is written to a temporary sibling first and
//! renamed into place.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub use config::{RunConfig, API_KEY_VAR, ENDPOINT_VAR};

use crate::crossval::run_cv_experiment;
use crate::data::{dataset_to_string, load_dataset, simulate_dataset, DataError, Dataset, DatasetFormat};
use crate::efficiency::{run_efficiency_experiment, EfficiencyArm};
use crate::elicitation::{
    elicit_prior, prior_param_stats, ChatTransport, ElicitError, ElicitationRecord, HttpTransport,
    PriorGroupKey, PromptStrategy, RecordingTransport, ReplayTransport, ThreadSleeper,
};
use crate::experiment::{CvCondition, ExperimentContext, ExperimentError};
use crate::model::{HyperParams, HyperPriorSpec};
use crate::report;
use crate::rng;
use crate::sampler::{run_mcmc, SamplerError};

const SPLIT_TAG: u64 = 0x73706c6974;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(m) => CliError::Config(m),
            e @ SamplerError::NonFinite { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ElicitError> for CliError {
    fn from(e: ElicitError) -> Self {
        if e.is_network() {
            return CliError::Network(e.to_string());
        }
        match e {
            ElicitError::Config(m) => CliError::Config(m),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match e {
            ExperimentError::Elicit { source, .. } => match CliError::from(source) {
                CliError::Network(_) => CliError::Network(msg),
                CliError::Config(_) => CliError::Config(msg),
                _ => CliError::Other(msg),
            },
            ExperimentError::Sampler { source, .. } => match CliError::from(source) {
                CliError::Config(_) => CliError::Config(msg),
                _ => CliError::Numerical(msg),
            },
            ExperimentError::Eval { .. } => CliError::Numerical(msg),
            ExperimentError::MissingTransport { .. } => CliError::Config(format!(
                "{msg}; pass --fixtures FILE or --live with {API_KEY_VAR} set"
            )),
            ExperimentError::Setup(_) => CliError::Data(msg),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "aeprior", version, about = "LLM-elicited hyperpriors for adverse-event rate models")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replay LLM responses from a JSONL fixture file.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Query the live endpoint; the key is read from LLM_API_KEY.
    #[arg(long, global = true)]
    pub live: bool,
    /// With --live, append every exchange to this fixture file.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and print its summary.
    Ingest {
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SummaryFormat::Text)]
        format: SummaryFormat,
    },
    /// Elicit hyperpriors for each model, strategy and temperature.
    Elicit(ElicitArgs),
    /// Fit the hierarchical model to a dataset.
    Fit(FitArgs),
    /// Site-stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Sample-efficiency experiment over training fractions.
    Efficiency(EfficiencyArgs),
    /// Re-render report tables from an output directory's results.
    Report {
        /// Output directory of an earlier run (defaults to --out).
        dir: Option<PathBuf>,
    },
    /// Write a synthetic dataset drawn from the model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    Text,
    Kv,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConditionArgs {
    #[arg(long = "model")]
    pub models: Vec<String>,
    #[arg(long = "strategy")]
    pub strategies: Vec<PromptStrategy>,
    #[arg(long = "temperature")]
    pub temperatures: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ElicitArgs {
    #[command(flatten)]
    pub conditions: ConditionArgs,
    /// Independent elicitation batches per condition.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    #[arg(long)]
    pub n_queries: Option<usize>,
    /// Fail on the first query or parse error.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub alpha_rate: Option<f64>,
    #[arg(long)]
    pub beta_rate: Option<f64>,
    #[arg(long, requires = "freeze_beta")]
    pub freeze_alpha: Option<f64>,
    #[arg(long, requires = "freeze_alpha")]
    pub freeze_beta: Option<f64>,
    /// Sample from the prior only.
    #[arg(long)]
    pub no_data: bool,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub conditions: ConditionArgs,
    /// Run only the meta-analytical condition.
    #[arg(long, conflicts_with = "no_baseline")]
    pub baseline_only: bool,
    #[arg(long)]
    pub no_baseline: bool,
}

#[derive(Debug, Args)]
pub struct EfficiencyArgs {
    pub data: Option<PathBuf>,
    #[arg(long = "rho")]
    pub rhos: Vec<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub strategy: Option<PromptStrategy>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Training fractions for the meta-analytical baseline.
    #[arg(long = "baseline-rho")]
    pub baseline_rhos: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Destination CSV; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub sites: usize,
    #[arg(long, default_value_t = 1)]
    pub min_size: usize,
    #[arg(long, default_value_t = 8)]
    pub max_size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

struct Output {
    root: PathBuf,
}

impl Output {
    fn put(&self, sub: &str, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(sub).join(name);
        write_atomic(&path, contents.as_bytes())?;
        Ok(path)
    }
}

/// Fully resolved settings for one invocation.
struct Run {
    cfg: RunConfig,
    cli_fixtures: Option<PathBuf>,
    live: bool,
    record: Option<PathBuf>,
}

impl Run {
    fn out(&self) -> Output {
        Output {
            root: self.cfg.out.clone(),
        }
    }

    fn dataset(&self, arg: &Option<PathBuf>) -> Result<Dataset, CliError> {
        let path = arg
            .clone()
            .or_else(|| self.cfg.dataset.clone())
            .ok_or_else(|| CliError::Config("no dataset given (argument or `dataset` in config)".into()))?;
        Ok(load_dataset(&path, DatasetFormat::Csv)?)
    }

    /// Live mode needs a key before anything touches the network. Without
    /// live mode, a fixture file is used if one is configured.
    fn transport(&self) -> Result<Option<Box<dyn ChatTransport>>, CliError> {
        let elicit = self.cfg.elicitation_config();
        if self.live {
            let key = elicit
                .api_key
                .clone()
                .ok_or_else(|| CliError::Config(format!("--live requires {API_KEY_VAR} in the environment")))?;
            if elicit.endpoint_url.is_empty() {
                return Err(CliError::Config(format!(
                    "--live requires an endpoint (`elicitation.endpoint_url` or {ENDPOINT_VAR})"
                )));
            }
            let http = HttpTransport::new(&elicit.endpoint_url, &key, elicit.timeout);
            return Ok(Some(match &self.record {
                Some(p) => Box::new(RecordingTransport::new(http, p).map_err(|e| io_err(p, e))?),
                None => Box::new(http),
            }));
        }
        let fixtures = self.cli_fixtures.clone().or_else(|| self.cfg.elicitation.fixtures.clone());
        match fixtures {
            Some(p) => {
                let replay = ReplayTransport::load(&p)
                    .map_err(|e| CliError::Config(format!("fixtures {}: {e}", p.display())))?;
                Ok(Some(Box::new(replay)))
            }
            None => Ok(None),
        }
    }

    fn conditions(&self, args: &ConditionArgs) -> Vec<CvCondition> {
        let e = &self.cfg.elicitation;
        let pick = |a: &Vec<String>, b: &Vec<String>| if a.is_empty() { b.clone() } else { a.clone() };
        let models = pick(&args.models, &e.models);
        let strategies = if args.strategies.is_empty() { e.strategies.clone() } else { args.strategies.clone() };
        let temps = if args.temperatures.is_empty() { e.temperatures.clone() } else { args.temperatures.clone() };
        let mut out = Vec::new();
        for m in &models {
            for &s in &strategies {
                for &t in &temps {
                    out.push(CvCondition::llm(m, s, t));
                }
            }
        }
        out
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    threads: usize,
    version: &'static str,
    transport: &'static str,
    mcmc: crate::sampler::McmcConfig,
    elicitation: crate::elicitation::ElicitationConfig,
}

fn manifest(run: &Run, command: &str, transport: Option<&dyn ChatTransport>) -> String {
    let m = RunManifest {
        command,
        seed: run.cfg.seed,
        threads: run.cfg.threads,
        version: env!("CARGO_PKG_VERSION"),
        transport: match transport {
            None => "none",
            Some(t) if t.is_replay() => "replay",
            Some(_) => "live",
        },
        mcmc: run.cfg.mcmc_config(),
        elicitation: run.cfg.elicitation_config(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let record = cli.record.clone().or_else(|| cfg.elicitation.record.clone());
    let run = Run {
        live: cli.live || cfg.elicitation.live,
        cli_fixtures: cli.fixtures.clone(),
        record,
        cfg,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.cfg.threads)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&run, cli.command))
}

fn dispatch(run: &Run, command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { data, format } => {
            let d = run.dataset(&data)?;
            let s = d.summary();
            match format {
                SummaryFormat::Text => println!("{s}"),
                SummaryFormat::Kv => print!("{}", s.to_key_values()),
            }
            Ok(())
        }
        Command::Elicit(args) => cmd_elicit(run, args),
        Command::Fit(args) => cmd_fit(run, args),
        Command::Cv(args) => cmd_cv(run, args),
        Command::Efficiency(args) => cmd_efficiency(run, args),
        Command::Report { dir } => cmd_report(dir.unwrap_or_else(|| run.cfg.out.clone())),
        Command::Simulate(args) => cmd_simulate(run, args),
    }
}

fn no_transport() -> CliError {
    CliError::Config(format!("elicitation needs --fixtures FILE or --live with {API_KEY_VAR} set"))
}

fn require_transport(t: &Option<Box<dyn ChatTransport>>) -> Result<&dyn ChatTransport, CliError> {
    t.as_deref().ok_or_else(no_transport)
}

fn cmd_elicit(run: &Run, args: ElicitArgs) -> Result<(), CliError> {
    let transport = run.transport()?;
    let t = require_transport(&transport)?;
    let mut base = run.cfg.elicitation_config();
    if let Some(n) = args.n_queries {
        base.n_queries = n;
    }
    base.strict |= args.strict;
    base.validate()?;

    let mut items = Vec::new();
    let mut records: Vec<ElicitationRecord> = Vec::new();
    let mut priors = String::from("model,prompt_type,temperature,round,alpha_rate,beta_rate,n_parsed,n_queries\n");
    for cond in run.conditions(&args.conditions) {
        let CvCondition::Llm { model_id, strategy, temperature } = &cond else { continue };
        let cfg = base.for_condition(model_id, *temperature);
        for round in 0..args.rounds {
            let slot = (round * cfg.n_queries) as u64;
            let agg = elicit_prior(*strategy, &cfg, t, slot, &ThreadSleeper)?;
            priors.push_str(&format!(
                "{model_id},{strategy},{temperature},{round},{},{},{},{}\n",
                agg.spec.alpha_rate(),
                agg.spec.beta_rate(),
                agg.successes().count(),
                agg.records.len()
            ));
            items.push((
                PriorGroupKey {
                    model_id: model_id.clone(),
                    strategy: *strategy,
                    temperature: *temperature,
                },
                agg.spec,
            ));
            records.extend(agg.records);
        }
    }
    if items.is_empty() {
        return Err(CliError::Config("no elicitation conditions selected".into()));
    }
    let stats = prior_param_stats(&items)?;
    let out = run.out();
    out.put("audit", "elicitation.jsonl", &report::audit_jsonl(&records))?;
    out.put("audit", "run_elicit.json", &manifest(run, "elicit", Some(t)))?;
    out.put("results", "elicited_priors.csv", &priors)?;
    out.put("results", "prior_stats.csv", &report::prior_stats_csv(&stats))?;
    out.put("results", "prior_points.csv", &report::prior_points_csv(&stats))?;
    print!("{priors}");
    Ok(())
}

fn cmd_fit(run: &Run, args: FitArgs) -> Result<(), CliError> {
    let data = run.dataset(&args.data)?;
    let spec = HyperPriorSpec::new(
        args.alpha_rate.unwrap_or(run.cfg.fit.alpha_rate),
        args.beta_rate.unwrap_or(run.cfg.fit.beta_rate),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut mcmc = run.cfg.mcmc_config();
    mcmc.no_data = args.no_data;
    let freeze = match (
        args.freeze_alpha.or(run.cfg.fit.freeze_alpha),
        args.freeze_beta.or(run.cfg.fit.freeze_beta),
    ) {
        (Some(a), Some(b)) => Some(HyperParams::new(a, b).map_err(|e| CliError::Config(e.to_string()))?),
        (None, None) => None,
        _ => return Err(CliError::Config("freeze_alpha and freeze_beta must be given together".into())),
    };
    mcmc.freeze_hyperparams = freeze;
    let draws = run_mcmc(&data, &spec, &mcmc)?;

    let mut csv = Vec::new();
    draws.write_csv(&mut csv).map_err(|e| CliError::Other(e.to_string()))?;
    let out = run.out();
    out.put("draws", "posterior.csv", &String::from_utf8_lossy(&csv))?;
    out.put("results", "rhat.csv", &report::rhat_csv(&draws))?;
    out.put("audit", "run_fit.json", &manifest(run, "fit", None))?;
    let text = report::fit_report(&draws);
    out.put("reports", "fit.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_cv(run: &Run, args: CvArgs) -> Result<(), CliError> {
    let data = run.dataset(&args.data)?;
    let k = args.k.unwrap_or(run.cfg.cv.k);
    let mut conditions = Vec::new();
    if (run.cfg.cv.include_baseline && !args.no_baseline) || args.baseline_only {
        conditions.push(CvCondition::MetaAnalytical);
    }
    if !args.baseline_only {
        conditions.extend(run.conditions(&args.conditions));
    }
    if conditions.is_empty() {
        return Err(CliError::Config("no cross-validation conditions selected".into()));
    }
    let transport = if conditions.iter().any(|c| matches!(c, CvCondition::Llm { .. })) {
        Some(run.transport()?.ok_or_else(no_transport)?)
    } else {
        None
    };
    let elicit = run.cfg.elicitation_config();
    elicit.validate()?;
    let mut ctx = ExperimentContext::new(run.cfg.seed, run.cfg.mcmc_config(), elicit);
    ctx.lpd_share_per_site = run.cfg.cv.share_lambda_per_site;
    if let Some(t) = transport.as_deref() {
        ctx = ctx.with_transport(t);
    }
    let (folds, results) = run_cv_experiment(&data, &conditions, k, &ctx)?;

    let mut records = Vec::new();
    let mut items = Vec::new();
    for r in &results {
        for f in &r.per_fold {
            if let (Some(agg), CvCondition::Llm { model_id, strategy, temperature }) = (&f.elicitation, &r.condition) {
                records.extend(agg.records.iter().cloned());
                items.push((
                    PriorGroupKey {
                        model_id: model_id.clone(),
                        strategy: *strategy,
                        temperature: *temperature,
                    },
                    agg.spec,
                ));
            }
        }
    }
    let out = run.out();
    out.put("audit", "run_cv.json", &manifest(run, "cv", transport.as_deref()))?;
    if !records.is_empty() {
        out.put("audit", "cv_elicitation.jsonl", &report::audit_jsonl(&records))?;
        let stats = prior_param_stats(&items)?;
        out.put("results", "cv_prior_stats.csv", &report::prior_stats_csv(&stats))?;
        out.put("results", "cv_prior_points.csv", &report::prior_points_csv(&stats))?;
    }
    out.put("results", "cv_folds.csv", &report::cv_folds_csv(&results))?;
    out.put("results", "cv_summary.csv", &report::cv_summary_csv(&results))?;
    out.put("results", "fold_composition.csv", &report::fold_composition_csv(&folds))?;
    let table = report::cv_table(&results);
    out.put("reports", "cv_table.txt", &table)?;
    let warnings: usize = results.iter().flat_map(|r| &r.per_fold).map(|f| f.rhat_warnings).sum();
    print!("{table}");
    if warnings > 0 {
        eprintln!("warning: {warnings} fits exceeded the R-hat threshold; see results/cv_folds.csv");
    }
    Ok(())
}

fn cmd_efficiency(run: &Run, args: EfficiencyArgs) -> Result<(), CliError> {
    let data = run.dataset(&args.data)?;
    let e = &run.cfg.efficiency;
    let rhos = if args.rhos.is_empty() { e.rhos.clone() } else { args.rhos };
    let baseline_rhos = if args.baseline_rhos.is_empty() { e.baseline_rhos.clone() } else { args.baseline_rhos };
    let condition = CvCondition::llm(
        args.model.as_deref().unwrap_or(&e.model),
        args.strategy.unwrap_or(e.strategy),
        args.temperature.unwrap_or(e.temperature),
    );
    let mut arms = vec![EfficiencyArm { condition, rhos }];
    if !baseline_rhos.is_empty() {
        arms.push(EfficiencyArm {
            condition: CvCondition::MetaAnalytical,
            rhos: baseline_rhos,
        });
    }
    let mut config = run.cfg.efficiency_config(rng::derive_seed(run.cfg.seed, &[SPLIT_TAG]));
    if let Some(r) = args.replications {
        config.n_replications = r;
    }
    let transport = run.transport()?;
    let t = require_transport(&transport)?;
    let elicit = run.cfg.elicitation_config();
    elicit.validate()?;
    let ctx = ExperimentContext::new(run.cfg.seed, run.cfg.mcmc_config(), elicit).with_transport(t);
    let result = run_efficiency_experiment(&data, &arms, &config, &ctx)?;

    let records: Vec<ElicitationRecord> = result
        .runs
        .iter()
        .filter_map(|r| r.elicitation.as_ref())
        .flat_map(|a| a.records.iter().cloned())
        .collect();
    let out = run.out();
    out.put("audit", "run_efficiency.json", &manifest(run, "efficiency", Some(t)))?;
    out.put("audit", "efficiency_elicitation.jsonl", &report::audit_jsonl(&records))?;
    let mut split = String::from("site_id,set\n");
    for s in &result.test_site_ids {
        split.push_str(&format!("{s},test\n"));
    }
    out.put("results", "efficiency_test_sites.csv", &split)?;
    out.put("results", "efficiency_runs.csv", &report::efficiency_runs_csv(&result))?;
    out.put("results", "efficiency_summary.csv", &report::efficiency_summary_csv(&result))?;
    let table = report::efficiency_table(&result);
    out.put("reports", "efficiency_table.txt", &table)?;
    for w in &result.split_warnings {
        eprintln!("warning: {w}");
    }
    print!("{table}");
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_report(dir: PathBuf) -> Result<(), CliError> {
    let results = dir.join("results");
    let out = Output { root: dir.clone() };
    let mut any = false;

    let cv = results.join("cv_summary.csv");
    if cv.exists() {
        let rows: Vec<Vec<String>> = read_csv(&cv)?
            .iter()
            .map(|r| {
                let model = r.get(0).unwrap_or_default();
                let (model, prompt, temp) = if model == "meta_analytical" {
                    ("Meta-analytical".to_string(), "-".to_string(), "-".to_string())
                } else {
                    let strategy: Option<PromptStrategy> = r.get(1).and_then(|s| s.parse().ok());
                    let temp: f64 = r.get(2).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
                    (
                        crate::experiment::display_model(model),
                        strategy.map_or("?", |s| s.display_name()).to_string(),
                        format!("{temp:.1}"),
                    )
                };
                let num = |i| r.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
                vec![model, prompt, temp, format!("{:.3} ± {:.3}", num(3), num(4))]
            })
            .collect();
        let table = report::aligned_table(&["Model", "Prompt Type", "Temperature", "LPD (± SD)"], &rows);
        out.put("reports", "cv_table.txt", &table)?;
        print!("{table}");
        any = true;
    }

    let eff = results.join("efficiency_summary.csv");
    if eff.exists() {
        let rows: Vec<Vec<String>> = read_csv(&eff)?
            .iter()
            .map(|r| {
                let num = |i| r.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
                let pct = format!("{:.0}%", num(1) * 100.0);
                let label = if r.get(0) == Some("meta_analytical") {
                    format!("Meta-analytical ({pct})")
                } else {
                    pct
                };
                vec![label, format!("{:.3}", num(3)), format!("{:.3}", num(4)), format!("{:.1}", num(5))]
            })
            .collect();
        let table = report::aligned_table(
            &["Training Sample Size", "LPD Mean", "LPD Std", "Train Patients"],
            &rows,
        );
        if any {
            println!();
        }
        out.put("reports", "efficiency_table.txt", &table)?;
        print!("{table}");
        any = true;
    }

    if !any {
        return Err(CliError::Data(format!(
            "no cv_summary.csv or efficiency_summary.csv under {}",
            results.display()
        )));
    }
    Ok(())
}

fn cmd_simulate(run: &Run, args: SimulateArgs) -> Result<(), CliError> {
    if args.sites == 0 || args.min_size == 0 || args.min_size > args.max_size {
        return Err(CliError::Config("need sites >= 1 and 1 <= min-size <= max-size".into()));
    }
    let params = HyperParams::new(args.alpha, args.beta).map_err(|e| CliError::Config(e.to_string()))?;
    use rand::Rng;
    let mut rng = rng::stream(run.cfg.seed, &[0x73697a65]);
    let sizes: Vec<usize> = (0..args.sites)
        .map(|_| rng.random_range(args.min_size..=args.max_size))
        .collect();
    let d = simulate_dataset(&sizes, &params, run.cfg.seed)?;
    let text = dataset_to_string(&d);
    match args.output {
        Some(p) => {
            write_atomic(&p, text.as_bytes())?;
            eprintln!("{}", d.summary());
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Network(String::new()).exit_code(), 4);
        assert_eq!(CliError::Numerical(String::new()).exit_code(), 5);
        assert_eq!(CliError::Other(String::new()).exit_code(), 1);
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["aeprior", "cv", "d.csv", "--k", "3", "--seed", "4", "--baseline-only"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        match cli.command {
            Command::Cv(a) => {
                assert_eq!(a.k, Some(3));
                assert!(a.baseline_only);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
