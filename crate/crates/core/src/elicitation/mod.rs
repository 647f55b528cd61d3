//! Hyperprior elicitation from a chat-completion model.
//!
//! A prompt is sent `n_queries` times, each response is parsed into
//! `(alpha_rate, beta_rate)`, and successful parses are averaged into a
//! [`HyperPriorSpec`].

mod parse;
mod prompt;
mod transport;

use std::collections::BTreeMap;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::HyperPriorSpec;
use crate::stats::{self, BoxplotStats};

pub use parse::{parse_response, ElicitedRates, ParseError};
pub use prompt::{build_prompt, PromptStrategy};
pub use transport::{
    extract_content, write_fixtures, ChatMessage, ChatRequest, ChatTransport, FixtureRecord,
    HttpTransport, RecordingTransport, ReplayTransport, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Sensitivity runs only.
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElicitationConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub n_queries: usize,
    pub max_retries: u32,
    #[serde(with = "secs_f64")]
    pub backoff_base: Duration,
    #[serde(with = "secs_f64")]
    pub timeout: Duration,
    /// Abort the batch on the first failed query or parse.
    pub strict: bool,
    pub aggregation: Aggregation,
    /// Maximum in-flight queries per batch.
    pub concurrency: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ElicitationConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model_id: "llama-3.3-70b-instruct".into(),
            temperature: 1.0,
            n_queries: 5,
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
            timeout: Duration::from_secs(60),
            strict: false,
            aggregation: Aggregation::Mean,
            concurrency: 1,
            api_key: None,
        }
    }
}

mod secs_f64 {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl ElicitationConfig {
    pub fn validate(&self) -> Result<(), ElicitError> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(ElicitError::Config(format!(
                "temperature must lie in (0, 2], got {}",
                self.temperature
            )));
        }
        if self.n_queries == 0 {
            return Err(ElicitError::Config("n_queries must be at least 1".into()));
        }
        Ok(())
    }

    /// Copy with a different model and temperature.
    pub fn for_condition(&self, model_id: &str, temperature: f64) -> Self {
        Self {
            model_id: model_id.to_string(),
            temperature,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QueryError {
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: TransportError },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("{0}")]
    Transport(TransportError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ElicitError {
    #[error("invalid elicitation config: {0}")]
    Config(String),
    #[error("all {} queries failed", records.len())]
    AllFailed { records: Vec<ElicitationRecord> },
    #[error("query {index} failed in strict mode: {message}")]
    Strict { index: usize, message: String },
    #[error("empty prior-parameter group")]
    EmptyGroup,
}

impl ElicitError {
    /// True when every failure was a network-level query error.
    pub fn is_network(&self) -> bool {
        match self {
            ElicitError::AllFailed { records } => records.iter().all(|r| r.raw_response.is_none()),
            _ => false,
        }
    }
}

/// Sleeps between retry attempts. Tests substitute a recorder.
pub trait Sleeper: Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// `base * 2^retry`, or the server's `Retry-After` if that is longer.
pub fn backoff_delay(base: Duration, retry: u32, retry_after: Option<Duration>) -> Duration {
    let exp = base.saturating_mul(2u32.saturating_pow(retry));
    retry_after.map_or(exp, |ra| ra.max(exp))
}

/// Sends `prompt` once, retrying rate limits and transient failures up to
/// `config.max_retries` times with exponential backoff.
pub fn query_llm(
    prompt: &str,
    config: &ElicitationConfig,
    transport: &dyn ChatTransport,
    slot: u64,
    sleeper: &dyn Sleeper,
) -> Result<String, QueryError> {
    let request = ChatRequest::user(&config.model_id, prompt, config.temperature);
    let mut retry = 0u32;
    loop {
        match transport.complete(&request, slot) {
            Ok(body) => return Ok(body),
            Err(TransportError::Auth(m)) => return Err(QueryError::Auth(m)),
            Err(TransportError::Timeout) => return Err(QueryError::Timeout),
            Err(e) if e.is_retryable() => {
                if retry >= config.max_retries {
                    return Err(QueryError::ExhaustedRetries {
                        attempts: retry + 1,
                        last: e,
                    });
                }
                let retry_after = match e {
                    TransportError::RateLimited { retry_after } => retry_after,
                    _ => None,
                };
                sleeper.sleep(backoff_delay(config.backoff_base, retry, retry_after));
                retry += 1;
            }
            Err(e) => return Err(QueryError::Transport(e)),
        }
    }
}

/// One query round-trip. Exactly one of `parsed` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    pub strategy: PromptStrategy,
    pub temperature: f64,
    pub model_id: String,
    pub slot: u64,
    pub prompt_text: String,
    pub raw_response: Option<String>,
    pub parsed: Option<ElicitedRates>,
    pub error: Option<String>,
    /// Milliseconds since the Unix epoch; absent for replayed responses.
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedPrior {
    pub spec: HyperPriorSpec,
    pub records: Vec<ElicitationRecord>,
    pub aggregation: Aggregation,
}

impl AggregatedPrior {
    pub fn successes(&self) -> impl Iterator<Item = &ElicitedRates> {
        self.records.iter().filter_map(|r| r.parsed.as_ref())
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_query(
    index: usize,
    strategy: PromptStrategy,
    config: &ElicitationConfig,
    transport: &dyn ChatTransport,
    slot: u64,
    sleeper: &dyn Sleeper,
) -> ElicitationRecord {
    let prompt = build_prompt(strategy);
    let mut record = ElicitationRecord {
        strategy,
        temperature: config.temperature,
        model_id: config.model_id.clone(),
        slot,
        prompt_text: prompt.to_string(),
        raw_response: None,
        parsed: None,
        error: None,
        timestamp_ms: (!transport.is_replay()).then(now_ms),
    };
    match query_llm(prompt, config, transport, slot, sleeper) {
        Ok(raw) => {
            match parse_response(&raw) {
                Ok(r) => record.parsed = Some(r),
                Err(e) => record.error = Some(format!("query {index}: {e}")),
            }
            record.raw_response = Some(raw);
        }
        Err(e) => record.error = Some(format!("query {index}: {e}")),
    }
    record
}

fn aggregate(values: &[f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::Mean => stats::mean(values.iter().copied()),
        Aggregation::Median => BoxplotStats::from_values(values).map_or(f64::NAN, |s| s.median),
    }
}

/// Runs `config.n_queries` query/parse cycles using slots
/// `slot_base..slot_base + n_queries` and aggregates the successes.
pub fn elicit_prior(
    strategy: PromptStrategy,
    config: &ElicitationConfig,
    transport: &dyn ChatTransport,
    slot_base: u64,
    sleeper: &dyn Sleeper,
) -> Result<AggregatedPrior, ElicitError> {
    config.validate()?;
    let n = config.n_queries;
    let cap = config.concurrency.max(1);
    let mut records: Vec<ElicitationRecord> = Vec::with_capacity(n);
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(cap) {
        let batch: Vec<ElicitationRecord> = if chunk.len() == 1 {
            let i = chunk[0];
            vec![run_query(i, strategy, config, transport, slot_base + i as u64, sleeper)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        scope.spawn(move || {
                            run_query(i, strategy, config, transport, slot_base + i as u64, sleeper)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("query thread panicked"))
                    .collect()
            })
        };
        for (offset, rec) in batch.into_iter().enumerate() {
            if config.strict {
                if let Some(msg) = &rec.error {
                    return Err(ElicitError::Strict {
                        index: chunk[offset],
                        message: msg.clone(),
                    });
                }
            }
            records.push(rec);
        }
    }

    let alphas: Vec<f64> = records.iter().filter_map(|r| r.parsed).map(|p| p.alpha_rate).collect();
    let betas: Vec<f64> = records.iter().filter_map(|r| r.parsed).map(|p| p.beta_rate).collect();
    if alphas.is_empty() {
        return Err(ElicitError::AllFailed { records });
    }
    let spec = HyperPriorSpec::new(
        aggregate(&alphas, config.aggregation),
        aggregate(&betas, config.aggregation),
    )
    .expect("aggregate of positive rates is positive");
    Ok(AggregatedPrior {
        spec,
        records,
        aggregation: config.aggregation,
    })
}

/// Grouping key for prior-parameter distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorGroupKey {
    pub model_id: String,
    pub strategy: PromptStrategy,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorParamStats {
    pub key: PriorGroupKey,
    pub alpha_rate: BoxplotStats,
    pub beta_rate: BoxplotStats,
    /// Raw `(alpha_rate, beta_rate)` points in input order.
    pub points: Vec<(f64, f64)>,
}

/// Boxplot statistics of elicited rates per `(model, strategy, temperature)`.
/// Groups are returned sorted by model, strategy, then temperature.
pub fn prior_param_stats(
    items: &[(PriorGroupKey, HyperPriorSpec)],
) -> Result<Vec<PriorParamStats>, ElicitError> {
    if items.is_empty() {
        return Err(ElicitError::EmptyGroup);
    }
    let mut groups: BTreeMap<(String, PromptStrategy, u64), (PriorGroupKey, Vec<(f64, f64)>)> =
        BTreeMap::new();
    for (key, spec) in items {
        let k = (key.model_id.clone(), key.strategy, key.temperature.to_bits());
        groups
            .entry(k)
            .or_insert_with(|| (key.clone(), Vec::new()))
            .1
            .push((spec.alpha_rate(), spec.beta_rate()));
    }
    groups
        .into_values()
        .map(|(key, points)| {
            let a: Vec<f64> = points.iter().map(|p| p.0).collect();
            let b: Vec<f64> = points.iter().map(|p| p.1).collect();
            Ok(PriorParamStats {
                key,
                alpha_rate: BoxplotStats::from_values(&a).ok_or(ElicitError::EmptyGroup)?,
                beta_rate: BoxplotStats::from_values(&b).ok_or(ElicitError::EmptyGroup)?,
                points,
            })
        })
        .collect()
}

/// Pooled statistics over every group of one model.
pub fn pooled_model_stats(items: &[(PriorGroupKey, HyperPriorSpec)], model_id: &str) -> Option<(BoxplotStats, BoxplotStats)> {
    let (a, b): (Vec<f64>, Vec<f64>) = items
        .iter()
        .filter(|(k, _)| k.model_id == model_id)
        .map(|(_, s)| (s.alpha_rate(), s.beta_rate()))
        .unzip();
    Some((BoxplotStats::from_values(&a)?, BoxplotStats::from_values(&b)?))
}
