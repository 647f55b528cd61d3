//! Metropolis-within-Gibbs sampler for the hierarchical model.
//!
//! Site rates are drawn exactly from their conjugate Gamma conditionals;
//! `alpha` and `beta` each take a Gaussian random-walk Metropolis step on
//! the log scale. Step sizes adapt during warmup in 50-iteration windows
//! and are frozen afterwards.

mod rhat;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SiteStats};
use crate::model::{lambda_conditional, rate_prior_from_sums, HyperParams, HyperPriorSpec, SiteRates};
use crate::rng;

pub use rhat::{compute_rhat, Rhat, RhatError};

/// Iterations per step-size adaptation window.
pub const ADAPT_WINDOW: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid MCMC configuration: {0}")]
    Config(String),
    #[error(
        "non-finite log posterior in chain {chain} at iteration {iteration} \
         (alpha={alpha}, beta={beta}, min lambda={min_lambda})"
    )]
    NonFinite {
        chain: usize,
        iteration: usize,
        alpha: f64,
        beta: f64,
        min_lambda: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub adapt_target_accept: f64,
    pub rhat_threshold: f64,
    /// Initial log-scale proposal SD for both hyperparameters.
    pub initial_step: f64,
    /// Fix `(alpha, beta)` and sample only the site rates.
    pub freeze_hyperparams: Option<HyperParams>,
    /// Ignore the data: site rates come from their prior and the
    /// hyperparameters from the hyperprior alone.
    pub no_data: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            seed: 0,
            adapt_target_accept: 0.44,
            rhat_threshold: 1.1,
            initial_step: 0.5,
            freeze_hyperparams: None,
            no_data: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.n_chains == 0 {
            return bad("n_chains must be positive");
        }
        if self.n_warmup == 0 || self.n_draws == 0 {
            return bad("n_warmup and n_draws must be positive");
        }
        if !(self.adapt_target_accept > 0.0 && self.adapt_target_accept < 1.0) {
            return bad("adapt_target_accept must lie in (0, 1)");
        }
        if self.rhat_threshold.is_nan() || self.rhat_threshold <= 1.0 {
            return bad("rhat_threshold must exceed 1");
        }
        if !(self.initial_step.is_finite() && self.initial_step >= 0.0) {
            return bad("initial_step must be finite and non-negative");
        }
        if self.freeze_hyperparams.is_some() && self.no_data {
            return bad("freeze_hyperparams and no_data are mutually exclusive");
        }
        Ok(())
    }
}

/// Mutable state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub alpha: f64,
    pub beta: f64,
    pub lambdas: SiteRates,
    pub step_alpha: f64,
    pub step_beta: f64,
    pub accepted_alpha: usize,
    pub accepted_beta: usize,
    pub proposals: usize,
}

impl ChainState {
    pub fn new(alpha: f64, beta: f64, lambdas: SiteRates, step: f64) -> Self {
        Self {
            alpha,
            beta,
            lambdas,
            step_alpha: step,
            step_beta: step,
            accepted_alpha: 0,
            accepted_beta: 0,
            proposals: 0,
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams::new(self.alpha, self.beta).expect("chain hyperparameters stay positive")
    }

    fn reset_window(&mut self) {
        self.accepted_alpha = 0;
        self.accepted_beta = 0;
        self.proposals = 0;
    }

    fn sums(&self) -> (f64, f64) {
        self.lambdas
            .as_slice()
            .iter()
            .fold((0.0, 0.0), |(l, s), &x| (l + x.ln(), s + x))
    }
}

/// Which density the hyperparameter update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperTarget {
    /// Rate prior times hyperprior (the usual full conditional).
    Posterior,
    /// Hyperprior only; used for prior-sampling checks.
    HyperpriorOnly,
}

fn positive(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE)
}

/// Draw from shape-rate `Gamma(shape, rate)`, clamped away from zero.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters are positive and finite");
    positive(g.sample(rng))
}

fn update_lambdas<R: Rng + ?Sized>(
    state: &mut ChainState,
    stats: &[SiteStats],
    ignore_data: bool,
    rng: &mut R,
) {
    let hp = state.hyper();
    for (lambda, s) in state.lambdas.as_mut_slice().iter_mut().zip(stats) {
        let g = if ignore_data {
            lambda_conditional(0, 0, &hp)
        } else {
            lambda_conditional(s.total_count, s.n_patients, &hp)
        };
        *lambda = sample_gamma(g.shape, g.rate, rng);
    }
}

/// Replaces every site rate with an exact draw from its conjugate conditional.
pub fn gibbs_update_lambdas<R: Rng + ?Sized>(state: &mut ChainState, dataset: &Dataset, rng: &mut R) {
    update_lambdas(state, &dataset.site_stats(), false, rng);
}

/// Log target of `u = ln(alpha)` with `beta` fixed, Jacobian included.
fn log_target_alpha(alpha: f64, beta: f64, sums: (f64, f64), n: usize, spec: &HyperPriorSpec, target: HyperTarget) -> f64 {
    let prior = -spec.alpha_rate() * alpha;
    let rate = match target {
        HyperTarget::Posterior => rate_prior_from_sums(alpha, beta, n, sums.0, sums.1),
        HyperTarget::HyperpriorOnly => 0.0,
    };
    rate + prior + alpha.ln()
}

/// Log target of `v = ln(beta)` with `alpha` fixed, Jacobian included.
fn log_target_beta(alpha: f64, beta: f64, sums: (f64, f64), n: usize, spec: &HyperPriorSpec, target: HyperTarget) -> f64 {
    let prior = -spec.beta_rate() * beta;
    let rate = match target {
        HyperTarget::Posterior => rate_prior_from_sums(alpha, beta, n, sums.0, sums.1),
        HyperTarget::HyperpriorOnly => 0.0,
    };
    rate + prior + beta.ln()
}

/// Log Metropolis ratio for moving `alpha` from `from` to `to` on the log
/// scale, given the current site rates and `beta`.
pub fn alpha_log_accept_ratio(
    from: f64,
    to: f64,
    beta: f64,
    rates: &SiteRates,
    spec: &HyperPriorSpec,
    target: HyperTarget,
) -> f64 {
    let sums = rates
        .as_slice()
        .iter()
        .fold((0.0, 0.0), |(l, s), &x| (l + x.ln(), s + x));
    let n = rates.len();
    log_target_alpha(to, beta, sums, n, spec, target) - log_target_alpha(from, beta, sums, n, spec, target)
}

/// One log-scale random-walk Metropolis step for `alpha` and then `beta`.
/// Acceptance counters on `state` are incremented.
pub fn mh_update_hyperparams<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &HyperPriorSpec,
    target: HyperTarget,
    rng: &mut R,
) {
    let sums = state.sums();
    let n = state.lambdas.len();
    state.proposals += 1;

    let z: f64 = StandardNormal.sample(rng);
    let proposal = positive(state.alpha * (state.step_alpha * z).exp());
    let log_ratio = log_target_alpha(proposal, state.beta, sums, n, spec, target)
        - log_target_alpha(state.alpha, state.beta, sums, n, spec, target);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        state.alpha = proposal;
        state.accepted_alpha += 1;
    }

    let z: f64 = StandardNormal.sample(rng);
    let proposal = positive(state.beta * (state.step_beta * z).exp());
    let log_ratio = log_target_beta(state.alpha, proposal, sums, n, spec, target)
        - log_target_beta(state.alpha, state.beta, sums, n, spec, target);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        state.beta = proposal;
        state.accepted_beta += 1;
    }
}

/// `step * exp(accept_rate - target)`.
pub fn adapt_step_size(step: f64, accept_rate: f64, target: f64) -> f64 {
    step * (accept_rate - target).exp()
}

/// Rescales both step sizes from the current window's acceptance rates and
/// clears the window counters.
pub fn adapt_step_sizes(state: &mut ChainState, target: f64) {
    if state.proposals > 0 {
        let p = state.proposals as f64;
        state.step_alpha = adapt_step_size(state.step_alpha, state.accepted_alpha as f64 / p, target);
        state.step_beta = adapt_step_size(state.step_beta, state.accepted_beta as f64 / p, target);
    }
    state.reset_window();
}

/// Posterior draws from all chains.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    /// `alpha[chain][draw]`
    pub alpha: Vec<Vec<f64>>,
    /// `beta[chain][draw]`
    pub beta: Vec<Vec<f64>>,
    /// `lambdas[chain][draw * n_sites + site]`
    lambdas: Vec<Vec<f64>>,
    pub site_ids: Vec<String>,
    pub config: McmcConfig,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhatEntry {
    pub parameter: String,
    pub rhat: Rhat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Diagnostics {
    pub rhat: Vec<RhatEntry>,
    /// Post-warmup acceptance rates `(alpha, beta)` per chain.
    pub acceptance: Vec<(f64, f64)>,
    pub final_steps: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.iter().map(|e| e.rhat.as_f64()).reduce(f64::max)
    }

    pub fn rhat_of(&self, parameter: &str) -> Option<Rhat> {
        self.rhat.iter().find(|e| e.parameter == parameter).map(|e| e.rhat)
    }

    pub fn converged(&self, threshold: f64) -> bool {
        self.rhat.iter().all(|e| e.rhat.below(threshold))
    }
}

impl PosteriorDraws {
    /// Builds draws for the point-mass posterior at `hp` (`n_chains` chains of
    /// `n_draws` identical values, no site rates).
    pub fn point_mass(hp: HyperParams, n_chains: usize, n_draws: usize) -> Self {
        Self::from_hyper_draws(
            vec![vec![hp.alpha(); n_draws]; n_chains],
            vec![vec![hp.beta(); n_draws]; n_chains],
        )
    }

    /// Wraps externally produced hyperparameter draws (no site rates).
    pub fn from_hyper_draws(alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> Self {
        let n_chains = alpha.len();
        let n_draws = alpha.first().map_or(0, Vec::len);
        assert_eq!(beta.len(), n_chains, "alpha/beta chain counts differ");
        assert!(
            alpha.iter().chain(&beta).all(|c| c.len() == n_draws),
            "every chain must hold n_draws values"
        );
        Self {
            alpha,
            beta,
            lambdas: vec![Vec::new(); n_chains],
            site_ids: Vec::new(),
            config: McmcConfig {
                n_chains,
                n_draws,
                ..McmcConfig::default()
            },
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn n_chains(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_draws(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    /// Total pooled sample count `n_chains * n_draws`.
    pub fn n_samples(&self) -> usize {
        self.n_chains() * self.n_draws()
    }

    pub fn lambda(&self, chain: usize, draw: usize, site: usize) -> f64 {
        self.lambdas[chain][draw * self.n_sites() + site]
    }

    /// `[chain][draw]` trace of one site rate.
    pub fn lambda_chains(&self, site: usize) -> Vec<Vec<f64>> {
        let n = self.n_sites();
        self.lambdas
            .iter()
            .map(|c| c.iter().skip(site).step_by(n).copied().collect())
            .collect()
    }

    /// Pooled `(alpha, beta)` pairs in chain-major order.
    pub fn pooled_hyper(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.alpha
            .iter()
            .zip(&self.beta)
            .flat_map(|(a, b)| a.iter().copied().zip(b.iter().copied()))
    }

    pub fn hyper_frozen(&self) -> bool {
        self.config.freeze_hyperparams.is_some()
    }

    /// Long-format dump: `chain,draw,parameter,value`. Frozen
    /// hyperparameters are omitted.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "chain,draw,parameter,value")?;
        for c in 0..self.n_chains() {
            for d in 0..self.n_draws() {
                if !self.hyper_frozen() {
                    writeln!(out, "{c},{d},alpha,{}", self.alpha[c][d])?;
                    writeln!(out, "{c},{d},beta,{}", self.beta[c][d])?;
                }
                for (s, id) in self.site_ids.iter().enumerate() {
                    writeln!(out, "{c},{d},lambda[{id}],{}", self.lambda(c, d, s))?;
                }
            }
        }
        Ok(())
    }
}

struct ChainOutput {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    lambdas: Vec<f64>,
    acceptance: (f64, f64),
    steps: (f64, f64),
}

fn initial_state<R: Rng + ?Sized>(
    stats: &[SiteStats],
    spec: &HyperPriorSpec,
    config: &McmcConfig,
    rng: &mut R,
) -> ChainState {
    let (alpha, beta) = match config.freeze_hyperparams {
        Some(hp) => (hp.alpha(), hp.beta()),
        None => {
            let a = Exp::new(spec.alpha_rate()).expect("positive rate").sample(rng);
            let b = Exp::new(spec.beta_rate()).expect("positive rate").sample(rng);
            (positive(a), positive(b))
        }
    };
    let lambdas = stats
        .iter()
        .map(|s| s.total_count as f64 / s.n_patients as f64 + 0.5)
        .collect();
    ChainState::new(alpha, beta, SiteRates::from_vec_unchecked(lambdas), config.initial_step)
}

fn run_chain(
    chain: usize,
    stats: &[SiteStats],
    spec: &HyperPriorSpec,
    config: &McmcConfig,
) -> Result<ChainOutput, SamplerError> {
    let mut rng = rng::stream(config.seed, &[chain as u64]);
    let mut state = initial_state(stats, spec, config, &mut rng);
    let n_sites = stats.len();
    let target = if config.no_data {
        HyperTarget::HyperpriorOnly
    } else {
        HyperTarget::Posterior
    };

    let mut out = ChainOutput {
        alpha: Vec::with_capacity(config.n_draws),
        beta: Vec::with_capacity(config.n_draws),
        lambdas: Vec::with_capacity(config.n_draws * n_sites),
        acceptance: (0.0, 0.0),
        steps: (0.0, 0.0),
    };

    let total = config.n_warmup + config.n_draws;
    for iteration in 0..total {
        if iteration == config.n_warmup {
            state.reset_window();
        }
        update_lambdas(&mut state, stats, config.no_data, &mut rng);
        if config.freeze_hyperparams.is_none() {
            mh_update_hyperparams(&mut state, spec, target, &mut rng);
        }

        let sums = state.sums();
        let check = log_target_alpha(state.alpha, state.beta, sums, n_sites, spec, target);
        if !check.is_finite() {
            return Err(SamplerError::NonFinite {
                chain,
                iteration,
                alpha: state.alpha,
                beta: state.beta,
                min_lambda: state.lambdas.as_slice().iter().copied().fold(f64::INFINITY, f64::min),
            });
        }

        if iteration < config.n_warmup {
            if (iteration + 1) % ADAPT_WINDOW == 0 {
                adapt_step_sizes(&mut state, config.adapt_target_accept);
            }
        } else {
            out.alpha.push(state.alpha);
            out.beta.push(state.beta);
            out.lambdas.extend_from_slice(state.lambdas.as_slice());
        }
    }
    let p = state.proposals.max(1) as f64;
    out.acceptance = (state.accepted_alpha as f64 / p, state.accepted_beta as f64 / p);
    out.steps = (state.step_alpha, state.step_beta);
    Ok(out)
}

/// Fits the model. Chains run in parallel on the ambient rayon pool; each
/// chain's random stream depends only on `(config.seed, chain index)`.
pub fn run_mcmc(
    dataset: &Dataset,
    spec: &HyperPriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let stats = dataset.site_stats();
    let outputs: Vec<ChainOutput> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(c, &stats, spec, config))
        .collect::<Result<_, _>>()?;

    let mut draws = PosteriorDraws {
        alpha: Vec::with_capacity(config.n_chains),
        beta: Vec::with_capacity(config.n_chains),
        lambdas: Vec::with_capacity(config.n_chains),
        site_ids: dataset.site_ids().to_vec(),
        config: config.clone(),
        diagnostics: Diagnostics::default(),
    };
    for o in outputs {
        draws.alpha.push(o.alpha);
        draws.beta.push(o.beta);
        draws.lambdas.push(o.lambdas);
        draws.diagnostics.acceptance.push(o.acceptance);
        draws.diagnostics.final_steps.push(o.steps);
    }
    draws.diagnostics.rhat = rhat_table(&draws);
    for e in &draws.diagnostics.rhat {
        if !e.rhat.below(config.rhat_threshold) {
            draws.diagnostics.warnings.push(format!(
                "R-hat for {} is {} (threshold {})",
                e.parameter, e.rhat, config.rhat_threshold
            ));
        }
    }
    Ok(draws)
}

fn rhat_table(draws: &PosteriorDraws) -> Vec<RhatEntry> {
    if draws.n_chains() < 2 || draws.n_draws() < 4 {
        return Vec::new();
    }
    let mut entries = Vec::new();
    let mut push = |parameter: String, chains: &[Vec<f64>]| {
        if let Ok(rhat) = compute_rhat(chains) {
            entries.push(RhatEntry { parameter, rhat });
        }
    };
    if !draws.hyper_frozen() {
        push("alpha".into(), &draws.alpha);
        push("beta".into(), &draws.beta);
    }
    for (s, id) in draws.site_ids.iter().enumerate() {
        push(format!("lambda[{id}]"), &draws.lambda_chains(s));
    }
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn state(alpha: f64, beta: f64, lambdas: Vec<f64>, step: f64) -> ChainState {
        ChainState::new(alpha, beta, SiteRates::new(lambdas).unwrap(), step)
    }

    #[test]
    fn default_config_matches_reference_setup() {
        let c = McmcConfig::default();
        assert_eq!((c.n_chains, c.n_warmup, c.n_draws), (4, 1000, 1000));
        assert_eq!(c.adapt_target_accept, 0.44);
        assert_eq!(c.rhat_threshold, 1.1);
    }

    #[test]
    fn config_validation() {
        let bad = McmcConfig {
            n_chains: 0,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            rhat_threshold: 1.0,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            no_data: true,
            freeze_hyperparams: Some(HyperParams::new(1.0, 1.0).unwrap()),
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_step_leaves_state_unchanged() {
        let spec = HyperPriorSpec::new(1.0, 1.0).unwrap();
        let mut s = state(1.3, 0.7, vec![0.5, 2.0], 0.0);
        let before = (s.alpha, s.beta);
        let mut r = rng::stream(1, &[]);
        for _ in 0..100 {
            mh_update_hyperparams(&mut s, &spec, HyperTarget::Posterior, &mut r);
        }
        assert_eq!((s.alpha, s.beta), before);
        assert_eq!(s.accepted_alpha, 100);
        assert_eq!(s.accepted_beta, 100);
        let ratio = alpha_log_accept_ratio(1.3, 1.3, 0.7, &s.lambdas, &spec, HyperTarget::Posterior);
        assert_eq!(ratio.exp(), 1.0);
    }

    #[test]
    fn adaptation_direction() {
        assert_eq!(adapt_step_size(0.5, 0.44, 0.44), 0.5);
        assert!(adapt_step_size(0.5, 1.0, 0.44) > 0.5);
        assert!(adapt_step_size(0.5, 0.0, 0.44) < 0.5);

        let mut s = state(1.0, 1.0, vec![1.0], 0.5);
        s.proposals = 50;
        s.accepted_alpha = 50;
        s.accepted_beta = 0;
        adapt_step_sizes(&mut s, 0.44);
        assert!(s.step_alpha > 0.5 && s.step_beta < 0.5);
        assert_eq!(s.proposals, 0);
    }

    #[test]
    fn gibbs_resamples() {
        let d = Dataset::from_records(vec![PatientRecord {
            patient_id: "p".into(),
            site_id: "s".into(),
            ae_count: 3,
        }])
        .unwrap();
        let mut s = state(1.0, 1.0, vec![1.0], 0.5);
        let mut r = rng::stream(3, &[]);
        gibbs_update_lambdas(&mut s, &d, &mut r);
        let first = s.lambdas.as_slice()[0];
        gibbs_update_lambdas(&mut s, &d, &mut r);
        assert_ne!(first, s.lambdas.as_slice()[0]);
        assert_ne!(first, 1.0);
    }

    #[test]
    fn point_mass_shapes() {
        let d = PosteriorDraws::point_mass(HyperParams::new(2.0, 1.0).unwrap(), 2, 5);
        assert_eq!(d.n_samples(), 10);
        assert!(d.pooled_hyper().all(|p| p == (2.0, 1.0)));
    }
}
