//! EM estimators for conversation-level topic weights.
//!
//! Two families:
//!
//! * self-training ([`fit_self_1best`], [`fit_self_tf`]): treat the recognizer
//!   output (1-best words, or posterior-weighted expected counts) as the truth
//!   and run mixture-of-multinomials EM on it;
//! * confusion-aware ([`fit_conf`], [`fit_conf_map`]): explain each observed
//!   word as a channel corruption of some word in the same bin, and maximize
//!   the bin-conditioned likelihood with a minorize-maximize update on the
//!   softmax parameters of the weights.
//!
//! Every estimator accepts a MAP strength `m = beta * (alpha - 1)` for a
//! symmetric Dirichlet prior; `m = 0` is maximum likelihood. The reported
//! objective is the log-likelihood (natural log) plus `m * sum_t ln(lambda_t)`,
//! which is non-decreasing along the iterates.
//!
//! A negative `m` pushes weights towards zero. When a topic's update numerator
//! becomes non-positive the topic is pinned at zero weight and the remaining
//! weights are renormalized; the penalized objective is then `+inf`, which is
//! its supremum on the simplex boundary.

mod confusion;
mod selftrain;

use std::fmt;
use std::str::FromStr;

pub use confusion::{
    fit_conf, fit_conf_map, loglik_conf, reference_posterior, ConfusionObjective, EStep, MmUpdate,
};
pub use selftrain::{
    fit_self_1best, fit_self_tf, loglik_self_1best, loglik_self_tf, topic_posterior,
};

use crate::channel::ChannelModel;
use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::topics::{mixture_prob_raw, MixtureWeights, TopicModel, Unigram, ROW_SUM_TOL};

pub const DEFAULT_REL_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SelfOneBest,
    SelfTf,
    ConfOneBest,
    ConfTf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SelfOneBest,
        Variant::SelfTf,
        Variant::ConfOneBest,
        Variant::ConfTf,
    ];

    pub fn uses_channel(self) -> bool {
        matches!(self, Variant::ConfOneBest | Variant::ConfTf)
    }

    pub fn uses_expected_counts(self) -> bool {
        matches!(self, Variant::SelfTf | Variant::ConfTf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SelfOneBest => "self-1best",
            Variant::SelfTf => "self-tf",
            Variant::ConfOneBest => "conf-1best",
            Variant::ConfTf => "conf-tf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Uniform,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub variant: Variant,
    /// beta * (alpha - 1); zero means maximum likelihood.
    pub map_strength: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the objective drops to this value.
    pub rel_tol: f64,
    pub init: Init,
}

impl EstimatorConfig {
    pub fn new(variant: Variant) -> Self {
        EstimatorConfig {
            variant,
            map_strength: 0.0,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            init: Init::Uniform,
        }
    }

    pub fn with_map_strength(mut self, m: f64) -> Self {
        self.map_strength = m;
        self
    }

    pub fn with_tolerance(mut self, rel_tol: f64, max_iters: usize) -> Self {
        self.rel_tol = rel_tol;
        self.max_iters = max_iters;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    fn validate(&self, num_topics: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !self.map_strength.is_finite() {
            return Err(Error::Config("map_strength must be finite".into()));
        }
        if let Init::Given(l) = &self.init {
            if l.len() != num_topics {
                return Err(Error::Config(format!(
                    "initial weights have {} entries, model has {num_topics} topics",
                    l.len()
                )));
            }
        }
        Ok(())
    }

    fn initial_weights(&self, num_topics: usize) -> Result<MixtureWeights> {
        match &self.init {
            Init::Uniform => Ok(MixtureWeights::uniform(num_topics)),
            Init::Given(l) => MixtureWeights::from_lambda(l.clone())
                .map_err(|e| Error::Config(format!("initial weights: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: MixtureWeights,
    /// Objective at the initial point, then after every iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds the initial objective")
    }
}

/// Runs the estimator selected by `cfg.variant`. Confusion variants need a
/// channel.
pub fn fit(
    conv: &Conversation,
    tm: &TopicModel,
    channel: Option<&ChannelModel>,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    match (cfg.variant, channel) {
        (Variant::SelfOneBest, _) => fit_self_1best(conv, tm, cfg),
        (Variant::SelfTf, _) => fit_self_tf(conv, tm, cfg),
        (Variant::ConfOneBest | Variant::ConfTf, Some(cm)) => fit_conf(conv, tm, cm, cfg),
        (v, None) => Err(Error::Config(format!("variant {v} needs a channel model"))),
    }
}

/// Fits many conversations against shared models, in parallel when the
/// `parallel` feature is on. Results come back in input order.
pub fn fit_batch(
    convs: &[Conversation],
    tm: &TopicModel,
    channel: Option<&ChannelModel>,
    cfg: &EstimatorConfig,
) -> Vec<Result<FitResult>> {
    crate::par::map(convs, |c| fit(c, tm, channel, cfg))
}

/// Same as [`fit_batch`] but always on the calling thread.
pub fn fit_batch_sequential(
    convs: &[Conversation],
    tm: &TopicModel,
    channel: Option<&ChannelModel>,
    cfg: &EstimatorConfig,
) -> Vec<Result<FitResult>> {
    convs.iter().map(|c| fit(c, tm, channel, cfg)).collect()
}

/// The adapted distribution q(w) = sum_t lambda_t q(w|t) over the whole vocabulary.
pub fn adapted_unigram(tm: &TopicModel, lw: &MixtureWeights) -> Unigram {
    let probs = (0..tm.vocab_size())
        .map(|w| mixture_prob_raw(tm, lw.lambda(), crate::corpus::WordId(w as u32)))
        .collect();
    Unigram::new(probs).expect("mixture of stochastic rows is stochastic")
}

/// `m * sum_t ln(lambda_t)`; zero when `m` is zero so that pinned topics do
/// not turn the MLE objective into NaN.
pub(crate) fn prior_term(lambda: &[f64], m: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        m * lambda.iter().map(|l| l.ln()).sum::<f64>()
    }
}

/// Prior term restricted to topics with positive weight; used only for the
/// stopping rule, where `+inf` would hide further progress.
fn finite_prior_term(lambda: &[f64], m: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        m * lambda.iter().filter(|&&l| l > 0.0).map(|l| l.ln()).sum::<f64>()
    }
}

fn small_change(old: f64, new: f64, rel_tol: f64) -> bool {
    (new - old).abs() <= rel_tol * old.abs().max(f64::MIN_POSITIVE)
}

/// Shared EM/MM driver. `loglik` evaluates the data term at given weights and
/// `step` produces the next weights.
pub(crate) fn run<L, S>(
    cfg: &EstimatorConfig,
    init: MixtureWeights,
    loglik: L,
    mut step: S,
) -> Result<FitResult>
where
    L: Fn(&MixtureWeights) -> f64,
    S: FnMut(&MixtureWeights, usize) -> Result<MixtureWeights>,
{
    let m = cfg.map_strength;
    let mut weights = init;
    let mut ll = loglik(&weights);
    let mut trace = vec![ll + prior_term(weights.lambda(), m)];
    let mut stop_value = ll + finite_prior_term(weights.lambda(), m);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let next = step(&weights, iterations)?;
        iterations += 1;
        debug_assert!((next.lambda().iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL);
        ll = loglik(&next);
        if ll.is_nan() {
            return Err(Error::Estimation {
                iteration: iterations,
                msg: "objective is NaN".into(),
            });
        }
        trace.push(ll + prior_term(next.lambda(), m));
        let value = ll + finite_prior_term(next.lambda(), m);
        weights = next;
        if small_change(stop_value, value, cfg.rel_tol) {
            converged = true;
            break;
        }
        stop_value = value;
    }
    Ok(FitResult {
        weights,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("conf".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EstimatorConfig::new(Variant::SelfTf);
        assert!(cfg.validate(2).is_ok());
        cfg.max_iters = 0;
        assert!(cfg.validate(2).is_err());
        let cfg = EstimatorConfig::new(Variant::SelfTf).with_tolerance(0.0, 10);
        assert!(cfg.validate(2).is_err());
        let cfg = EstimatorConfig::new(Variant::SelfTf).with_init(Init::Given(vec![1.0]));
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn prior_term_ignores_pinned_topics_under_mle() {
        assert_eq!(prior_term(&[0.0, 1.0], 0.0), 0.0);
        assert_eq!(prior_term(&[0.0, 1.0], -0.1), f64::INFINITY);
        assert_eq!(finite_prior_term(&[0.0, 1.0], -0.1), 0.0);
    }
}
