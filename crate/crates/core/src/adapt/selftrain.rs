//! Self-training: EM for a mixture of topic unigrams on the recognizer output.

use std::collections::BTreeMap;

use super::{run, EstimatorConfig, FitResult, Variant};
use crate::corpus::{expected_counts, Conversation, WordId};
use crate::error::{Error, Result};
use crate::topics::{mixture_prob, mixture_prob_raw, MixtureWeights, TopicModel};

/// r(t|w) = lambda_t q(w|t) / sum_t' lambda_t' q(w|t').
pub fn topic_posterior(tm: &TopicModel, lw: &MixtureWeights, w: WordId) -> Vec<f64> {
    let mut r = vec![0.0; tm.num_topics()];
    posterior_into(tm, lw.lambda(), w, &mut r);
    r
}

fn posterior_into(tm: &TopicModel, lambda: &[f64], w: WordId, out: &mut [f64]) {
    let mut z = 0.0;
    for (t, (o, l)) in out.iter_mut().zip(lambda).enumerate() {
        *o = l * tm.prob(t, w);
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// sum over bins of ln q(1-best word).
pub fn loglik_self_1best(conv: &Conversation, tm: &TopicModel, lw: &MixtureWeights) -> f64 {
    conv.bins().map(|b| mixture_prob(tm, lw, b.one_best()).ln()).sum()
}

/// sum_w tf(w) ln q(w).
pub fn loglik_self_tf(conv: &Conversation, tm: &TopicModel, lw: &MixtureWeights) -> f64 {
    weighted_loglik(tm, lw.lambda(), &expected_counts(conv))
}

fn one_best_counts(conv: &Conversation) -> BTreeMap<WordId, f64> {
    let mut counts = BTreeMap::new();
    for b in conv.bins() {
        *counts.entry(b.one_best()).or_insert(0.0) += 1.0;
    }
    counts
}

fn weighted_loglik(tm: &TopicModel, lambda: &[f64], counts: &BTreeMap<WordId, f64>) -> f64 {
    counts
        .iter()
        .map(|(&w, &c)| c * mixture_prob_raw(tm, lambda, w).ln())
        .sum()
}

/// One EM step on weighted word counts. The M-step adds `m` to every
/// expected topic count, clamps at zero and renormalizes over the topics that
/// survive.
fn step(
    tm: &TopicModel,
    lambda: &[f64],
    counts: &BTreeMap<WordId, f64>,
    m: f64,
    iteration: usize,
) -> Result<Vec<f64>> {
    let nt = tm.num_topics();
    let mut expected = vec![0.0; nt];
    let mut r = vec![0.0; nt];
    for (&w, &c) in counts {
        posterior_into(tm, lambda, w, &mut r);
        for (e, x) in expected.iter_mut().zip(&r) {
            *e += c * x;
        }
    }
    let numer: Vec<f64> = expected.iter().map(|e| (e + m).max(0.0)).collect();
    let total: f64 = numer.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Estimation {
            iteration,
            msg: format!("map_strength {m} clamps every topic to zero"),
        });
    }
    Ok(numer.into_iter().map(|x| x / total).collect())
}

fn fit_counts(
    tm: &TopicModel,
    counts: &BTreeMap<WordId, f64>,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    cfg.validate(tm.num_topics())?;
    let init = cfg.initial_weights(tm.num_topics())?;
    let m = cfg.map_strength;
    run(
        cfg,
        init,
        |lw| weighted_loglik(tm, lw.lambda(), counts),
        |lw, it| {
            let lambda = step(tm, lw.lambda(), counts, m, it)?;
            Ok(MixtureWeights::from_lambda(lambda).expect("normalized above"))
        },
    )
}

/// EM on the 1-best word sequence (MAP when `cfg.map_strength != 0`).
pub fn fit_self_1best(conv: &Conversation, tm: &TopicModel, cfg: &EstimatorConfig) -> Result<FitResult> {
    expect_variant(cfg, Variant::SelfOneBest)?;
    fit_counts(tm, &one_best_counts(conv), cfg)
}

/// EM on posterior-weighted expected counts (MAP when `cfg.map_strength != 0`).
pub fn fit_self_tf(conv: &Conversation, tm: &TopicModel, cfg: &EstimatorConfig) -> Result<FitResult> {
    expect_variant(cfg, Variant::SelfTf)?;
    fit_counts(tm, &expected_counts(conv), cfg)
}

pub(super) fn expect_variant(cfg: &EstimatorConfig, v: Variant) -> Result<()> {
    if cfg.variant != v {
        return Err(Error::Config(format!(
            "config selects {}, estimator is {v}",
            cfg.variant
        )));
    }
    Ok(())
}
