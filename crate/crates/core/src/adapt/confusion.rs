//! Confusion-aware estimation.
//!
//! Each bin is treated as a closed set of candidate reference words. With the
//! mixture q(w) renormalized inside bin b, the probability of observing `o` is
//!
//! ```text
//! p_b(o) = sum_{w in b} q(w) p_c(o|w) / sum_{w in b} q(w)
//! ```
//!
//! The 1-best objective is `sum_i ln p_i(1-best_i)`; the expected-count
//! objective is `sum_i sum_{o in b_i} s_i(o) ln p_i(o)`.
//!
//! The weights are parameterized as `lambda = softmax(mu)`. An E-step computes
//! reference posteriors `r_i(w|o)`; the resulting Q function couples topics
//! through the bin normalizer, so instead of maximizing it directly each
//! iteration maximizes a concave minorizer of the Q-difference in the step
//! `delta`, which has a closed-form maximizer:
//!
//! ```text
//! exp(mu_t + delta_t) = A_t / B_t
//! A_t = sum_i sum_w omega_i(w) r(t|w)
//! B_t = sum_i sigma_i S_i(t) / sum_t' lambda_t' S_i(t')
//! ```
//!
//! where `omega_i(w)` is the E-step weight of reference word w in bin i,
//! `sigma_i = sum_w omega_i(w)` and `S_i(t) = sum_{w in b_i} q(w|t)`. MAP
//! variants add the prior's own minorizer; see [`ConfusionObjective::mm_update`].
//! `mu` is kept log-normalized (`mu = ln lambda`) between iterations.

use super::selftrain::expect_variant;
use super::{prior_term, run, EstimatorConfig, FitResult, Variant};
use crate::channel::{channel_prob, ChannelModel};
use crate::corpus::{Bin, Conversation, WordId};
use crate::error::{Error, Result};
use crate::topics::{mixture_prob_raw, mu_to_lambda, MixtureWeights, TopicModel};

/// Reference posterior r(w|observed) over the words of `bin`:
/// `q(w) p_c(observed|w)` normalized over the bin. When the channel gives no
/// mass to any bin word the posterior collapses onto the observed word.
pub fn reference_posterior(
    bin: &Bin,
    tm: &TopicModel,
    lw: &MixtureWeights,
    cm: &ChannelModel,
    observed: WordId,
) -> Result<Vec<(WordId, f64)>> {
    if !bin.contains(observed) {
        return Err(Error::validation(format!("observed word {} is not in the bin", observed.0)));
    }
    let scores: Vec<(WordId, f64)> = bin
        .words()
        .map(|w| (w, mixture_prob_raw(tm, lw.lambda(), w) * channel_prob(cm, observed, w)))
        .collect();
    let z: f64 = scores.iter().map(|(_, s)| s).sum();
    if z > 0.0 {
        Ok(scores.into_iter().map(|(w, s)| (w, s / z)).collect())
    } else {
        Ok(bin
            .words()
            .map(|w| (w, if w == observed { 1.0 } else { 0.0 }))
            .collect())
    }
}

/// Bin-conditioned log-likelihood, 1-best or expected-count form.
pub fn loglik_conf(
    conv: &Conversation,
    tm: &TopicModel,
    lw: &MixtureWeights,
    cm: &ChannelModel,
    use_tf: bool,
) -> f64 {
    ConfusionObjective::new(conv, tm, cm, use_tf).loglik(lw.lambda())
}

/// Per-bin data with the channel and topic columns restricted to the bin.
#[derive(Debug, Clone)]
struct PreparedBin {
    k: usize,
    /// Observed words and their weights: the 1-best with weight 1, or every
    /// bin word with its posterior.
    observations: Vec<(usize, f64)>,
    /// `chan[o * k + w] = p_c(word_o | word_w)`.
    chan: Vec<f64>,
    /// `qt[w * T + t] = q(word_w | t)`.
    qt: Vec<f64>,
    /// `S(t) = sum_w q(word_w | t)`.
    topic_mass: Vec<f64>,
}

/// E-step output: per-bin reference weights `omega_i(w)` (aligned with the
/// bin's cells) and the data log-likelihood at the weights used.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub weights: Vec<Vec<f64>>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmUpdate {
    /// Log-normalized parameters after the step.
    pub mu: Vec<f64>,
    /// The step taken from the (log-normalized) input parameters.
    pub delta: Vec<f64>,
    pub loglik_before: f64,
}

/// A conversation prepared for confusion-aware estimation against fixed
/// topic and channel models.
#[derive(Debug, Clone)]
pub struct ConfusionObjective {
    bins: Vec<PreparedBin>,
    num_topics: usize,
    use_tf: bool,
}

impl ConfusionObjective {
    pub fn new(conv: &Conversation, tm: &TopicModel, cm: &ChannelModel, use_tf: bool) -> Self {
        let nt = tm.num_topics();
        let bins = conv
            .bins()
            .map(|bin| {
                let words: Vec<WordId> = bin.words().collect();
                let k = words.len();
                let mut chan = vec![0.0; k * k];
                for (o, &wo) in words.iter().enumerate() {
                    for (r, &wr) in words.iter().enumerate() {
                        chan[o * k + r] = channel_prob(cm, wo, wr);
                    }
                }
                let mut qt = vec![0.0; k * nt];
                let mut topic_mass = vec![0.0; nt];
                for (r, &w) in words.iter().enumerate() {
                    for t in 0..nt {
                        let q = tm.prob(t, w);
                        qt[r * nt + t] = q;
                        topic_mass[t] += q;
                    }
                }
                let observations = if use_tf {
                    bin.cells().iter().enumerate().map(|(i, c)| (i, c.posterior)).collect()
                } else {
                    vec![(0, 1.0)]
                };
                PreparedBin {
                    k,
                    observations,
                    chan,
                    qt,
                    topic_mass,
                }
            })
            .collect();
        ConfusionObjective {
            bins,
            num_topics: nt,
            use_tf,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn uses_expected_counts(&self) -> bool {
        self.use_tf
    }

    fn word_probs(&self, bin: &PreparedBin, lambda: &[f64], out: &mut Vec<f64>) {
        let nt = self.num_topics;
        out.clear();
        out.extend((0..bin.k).map(|r| {
            bin.qt[r * nt..(r + 1) * nt]
                .iter()
                .zip(lambda)
                .map(|(q, l)| q * l)
                .sum::<f64>()
        }));
    }

    /// Data log-likelihood at `lambda`.
    pub fn loglik(&self, lambda: &[f64]) -> f64 {
        let mut q = Vec::new();
        let mut total = 0.0;
        for bin in &self.bins {
            self.word_probs(bin, lambda, &mut q);
            let qb: f64 = q.iter().sum();
            for &(o, s) in &bin.observations {
                let row = &bin.chan[o * bin.k..(o + 1) * bin.k];
                let p: f64 = row.iter().zip(&q).map(|(c, qw)| c * qw).sum::<f64>() / qb;
                total += s * p.ln();
            }
        }
        total
    }

    /// Reference weights `omega_i(w) = sum_o s_i(o) r_i(w|o)` at `lambda`.
    pub fn e_step(&self, lambda: &[f64]) -> EStep {
        let mut q = Vec::new();
        let mut loglik = 0.0;
        let mut weights = Vec::with_capacity(self.bins.len());
        for bin in &self.bins {
            self.word_probs(bin, lambda, &mut q);
            let qb: f64 = q.iter().sum();
            let mut omega = vec![0.0; bin.k];
            for &(o, s) in &bin.observations {
                let row = &bin.chan[o * bin.k..(o + 1) * bin.k];
                let z: f64 = row.iter().zip(&q).map(|(c, qw)| c * qw).sum();
                if z > 0.0 {
                    for ((om, c), qw) in omega.iter_mut().zip(row).zip(&q) {
                        *om += s * c * qw / z;
                    }
                } else {
                    omega[o] += s;
                }
                loglik += s * (z / qb).ln();
            }
            weights.push(omega);
        }
        EStep { weights, loglik }
    }

    /// Q as a function of `mu` for fixed E-step weights, dropping the channel
    /// term that does not depend on `mu`:
    /// `sum_i [ sum_w omega_i(w) ln q_mu(w) - sigma_i ln sum_{w in b_i} q_mu(w) ]`.
    pub fn q_value(&self, weights: &[Vec<f64>], mu: &[f64]) -> f64 {
        let lambda = mu_to_lambda(mu);
        let mut q = Vec::new();
        let mut total = 0.0;
        for (bin, omega) in self.bins.iter().zip(weights) {
            self.word_probs(bin, &lambda, &mut q);
            let qb: f64 = q.iter().sum();
            let sigma: f64 = omega.iter().sum();
            for (om, qw) in omega.iter().zip(&q) {
                if *om > 0.0 {
                    total += om * qw.ln();
                }
            }
            total -= sigma * qb.ln();
        }
        total
    }

    /// The concave minorizer g(delta) of `Q(mu + delta) - Q(mu)`:
    ///
    /// ```text
    /// sum_i sum_w omega_i(w) [ 1 + sum_t e^mu_t q(w|t) delta_t / sum_t e^mu_t q(w|t)
    ///                            - sum_t e^(mu_t+delta_t) S_i(t) / sum_t e^mu_t S_i(t) ]
    /// ```
    pub fn q_lower_bound(&self, weights: &[Vec<f64>], mu: &[f64], delta: &[f64]) -> f64 {
        let nt = self.num_topics;
        let e_mu: Vec<f64> = mu.iter().map(|m| m.exp()).collect();
        let e_next: Vec<f64> = mu.iter().zip(delta).map(|(m, d)| (m + d).exp()).collect();
        let mut total = 0.0;
        for (bin, omega) in self.bins.iter().zip(weights) {
            let sigma: f64 = omega.iter().sum();
            let before: f64 = e_mu.iter().zip(&bin.topic_mass).map(|(e, s)| e * s).sum();
            let after: f64 = e_next.iter().zip(&bin.topic_mass).map(|(e, s)| e * s).sum();
            for (r, om) in omega.iter().enumerate() {
                if *om == 0.0 {
                    continue;
                }
                let col = &bin.qt[r * nt..(r + 1) * nt];
                let mut num = 0.0;
                let mut den = 0.0;
                for t in 0..nt {
                    let a = e_mu[t] * col[t];
                    if a > 0.0 {
                        num += a * delta[t];
                        den += a;
                    }
                }
                total += om * (1.0 + num / den);
            }
            total -= sigma * after / before;
        }
        total
    }

    /// One minorize-maximize step from `mu` with MAP strength `m`.
    ///
    /// * `m = 0`: `exp(mu_t + delta_t) = A_t / B_t`.
    /// * `m < 0` (alpha < 1): the prior difference is bounded below with
    ///   Jensen's inequality, giving `(A_t + m (1 - T lambda_t)) / B_t`.
    /// * `m > 0` (alpha >= 1): the prior difference is bounded below with
    ///   `ln x <= x - 1`, giving `(A_t + m) / (B_t + m T)`.
    ///
    /// A non-positive numerator pins the topic at zero weight.
    pub fn mm_update(&self, mu: &[f64], m: f64, iteration: usize) -> Result<MmUpdate> {
        let nt = self.num_topics;
        let lambda = mu_to_lambda(mu);
        let log_z = log_sum_exp(mu);
        let mu: Vec<f64> = mu.iter().map(|x| x - log_z).collect();
        let estep = self.e_step(&lambda);

        let mut a = vec![0.0; nt];
        let mut b = vec![0.0; nt];
        let mut q = Vec::new();
        for (bin, omega) in self.bins.iter().zip(&estep.weights) {
            self.word_probs(bin, &lambda, &mut q);
            let sigma: f64 = omega.iter().sum();
            let qb: f64 = q.iter().sum();
            for (r, om) in omega.iter().enumerate() {
                if *om == 0.0 {
                    continue;
                }
                let col = &bin.qt[r * nt..(r + 1) * nt];
                for t in 0..nt {
                    a[t] += om * lambda[t] * col[t] / q[r];
                }
            }
            for t in 0..nt {
                b[t] += sigma * bin.topic_mass[t] / qb;
            }
        }

        let tf = nt as f64;
        let mut next = vec![f64::NEG_INFINITY; nt];
        for t in 0..nt {
            let (numer, denom) = if m < 0.0 {
                (a[t] + m * (1.0 - tf * lambda[t]), b[t])
            } else {
                (a[t] + m, b[t] + m * tf)
            };
            if !numer.is_finite() {
                return Err(Error::Estimation {
                    iteration,
                    msg: format!("non-finite update numerator for topic {t} (A = {})", a[t]),
                });
            }
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::Estimation {
                    iteration,
                    msg: format!(
                        "update denominator {denom} for topic {t} is not positive; \
                         try a smaller map_strength than {m}"
                    ),
                });
            }
            if numer > 0.0 {
                next[t] = numer.ln() - denom.ln();
            }
        }
        if next.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::Estimation {
                iteration,
                msg: format!("map_strength {m} pins every topic at zero weight"),
            });
        }
        let delta: Vec<f64> = next.iter().zip(&mu).map(|(n, o)| n - o).collect();
        let log_z = log_sum_exp(&next);
        let mu_next: Vec<f64> = next.iter().map(|x| x - log_z).collect();
        if mu_next.iter().any(|x| x.is_nan()) {
            return Err(Error::Estimation {
                iteration,
                msg: "update produced NaN parameters".into(),
            });
        }
        Ok(MmUpdate {
            mu: mu_next,
            delta,
            loglik_before: estep.loglik,
        })
    }

    /// Objective reported in traces: data log-likelihood plus the prior term.
    pub fn penalized(&self, lambda: &[f64], m: f64) -> f64 {
        self.loglik(lambda) + prior_term(lambda, m)
    }

    /// Runs MM iterations from `init`.
    pub fn fit(&self, cfg: &EstimatorConfig, init: MixtureWeights) -> Result<FitResult> {
        let m = cfg.map_strength;
        run(
            cfg,
            init,
            |lw| self.loglik(lw.lambda()),
            |lw, it| {
                let up = self.mm_update(lw.mu(), m, it)?;
                Ok(MixtureWeights::from_mu(up.mu))
            },
        )
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_conf_variant(cfg: &EstimatorConfig) -> Result<bool> {
    match cfg.variant {
        Variant::ConfOneBest => Ok(false),
        Variant::ConfTf => Ok(true),
        other => {
            expect_variant(cfg, Variant::ConfTf)?;
            unreachable!("{other} rejected above")
        }
    }
}

/// Confusion-aware maximum likelihood. A non-zero `cfg.map_strength` is
/// handed to [`fit_conf_map`].
pub fn fit_conf(
    conv: &Conversation,
    tm: &TopicModel,
    cm: &ChannelModel,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    if cfg.map_strength != 0.0 {
        return fit_conf_map(conv, tm, cm, cfg);
    }
    let use_tf = check_conf_variant(cfg)?;
    cfg.validate(tm.num_topics())?;
    let init = cfg.initial_weights(tm.num_topics())?;
    ConfusionObjective::new(conv, tm, cm, use_tf).fit(cfg, init)
}

/// Confusion-aware MAP estimation with a symmetric Dirichlet prior. The sign
/// of `cfg.map_strength` selects the bound used for the prior (alpha < 1 when
/// negative).
pub fn fit_conf_map(
    conv: &Conversation,
    tm: &TopicModel,
    cm: &ChannelModel,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    let use_tf = check_conf_variant(cfg)?;
    if cfg.map_strength == 0.0 {
        return Err(Error::Config("MAP estimation needs a non-zero map_strength".into()));
    }
    cfg.validate(tm.num_topics())?;
    let init = cfg.initial_weights(tm.num_topics())?;
    ConfusionObjective::new(conv, tm, cm, use_tf).fit(cfg, init)
}
