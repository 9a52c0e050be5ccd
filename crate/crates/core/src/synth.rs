//! Synthetic conversations drawn from the topic-mixture generative story.
//!
//! For every bin: a topic `t ~ lambda`, a spoken word `w ~ q(.|t)`, and a
//! recognized word `v ~ p_c(.|w)`. The bin then lists `v` together with the
//! words that could have been recognized as `v` (those `u` with
//! `p_c(v|u) > 0`), keeping at most `bin_width` of them, and the posteriors are
//! the true model posteriors `q(u) p_c(v|u)` normalized over the bin.
//!
//! The world (topic rows and channel) is drawn from a ChaCha8 stream seeded
//! with `seed`. Conversation `i` uses its own generator seeded with
//! `seed ^ i` on stream 1, so conversations can be sampled in any order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::channel::{channel_prob, ChannelModel};
use crate::corpus::{Bin, Cell, Conversation, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::topics::{mixture_prob, MixtureWeights, TopicModel};

/// Decimal places kept on synthetic posteriors, matching what the CNET
/// writer emits so that a written conversation reads back unchanged.
const POSTERIOR_DECIMALS: i32 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_topics: usize,
    pub vocab_size: usize,
    pub lambda_true: Vec<f64>,
    /// Dirichlet concentration for the topic rows.
    pub topic_sharpness: f64,
    /// Probability that a word is misrecognized.
    pub channel_noise: f64,
    pub bins: usize,
    pub bin_width: usize,
    pub seed: u64,
    /// Number of conversations written by the CLI.
    #[serde(default = "one")]
    pub conversations: usize,
}

fn one() -> usize {
    1
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_topics == 0 || self.vocab_size == 0 {
            return bad("num_topics and vocab_size must be positive".into());
        }
        if self.lambda_true.len() != self.num_topics {
            return bad(format!(
                "lambda_true has {} entries for {} topics",
                self.lambda_true.len(),
                self.num_topics
            ));
        }
        MixtureWeights::from_lambda(self.lambda_true.clone())
            .map_err(|e| Error::Config(format!("lambda_true: {e}")))?;
        if !(self.topic_sharpness > 0.0) || !self.topic_sharpness.is_finite() {
            return bad("topic_sharpness must be positive".into());
        }
        if !(0.0..1.0).contains(&self.channel_noise) {
            return bad("channel_noise must lie in [0, 1)".into());
        }
        if self.bins == 0 || self.conversations == 0 {
            return bad("bins and conversations must be positive".into());
        }
        if self.bin_width == 0 {
            return bad("bin_width must be at least 1".into());
        }
        if self.channel_noise > 0.0 {
            if self.bin_width < 2 {
                return bad("a noisy channel needs bin_width of at least 2".into());
            }
            if self.bin_width > self.vocab_size {
                return bad("bin_width cannot exceed vocab_size".into());
            }
        }
        Ok(())
    }
}

/// Topic rows and channel shared by all conversations of a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub vocab: Vocabulary,
    pub topics: TopicModel,
    pub channel: ChannelModel,
}

/// What the generator knows about one conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub lambda_true: MixtureWeights,
    pub topics: TopicModel,
    pub channel: ChannelModel,
    /// Spoken word per bin.
    pub reference: Vec<WordId>,
    /// Recognized word per bin.
    pub observed: Vec<WordId>,
}

impl Truth {
    /// Sidecar text: the `LAMBDA` block, the `CHANNEL` block, then
    /// `REF <bins>` and one spoken word per line.
    pub fn to_text(&self, conversation_id: &str, vocab: &Vocabulary) -> String {
        let mut out = self.lambda_true.to_text(conversation_id, self.topics.labels());
        out.push_str(&self.channel.to_text(vocab));
        writeln!(out, "REF {}", self.reference.len()).unwrap();
        for w in &self.reference {
            writeln!(out, "{}", vocab.word(*w)).unwrap();
        }
        out
    }
}

pub fn word_name(i: usize, vocab_size: usize) -> String {
    let width = vocab_size.saturating_sub(1).to_string().len();
    format!("w{i:0width$}")
}

pub fn conversation_id(i: usize) -> String {
    format!("synth{i:04}")
}

fn dirichlet_row(rng: &mut ChaCha8Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("validated concentration");
    loop {
        let row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return row.into_iter().map(|x| x / sum).collect();
        }
    }
}

/// Draws the topic rows and the channel. The vocabulary is shuffled and cut
/// into groups of `bin_width` words; a word keeps `1 - noise` on itself and
/// spreads `noise` evenly over the other members of its group (its cohort).
/// A trailing short group gets a smaller cohort, and a group of one word is
/// always recognized correctly.
pub fn draw_world(spec: &SynthSpec) -> Result<World> {
    spec.validate()?;
    let v = spec.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = Vocabulary::from_words((0..v).map(|i| word_name(i, v)))?;
    let rows: Vec<Vec<f64>> = (0..spec.num_topics)
        .map(|_| dirichlet_row(&mut rng, spec.topic_sharpness, v))
        .collect();
    let labels = (0..spec.num_topics).map(|t| format!("t{t}")).collect();
    let topics = TopicModel::from_rows(labels, rows)?;

    let mut channel_rows = BTreeMap::new();
    let group = if spec.channel_noise > 0.0 { spec.bin_width } else { 1 };
    let mut order: Vec<usize> = (0..v).collect();
    order.shuffle(&mut rng);
    for members in order.chunks(group) {
        for &w in members {
            let mut row = vec![(WordId(w as u32), 1.0)];
            if members.len() > 1 {
                let share = spec.channel_noise / (members.len() - 1) as f64;
                row[0].1 = 1.0 - spec.channel_noise;
                row.extend(members.iter().filter(|&&u| u != w).map(|&u| (WordId(u as u32), share)));
            }
            channel_rows.insert(WordId(w as u32), row);
        }
    }
    let channel = ChannelModel::from_rows(channel_rows)?;
    Ok(World {
        vocab,
        topics,
        channel,
    })
}

fn round_posterior(p: f64) -> f64 {
    let scale = 10f64.powi(POSTERIOR_DECIMALS);
    (p * scale).round() / scale
}

struct Sampler<'a> {
    world: &'a World,
    lambda: MixtureWeights,
    topic_draw: WeightedIndex<f64>,
    word_draw: Vec<WeightedIndex<f64>>,
    channel_draw: Vec<(Vec<WordId>, WeightedIndex<f64>)>,
    /// `confusable[v]`: every `u` with `p_c(v|u) > 0`.
    confusable: Vec<Vec<WordId>>,
    bin_width: usize,
}

impl<'a> Sampler<'a> {
    fn new(spec: &SynthSpec, world: &'a World) -> Result<Self> {
        let v = spec.vocab_size;
        let lambda = MixtureWeights::from_lambda(spec.lambda_true.clone())?;
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::validation(format!("sampling weights: {e}")))
        };
        let topic_draw = weighted(lambda.lambda())?;
        let word_draw = (0..spec.num_topics)
            .map(|t| weighted(world.topics.row(t)))
            .collect::<Result<_>>()?;
        let mut confusable = vec![Vec::new(); v];
        let mut channel_draw = Vec::with_capacity(v);
        for w in 0..v {
            let row = world.channel.row(WordId(w as u32)).expect("every word has a row");
            for (u, _) in row {
                confusable[u.index()].push(WordId(w as u32));
            }
            let probs: Vec<f64> = row.iter().map(|(_, p)| *p).collect();
            channel_draw.push((row.iter().map(|(u, _)| *u).collect(), weighted(&probs)?));
        }
        Ok(Sampler {
            world,
            lambda,
            topic_draw,
            word_draw,
            channel_draw,
            confusable,
            bin_width: spec.bin_width,
        })
    }

    fn bin(&self, rng: &mut ChaCha8Rng) -> Result<(WordId, WordId, Bin)> {
        let t = self.topic_draw.sample(rng);
        let w = WordId(self.word_draw[t].sample(rng) as u32);
        let (targets, draw) = &self.channel_draw[w.index()];
        let observed = targets[draw.sample(rng)];

        let score = |u: WordId| {
            mixture_prob(&self.world.topics, &self.lambda, u) * channel_prob(&self.world.channel, observed, u)
        };
        let mut others: Vec<(WordId, f64)> = self.confusable[observed.index()]
            .iter()
            .filter(|u| **u != observed)
            .map(|&u| (u, score(u)))
            .collect();
        others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        others.truncate(self.bin_width - 1);
        let mut members = vec![(observed, score(observed))];
        members.extend(others);

        let z: f64 = members.iter().map(|(_, s)| s).sum();
        let mut post: Vec<f64> = members.iter().map(|(_, s)| round_posterior(s / z)).collect();
        let top = (0..post.len()).max_by(|&a, &b| post[a].total_cmp(&post[b])).unwrap_or(0);
        post.swap(0, top);
        let lead = post[0];
        let tick = 10f64.powi(-POSTERIOR_DECIMALS);
        let cells: Vec<Cell> = members
            .iter()
            .zip(&post)
            .enumerate()
            .filter_map(|(i, (&(u, _), &p))| {
                let p = if i > 0 && p >= lead && u < observed { round_posterior(p - tick) } else { p };
                (p > 0.0).then_some(Cell { word: u, posterior: p })
            })
            .collect();
        Ok((w, observed, Bin::new(cells)?))
    }
}

/// Samples conversation `index` of `spec` inside an already drawn world.
pub fn sample_in_world(spec: &SynthSpec, world: &World, index: usize) -> Result<(Conversation, Truth)> {
    spec.validate()?;
    let sampler = Sampler::new(spec, world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    rng.set_stream(1);
    let mut reference = Vec::with_capacity(spec.bins);
    let mut observed = Vec::with_capacity(spec.bins);
    let mut bins = Vec::with_capacity(spec.bins);
    for _ in 0..spec.bins {
        let (w, o, bin) = sampler.bin(&mut rng)?;
        debug_assert_eq!(bin.one_best(), o);
        reference.push(w);
        observed.push(o);
        bins.push(bin);
    }
    let conv = Conversation::from_bins(conversation_id(index), bins)?;
    let truth = Truth {
        lambda_true: sampler.lambda,
        topics: world.topics.clone(),
        channel: world.channel.clone(),
        reference,
        observed,
    };
    Ok((conv, truth))
}

/// Draws the world and the first conversation of `spec`.
pub fn sample_conversation(spec: &SynthSpec) -> Result<(Conversation, Truth)> {
    let world = draw_world(spec)?;
    sample_in_world(spec, &world, 0)
}

/// Draws the world and `spec.conversations` conversations, in parallel when
/// enabled.
pub fn sample_all(spec: &SynthSpec) -> Result<(World, Vec<(Conversation, Truth)>)> {
    let world = draw_world(spec)?;
    let convs = crate::par::map_range(spec.conversations, |i| sample_in_world(spec, &world, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((world, convs))
}
