//! Topic-conditional unigram distributions q(w|t) and their mixtures.
//!
//! Rows are smoothed with Witten-Bell discounting and floored at
//! [`PROB_FLOOR`], so every word has positive probability under every topic.
//! T is whatever the training data declares (40 for Fisher-style labels).

use std::fmt::Write as _;
use std::io::BufRead;

use crate::corpus::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::numfmt;

/// Lower bound on every smoothed probability.
pub const PROB_FLOOR: f64 = 1e-10;
/// Tolerance used when validating stored distributions.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Looser tolerance for rows read back from 12-significant-digit text.
pub const FILE_ROW_SUM_TOL: f64 = 1e-6;
/// Conventional out-of-vocabulary token.
pub const UNK: &str = "<unk>";

const FILE_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    labels: Vec<String>,
    vocab_size: usize,
    /// Row-major `T x V`.
    probs: Vec<f64>,
}

impl TopicModel {
    /// Builds a model from dense rows; each row is floored and must already
    /// sum to one within [`FILE_ROW_SUM_TOL`].
    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() || labels.len() != rows.len() {
            return Err(Error::validation("need one label per topic row and at least one topic"));
        }
        let vocab_size = rows[0].len();
        if vocab_size == 0 {
            return Err(Error::validation("topic rows are empty"));
        }
        let mut probs = Vec::with_capacity(labels.len() * vocab_size);
        for (label, mut row) in labels.iter().zip(rows) {
            if row.len() != vocab_size {
                return Err(Error::validation(format!("topic `{label}` has a ragged row")));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::validation(format!("topic `{label}` has an invalid probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
                return Err(Error::validation(format!("topic `{label}` sums to {sum}")));
            }
            apply_floor(&mut row, PROB_FLOOR);
            probs.extend(row);
        }
        Ok(TopicModel {
            labels,
            vocab_size,
            probs,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.labels.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// q(w|t).
    #[inline]
    pub fn prob(&self, t: usize, w: WordId) -> f64 {
        self.probs[t * self.vocab_size + w.index()]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    /// Widens the model to `vocab_size` words. Words added here get the floor
    /// probability under every topic.
    pub fn extend_vocabulary(&mut self, vocab_size: usize) {
        if vocab_size <= self.vocab_size {
            return;
        }
        let mut probs = Vec::with_capacity(self.labels.len() * vocab_size);
        for t in 0..self.labels.len() {
            let mut row = self.row(t).to_vec();
            row.resize(vocab_size, 0.0);
            apply_floor(&mut row, PROB_FLOOR);
            probs.extend(row);
        }
        self.probs = probs;
        self.vocab_size = vocab_size;
    }

    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        assert_eq!(vocab.len(), self.vocab_size, "vocabulary does not match model");
        let mut out = String::new();
        writeln!(out, "TOPICS {} {}", self.num_topics(), self.vocab_size).unwrap();
        for (t, label) in self.labels.iter().enumerate() {
            writeln!(out, "TOPIC {label}").unwrap();
            for (w, p) in vocab.words().iter().zip(self.row(t)) {
                writeln!(out, "{w} {}", numfmt::significant(*p, FILE_DIGITS)).unwrap();
            }
        }
        out
    }

    /// Reads the text form. The vocabulary is taken from the first topic block;
    /// later blocks must list the same words in the same order.
    pub fn from_text<R: BufRead>(reader: R) -> Result<(TopicModel, Vocabulary)> {
        let mut lines = numbered_lines(reader);
        let (n, header) = next_line(&mut lines, 0, "`TOPICS <T> <V>`")?;
        let (t_count, v_count) = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["TOPICS", t, v] => (parse_count(n, t)?, parse_count(n, v)?),
            _ => return Err(Error::parse(n, "expected `TOPICS <T> <V>`")),
        };
        let mut vocab = Vocabulary::new();
        let mut labels = Vec::with_capacity(t_count);
        let mut rows = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let (n, line) = next_line(&mut lines, n, "`TOPIC <label>`")?;
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                ["TOPIC", label] => labels.push(label.to_string()),
                _ => return Err(Error::parse(n, "expected `TOPIC <label>`")),
            }
            let mut row = Vec::with_capacity(v_count);
            for i in 0..v_count {
                let (n, line) = next_line(&mut lines, n, "`<word> <prob>`")?;
                let (word, p) = match line.split_whitespace().collect::<Vec<_>>()[..] {
                    [w, p] => (w, parse_prob(n, p)?),
                    _ => return Err(Error::parse(n, "expected `<word> <prob>`")),
                };
                if t == 0 {
                    if vocab.lookup(word).is_some() {
                        return Err(Error::parse(n, format!("duplicate word `{word}`")));
                    }
                    vocab.intern(word);
                } else if vocab.word(WordId(i as u32)) != word {
                    return Err(Error::parse(n, format!("word `{word}` out of order")));
                }
                row.push(p);
            }
            rows.push(row);
        }
        if let Some(extra) = lines.next() {
            let (n, _) = extra?;
            return Err(Error::parse(n, "trailing content after last topic"));
        }
        Ok((TopicModel::from_rows(labels, rows)?, vocab))
    }
}

pub(crate) fn numbered_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = std::io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

pub(crate) fn next_line(
    lines: &mut impl Iterator<Item = std::io::Result<(usize, String)>>,
    prev: usize,
    expected: &str,
) -> Result<(usize, String)> {
    lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse(prev + 1, format!("unexpected end of input, expected {expected}")))
}

pub(crate) fn parse_count(line: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad count `{s}`")))
}

pub(crate) fn parse_prob(line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(p) if p.is_finite() && (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(Error::parse(line, format!("bad probability `{s}`"))),
    }
}

/// Raises every entry to at least `floor` and rescales the rest so the row
/// still sums to one.
pub(crate) fn apply_floor(row: &mut [f64], floor: f64) {
    assert!(row.len() as f64 * floor < 1.0, "floor too large for row length");
    loop {
        let mut floored = 0usize;
        let mut rest = 0.0;
        for p in row.iter_mut() {
            if *p <= floor {
                *p = floor;
                floored += 1;
            } else {
                rest += *p;
            }
        }
        let target = 1.0 - floored as f64 * floor;
        let scale = target / rest;
        let mut dipped = false;
        for p in row.iter_mut().filter(|p| **p > floor) {
            *p *= scale;
            dipped |= *p < floor;
        }
        if !dipped {
            break;
        }
    }
}

/// Trains one Witten-Bell smoothed unigram per topic label.
///
/// With N tokens and W distinct seen words for a topic, a seen word gets
/// c(w)/(N+W) and the reserved mass W/(N+W) is shared evenly among the
/// vocabulary words the topic never saw. A topic that saw every word gets
/// plain relative frequencies. Labels keep their first-appearance order and
/// repeated labels pool their tokens.
pub fn train_topic_model<L, S>(corpus: &[(L, Vec<S>)], vocab: &mut Vocabulary) -> Result<TopicModel>
where
    L: AsRef<str>,
    S: AsRef<str>,
{
    if corpus.is_empty() {
        return Err(Error::Training("empty training corpus".into()));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut docs: Vec<Vec<WordId>> = Vec::new();
    for (label, tokens) in corpus {
        let label = label.as_ref();
        let t = match labels.iter().position(|l| l == label) {
            Some(t) => t,
            None => {
                labels.push(label.to_string());
                docs.push(Vec::new());
                labels.len() - 1
            }
        };
        docs[t].extend(tokens.iter().map(|tok| vocab.intern(tok.as_ref())));
    }

    let v = vocab.len();
    let mut rows = Vec::with_capacity(labels.len());
    for (label, doc) in labels.iter().zip(&docs) {
        if doc.is_empty() {
            return Err(Error::Training(format!("topic `{label}` has no tokens")));
        }
        let mut counts = vec![0u64; v];
        for w in doc {
            counts[w.index()] += 1;
        }
        rows.push(witten_bell(&counts));
    }
    TopicModel::from_rows(labels, rows)
}

fn witten_bell(counts: &[u64]) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    let seen = counts.iter().filter(|&&c| c > 0).count();
    let unseen = counts.len() - seen;
    if unseen == 0 {
        return counts.iter().map(|&c| c as f64 / n as f64).collect();
    }
    let denom = (n + seen as u64) as f64;
    let unseen_p = seen as f64 / denom / unseen as f64;
    counts
        .iter()
        .map(|&c| if c > 0 { c as f64 / denom } else { unseen_p })
        .collect()
}

/// Conversation-level topic weights, kept both as the simplex vector and as
/// its softmax parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl MixtureWeights {
    pub fn uniform(num_topics: usize) -> Self {
        MixtureWeights::from_mu(vec![0.0; num_topics])
    }

    /// `mu` entries may be `-inf` for topics pinned at zero weight, but not all
    /// of them.
    pub fn from_mu(mu: Vec<f64>) -> Self {
        let lambda = mu_to_lambda(&mu);
        MixtureWeights { lambda, mu }
    }

    pub fn from_lambda(lambda: Vec<f64>) -> Result<Self> {
        let sum: f64 = lambda.iter().sum();
        if lambda.is_empty()
            || lambda.iter().any(|l| !l.is_finite() || *l < 0.0)
            || (sum - 1.0).abs() > ROW_SUM_TOL
        {
            return Err(Error::validation(format!("{lambda:?} is not on the simplex")));
        }
        let lambda: Vec<f64> = lambda.iter().map(|l| l / sum).collect();
        let mu = lambda.iter().map(|l| l.ln()).collect();
        Ok(MixtureWeights { lambda, mu })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `LAMBDA <conversation-id> <T>` followed by one `<label> <weight>` line per topic.
    pub fn to_text(&self, conversation_id: &str, labels: &[String]) -> String {
        assert_eq!(labels.len(), self.lambda.len());
        let mut out = format!("LAMBDA {conversation_id} {}\n", self.lambda.len());
        for (label, l) in labels.iter().zip(&self.lambda) {
            writeln!(out, "{label} {}", numfmt::significant(*l, FILE_DIGITS)).unwrap();
        }
        out
    }
}

/// Numerically stable softmax.
pub fn mu_to_lambda(mu: &[f64]) -> Vec<f64> {
    let max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "softmax needs at least one finite entry");
    let exps: Vec<f64> = mu.iter().map(|m| (m - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// q(w) = sum_t lambda_t q(w|t).
#[inline]
pub fn mixture_prob(tm: &TopicModel, lw: &MixtureWeights, w: WordId) -> f64 {
    mixture_prob_raw(tm, lw.lambda(), w)
}

#[inline]
pub(crate) fn mixture_prob_raw(tm: &TopicModel, lambda: &[f64], w: WordId) -> f64 {
    lambda
        .iter()
        .enumerate()
        .map(|(t, l)| l * tm.prob(t, w))
        .sum()
}

/// A dense distribution over a vocabulary, e.g. an adapted unigram.
#[derive(Debug, Clone, PartialEq)]
pub struct Unigram {
    probs: Vec<f64>,
}

impl Unigram {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation("unigram has invalid probabilities"));
        }
        if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
            return Err(Error::validation(format!("unigram sums to {sum}")));
        }
        Ok(Unigram { probs })
    }

    pub fn uniform(size: usize) -> Self {
        Unigram {
            probs: vec![1.0 / size as f64; size],
        }
    }

    #[inline]
    pub fn prob(&self, w: WordId) -> f64 {
        self.probs[w.index()]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `UNIGRAM <V>` then `<word> <prob>` per vocabulary entry.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        assert_eq!(vocab.len(), self.probs.len());
        let mut out = format!("UNIGRAM {}\n", self.probs.len());
        for (w, p) in vocab.words().iter().zip(&self.probs) {
            writeln!(out, "{w} {}", numfmt::significant(*p, FILE_DIGITS)).unwrap();
        }
        out
    }

    pub fn from_text<R: BufRead>(reader: R) -> Result<(Unigram, Vocabulary)> {
        let mut lines = numbered_lines(reader);
        let (n, header) = next_line(&mut lines, 0, "`UNIGRAM <V>`")?;
        let size = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["UNIGRAM", v] => parse_count(n, v)?,
            _ => return Err(Error::parse(n, "expected `UNIGRAM <V>`")),
        };
        let mut vocab = Vocabulary::new();
        let mut probs = Vec::with_capacity(size);
        let mut last = n;
        for _ in 0..size {
            let (n, line) = next_line(&mut lines, last, "`<word> <prob>`")?;
            last = n;
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                [w, p] => {
                    if vocab.lookup(w).is_some() {
                        return Err(Error::parse(n, format!("duplicate word `{w}`")));
                    }
                    vocab.intern(w);
                    probs.push(parse_prob(n, p)?);
                }
                _ => return Err(Error::parse(n, "expected `<word> <prob>`")),
            }
        }
        if let Some(extra) = lines.next() {
            return Err(Error::parse(extra?.0, "trailing content"));
        }
        Ok((Unigram::new(probs)?, vocab))
    }
}
