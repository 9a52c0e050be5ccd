//! ASR channel p_c(v|w): the probability that the recognizer's top word is `v`
//! when `w` was spoken, estimated from bin co-occurrence counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::corpus::{Conversation, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::par;
use crate::topics::{next_line, numbered_lines, parse_count, parse_prob, FILE_ROW_SUM_TOL};

const FILE_DIGITS: usize = 12;

/// Sparse conditional distribution. Rows are keyed by the spoken word `w`;
/// each row lists `(v, p_c(v|w))` sorted by `v`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelModel {
    rows: BTreeMap<WordId, Vec<(WordId, f64)>>,
}

impl ChannelModel {
    /// Rows are renormalized after checking they sum to one within
    /// [`FILE_ROW_SUM_TOL`]. Zero entries are dropped.
    pub fn from_rows(rows: BTreeMap<WordId, Vec<(WordId, f64)>>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (w, mut row) in rows {
            if row.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
                return Err(Error::validation(format!("channel row {} has invalid entries", w.0)));
            }
            row.retain(|(_, p)| *p > 0.0);
            row.sort_by_key(|(v, _)| *v);
            if row.windows(2).any(|x| x[0].0 == x[1].0) {
                return Err(Error::validation(format!("channel row {} repeats a word", w.0)));
            }
            let sum: f64 = row.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
                return Err(Error::validation(format!("channel row {} sums to {sum}", w.0)));
            }
            for (_, p) in row.iter_mut() {
                *p /= sum;
            }
            out.insert(w, row);
        }
        Ok(ChannelModel { rows: out })
    }

    /// The identity channel: every word is recognized correctly.
    pub fn identity() -> Self {
        ChannelModel::default()
    }

    pub fn row(&self, w: WordId) -> Option<&[(WordId, f64)]> {
        self.rows.get(&w).map(|r| r.as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (WordId, &[(WordId, f64)])> + '_ {
        self.rows.iter().map(|(w, r)| (*w, r.as_slice()))
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// `CHANNEL <rows>` header, then `<w> <v> <prob>` lines ordered by the
    /// word strings of `(w, v)`.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut lines: Vec<(&str, &str, f64)> = self
            .rows
            .iter()
            .flat_map(|(w, row)| row.iter().map(move |(v, p)| (*w, *v, *p)))
            .map(|(w, v, p)| (vocab.word(w), vocab.word(v), p))
            .collect();
        lines.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out = format!("CHANNEL {}\n", self.rows.len());
        for (w, v, p) in lines {
            writeln!(out, "{w} {v} {}", numfmt::significant(p, FILE_DIGITS)).unwrap();
        }
        out
    }

    /// Reads the text form, interning words into `vocab`.
    pub fn from_text<R: BufRead>(reader: R, vocab: &mut Vocabulary) -> Result<ChannelModel> {
        let mut lines = numbered_lines(reader);
        let (n, header) = next_line(&mut lines, 0, "`CHANNEL <rows>`")?;
        let declared = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["CHANNEL", r] => parse_count(n, r)?,
            _ => return Err(Error::parse(n, "expected `CHANNEL <rows>`")),
        };
        let mut rows: BTreeMap<WordId, Vec<(WordId, f64)>> = BTreeMap::new();
        for line in lines {
            let (n, line) = line?;
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                [w, v, p] => {
                    let p = parse_prob(n, p)?;
                    let (w, v) = (vocab.intern(w), vocab.intern(v));
                    rows.entry(w).or_default().push((v, p));
                }
                _ => return Err(Error::parse(n, "expected `<w> <v> <prob>`")),
            }
        }
        if rows.len() != declared {
            return Err(Error::validation(format!(
                "header declares {declared} rows, found {}",
                rows.len()
            )));
        }
        ChannelModel::from_rows(rows)
    }
}

/// p_c(v|w). Words without a row are assumed to be recognized correctly.
pub fn channel_prob(cm: &ChannelModel, v: WordId, w: WordId) -> f64 {
    match cm.rows.get(&w) {
        Some(row) => row
            .binary_search_by_key(&v, |(x, _)| *x)
            .map(|i| row[i].1)
            .unwrap_or(0.0),
        None if v == w => 1.0,
        None => 0.0,
    }
}

pub type PairCounts = BTreeMap<(WordId, WordId), u64>;

/// c(v,w) over one conversation after pruning. Every ordered pair of words
/// sharing a bin counts once, including each word paired with itself.
/// Posteriors do not weight the counts.
pub fn cooccurrence_counts(conv: &Conversation, rel_floor: f64, max_words: usize) -> PairCounts {
    let mut counts = PairCounts::new();
    for bin in conv.bins() {
        let bin = bin.pruned(rel_floor, max_words);
        for v in bin.words() {
            for w in bin.words() {
                *counts.entry((v, w)).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Normalizes pair counts into p_c(v|w) = c(v,w) / sum_v' c(v',w).
pub fn normalize_counts(counts: &PairCounts) -> ChannelModel {
    let mut totals: BTreeMap<WordId, u64> = BTreeMap::new();
    for (&(_, w), &c) in counts {
        *totals.entry(w).or_insert(0) += c;
    }
    let mut rows: BTreeMap<WordId, Vec<(WordId, f64)>> = BTreeMap::new();
    for (&(v, w), &c) in counts {
        rows.entry(w)
            .or_default()
            .push((v, c as f64 / totals[&w] as f64));
    }
    for row in rows.values_mut() {
        row.sort_by_key(|(v, _)| *v);
    }
    ChannelModel { rows }
}

fn merge_into(acc: &mut PairCounts, other: PairCounts) {
    for (k, c) in other {
        *acc.entry(k).or_insert(0) += c;
    }
}

/// Prunes every bin, counts co-occurrences per conversation (in parallel when
/// enabled), merges the tables and normalizes.
pub fn estimate_channel(convs: &[Conversation], rel_floor: f64, max_words: usize) -> Result<ChannelModel> {
    if convs.is_empty() {
        return Err(Error::validation("no conversations to estimate the channel from"));
    }
    let partial = par::map(convs, |c| cooccurrence_counts(c, rel_floor, max_words));
    let mut total = PairCounts::new();
    for p in partial {
        merge_into(&mut total, p);
    }
    Ok(normalize_counts(&total))
}
