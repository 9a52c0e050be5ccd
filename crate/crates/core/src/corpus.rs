//! Vocabulary and confusion-network data model.
//!
//! A conversation is a list of confusion networks ("sausages"), each a list of
//! bins holding competing word hypotheses with recognizer posteriors. The text
//! format read and written here is:
//!
//! ```text
//! CONV <conversation-id>
//! NET <utterance-id> <bin-count>
//! BIN <word>:<posterior> <word>:<posterior> ...
//! ```
//!
//! Vocabulary interning is the only mutation point. It is not synchronized:
//! ingestion is expected to run on one thread, after which the vocabulary and
//! every conversation are read-only and may be shared freely.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;


use crate::error::{Error, Result};
use crate::numfmt;

/// Slack allowed on the posterior mass of a bin.
pub const BIN_MASS_SLACK: f64 = 1e-6;
/// Default relative pruning floor (fraction of the bin's max posterior).
pub const DEFAULT_REL_FLOOR: f64 = 0.05;
/// Default number of hypotheses kept per bin.
pub const DEFAULT_MAX_WORDS: usize = 10;

const POSTERIOR_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordId(pub u32);

impl WordId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense word <-> id mapping. Ids are assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::new();
        for w in words {
            let w = w.as_ref();
            if vocab.lookup(w).is_some() {
                return Err(Error::validation(format!("duplicate word `{w}`")));
            }
            vocab.intern(w);
        }
        Ok(vocab)
    }

    /// Id of `word`, adding it if unseen.
    pub fn intern(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = WordId(self.words.len() as u32);
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn lookup(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub word: WordId,
    pub posterior: f64,
}

/// One time slot of a confusion network. Cells are kept in canonical order:
/// descending posterior, ascending word id on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    cells: Vec<Cell>,
}

impl Bin {
    pub fn new(mut cells: Vec<Cell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::validation("empty bin"));
        }
        let mut mass = 0.0;
        for c in &cells {
            if !(c.posterior > 0.0 && c.posterior <= 1.0) {
                return Err(Error::validation(format!(
                    "posterior {} of word id {} outside (0,1]",
                    c.posterior, c.word.0
                )));
            }
            mass += c.posterior;
        }
        if mass > 1.0 + BIN_MASS_SLACK {
            return Err(Error::validation(format!("bin posterior mass {mass} exceeds 1")));
        }
        cells.sort_by(canonical_order);
        if has_duplicates(cells.iter().map(|c| c.word)) {
            return Err(Error::validation("duplicate word in bin"));
        }
        Ok(Bin { cells })
    }

    pub fn from_pairs(pairs: &[(WordId, f64)]) -> Result<Self> {
        Bin::new(
            pairs
                .iter()
                .map(|&(word, posterior)| Cell { word, posterior })
                .collect(),
        )
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn one_best(&self) -> WordId {
        self.cells[0].word
    }

    pub fn mass(&self) -> f64 {
        self.cells.iter().map(|c| c.posterior).sum()
    }

    pub fn contains(&self, w: WordId) -> bool {
        self.cells.iter().any(|c| c.word == w)
    }

    pub fn posterior(&self, w: WordId) -> Option<f64> {
        self.cells.iter().find(|c| c.word == w).map(|c| c.posterior)
    }

    pub fn words(&self) -> impl Iterator<Item = WordId> + '_ {
        self.cells.iter().map(|c| c.word)
    }

    /// See [`prune_bin`].
    pub fn pruned(&self, rel_floor: f64, max_words: usize) -> Bin {
        prune_bin(self, rel_floor, max_words)
    }
}

fn canonical_order(a: &Cell, b: &Cell) -> std::cmp::Ordering {
    b.posterior
        .partial_cmp(&a.posterior)
        .expect("posteriors are finite")
        .then(a.word.cmp(&b.word))
}

fn has_duplicates(ids: impl Iterator<Item = WordId>) -> bool {
    let mut seen: Vec<WordId> = ids.collect();
    seen.sort_unstable();
    seen.windows(2).any(|w| w[0] == w[1])
}

/// Drops cells whose posterior is below `rel_floor` times the bin maximum, then
/// keeps at most `max_words` cells. Posteriors are not renormalized.
pub fn prune_bin(b: &Bin, rel_floor: f64, max_words: usize) -> Bin {
    let max_words = max_words.max(1);
    let floor = rel_floor * b.cells[0].posterior;
    let cells: Vec<Cell> = b
        .cells
        .iter()
        .take_while(|c| c.posterior >= floor)
        .take(max_words)
        .copied()
        .collect();
    Bin { cells }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionNetwork {
    pub utterance_id: String,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    id: String,
    networks: Vec<ConfusionNetwork>,
    total_bins: usize,
}

impl Conversation {
    pub fn new(id: impl Into<String>, networks: Vec<ConfusionNetwork>) -> Result<Self> {
        let id = id.into();
        check_token(&id, "conversation id")?;
        for net in &networks {
            check_token(&net.utterance_id, "utterance id")?;
            if net.bins.is_empty() {
                return Err(Error::validation(format!(
                    "utterance `{}` has no bins",
                    net.utterance_id
                )));
            }
        }
        let total_bins = networks.iter().map(|n| n.bins.len()).sum();
        Ok(Conversation {
            id,
            networks,
            total_bins,
        })
    }

    /// Single-utterance conversation, handy for tests and synthetic data.
    pub fn from_bins(id: impl Into<String>, bins: Vec<Bin>) -> Result<Self> {
        Conversation::new(
            id,
            vec![ConfusionNetwork {
                utterance_id: "u0".to_string(),
                bins,
            }],
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn networks(&self) -> &[ConfusionNetwork] {
        &self.networks
    }

    /// M, the number of bins over all utterances.
    pub fn total_bins(&self) -> usize {
        self.total_bins
    }

    pub fn bins(&self) -> impl Iterator<Item = &Bin> + '_ {
        self.networks.iter().flat_map(|n| n.bins.iter())
    }

    pub fn pruned(&self, rel_floor: f64, max_words: usize) -> Conversation {
        let networks = self
            .networks
            .iter()
            .map(|n| ConfusionNetwork {
                utterance_id: n.utterance_id.clone(),
                bins: n.bins.iter().map(|b| prune_bin(b, rel_floor, max_words)).collect(),
            })
            .collect();
        Conversation {
            id: self.id.clone(),
            networks,
            total_bins: self.total_bins,
        }
    }

    /// Writes the CNET text form. Output is byte-stable.
    pub fn to_cnet(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        writeln!(out, "CONV {}", self.id).unwrap();
        for net in &self.networks {
            writeln!(out, "NET {} {}", net.utterance_id, net.bins.len()).unwrap();
            for bin in &net.bins {
                out.push_str("BIN");
                for c in bin.cells() {
                    write!(
                        out,
                        " {}:{}",
                        vocab.word(c.word),
                        numfmt::trimmed_fixed(c.posterior, POSTERIOR_DIGITS)
                    )
                    .unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::validation(format!("{what} `{s}` must be a non-empty token")));
    }
    Ok(())
}

/// tf(w) = sum over bins of the posterior of w.
pub fn expected_counts(conv: &Conversation) -> BTreeMap<WordId, f64> {
    let mut tf = BTreeMap::new();
    for bin in conv.bins() {
        for c in bin.cells() {
            *tf.entry(c.word).or_insert(0.0) += c.posterior;
        }
    }
    tf
}

/// Parses one conversation in CNET format, interning words into `vocab`.
pub fn parse_conversation<R: BufRead>(reader: R, vocab: &mut Vocabulary) -> Result<Conversation> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()));

    let (lineno, header) = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse(1, "empty input, expected `CONV <id>`"))?;
    let conv_id = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["CONV", id] => id.to_string(),
        _ => return Err(Error::parse(lineno, "expected `CONV <conversation-id>`")),
    };

    let mut networks = Vec::new();
    while let Some(next) = lines.next() {
        let (lineno, line) = next?;
        let (utt, count) = match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["NET", utt, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad bin count `{count}`")))?;
                (utt.to_string(), count)
            }
            _ => return Err(Error::parse(lineno, "expected `NET <utterance-id> <bin-count>`")),
        };
        if count == 0 {
            return Err(Error::validation(format!(
                "line {lineno}: utterance `{utt}` declares no bins"
            )));
        }
        let mut bins = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, line) = lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::parse(lineno, format!("utterance `{utt}` is missing bins")))?;
            bins.push(parse_bin_line(lineno, &line, vocab)?);
        }
        networks.push(ConfusionNetwork {
            utterance_id: utt,
            bins,
        });
    }
    if networks.is_empty() {
        return Err(Error::validation(format!("conversation `{conv_id}` has no utterances")));
    }
    Conversation::new(conv_id, networks)
}

fn parse_bin_line(lineno: usize, line: &str, vocab: &mut Vocabulary) -> Result<Bin> {
    let mut toks = line.split_whitespace();
    if toks.next() != Some("BIN") {
        return Err(Error::parse(lineno, "expected `BIN <word>:<posterior> ...`"));
    }
    let mut cells = Vec::new();
    for tok in toks {
        let (word, post) = tok
            .rsplit_once(':')
            .filter(|(w, _)| !w.is_empty() && !w.contains(':'))
            .ok_or_else(|| Error::parse(lineno, format!("bad cell `{tok}`")))?;
        let posterior = parse_posterior(post)
            .ok_or_else(|| Error::parse(lineno, format!("bad posterior `{post}`")))?;
        if !(0.0..=1.0).contains(&posterior) {
            return Err(Error::validation(format!(
                "line {lineno}: posterior {post} of `{word}` outside [0,1]"
            )));
        }
        cells.push(Cell {
            word: vocab.intern(word),
            posterior,
        });
    }
    Bin::new(cells).map_err(|e| match e {
        Error::Validation(msg) => Error::validation(format!("line {lineno}: {msg}")),
        other => other,
    })
}

/// Plain decimal, at most nine fraction digits.
fn parse_posterior(s: &str) -> Option<f64> {
    let unsigned = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = unsigned.split_once('.').unwrap_or((unsigned, ""));
    let digits_ok = !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.bytes().all(|b| b.is_ascii_digit())
        && frac.len() <= POSTERIOR_DIGITS
        && !(unsigned.contains('.') && frac.is_empty());
    if !digits_ok {
        return None;
    }
    s.parse().ok()
}
