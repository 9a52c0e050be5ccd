//! Perplexity over reference transcripts.

use std::collections::BTreeMap;
use std::io::BufRead;

use crate::corpus::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::topics::{Unigram, UNK};

/// Tokenized reference text with per-word occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCorpus {
    tokens: Vec<WordId>,
    counts: BTreeMap<WordId, u64>,
}

impl ReferenceCorpus {
    pub fn new(tokens: Vec<WordId>) -> Self {
        let mut counts = BTreeMap::new();
        for &w in &tokens {
            *counts.entry(w).or_insert(0) += 1;
        }
        ReferenceCorpus { tokens, counts }
    }

    /// Whitespace-tokenized text, one utterance per line. Tokens missing from
    /// `vocab` map to `<unk>`; without an `<unk>` entry they are an error.
    pub fn from_text<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Self> {
        let unk = vocab.lookup(UNK);
        let mut tokens = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            for tok in line?.split_whitespace() {
                match vocab.lookup(tok).or(unk) {
                    Some(w) => tokens.push(w),
                    None => {
                        return Err(Error::Evaluation(format!(
                            "line {}: token `{tok}` is not in the model vocabulary and the model has no {UNK}",
                            i + 1
                        )))
                    }
                }
            }
        }
        Ok(ReferenceCorpus::new(tokens))
    }

    pub fn tokens(&self) -> &[WordId] {
        &self.tokens
    }

    pub fn counts(&self) -> &BTreeMap<WordId, u64> {
        &self.counts
    }

    pub fn count(&self, w: WordId) -> u64 {
        self.counts.get(&w).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

fn ppl_over<'a>(model: &Unigram, tokens: impl Iterator<Item = &'a WordId>, vocab: Option<&Vocabulary>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &w in tokens {
        let p = if w.index() < model.len() { model.prob(w) } else { 0.0 };
        if !(p > 0.0) {
            let name = vocab.map_or_else(|| format!("#{}", w.0), |v| v.word(w).to_string());
            return Err(Error::Evaluation(format!("token `{name}` has zero probability")));
        }
        sum += p.log10();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Evaluation("no tokens to score".into()));
    }
    Ok(10f64.powf(-sum / n as f64))
}

/// `10^(-(1/|C|) sum_i log10 p(w_i))`. `vocab` is only used to name a
/// zero-probability token in the error.
pub fn perplexity(model: &Unigram, corpus: &ReferenceCorpus, vocab: Option<&Vocabulary>) -> Result<f64> {
    ppl_over(model, corpus.tokens.iter(), vocab)
}

/// Perplexity over tokens whose corpus count is at most `thr`, normalized by
/// the number of such tokens. `None` means no threshold.
pub fn constrained_perplexity(
    model: &Unigram,
    corpus: &ReferenceCorpus,
    thr: Option<u64>,
    vocab: Option<&Vocabulary>,
) -> Result<f64> {
    let Some(thr) = thr else {
        return perplexity(model, corpus, vocab);
    };
    if thr == 0 {
        return Err(Error::Evaluation("threshold must be at least 1".into()));
    }
    let qualifying = corpus.tokens.iter().filter(|w| corpus.count(**w) <= thr);
    ppl_over(model, qualifying, vocab).map_err(|e| match e {
        Error::Evaluation(m) if m == "no tokens to score" => {
            Error::Evaluation(format!("no tokens occur at most {thr} times"))
        }
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_model_gives_vocabulary_size() {
        let m = Unigram::uniform(4);
        let c = ReferenceCorpus::new(vec![WordId(0), WordId(3), WordId(3), WordId(1), WordId(2)]);
        assert_abs_diff_eq!(perplexity(&m, &c, None).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn two_word_example() {
        let m = Unigram::new(vec![0.5, 0.5]).unwrap();
        let c = ReferenceCorpus::new(vec![WordId(0), WordId(1)]);
        assert_abs_diff_eq!(perplexity(&m, &c, None).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn threshold_keeps_rare_tokens_only() {
        let m = Unigram::new(vec![0.7, 0.2, 0.1]).unwrap();
        let c = ReferenceCorpus::new(vec![WordId(0), WordId(0), WordId(1)]);
        let v = constrained_perplexity(&m, &c, Some(1), None).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 0.2, epsilon = 1e-12);
        let all = perplexity(&m, &c, None).unwrap();
        assert_eq!(constrained_perplexity(&m, &c, Some(2), None).unwrap(), all);
        assert_eq!(constrained_perplexity(&m, &c, None, None).unwrap(), all);
    }

    #[test]
    fn no_qualifying_tokens() {
        let m = Unigram::uniform(2);
        let c = ReferenceCorpus::new(vec![WordId(0), WordId(0)]);
        assert!(matches!(
            constrained_perplexity(&m, &c, Some(1), None),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn zero_probability_names_token() {
        let vocab = Vocabulary::from_words(["a", "b"]).unwrap();
        let m = Unigram::new(vec![1.0, 0.0]).unwrap();
        let c = ReferenceCorpus::new(vec![WordId(1)]);
        let err = perplexity(&m, &c, Some(&vocab)).unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");
    }

    #[test]
    fn oov_maps_to_unk() {
        let vocab = Vocabulary::from_words(["a", UNK]).unwrap();
        let c = ReferenceCorpus::from_text("a zzz\n\na\n".as_bytes(), &vocab).unwrap();
        assert_eq!(c.tokens(), &[WordId(0), WordId(1), WordId(0)]);
        assert_eq!(c.count(WordId(0)), 2);
        let vocab = Vocabulary::from_words(["a"]).unwrap();
        let err = ReferenceCorpus::from_text("a zzz".as_bytes(), &vocab).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }
}
