use std::collections::HashMap;

use super::LmScorer;
use crate::error::{Error, Result};
use crate::text;

fn lm_tokens(text: &str) -> Vec<String> {
    text::tokenize(text).into_iter().map(|t| t.to_lowercase()).collect()
}

/// Every token has probability `1 / vocab`.
#[derive(Debug, Clone, Copy)]
pub struct UniformLm {
    pub vocab: usize,
}

impl LmScorer for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn score(&self, text: &str) -> Result<Vec<f64>> {
        let n = lm_tokens(text).len();
        if n == 0 {
            return Err(Error::invalid("cannot score empty text"));
        }
        Ok(vec![-(self.vocab as f64).ln(); n])
    }
}

const BOS: &str = "<s>";
const UNK: &str = "<unk>";

/// Add-k smoothed bigram model over a closed vocabulary (training words plus
/// `<unk>`). The first token is conditioned on a sentence-start symbol.
#[derive(Debug, Clone)]
pub struct BigramLm {
    k: f64,
    vocab: HashMap<String, usize>,
    bigrams: HashMap<(String, String), usize>,
    context: HashMap<String, usize>,
}

impl BigramLm {
    pub fn train<S: AsRef<str>>(sentences: &[S], k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::invalid("smoothing constant must be positive"));
        }
        let mut vocab = HashMap::new();
        let mut bigrams = HashMap::new();
        let mut context = HashMap::new();
        vocab.insert(UNK.to_string(), 0);
        for s in sentences {
            let toks = lm_tokens(s.as_ref());
            let mut prev = BOS.to_string();
            for t in toks {
                let n = vocab.len();
                vocab.entry(t.clone()).or_insert(n);
                *bigrams.entry((prev.clone(), t.clone())).or_insert(0) += 1;
                *context.entry(prev).or_insert(0) += 1;
                prev = t;
            }
        }
        Ok(Self {
            k,
            vocab,
            bigrams,
            context,
        })
    }

    fn norm<'a>(&self, t: &'a str) -> &'a str {
        if self.vocab.contains_key(t) {
            t
        } else {
            UNK
        }
    }

    pub fn prob(&self, prev: &str, word: &str) -> f64 {
        let prev = if prev == BOS { BOS } else { self.norm(prev) };
        let word = self.norm(word);
        let c = self
            .bigrams
            .get(&(prev.to_string(), word.to_string()))
            .copied()
            .unwrap_or(0) as f64;
        let ctx = self.context.get(prev).copied().unwrap_or(0) as f64;
        (c + self.k) / (ctx + self.k * self.vocab.len() as f64)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }
}

impl LmScorer for BigramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn score(&self, text: &str) -> Result<Vec<f64>> {
        let toks = lm_tokens(text);
        if toks.is_empty() {
            return Err(Error::invalid("cannot score empty text"));
        }
        let mut prev = BOS;
        let mut out = Vec::with_capacity(toks.len());
        for t in &toks {
            out.push(self.prob(prev, t).ln());
            prev = t;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::lm_score;

    #[test]
    fn uniform_scores() {
        let lm = UniformLm { vocab: 50 };
        let s = lm_score(&lm, "a b c d").unwrap();
        assert_eq!(s, vec![(1.0f64 / 50.0).ln(); 4]);
        assert!(lm_score(&lm, "").is_err());
    }

    #[test]
    fn bigram_distribution_sums_to_one() {
        let lm = BigramLm::train(&["the cat sat", "the dog sat down", "a cat ran"], 1.0).unwrap();
        for prev in ["<s>", "the", "cat", "down", "zebra"] {
            let total: f64 = lm.words().map(|w| lm.prob(prev, w)).sum();
            assert!((total - 1.0).abs() < 1e-6, "{prev}: {total}");
        }
    }

    #[test]
    fn seen_bigrams_beat_unseen() {
        let corpus = crate::synth::lm_fixture(100, 5);
        let lm = BigramLm::train(&corpus, 1.0).unwrap();
        let seen = lm.prob("the", "cat");
        let unseen = lm.prob("the", "quietly");
        assert!(lm.bigrams.contains_key(&("the".into(), "cat".into())));
        assert!(!lm.bigrams.contains_key(&("the".into(), "quietly".into())));
        assert!(seen > unseen);
        let scores = lm_score(&lm, &corpus[0]).unwrap();
        assert!(scores.iter().all(|&x| x <= 0.0));
    }
}
