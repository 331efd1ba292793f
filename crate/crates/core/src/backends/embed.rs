//! Deterministic hash-based embedders standing in for pretrained, frozen
//! encoders.

use std::hash::Hasher;

use candle_core::{Device, Tensor};
use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::position_features;
use super::{ContextEncoder, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::text;

pub(crate) fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    h.finish()
}

/// Pseudo-random vector in `[-1, 1]^dim` keyed by `(salt, key)`.
pub fn hashed_vector(salt: &str, key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[salt, key]));
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Bag of hashed unigrams and bigrams, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl SentenceEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let tokens: Vec<String> = text::tokenize(text)
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect();
        if tokens.is_empty() {
            return Err(Error::invalid("cannot embed an empty string"));
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            for (a, b) in v.iter_mut().zip(hashed_vector("uni", t, self.dim)) {
                *a += b;
            }
        }
        for w in tokens.windows(2) {
            let key = format!("{} {}", w[0], w[1]);
            for (a, b) in v.iter_mut().zip(hashed_vector("bi", &key, self.dim)) {
                *a += 0.5 * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid(format!("degenerate embedding for `{text}`")));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

/// Frozen contextual encoder: each row concatenates a hashed identity block
/// for the token, a hashed block for its neighbours, and sinusoidal position
/// features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub token_dim: usize,
    pub context_dim: usize,
    pub position_dim: usize,
    pub max_len: usize,
}

impl ToyEncoder {
    pub fn new(dim: usize, max_len: usize) -> Self {
        let token_dim = dim / 2;
        let context_dim = dim / 4;
        Self {
            token_dim,
            context_dim,
            position_dim: dim - token_dim - context_dim,
            max_len,
        }
    }

    fn row(&self, tokens: &[String], j: usize) -> Vec<f64> {
        let key = |i: Option<usize>| match i.and_then(|i| tokens.get(i)) {
            Some(t) => t.to_lowercase(),
            None => "<edge>".to_string(),
        };
        let tok_scale = 1.0 / (self.token_dim as f64 / 3.0).sqrt();
        let ctx_scale = 0.5 / (self.context_dim as f64 / 3.0).sqrt();
        let mut row: Vec<f64> = hashed_vector("enc-tok", &key(Some(j)), self.token_dim)
            .into_iter()
            .map(|x| x * tok_scale)
            .collect();
        let prev = hashed_vector("enc-ctx", &key(j.checked_sub(1)), self.context_dim);
        let next = hashed_vector("enc-ctx", &key(Some(j + 1)), self.context_dim);
        row.extend(prev.iter().zip(&next).map(|(a, b)| (a - 0.5 * b) * ctx_scale));
        row.extend(position_features(j, self.position_dim));
        row
    }
}

impl ContextEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.token_dim + self.context_dim + self.position_dim
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn encode(&self, tokens: &[String]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        if tokens.len() > self.max_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.max_len,
            });
        }
        let data: Vec<f64> = (0..tokens.len()).flat_map(|j| self.row(tokens, j)).collect();
        Ok(Tensor::from_vec(data, (tokens.len(), self.dim()), &Device::Cpu)?)
    }
}
