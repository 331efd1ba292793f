//! Beam search with top-k / nucleus filtering of each beam's expansions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub beams: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
    /// Sample from the filtered distribution instead of searching.
    pub sample: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            beams: 5,
            top_k: 100,
            top_p: 0.5,
            max_len: 128,
            sample: false,
        }
    }
}

impl DecodeParams {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            beams: 1,
            top_k: 1,
            top_p: 1.0,
            max_len,
            sample: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 || self.top_k == 0 || self.max_len == 0 {
            return Err(Error::invalid("beams, top_k and max_len must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p={} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// An autoregressive model that can be stepped one token at a time.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;
    /// Log-probabilities over the (extended) vocabulary after `token`.
    fn step(&self, state: &Self::State, token: u32) -> Result<(Vec<f32>, Self::State)>;
    fn bos(&self) -> u32;
    fn eos(&self) -> u32;
}

/// Indices allowed by top-k and top-p, most probable first. Always keeps at
/// least the argmax.
pub fn filter_candidates(logp: &[f32], top_k: usize, top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logp.len()).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
    let finite = order.iter().take_while(|&&i| logp[i].is_finite()).count();
    order.truncate(top_k.max(1).min(finite.max(1)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &i in &order {
        keep += 1;
        mass += (logp[i] as f64).exp();
        // Tolerate rounding in the f32 log-probabilities.
        if mass >= top_p - 1e-6 {
            break;
        }
    }
    order.truncate(keep);
    order
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<u32>,
    score: f64,
    state: S,
}

/// Returns the best sequence (without BOS/EOS). Finished hypotheses are
/// ranked by length-normalized log-probability.
pub fn decode<M: StepModel>(model: &M, params: &DecodeParams, seed: u64) -> Result<Vec<u32>> {
    params.validate()?;
    if params.sample {
        return sample(model, params, seed);
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state: model.start()?,
    }];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..params.max_len {
        let mut expansions: Vec<(usize, u32, f64, M::State)> = Vec::new();
        for (h_idx, hyp) in live.iter().enumerate() {
            let last = hyp.tokens.last().copied().unwrap_or(model.bos());
            let (logp, state) = model.step(&hyp.state, last)?;
            for i in filter_candidates(&logp, params.top_k, params.top_p) {
                expansions.push((h_idx, i as u32, hyp.score + logp[i] as f64, state.clone()));
            }
        }
        expansions.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut next = Vec::new();
        for (h_idx, tok, score, state) in expansions {
            if next.len() >= params.beams {
                break;
            }
            let mut tokens = live[h_idx].tokens.clone();
            if tok == model.eos() {
                let len = tokens.len().max(1) as f64;
                finished.push((tokens, score / len));
                continue;
            }
            tokens.push(tok);
            next.push(Hyp { tokens, score, state });
        }
        if finished.len() >= params.beams || next.is_empty() {
            break;
        }
        live = next;
    }
    if finished.is_empty() {
        finished.extend(
            live.into_iter()
                .map(|h| {
                    let len = h.tokens.len().max(1) as f64;
                    (h.tokens, h.score / len)
                }),
        );
    }
    finished.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(finished.into_iter().next().map(|(t, _)| t).unwrap_or_default())
}

fn sample<M: StepModel>(model: &M, params: &DecodeParams, seed: u64) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.start()?;
    let mut last = model.bos();
    let mut out = Vec::new();
    for _ in 0..params.max_len {
        let (logp, next) = model.step(&state, last)?;
        state = next;
        let cands = filter_candidates(&logp, params.top_k, params.top_p);
        let weights: Vec<f64> = cands.iter().map(|&i| (logp[i] as f64).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.random_range(0.0..total.max(f64::MIN_POSITIVE));
        let mut pick = cands[0];
        for (&i, w) in cands.iter().zip(&weights) {
            if draw < *w {
                pick = i;
                break;
            }
            draw -= w;
        }
        if pick as u32 == model.eos() {
            break;
        }
        out.push(pick as u32);
        last = pick as u32;
    }
    Ok(out)
}
