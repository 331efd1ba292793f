//! Small neural building blocks shared by the trainable toy models: a seeded
//! parameter store, a vocabulary with copy-extension, a GRU cell, and a
//! pointer-generator attention decoder.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{ops, Linear, Module, Optimizer};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Named trainable tensors with deterministic (seeded) initialization.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, Tensor::zeros(shape, DType::F64, &self.device)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.insert(name, Tensor::full(value, shape, &self.device)?)
    }

    /// `out × in` weight plus optional bias, PyTorch-style fan-in scaling.
    pub fn linear(
        &mut self,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Linear> {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[out_dim, in_dim], scale, rng)?;
        let b = if bias {
            Some(self.uniform(&format!("{name}.bias"), &[out_dim], scale, rng)?)
        } else {
            None
        };
        Ok(Linear::new(w, b))
    }

    /// Registers an explicitly initialized parameter.
    pub fn insert(&mut self, name: &str, init: Tensor) -> Result<Tensor> {
        let var = Var::from_tensor(&init.to_dtype(self.dtype)?)?;
        let t = var.as_tensor().clone();
        if self.vars.insert(name.to_string(), var).is_some() {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_matching(path, "")
    }

    /// Saves the parameters whose names start with `prefix`.
    pub fn save_matching(&self, path: &Path, prefix: &str) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrites every parameter with the value stored at `path`.
    pub fn load(&self, path: &Path) -> Result<()> {
        self.load_many(&[path])
    }

    /// Like [`ParamStore::load`], with parameters spread over several files.
    pub fn load_many(&self, paths: &[&Path]) -> Result<()> {
        let mut stored = HashMap::new();
        for path in paths {
            stored.extend(candle_core::safetensors::load(path, &self.device)?);
        }
        for (name, var) in &self.vars {
            let t = stored
                .get(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Word vocabulary; ids `0..4` are the pad/bos/eos/unk specials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    /// Most frequent words first (ties broken alphabetically), capped at
    /// `max_size` entries including specials.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let specials = [PAD, BOS, EOS, UNK];
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !specials.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = specials
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .take(max_size.max(specials.len()))
            .collect();
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, index }
    }

    pub fn rebuild_index(&mut self) {
        *self = Self::from_words(std::mem::take(&mut self.words));
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}

/// Per-example extension of the vocabulary with source words it lacks, so the
/// pointer can copy them.
#[derive(Debug, Clone)]
pub struct CopySource {
    /// Extended id for each source position.
    pub ids: Vec<u32>,
    /// Source-only words, in order of extended id (`vocab.len() + i`).
    pub oov: Vec<String>,
}

impl CopySource {
    pub fn new<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Self {
        Self::with_unknown(vocab, tokens, |_| false)
    }

    /// Like [`CopySource::new`], but words for which `unknown` holds are
    /// treated as out of vocabulary even if the vocabulary has them.
    pub fn with_unknown<S: AsRef<str>>(vocab: &Vocab, tokens: &[S], unknown: impl Fn(&str) -> bool) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ids = tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                if vocab.contains(t) && !unknown(t) {
                    vocab.id(t)
                } else if let Some(i) = oov.iter().position(|w| w == t) {
                    (vocab.len() + i) as u32
                } else {
                    oov.push(t.to_string());
                    (vocab.len() + oov.len() - 1) as u32
                }
            })
            .collect();
        Self { ids, oov }
    }

    /// Extended id of a target word: in-vocabulary id, copied-OOV id, or unk.
    pub fn target_id(&self, vocab: &Vocab, word: &str) -> u32 {
        if let Some(i) = self.oov.iter().position(|w| w == word) {
            (vocab.len() + i) as u32
        } else if vocab.contains(word) {
            vocab.id(word)
        } else {
            Vocab::UNK_ID
        }
    }

    pub fn word<'a>(&'a self, vocab: &'a Vocab, id: u32) -> &'a str {
        let id = id as usize;
        if id < vocab.len() {
            vocab.word(id as u32).unwrap_or(UNK)
        } else {
            self.oov.get(id - vocab.len()).map(String::as_str).unwrap_or(UNK)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruCell {
    ih: Linear,
    hh: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            ih: store.linear(&format!("{name}.ih"), input, 3 * hidden, true, rng)?,
            hh: store.linear(&format!("{name}.hh"), hidden, 3 * hidden, true, rng)?,
            hidden,
        })
    }

    /// `x: (B, input)`, `h: (B, hidden)` → next hidden state.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let gi = self.ih.forward(x)?;
        let gh = self.hh.forward(h)?;
        let hs = self.hidden;
        let r = ops::sigmoid(&(gi.narrow(1, 0, hs)? + gh.narrow(1, 0, hs)?)?)?;
        let z = ops::sigmoid(&(gi.narrow(1, hs, hs)? + gh.narrow(1, hs, hs)?)?)?;
        let n = (gi.narrow(1, 2 * hs, hs)? + (r * gh.narrow(1, 2 * hs, hs)?)?)?.tanh()?;
        let one_minus_z = z.affine(-1.0, 1.0)?;
        Ok(((one_minus_z * n)? + (z * h)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderDims {
    pub vocab: usize,
    pub embed: usize,
    pub memory: usize,
    pub hidden: usize,
}

/// GRU decoder with bilinear attention over a memory matrix and a pointer
/// that copies source tokens.
#[derive(Debug, Clone)]
pub struct PointerDecoder {
    pub dims: DecoderDims,
    embed: Tensor,
    init: Linear,
    gru: GruCell,
    attn: Linear,
    combine: Linear,
    out: Linear,
    gate: Linear,
}

/// Recurrent state carried between decoding steps for a batch.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub hidden: Tensor,
    pub context: Tensor,
}

/// Memory-side inputs for one batch.
#[derive(Debug, Clone)]
pub struct DecoderMemory {
    /// `(B, L, memory)`
    pub memory: Tensor,
    /// `(B, 1, L)`: 0 on real positions, large negative on padding.
    pub mask_bias: Tensor,
    /// `(B, L, V_ext)` one-hot rows mapping positions to extended ids.
    pub copy_map: Tensor,
    pub ext_vocab: usize,
}

impl DecoderMemory {
    pub fn new(memory: Tensor, lengths: &[usize], sources: &[Vec<u32>], ext_vocab: usize) -> Result<Self> {
        let (b, l, _) = memory.dims3()?;
        let device = memory.device().clone();
        let dtype = memory.dtype();
        let mut bias = vec![0f64; b * l];
        let mut copy = vec![0f64; b * l * ext_vocab];
        for (i, (&len, src)) in lengths.iter().zip(sources).enumerate() {
            for j in 0..l {
                if j >= len {
                    bias[i * l + j] = -1e9;
                } else {
                    copy[(i * l + j) * ext_vocab + src[j] as usize] = 1.0;
                }
            }
        }
        Ok(Self {
            mask_bias: Tensor::from_vec(bias, (b, 1, l), &device)?.to_dtype(dtype)?,
            copy_map: Tensor::from_vec(copy, (b, l, ext_vocab), &device)?.to_dtype(dtype)?,
            memory,
            ext_vocab,
        })
    }
}

impl PointerDecoder {
    pub fn new(store: &mut ParamStore, name: &str, dims: DecoderDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let DecoderDims {
            vocab,
            embed,
            memory,
            hidden,
        } = dims;
        let scale = (1.0 / embed as f64).sqrt();
        Ok(Self {
            dims,
            embed: store.uniform(&format!("{name}.embed"), &[vocab, embed], scale, rng)?,
            init: store.linear(&format!("{name}.init"), memory, hidden, true, rng)?,
            gru: GruCell::new(store, &format!("{name}.gru"), embed + memory, hidden, rng)?,
            attn: store.linear(&format!("{name}.attn"), hidden, memory, false, rng)?,
            combine: store.linear(&format!("{name}.combine"), hidden + memory, hidden, true, rng)?,
            out: store.linear(&format!("{name}.out"), hidden, vocab, true, rng)?,
            gate: store.linear(&format!("{name}.gate"), hidden + memory + embed, 1, true, rng)?,
        })
    }

    pub fn start(&self, mem: &DecoderMemory) -> Result<DecoderState> {
        let (b, l, dm) = mem.memory.dims3()?;
        // Mean over real positions.
        let weights = ops::softmax(&mem.mask_bias.broadcast_as((b, 1, l))?.contiguous()?, D::Minus1)?;
        let mean = weights.matmul(&mem.memory)?.squeeze(1)?;
        let hidden = self.init.forward(&mean)?.tanh()?;
        let context = Tensor::zeros((b, dm), mem.memory.dtype(), mem.memory.device())?;
        Ok(DecoderState { hidden, context })
    }

    /// One step for a batch of previous tokens (in-vocabulary ids); returns
    /// log-probabilities over the extended vocabulary.
    pub fn step(&self, mem: &DecoderMemory, state: &DecoderState, prev: &Tensor) -> Result<(Tensor, DecoderState)> {
        let emb = self.embed.embedding(prev)?;
        let x = Tensor::cat(&[&emb, &state.context], 1)?;
        let hidden = self.gru.step(&x, &state.hidden)?;
        let query = self.attn.forward(&hidden)?.unsqueeze(1)?;
        let scores = query.matmul(&mem.memory.transpose(1, 2)?.contiguous()?)?;
        let alpha = ops::softmax(&scores.broadcast_add(&mem.mask_bias)?, D::Minus1)?;
        let context = alpha.matmul(&mem.memory)?.squeeze(1)?;
        let feat = self
            .combine
            .forward(&Tensor::cat(&[&hidden, &context], 1)?)?
            .tanh()?;
        let p_vocab = ops::softmax(&self.out.forward(&feat)?, D::Minus1)?;
        let p_gen = ops::sigmoid(&self.gate.forward(&Tensor::cat(&[&hidden, &context, &emb], 1)?)?)?;
        let (b, v) = p_vocab.dims2()?;
        let extra = mem.ext_vocab - v;
        let p_vocab = if extra > 0 {
            Tensor::cat(&[&p_vocab, &Tensor::zeros((b, extra), p_vocab.dtype(), p_vocab.device())?], 1)?
        } else {
            p_vocab
        };
        let p_copy = alpha.matmul(&mem.copy_map)?.squeeze(1)?;
        let p = (p_vocab.broadcast_mul(&p_gen)? + p_copy.broadcast_mul(&p_gen.affine(-1.0, 1.0)?)?)?;
        let logp = (p + 1e-9)?.log()?;
        Ok((logp, DecoderState { hidden, context }))
    }

    /// Teacher-forced mean token cross-entropy. `prev`/`next` are `(B, T)`;
    /// `next` holds extended ids and `mask` is 1 on real target positions.
    pub fn loss(&self, mem: &DecoderMemory, prev: &Tensor, next: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, t) = prev.dims2()?;
        let mut state = self.start(mem)?;
        let mut total: Option<Tensor> = None;
        for step in 0..t {
            let p = prev.narrow(1, step, 1)?.squeeze(1)?.contiguous()?;
            let (logp, next_state) = self.step(mem, &state, &p)?;
            state = next_state;
            let gold = next.narrow(1, step, 1)?.contiguous()?;
            let nll = logp.gather(&gold, 1)?.squeeze(1)?.neg()?;
            let m = mask.narrow(1, step, 1)?.squeeze(1)?;
            let term = (nll * m)?.sum_all()?;
            total = Some(match total {
                Some(acc) => (acc + term)?,
                None => term,
            });
        }
        let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.max(1.0);
        let total = total.ok_or_else(|| Error::invalid("empty target batch"))?;
        Ok((total / count)?)
    }

    pub fn embedding_table(&self) -> &Tensor {
        &self.embed
    }
}

/// Decoder-side tensors for a batch.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    /// `(B, T)` in-vocabulary ids fed to the decoder (bos first).
    pub prev: Tensor,
    /// `(B, T)` extended ids to predict (eos last).
    pub next: Tensor,
    /// `(B, T)` 1 on real positions.
    pub mask: Tensor,
}

impl TargetBatch {
    pub fn new<S: AsRef<str>>(vocab: &Vocab, sources: &[CopySource], targets: &[Vec<S>], dtype: DType) -> Result<Self> {
        let t = targets.iter().map(|x| x.len() + 1).max().unwrap_or(1);
        let b = targets.len();
        let mut prev = vec![Vocab::PAD_ID; b * t];
        let mut next = vec![Vocab::PAD_ID; b * t];
        let mut mask = vec![0f64; b * t];
        for (i, (src, target)) in sources.iter().zip(targets).enumerate() {
            let ext: Vec<u32> = target.iter().map(|w| src.target_id(vocab, w.as_ref())).collect();
            prev[i * t] = Vocab::BOS_ID;
            for (j, &id) in ext.iter().enumerate() {
                next[i * t + j] = id;
                prev[i * t + j + 1] = if (id as usize) < vocab.len() { id } else { Vocab::UNK_ID };
            }
            next[i * t + ext.len()] = Vocab::EOS_ID;
            for m in &mut mask[i * t..i * t + ext.len() + 1] {
                *m = 1.0;
            }
        }
        let device = Device::Cpu;
        Ok(Self {
            prev: Tensor::from_vec(prev, (b, t), &device)?,
            next: Tensor::from_vec(next, (b, t), &device)?,
            mask: Tensor::from_vec(mask, (b, t), &device)?.to_dtype(dtype)?,
        })
    }

    /// Replaces each decoder input word (not bos or padding) by unk with
    /// probability `p`, so the decoder learns to continue after unknown words.
    pub fn drop_words(&mut self, p: f64, rng: &mut impl Rng) -> Result<()> {
        let dims = self.prev.dims2()?;
        let mut prev = self.prev.flatten_all()?.to_vec1::<u32>()?;
        for id in &mut prev {
            if *id >= Vocab::UNK_ID && rng.random_bool(p) {
                *id = Vocab::UNK_ID;
            }
        }
        self.prev = Tensor::from_vec(prev, dims, self.prev.device())?;
        Ok(())
    }
}

/// Extended vocabulary size covering every source in a batch.
pub fn ext_vocab_size(vocab: &Vocab, sources: &[CopySource]) -> usize {
    vocab.len() + sources.iter().map(|s| s.oov.len()).max().unwrap_or(0)
}

/// Maps decoded extended ids back to words.
pub fn ids_to_words(vocab: &Vocab, source: &CopySource, ids: &[u32]) -> Vec<String> {
    ids.iter().map(|&i| source.word(vocab, i).to_string()).collect()
}

/// Single-example decoding adapter for [`super::decode::decode`].
pub struct PointerStepper<'a> {
    pub decoder: &'a PointerDecoder,
    pub memory: DecoderMemory,
}

impl super::decode::StepModel for PointerStepper<'_> {
    type State = DecoderState;

    fn start(&self) -> Result<DecoderState> {
        self.decoder.start(&self.memory)
    }

    fn step(&self, state: &DecoderState, token: u32) -> Result<(Vec<f32>, DecoderState)> {
        // Copied OOV tokens are fed back as unk.
        let token = if (token as usize) < self.decoder.dims.vocab {
            token
        } else {
            Vocab::UNK_ID
        };
        let prev = Tensor::new(&[token], self.memory.memory.device())?;
        let (logp, next) = self.decoder.step(&self.memory, state, &prev)?;
        let mut row = logp.squeeze(0)?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        // Never emit padding, bos or unk.
        for id in [Vocab::PAD_ID, Vocab::BOS_ID, Vocab::UNK_ID] {
            row[id as usize] = f32::NEG_INFINITY;
        }
        Ok((row, next))
    }

    fn bos(&self) -> u32 {
        Vocab::BOS_ID
    }

    fn eos(&self) -> u32 {
        Vocab::EOS_ID
    }
}

/// Linear warmup to `peak` followed by linear decay to zero at `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearWarmup {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearWarmup {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup > 0 && step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let remaining = self.total.saturating_sub(step) as f64;
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        self.peak * (remaining / span).clamp(0.0, 1.0)
    }
}

/// One optimizer step with global-norm gradient clipping. Returns the loss
/// value, or an error if it is not finite.
pub fn clipped_step(
    opt: &mut candle_nn::AdamW,
    vars: &[Var],
    loss: &Tensor,
    max_norm: f64,
    step: usize,
) -> Result<f64> {
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            diagnostics: format!("loss={value}"),
        });
    }
    let mut grads = loss.backward()?;
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            diagnostics: format!("loss={value} grad_norm={norm}"),
        });
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v) {
                grads.insert(v, (g * scale)?);
            }
        }
    }
    opt.step(&grads)?;
    Ok(value)
}

/// Sinusoidal position features of width `dim`.
pub fn position_features(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}
