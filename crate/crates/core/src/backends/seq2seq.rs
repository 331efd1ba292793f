//! Small trainable encoder-decoder: a windowed embedding encoder feeding a
//! copy-capable attention decoder.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Linear, Module, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::decode;
use super::nn::{
    clipped_step, ext_vocab_size, ids_to_words, position_features, CopySource, DecoderDims, DecoderMemory,
    LinearWarmup, ParamStore, PointerDecoder, PointerStepper, TargetBatch, Vocab,
};
use super::{BackendConfig, Capabilities, DecodeParams, Direction, LossCurve, Seq2SeqBackend, TrainSchedule};
use crate::error::{Error, Result};
use crate::text;

pub const NAME: &str = "tiny-seq2seq";
const WEIGHTS_FILE: &str = "model.safetensors";
const MANIFEST_FILE: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TinySeq2SeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub memory_dim: usize,
    pub position_dim: usize,
    pub max_vocab: usize,
    pub max_len: usize,
}

impl Default for TinySeq2SeqConfig {
    fn default() -> Self {
        Self {
            embed_dim: 24,
            hidden_dim: 48,
            memory_dim: 48,
            position_dim: 16,
            max_vocab: 512,
            max_len: 128,
        }
    }
}

/// Token embedding plus a `[prev, self, next, position]` window projection.
#[derive(Debug, Clone)]
struct WindowEncoder {
    embed: Tensor,
    proj: Linear,
    position_dim: usize,
}

impl WindowEncoder {
    /// `ids: (B, L)` → `(B, L, memory_dim)`.
    fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let e_dim = self.embed.dim(1)?;
        let e = self.embed.embedding(&ids.flatten_all()?)?.reshape((b, l, e_dim))?;
        let zero = Tensor::zeros((b, 1, e_dim), e.dtype(), e.device())?;
        let (left, right) = if l > 1 {
            (
                Tensor::cat(&[&zero, &e.narrow(1, 0, l - 1)?], 1)?,
                Tensor::cat(&[&e.narrow(1, 1, l - 1)?, &zero], 1)?,
            )
        } else {
            (zero.clone(), zero)
        };
        let pos: Vec<f64> = (0..l).flat_map(|j| position_features(j, self.position_dim)).collect();
        let pos = Tensor::from_vec(pos, (1, l, self.position_dim), e.device())?
            .to_dtype(e.dtype())?
            .broadcast_as((b, l, self.position_dim))?;
        let x = Tensor::cat(&[&left, &e, &right, &pos], 2)?;
        Ok(self.proj.forward(&x)?.tanh()?)
    }
}

#[derive(Debug)]
struct Model {
    vocab: Vocab,
    store: ParamStore,
    encoder: WindowEncoder,
    decoder: PointerDecoder,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: TinySeq2SeqConfig,
    vocab: Vocab,
}

impl Model {
    fn new(config: &TinySeq2SeqConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(DType::F32);
        let v = vocab.len();
        let embed = store.uniform("enc.embed", &[v, config.embed_dim], (1.0 / config.embed_dim as f64).sqrt(), &mut rng)?;
        let proj = store.linear(
            "enc.proj",
            3 * config.embed_dim + config.position_dim,
            config.memory_dim,
            true,
            &mut rng,
        )?;
        let dims = DecoderDims {
            vocab: v,
            embed: config.embed_dim,
            memory: config.memory_dim,
            hidden: config.hidden_dim,
        };
        let decoder = PointerDecoder::new(&mut store, "dec", dims, &mut rng)?;
        Ok(Self {
            vocab,
            store,
            encoder: WindowEncoder {
                embed,
                proj,
                position_dim: config.position_dim,
            },
            decoder,
        })
    }

    fn memory(&self, sources: &[CopySource], tokens: &[Vec<String>]) -> Result<DecoderMemory> {
        let l = tokens.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut ids = vec![Vocab::PAD_ID; tokens.len() * l];
        for (i, toks) in tokens.iter().enumerate() {
            for (j, t) in toks.iter().enumerate() {
                ids[i * l + j] = self.vocab.id(t);
            }
        }
        let ids = Tensor::from_vec(ids, (tokens.len(), l), &Device::Cpu)?;
        let memory = self.encoder.forward(&ids)?;
        let lengths: Vec<usize> = tokens.iter().map(Vec::len).collect();
        let src_ids: Vec<Vec<u32>> = sources.iter().map(|s| s.ids.clone()).collect();
        DecoderMemory::new(memory, &lengths, &src_ids, ext_vocab_size(&self.vocab, sources))
    }

    fn batch_loss(&self, batch: &[(Vec<String>, Vec<String>)]) -> Result<Tensor> {
        let tokens: Vec<Vec<String>> = batch.iter().map(|(s, _)| s.clone()).collect();
        let sources: Vec<CopySource> = tokens.iter().map(|t| CopySource::new(&self.vocab, t)).collect();
        let targets: Vec<&Vec<String>> = batch.iter().map(|(_, t)| t).collect();
        let targets: Vec<Vec<&str>> = targets.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
        let mem = self.memory(&sources, &tokens)?;
        let tb = TargetBatch::new(&self.vocab, &sources, &targets, self.store.dtype())?;
        self.decoder.loss(&mem, &tb.prev, &tb.next, &tb.mask)
    }

    fn generate(&self, input: &[String], params: &DecodeParams, seed: u64) -> Result<Vec<String>> {
        let tokens = vec![input.to_vec()];
        let source = CopySource::new(&self.vocab, input);
        let memory = self.memory(std::slice::from_ref(&source), &tokens)?;
        let stepper = PointerStepper {
            decoder: &self.decoder,
            memory,
        };
        let ids = decode(&stepper, params, seed)?;
        Ok(ids_to_words(&self.vocab, &source, &ids))
    }
}

/// Trainable toy backend. Untrained instances refuse to generate; the
/// vocabulary is fixed by the first `fine_tune` call.
#[derive(Debug)]
pub struct TinySeq2Seq {
    config: TinySeq2SeqConfig,
    model: Option<Model>,
}

impl TinySeq2Seq {
    pub fn new(config: TinySeq2SeqConfig) -> Self {
        Self { config, model: None }
    }

    pub fn config(&self) -> &TinySeq2SeqConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    pub fn num_params(&self) -> usize {
        self.model.as_ref().map_or(0, |m| m.store.num_params())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        manifest.vocab.rebuild_index();
        let model = Model::new(&manifest.config, manifest.vocab, 0)?;
        model.store.load(&dir.join(WEIGHTS_FILE))?;
        Ok(Self {
            config: manifest.config,
            model: Some(model),
        })
    }
}

impl Seq2SeqBackend for TinySeq2Seq {
    fn name(&self) -> &str {
        NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            embedding_dim: self.config.memory_dim,
            max_len: self.config.max_len,
            trainable: true,
        }
    }

    fn generate(&self, input: &[String], decode: &DecodeParams, seed: u64) -> Result<String> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::NotLoaded(format!("{NAME}: no trained weights; fine-tune or load a checkpoint")))?;
        if input.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: input.len(),
                max: self.config.max_len,
            });
        }
        if input.is_empty() {
            return Ok(String::new());
        }
        Ok(text::detokenize(&model.generate(input, decode, seed)?))
    }

    fn fine_tune(&mut self, pairs: &[(String, String)], schedule: &TrainSchedule, seed: u64) -> Result<LossCurve> {
        if pairs.is_empty() {
            return Err(Error::invalid("cannot fine-tune on an empty pair list"));
        }
        schedule.validate()?;
        let max_len = self.config.max_len.min(schedule.max_len);
        let data: Vec<(Vec<String>, Vec<String>)> = pairs
            .iter()
            .map(|(s, t)| {
                let mut s = text::tokenize(s);
                let mut t = text::tokenize(t);
                s.truncate(max_len);
                t.truncate(max_len);
                (s, t)
            })
            .filter(|(s, _)| !s.is_empty())
            .collect();
        if data.is_empty() {
            return Err(Error::invalid("every training source is empty"));
        }
        if self.model.is_none() {
            let vocab = Vocab::build(
                data.iter().flat_map(|(s, t)| s.iter().chain(t)).map(String::as_str),
                self.config.max_vocab,
            );
            self.model = Some(Model::new(&self.config, vocab, seed)?);
        }
        let model = self.model.as_ref().expect("initialized above");

        let vars = model.store.vars();
        let steps_per_epoch = data.len().div_ceil(schedule.batch_size);
        let sched = LinearWarmup {
            peak: schedule.lr,
            warmup: schedule.warmup_steps,
            total: steps_per_epoch * schedule.epochs,
        };
        let mut opt = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: sched.lr(0),
                weight_decay: 0.0,
                ..ParamsAdamW::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = LossCurve::default();
        let mut step = 0;
        for _ in 0..schedule.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(schedule.batch_size) {
                let batch: Vec<(Vec<String>, Vec<String>)> = chunk.iter().map(|&i| data[i].clone()).collect();
                opt.set_learning_rate(sched.lr(step));
                let loss = model.batch_loss(&batch)?;
                curve.steps.push(clipped_step(&mut opt, &vars, &loss, schedule.grad_clip, step)?);
                step += 1;
            }
        }
        Ok(curve)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::NotLoaded(format!("{NAME}: nothing to save before training")))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model.store.save(&dir.join(WEIGHTS_FILE))?;
        let manifest = Manifest {
            config: self.config,
            vocab: model.vocab.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

pub(super) fn from_config(config: &BackendConfig, _direction: Direction) -> Result<Box<dyn Seq2SeqBackend>> {
    match &config.backend.checkpoint_path {
        Some(dir) if dir.join(MANIFEST_FILE).exists() => Ok(Box::new(TinySeq2Seq::load(dir)?)),
        Some(dir) => Err(Error::NotLoaded(format!("{NAME}: no checkpoint at {}", dir.display()))),
        None => Ok(Box::new(TinySeq2Seq::new(config.toy.unwrap_or_default()))),
    }
}
