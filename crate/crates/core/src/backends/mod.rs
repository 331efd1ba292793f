//! Narrow interfaces for every learned component, with deterministic toy
//! implementations and a registry through which pretrained adapters are
//! loaded by name.

pub mod decode;
pub mod embed;
pub mod lexicon;
pub mod lm;
pub mod nn;
pub mod seq2seq;
pub mod tagger;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::Hyperparams;
use crate::error::{Error, Result};
use crate::text::Upos;

pub use decode::DecodeParams;
pub use embed::{HashEmbedder, ToyEncoder};
pub use lexicon::ToyLexiconBackend;
pub use lm::{BigramLm, UniformLm};
pub use seq2seq::{TinySeq2Seq, TinySeq2SeqConfig};
pub use tagger::LexiconTagger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub embedding_dim: usize,
    pub max_len: usize,
    pub trainable: bool,
}

/// Optimization settings for one fine-tuning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub grad_clip: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self::ibt(&Hyperparams::default())
    }
}

impl TrainSchedule {
    /// Back-translation models: only lr and length are fixed upstream.
    pub fn ibt(hp: &Hyperparams) -> Self {
        Self {
            lr: hp.ibt_lr,
            warmup_steps: 0,
            batch_size: hp.batch_size,
            epochs: hp.ucd_epochs,
            max_len: hp.max_seq_len,
            grad_clip: 1.0,
        }
    }

    pub fn ucd(hp: &Hyperparams) -> Self {
        Self {
            lr: hp.ucd_lr,
            warmup_steps: hp.warmup_steps,
            batch_size: hp.batch_size,
            epochs: hp.ucd_epochs,
            max_len: hp.max_seq_len,
            grad_clip: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub steps: Vec<f64>,
}

impl LossCurve {
    pub fn initial(&self) -> Option<f64> {
        self.steps.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.steps.last().copied()
    }

    /// Mean over the first / last `window` steps, for noisy curves.
    pub fn head_mean(&self, window: usize) -> Option<f64> {
        mean(self.steps.iter().take(window))
    }

    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        mean(self.steps.iter().rev().take(window))
    }

    pub fn is_finite(&self) -> bool {
        self.steps.iter().all(|x| x.is_finite())
    }
}

fn mean<'a>(xs: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// A sequence-to-sequence model over domain tokens.
pub trait Seq2SeqBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Deterministic for fixed `(input, decode, seed)`.
    fn generate(&self, input: &[String], decode: &DecodeParams, seed: u64) -> Result<String>;

    fn fine_tune(
        &mut self,
        pairs: &[(String, String)],
        schedule: &TrainSchedule,
        seed: u64,
    ) -> Result<LossCurve>;

    fn save(&self, dir: &Path) -> Result<()>;
}

/// Validates the length contract, then delegates to the backend.
pub fn generate(
    backend: &dyn Seq2SeqBackend,
    input: &[String],
    decode: &DecodeParams,
    seed: u64,
) -> Result<String> {
    let max = backend.capabilities().max_len;
    if input.len() > max {
        return Err(Error::TooLong {
            len: input.len(),
            max,
        });
    }
    backend.generate(input, decode, seed)
}

pub fn fine_tune(
    backend: &mut dyn Seq2SeqBackend,
    pairs: &[(String, String)],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<LossCurve> {
    if !backend.capabilities().trainable {
        return Err(Error::NotTrainable(backend.name().to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("cannot fine-tune on an empty pair list"));
    }
    schedule.validate()?;
    let curve = backend.fine_tune(pairs, schedule, seed)?;
    if !curve.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: curve.steps.iter().position(|x| !x.is_finite()).unwrap_or(0),
            diagnostics: "loss curve contains non-finite values".into(),
        });
    }
    Ok(curve)
}

/// Maps a sentence to a fixed-width vector.
pub trait SentenceEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// `(texts.len(), dim)` matrix; row `i` depends only on `texts[i]`.
pub fn embed_sentences<S: AsRef<str>>(embedder: &dyn SentenceEmbedder, texts: &[S]) -> Result<Tensor> {
    let dim = embedder.dim();
    let mut data = Vec::with_capacity(texts.len() * dim);
    for t in texts {
        let v = embedder.embed(t.as_ref())?;
        debug_assert_eq!(v.len(), dim);
        data.extend(v);
    }
    Ok(Tensor::from_vec(data, (texts.len(), dim), &Device::Cpu)?)
}

/// Frozen contextual encoder producing one row per input token.
pub trait ContextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> Result<Tensor>;
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<Upos>;
}

pub fn pos_tag(tagger: &dyn PosTagger, tokens: &[String]) -> Vec<Upos> {
    let tags = tagger.tag(tokens);
    debug_assert_eq!(tags.len(), tokens.len());
    tags
}

pub trait LmScorer: Send + Sync {
    fn vocab_size(&self) -> usize;
    /// Natural-log probability of each token.
    fn score(&self, text: &str) -> Result<Vec<f64>>;
}

pub fn lm_score(scorer: &dyn LmScorer, text: &str) -> Result<Vec<f64>> {
    scorer.score(text)
}

// ---------------------------------------------------------------------------
// Config and registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSection {
    pub name: String,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default = "default_device")]
    pub device: String,
}

fn default_device() -> String {
    "cpu".into()
}

/// Backend config file (TOML): `backend.name`, `backend.checkpoint_path`,
/// `backend.device`, `decode.*`, `seed`, plus optional toy-model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend: BackendSection,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Option<TrainSchedule>,
    #[serde(default)]
    pub toy: Option<TinySeq2SeqConfig>,
    #[serde(default)]
    pub error_rate: Option<f64>,
}

impl BackendConfig {
    pub fn named(name: &str) -> Self {
        Self {
            backend: BackendSection {
                name: name.into(),
                checkpoint_path: None,
                device: default_device(),
            },
            decode: DecodeParams::default(),
            seed: 0,
            schedule: None,
            toy: None,
            error_rate: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Which way a back-translation model translates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// idiomatic → literal
    Isp,
    /// literal → idiomatic
    Isg,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Isp => "isp",
            Direction::Isg => "isg",
        }
    }
}

pub type BackendCtor = fn(&BackendConfig, Direction) -> Result<Box<dyn Seq2SeqBackend>>;

/// Name → constructor table. The toy backends are registered by default;
/// pretrained adapters register under their own names.
#[derive(Clone)]
pub struct BackendRegistry {
    ctors: BTreeMap<String, BackendCtor>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            ctors: BTreeMap::new(),
        };
        r.register(lexicon::NAME, lexicon::from_config);
        r.register(seq2seq::NAME, seq2seq::from_config);
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &str, ctor: BackendCtor) {
        self.ctors.insert(name.to_string(), ctor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }

    pub fn create(&self, config: &BackendConfig, direction: Direction) -> Result<Box<dyn Seq2SeqBackend>> {
        if config.backend.device != "cpu" {
            return Err(Error::Config(format!(
                "device `{}` is not available; only `cpu` is supported",
                config.backend.device
            )));
        }
        let ctor = self.ctors.get(&config.backend.name).ok_or_else(|| {
            Error::NotLoaded(format!(
                "no adapter registered for backend `{}` (known: {})",
                config.backend.name,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        ctor(config, direction)
    }
}
