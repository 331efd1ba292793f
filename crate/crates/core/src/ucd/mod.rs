//! Unsupervised definition-conditioned infilling: frozen context encoder and
//! sentence embedder, trainable fusion stage and pointer decoder, and
//! zero-shot idiom paraphrasing by masking the idiom span.

pub mod fusion;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::decode::decode;
use crate::backends::nn::{
    clipped_step, ext_vocab_size, ids_to_words, CopySource, DecoderDims, DecoderMemory, LinearWarmup, ParamStore,
    PointerDecoder, PointerStepper, TargetBatch, Vocab,
};
use crate::backends::{
    embed_sentences, ContextEncoder, DecodeParams, HashEmbedder, LossCurve, PosTagger, SentenceEmbedder, ToyEncoder,
    TrainSchedule,
};
use crate::dataset::{IdiomaticSentence, JsonlRecord, LiteralSentence, MaskedInstance};
use crate::dictionary::{glosses, DictClient, MAX_DEFINITIONS};
use crate::error::{Error, Result};
use crate::text::{self, Upos, MASK, SEP};

pub use fusion::{
    attend_batch, attend_definitions, fuse_batch, fuse_definition, gather_rows, mask_one_hot, splice_batch,
    splice_embedding, FusionDims, FusionParams,
};

pub const FUSION_FILE: &str = "fusion.safetensors";
pub const DECODER_FILE: &str = "decoder.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Decoder-input word dropout during training.
const WORD_DROPOUT: f64 = 0.1;
/// Share of context words treated as unknown during training.
const HIDE_RATE: f64 = 0.15;
/// Standard deviation of the training-time context feature noise.
const CONTEXT_NOISE: f64 = 0.3;

/// `(L + 2, D^B)` encoder output for `[masked tokens, <sep>, TAG]`.
#[derive(Debug, Clone)]
pub struct ContextEmbeddings {
    pub matrix: Tensor,
    pub mask_index: usize,
}

/// `(N, D^S)` sentence embeddings of the definitions.
#[derive(Debug, Clone)]
pub struct DefinitionEmbeddings {
    pub matrix: Tensor,
}

/// Encoder input: the masked sentence, a separator and the tag's name.
pub fn encoder_tokens<S: AsRef<str>>(masked_tokens: &[S], pos: Upos) -> Vec<String> {
    let mut out: Vec<String> = masked_tokens.iter().map(|t| t.as_ref().to_string()).collect();
    out.push(SEP.to_string());
    out.push(pos.long_name().to_string());
    out
}

pub fn embedding_stage(
    instance: &MaskedInstance,
    encoder: &dyn ContextEncoder,
    embedder: &dyn SentenceEmbedder,
) -> Result<(ContextEmbeddings, DefinitionEmbeddings)> {
    instance.validate()?;
    let tokens = encoder_tokens(&instance.masked_tokens, instance.pos);
    if tokens.len() > encoder.max_len() {
        return Err(Error::TooLong {
            len: tokens.len(),
            max: encoder.max_len(),
        });
    }
    let defs: Vec<&String> = instance.definitions.iter().take(MAX_DEFINITIONS).collect();
    Ok((
        ContextEmbeddings {
            matrix: encoder.encode(&tokens)?,
            mask_index: instance.mask_index,
        },
        DefinitionEmbeddings {
            matrix: embed_sentences(embedder, &defs)?,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcdConfig {
    /// D^B
    pub context_dim: usize,
    /// D^S
    pub definition_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_vocab: usize,
    pub max_len: usize,
}

impl Default for UcdConfig {
    fn default() -> Self {
        Self {
            context_dim: 64,
            definition_dim: 32,
            embed_dim: 32,
            hidden_dim: 96,
            max_vocab: 512,
            max_len: 128,
        }
    }
}

/// Frozen-side tensors of one instance, computed once.
#[derive(Debug, Clone)]
struct Prepared {
    context: Tensor,
    definitions: Tensor,
    mask_index: usize,
    source: CopySource,
    target: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: UcdConfig,
    encoder: ToyEncoder,
    embedder: HashEmbedder,
    vocab: Vocab,
    seed: u64,
    corpus_hash: String,
}

/// A trained (or freshly initialized) infilling model.
#[derive(Debug)]
pub struct UcdModel {
    pub config: UcdConfig,
    pub encoder: ToyEncoder,
    pub embedder: HashEmbedder,
    vocab: Vocab,
    store: ParamStore,
    fusion: FusionParams,
    decoder: PointerDecoder,
    seed: u64,
    corpus_hash: String,
}

impl UcdModel {
    pub fn new(config: UcdConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(DType::F32);
        let fusion = FusionParams::new(
            &mut store,
            FusionDims {
                context: config.context_dim,
                definition: config.definition_dim,
            },
            &mut rng,
        )?;
        let decoder = PointerDecoder::new(
            &mut store,
            "dec",
            DecoderDims {
                vocab: vocab.len(),
                embed: config.embed_dim,
                memory: config.context_dim,
                hidden: config.hidden_dim,
            },
            &mut rng,
        )?;
        Ok(Self {
            encoder: ToyEncoder::new(config.context_dim, config.max_len),
            embedder: HashEmbedder::new(config.definition_dim),
            config,
            vocab,
            store,
            fusion,
            decoder,
            seed,
            corpus_hash: String::new(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    /// With `hide`, some context words are treated as unknown so the decoder
    /// learns to copy words it cannot generate.
    fn prepare(&self, inst: &MaskedInstance, hide: Option<&mut ChaCha8Rng>) -> Result<Prepared> {
        let (ctx, defs) = embedding_stage(inst, &self.encoder, &self.embedder)?;
        let tokens = encoder_tokens(&inst.masked_tokens, inst.pos);
        let mut hidden = HashSet::new();
        if let Some(rng) = hide {
            for t in &inst.masked_tokens {
                if t != MASK && !text::is_punct(t) && rng.random_bool(HIDE_RATE) {
                    hidden.insert(t.clone());
                }
            }
        }
        Ok(Prepared {
            context: ctx.matrix.to_dtype(DType::F32)?,
            definitions: (defs.matrix * (self.config.definition_dim as f64).sqrt())?.to_dtype(DType::F32)?,
            mask_index: ctx.mask_index,
            source: CopySource::with_unknown(&self.vocab, &tokens, |t| hidden.contains(t)),
            target: text::tokenize(&inst.target_text),
        })
    }

    /// Runs the fusion stage for a batch and wraps the spliced contexts as
    /// decoder memory.
    /// With `noise`, the frozen context features are perturbed (training only).
    fn memory(&self, batch: &[&Prepared], noise: Option<&mut ChaCha8Rng>) -> Result<DecoderMemory> {
        let device = Device::Cpu;
        let dt = DType::F32;
        let l = batch.iter().map(|p| p.context.dim(0)).collect::<candle_core::Result<Vec<_>>>()?;
        let n = batch.iter().map(|p| p.definitions.dim(0)).collect::<candle_core::Result<Vec<_>>>()?;
        let (l_max, n_max) = (*l.iter().max().unwrap(), *n.iter().max().unwrap());
        let pad = |t: &Tensor, len: usize, max: usize| -> Result<Tensor> {
            if len == max {
                return Ok(t.clone());
            }
            let z = Tensor::zeros((max - len, t.dim(1)?), dt, &device)?;
            Ok(Tensor::cat(&[t, &z], 0)?)
        };
        let ctx = Tensor::stack(
            &batch.iter().zip(&l).map(|(p, &len)| pad(&p.context, len, l_max)).collect::<Result<Vec<_>>>()?,
            0,
        )?;
        let ctx = match noise {
            Some(rng) => {
                let a = CONTEXT_NOISE * 3f64.sqrt();
                let data: Vec<f32> = (0..ctx.elem_count()).map(|_| rng.random_range(-a..a) as f32).collect();
                (&ctx + Tensor::from_vec(data, ctx.shape(), &device)?)?
            }
            None => ctx,
        };
        let defs = Tensor::stack(
            &batch.iter().zip(&n).map(|(p, &len)| pad(&p.definitions, len, n_max)).collect::<Result<Vec<_>>>()?,
            0,
        )?;
        let mut bias = vec![0f32; batch.len() * n_max];
        for (b, &len) in n.iter().enumerate() {
            for j in len..n_max {
                bias[b * n_max + j] = -1e9;
            }
        }
        let def_bias = Tensor::from_vec(bias, (batch.len(), 1, n_max), &device)?;
        let masks: Vec<usize> = batch.iter().map(|p| p.mask_index).collect();
        let one_hot = mask_one_hot(&masks, l_max, dt, &device)?;
        let e_w = gather_rows(&ctx, &one_hot)?;
        let (_, pooled) = attend_batch(&defs, &def_bias, &e_w, &self.fusion.w_a)?;
        let fused = fuse_batch(&pooled, &e_w, &self.fusion)?;
        let spliced = splice_batch(&ctx, &one_hot, &fused)?;
        let sources: Vec<CopySource> = batch.iter().map(|p| p.source.clone()).collect();
        let ids: Vec<Vec<u32>> = sources.iter().map(|s| s.ids.clone()).collect();
        DecoderMemory::new(spliced, &l, &ids, ext_vocab_size(&self.vocab, &sources))
    }

    fn batch_loss(&self, batch: &[&Prepared], rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mem = self.memory(batch, Some(&mut *rng))?;
        let sources: Vec<CopySource> = batch.iter().map(|p| p.source.clone()).collect();
        let targets: Vec<Vec<String>> = batch.iter().map(|p| p.target.clone()).collect();
        let mut tb = TargetBatch::new(&self.vocab, &sources, &targets, DType::F32)?;
        tb.drop_words(WORD_DROPOUT, rng)?;
        self.decoder.loss(&mem, &tb.prev, &tb.next, &tb.mask)
    }

    /// Decodes the filled sentence for one instance.
    pub fn fill(&self, instance: &MaskedInstance, params: &DecodeParams, seed: u64) -> Result<String> {
        let prepared = self.prepare(instance, None)?;
        let memory = self.memory(&[&prepared], None)?;
        let stepper = PointerStepper {
            decoder: &self.decoder,
            memory,
        };
        let ids = decode(&stepper, params, seed)?;
        Ok(text::detokenize(&ids_to_words(&self.vocab, &prepared.source, &ids)))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save_matching(&dir.join(FUSION_FILE), "fusion.")?;
        self.store.save_matching(&dir.join(DECODER_FILE), "dec.")?;
        let manifest = Manifest {
            config: self.config,
            encoder: self.encoder,
            embedder: self.embedder,
            vocab: self.vocab.clone(),
            seed: self.seed,
            corpus_hash: self.corpus_hash.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        manifest.vocab.rebuild_index();
        let mut model = Self::new(manifest.config, manifest.vocab, manifest.seed)?;
        model.encoder = manifest.encoder;
        model.embedder = manifest.embedder;
        model.corpus_hash = manifest.corpus_hash;
        model
            .store
            .load_many(&[&dir.join(FUSION_FILE), &dir.join(DECODER_FILE)])?;
        Ok(model)
    }
}

/// SHA-256 over the canonical JSONL rows of a corpus.
pub fn corpus_hash(instances: &[MaskedInstance]) -> Result<String> {
    let mut h = Sha256::new();
    for inst in instances {
        h.update(serde_json::to_vec(&inst.to_row())?);
        h.update(b"\n");
    }
    Ok(format!("{:x}", h.finalize()))
}

fn build_vocab(instances: &[MaskedInstance], max: usize) -> Vocab {
    let mut words: Vec<String> = Vec::new();
    for inst in instances {
        words.extend(text::tokenize(&inst.target_text));
        words.extend(encoder_tokens(&inst.masked_tokens, inst.pos));
    }
    Vocab::build(words.iter().map(String::as_str), max)
}

/// Trains fusion and decoder with teacher forcing; encoder and embedder stay
/// frozen. Aborts with the offending batch's targets on a non-finite loss.
pub fn train_ucd(
    instances: &[MaskedInstance],
    config: &UcdConfig,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(UcdModel, LossCurve)> {
    if instances.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    schedule.validate()?;
    let mut model = UcdModel::new(*config, build_vocab(instances, config.max_vocab), seed)?;
    model.corpus_hash = corpus_hash(instances)?;
    let curve = continue_training(&model, instances, schedule, seed)?;
    Ok((model, curve))
}

/// More optimization steps on an existing model.
pub fn continue_training(
    model: &UcdModel,
    instances: &[MaskedInstance],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<LossCurve> {
    let mut hide_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x41de);
    let prepared: Vec<Prepared> = instances
        .iter()
        .map(|i| model.prepare(i, Some(&mut hide_rng)))
        .collect::<Result<_>>()?;
    let vars = model.store.vars();
    let steps_per_epoch = prepared.len().div_ceil(schedule.batch_size);
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
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0cd);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut curve = LossCurve::default();
    let mut step = 0;
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            opt.set_learning_rate(sched.lr(step));
            let loss = model.batch_loss(&batch, &mut rng)?;
            let value = clipped_step(&mut opt, &vars, &loss, schedule.grad_clip, step).map_err(|e| match e {
                Error::NonFiniteLoss { step, diagnostics } => Error::NonFiniteLoss {
                    step,
                    diagnostics: format!(
                        "{diagnostics}; batch targets: {:?}",
                        chunk.iter().map(|&i| &instances[i].target_text).collect::<Vec<_>>()
                    ),
                },
                other => other,
            })?;
            curve.steps.push(value);
            step += 1;
        }
    }
    Ok(curve)
}

/// Fraction of instances whose decoded fill equals the target exactly.
pub fn mask_fill_accuracy(model: &UcdModel, instances: &[MaskedInstance], params: &DecodeParams) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for inst in instances {
        if model.fill(inst, params, 0)? == inst.target_text {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}

/// The instance an idiomatic sentence becomes at inference: idiom span
/// collapsed to one mask, tag predicted at the mask, idiom glosses attached.
pub fn inference_instance(
    sentence: &IdiomaticSentence,
    client: &DictClient,
    tagger: &dyn PosTagger,
) -> Result<MaskedInstance> {
    let (start, end) = (sentence.span.start(), sentence.span.end());
    let mut masked: Vec<String> = sentence.tokens[..start].to_vec();
    masked.push(MASK.to_string());
    masked.extend_from_slice(&sentence.tokens[end..]);
    let tags = tagger.tag(&masked);
    let pos = match tags[start] {
        t if t.is_maskable() => t,
        _ => Upos::Adj,
    };
    let defs = client.lookup_idiom(&sentence.idiom_lemma)?;
    Ok(MaskedInstance {
        masked_tokens: masked,
        mask_index: start,
        pos,
        definitions: glosses(&defs),
        target_text: sentence.text.clone(),
        flags: Default::default(),
    })
}

/// Zero-shot idiomatic → literal paraphrase.
pub fn infer_paraphrase(
    model: &UcdModel,
    sentence: &IdiomaticSentence,
    client: &DictClient,
    tagger: &dyn PosTagger,
    params: &DecodeParams,
    seed: u64,
) -> Result<LiteralSentence> {
    let inst = inference_instance(sentence, client, tagger)?;
    Ok(LiteralSentence::new(model.fill(&inst, params, seed)?))
}
