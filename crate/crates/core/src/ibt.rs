//! Iterative back-translation: train ISP/ISG on the parallel set, translate
//! the monolingual idiomatic set there and back, keep the pairs that pass both
//! selection rules, grow the parallel set and repeat.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{
    fine_tune, generate, BackendConfig, BackendRegistry, DecodeParams, Direction, LossCurve, Seq2SeqBackend,
    TrainSchedule,
};
use crate::backends::embed::stable_hash;
use crate::dataset::{CandidateTriple, IdiomaticRecord, LiteralSentence, ParallelPair, SourceTag};
use crate::error::{Error, Result};
use crate::text;

/// Whether `sentence` contains the idiom as a contiguous lemma sequence.
/// `idiom_lemma` is a space-joined lemma key (see [`text::lemma_key`]).
pub fn contains_idiom(sentence: &str, idiom_lemma: &str) -> bool {
    let needle: Vec<&str> = idiom_lemma.split_whitespace().collect();
    if needle.is_empty() {
        return false;
    }
    let hay: Vec<String> = text::tokenize(sentence).iter().map(|t| text::lemmatize(t)).collect();
    hay.windows(needle.len()).any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

fn normalize(s: &str) -> String {
    let lower = s.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | '!' | '?' | ';' | ':' | ','))
        .to_string()
}

/// Equality up to case, whitespace runs and terminal punctuation.
pub fn roundtrip_equal(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub candidates: usize,
    pub kept: usize,
    /// Literal hypothesis still contains the idiom.
    pub rejected_rule1: usize,
    /// Roundtrip differs from the original (or generation failed).
    pub rejected_rule2: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub kept: Vec<ParallelPair>,
    /// Index into the candidate list of each kept pair.
    pub kept_indices: Vec<usize>,
    pub stats: SelectionStats,
}

/// Applies rule 1 then rule 2; a candidate failing both counts under rule 1.
/// Kept pairs are tagged `augmented-iter-{iteration}`.
pub fn select_data(candidates: &[CandidateTriple], iteration: u32) -> Selection {
    let mut sel = Selection {
        stats: SelectionStats {
            candidates: candidates.len(),
            ..Default::default()
        },
        ..Default::default()
    };
    for (i, c) in candidates.iter().enumerate() {
        let sentence = &c.original.sentence;
        if contains_idiom(&c.literal_hyp, &sentence.idiom_lemma) {
            sel.stats.rejected_rule1 += 1;
        } else if !c.is_complete() || !roundtrip_equal(&c.roundtrip, &sentence.text) {
            sel.stats.rejected_rule2 += 1;
        } else {
            sel.kept.push(ParallelPair::new(
                sentence.clone(),
                LiteralSentence::new(c.literal_hyp.clone()),
                c.original.idiom.clone(),
                SourceTag::Augmented(iteration),
            ));
            sel.kept_indices.push(i);
        }
    }
    sel.stats.kept = sel.kept.len();
    sel
}

/// Seed of item `index` in stream `tag`. Rounds train with
/// `item_seed(seed, "train", n)` and generate with
/// `item_seed(seed, "generate", n)`; inside [`generate_candidates`] item `i`
/// decodes with `item_seed(g, "isp", i)` and `item_seed(g, "isg", i)`.
pub fn item_seed(seed: u64, tag: &str, index: usize) -> u64 {
    stable_hash(&[&seed.to_string(), tag, &index.to_string()])
}

/// `I_M → ISP → Ŝ_M → ISG → Î_M` for every input, in input order. A failed
/// generation leaves the affected texts empty.
pub fn generate_candidates(
    isp: &dyn Seq2SeqBackend,
    isg: &dyn Seq2SeqBackend,
    idiomatic: &[IdiomaticRecord],
    decode: &DecodeParams,
    seed: u64,
) -> Vec<CandidateTriple> {
    idiomatic
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let literal_hyp = generate(isp, &rec.sentence.tokens, decode, item_seed(seed, "isp", i)).unwrap_or_default();
            let roundtrip = if literal_hyp.trim().is_empty() {
                String::new()
            } else {
                generate(isg, &text::tokenize(&literal_hyp), decode, item_seed(seed, "isg", i)).unwrap_or_default()
            };
            CandidateTriple {
                original: rec.clone(),
                literal_hyp,
                roundtrip,
            }
        })
        .collect()
}

/// Source of fresh (pretrained-state) backends.
pub trait BackendFactory: Sync {
    fn create(&self, direction: Direction) -> Result<Box<dyn Seq2SeqBackend>>;
}

impl<F> BackendFactory for F
where
    F: Fn(Direction) -> Result<Box<dyn Seq2SeqBackend>> + Sync,
{
    fn create(&self, direction: Direction) -> Result<Box<dyn Seq2SeqBackend>> {
        self(direction)
    }
}

/// Builds backends through a registry from one config per direction.
pub struct RegistryFactory {
    pub registry: BackendRegistry,
    pub isp: BackendConfig,
    pub isg: BackendConfig,
}

impl BackendFactory for RegistryFactory {
    fn create(&self, direction: Direction) -> Result<Box<dyn Seq2SeqBackend>> {
        let config = match direction {
            Direction::Isp => &self.isp,
            Direction::Isg => &self.isg,
        };
        self.registry.create(config, direction)
    }
}

pub struct PairModels {
    pub isp: Box<dyn Seq2SeqBackend>,
    pub isg: Box<dyn Seq2SeqBackend>,
}

impl fmt::Debug for PairModels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairModels")
            .field("isp", &self.isp.name())
            .field("isg", &self.isg.name())
            .finish()
    }
}

fn directed(pairs: &[ParallelPair], direction: Direction) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|p| match direction {
            Direction::Isp => (p.idiomatic.text.clone(), p.literal.text.clone()),
            Direction::Isg => (p.literal.text.clone(), p.idiomatic.text.clone()),
        })
        .collect()
}

/// Fine-tunes existing ISP/ISG models on `pairs` (idiomatic → literal and
/// literal → idiomatic). Returns the two loss curves.
pub fn fine_tune_pair(
    models: &mut PairModels,
    pairs: &[ParallelPair],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(LossCurve, LossCurve)> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot train on an empty parallel set"));
    }
    let isp = fine_tune(models.isp.as_mut(), &directed(pairs, Direction::Isp), schedule, item_seed(seed, "isp", 0))?;
    let isg = fine_tune(models.isg.as_mut(), &directed(pairs, Direction::Isg), schedule, item_seed(seed, "isg", 0))?;
    Ok((isp, isg))
}

/// Two independent fresh backends trained on `pairs`.
pub fn train_pair_models(
    pairs: &[ParallelPair],
    factory: &dyn BackendFactory,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(PairModels, LossCurve, LossCurve)> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot train on an empty parallel set"));
    }
    let mut models = PairModels {
        isp: factory.create(Direction::Isp)?,
        isg: factory.create(Direction::Isg)?,
    };
    let (a, b) = fine_tune_pair(&mut models, pairs, schedule, seed)?;
    Ok((models, a, b))
}

/// Whether each training round starts from the factory's pristine backends
/// or continues from the previous round's weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrainMode {
    #[default]
    Fresh,
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbtConfig {
    pub iterations: usize,
    pub mode: RetrainMode,
    pub schedule: TrainSchedule,
    pub decode: DecodeParams,
    pub seed: u64,
}

impl Default for IbtConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            mode: RetrainMode::Fresh,
            schedule: TrainSchedule::default(),
            decode: DecodeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// 1-based.
    pub iteration: usize,
    pub parallel_before: usize,
    pub parallel_after: usize,
    pub remaining_before: usize,
    pub remaining_after: usize,
    #[serde(flatten)]
    pub selection: SelectionStats,
    pub isp_final_loss: Option<f64>,
    pub isg_final_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IbtState {
    /// Completed iterations.
    pub iteration: usize,
    pub parallel: Vec<ParallelPair>,
    pub remaining: Vec<IdiomaticRecord>,
    pub stats: Vec<IterationStats>,
}

#[derive(Debug)]
pub struct IbtOutcome {
    pub models: PairModels,
    pub state: IbtState,
}

/// A failed run: the error plus the state after the last completed iteration.
#[derive(Debug)]
pub struct IbtAbort {
    pub state: IbtState,
    pub error: Error,
}

impl fmt::Display for IbtAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "aborted after {} iteration(s): {}", self.state.iteration, self.error)
    }
}

impl std::error::Error for IbtAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn train_round(
    models: Option<PairModels>,
    parallel: &[ParallelPair],
    factory: &dyn BackendFactory,
    config: &IbtConfig,
    round: usize,
) -> Result<(PairModels, LossCurve, LossCurve)> {
    let seed = item_seed(config.seed, "train", round);
    match (config.mode, models) {
        (RetrainMode::Continue, Some(mut m)) => {
            let (a, b) = fine_tune_pair(&mut m, parallel, &config.schedule, seed)?;
            Ok((m, a, b))
        }
        _ => train_pair_models(parallel, factory, &config.schedule, seed),
    }
}

/// Runs `config.iterations` rounds of train → generate → select → grow, then
/// trains the returned models on the final parallel set. `observer` sees the
/// stats of every finished iteration.
pub fn run_ibt(
    seed_pairs: Vec<ParallelPair>,
    idiomatic: Vec<IdiomaticRecord>,
    factory: &dyn BackendFactory,
    config: &IbtConfig,
    mut observer: impl FnMut(&IterationStats),
) -> std::result::Result<IbtOutcome, Box<IbtAbort>> {
    let mut state = IbtState {
        iteration: 0,
        parallel: seed_pairs,
        remaining: idiomatic,
        stats: Vec::new(),
    };
    let mut models = None;
    for n in 1..=config.iterations {
        let (m, isp_curve, isg_curve) = match train_round(models.take(), &state.parallel, factory, config, n) {
            Ok(r) => r,
            Err(error) => return Err(Box::new(IbtAbort { state, error })),
        };
        let candidates = generate_candidates(
            m.isp.as_ref(),
            m.isg.as_ref(),
            &state.remaining,
            &config.decode,
            item_seed(config.seed, "generate", n),
        );
        let selection = select_data(&candidates, n as u32);
        let (parallel_before, remaining_before) = (state.parallel.len(), state.remaining.len());
        let mut taken = vec![false; state.remaining.len()];
        for &i in &selection.kept_indices {
            taken[i] = true;
        }
        let mut flags = taken.into_iter();
        state.remaining.retain(|_| !flags.next().unwrap());
        state.parallel.extend(selection.kept);
        state.iteration = n;
        let stats = IterationStats {
            iteration: n,
            parallel_before,
            parallel_after: state.parallel.len(),
            remaining_before,
            remaining_after: state.remaining.len(),
            selection: selection.stats,
            isp_final_loss: isp_curve.last(),
            isg_final_loss: isg_curve.last(),
        };
        observer(&stats);
        state.stats.push(stats);
        models = Some(m);
    }
    match train_round(models, &state.parallel, factory, config, config.iterations + 1) {
        Ok((models, _, _)) => Ok(IbtOutcome { models, state }),
        Err(error) => Err(Box::new(IbtAbort { state, error })),
    }
}
