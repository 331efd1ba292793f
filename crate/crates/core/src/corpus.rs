//! Training corpus construction for the infilling model: mask one content
//! word per sentence, corrupt the context, attach definitions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::PosTagger;
use crate::dataset::{save_jsonl, CorruptionFlags, Hyperparams, MaskedInstance};
use crate::dictionary::{glosses, DictClient};
use crate::error::{Error, Result};
use crate::text::{self, Upos, MASK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub p_stopword_drop: f64,
    pub p_lemmatize: f64,
    pub max_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self::from(&Hyperparams::default())
    }
}

impl From<&Hyperparams> for CorpusConfig {
    fn from(hp: &Hyperparams) -> Self {
        Self {
            p_stopword_drop: hp.p_stopword_drop,
            p_lemmatize: hp.p_lemmatize,
            max_len: hp.max_seq_len,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_stopword_drop, self.p_lemmatize] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Indices tagged VERB, ADJ or ADV.
pub fn select_maskable_words<S: AsRef<str>>(tokens: &[S], tags: &[Upos]) -> Result<Vec<usize>> {
    if tokens.len() != tags.len() {
        return Err(Error::invalid(format!(
            "{} tokens but {} tags",
            tokens.len(),
            tags.len()
        )));
    }
    Ok(tags
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_maskable())
        .map(|(i, _)| i)
        .collect())
}

/// Two independent draws: drop every stop word with probability `p_stop`,
/// then lemmatize every remaining token with probability `p_lemma`. The mask
/// token is never touched.
pub fn corrupt<S: AsRef<str>>(
    tokens: &[S],
    rng: &mut impl Rng,
    p_stop: f64,
    p_lemma: f64,
) -> (Vec<String>, CorruptionFlags) {
    let drop = rng.random_bool(p_stop.clamp(0.0, 1.0));
    let lemmatize = rng.random_bool(p_lemma.clamp(0.0, 1.0));
    let out = tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !drop || *t == MASK || !text::is_stopword(t))
        .map(|t| {
            if lemmatize && t != MASK {
                text::lemmatize(t)
            } else {
                t.to_string()
            }
        })
        .collect();
    (
        out,
        CorruptionFlags {
            stopwords_dropped: drop,
            lemmatized: lemmatize,
        },
    )
}

/// Masks `mask_index`, corrupts the rest and fetches definitions for the
/// masked word's lemma. `Ok(None)` when no dictionary has the word.
pub fn build_instance(
    sentence: &str,
    mask_index: usize,
    config: &CorpusConfig,
    client: &DictClient,
    tagger: &dyn PosTagger,
    rng: &mut impl Rng,
) -> Result<Option<MaskedInstance>> {
    let tokens = text::tokenize(sentence);
    let tags = tagger.tag(&tokens);
    build_tagged(&tokens, &tags, mask_index, config, client, rng)
}

fn build_tagged(
    tokens: &[String],
    tags: &[Upos],
    mask_index: usize,
    config: &CorpusConfig,
    client: &DictClient,
    rng: &mut impl Rng,
) -> Result<Option<MaskedInstance>> {
    if !select_maskable_words(tokens, tags)?.contains(&mask_index) {
        return Err(Error::invalid(format!(
            "position {mask_index} is not a maskable word"
        )));
    }
    if tokens.len() > config.max_len {
        return Err(Error::TooLong {
            len: tokens.len(),
            max: config.max_len,
        });
    }
    let pos = tags[mask_index];
    let defs = match client.lookup(&text::lemmatize(&tokens[mask_index]), Some(pos)) {
        Ok(d) => d,
        Err(Error::NotFound(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut masked = tokens.to_vec();
    masked[mask_index] = MASK.to_string();
    let (masked_tokens, flags) = corrupt(&masked, rng, config.p_stopword_drop, config.p_lemmatize);
    let mask_index = masked_tokens
        .iter()
        .position(|t| t == MASK)
        .expect("corrupt keeps the mask");
    let inst = MaskedInstance {
        masked_tokens,
        mask_index,
        pos,
        definitions: glosses(&defs),
        target_text: text::detokenize(tokens),
        flags,
    };
    inst.validate()?;
    Ok(Some(inst))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub instances: usize,
    pub unique_masked_words: usize,
    /// Distinct tags over every token of the emitted sentences.
    pub unique_tags: usize,
    pub masked_tags: BTreeMap<String, usize>,
    pub skipped_no_candidate: usize,
    pub skipped_no_definition: usize,
    pub stopwords_dropped: usize,
    pub lemmatized: usize,
    pub both: usize,
}

impl CorpusStats {
    fn rate(&self, n: usize) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            n as f64 / self.instances as f64
        }
    }

    pub fn stopword_drop_rate(&self) -> f64 {
        self.rate(self.stopwords_dropped)
    }

    pub fn lemmatize_rate(&self) -> f64 {
        self.rate(self.lemmatized)
    }

    pub fn joint_rate(&self) -> f64 {
        self.rate(self.both)
    }
}

enum Outcome {
    Instance(MaskedInstance, String, Vec<Upos>),
    NoCandidate,
    NoDefinition,
}

/// Per-sentence stream: sentence `i` always draws from stream `i` of the
/// master seed, so results do not depend on scheduling.
fn sentence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One instance per usable sentence, in input order, plus exact stats.
pub fn build_corpus<S: AsRef<str> + Sync>(
    sentences: &[S],
    config: &CorpusConfig,
    client: &DictClient,
    tagger: &dyn PosTagger,
    seed: u64,
) -> Result<(Vec<MaskedInstance>, CorpusStats)> {
    config.validate()?;
    let outcomes: Vec<Result<Outcome>> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sentence_rng(seed, i);
            let tokens = text::tokenize(s.as_ref());
            if tokens.is_empty() || tokens.len() > config.max_len {
                return Ok(Outcome::NoCandidate);
            }
            let tags = tagger.tag(&tokens);
            let candidates = select_maskable_words(&tokens, &tags)?;
            if candidates.is_empty() {
                return Ok(Outcome::NoCandidate);
            }
            let idx = candidates[rng.random_range(0..candidates.len())];
            Ok(match build_tagged(&tokens, &tags, idx, config, client, &mut rng)? {
                Some(inst) => Outcome::Instance(inst, text::lemmatize(&tokens[idx]), tags),
                None => Outcome::NoDefinition,
            })
        })
        .collect();

    let mut stats = CorpusStats {
        sentences: sentences.len(),
        ..CorpusStats::default()
    };
    let mut words = BTreeSet::new();
    let mut tags_seen = BTreeSet::new();
    let mut instances = Vec::new();
    for outcome in outcomes {
        match outcome? {
            Outcome::Instance(inst, word, tags) => {
                words.insert(word);
                tags_seen.extend(tags);
                *stats.masked_tags.entry(inst.pos.to_string()).or_default() += 1;
                stats.stopwords_dropped += inst.flags.stopwords_dropped as usize;
                stats.lemmatized += inst.flags.lemmatized as usize;
                stats.both += (inst.flags.stopwords_dropped && inst.flags.lemmatized) as usize;
                instances.push(inst);
            }
            Outcome::NoCandidate => stats.skipped_no_candidate += 1,
            Outcome::NoDefinition => stats.skipped_no_definition += 1,
        }
    }
    stats.instances = instances.len();
    stats.unique_masked_words = words.len();
    stats.unique_tags = tags_seen.len();
    Ok((instances, stats))
}

/// Writes the corpus JSONL and a pretty JSON stats file next to it.
pub fn write_corpus(instances: &[MaskedInstance], stats: &CorpusStats, corpus: &Path, stats_path: &Path) -> Result<()> {
    save_jsonl(instances, corpus)?;
    let json = serde_json::to_string_pretty(stats)?;
    std::fs::write(stats_path, json + "\n").map_err(|e| Error::io(stats_path, e))
}
