//! Seeded synthetic corpora for the toy pipeline: a 20-idiom lexicon world
//! for back-translation, a definition-substitution world for the infilling
//! model, and plain sentence fixtures for corpus construction and LMs.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    CorruptionFlags, IdiomSpan, IdiomaticRecord, IdiomaticSentence, LiteralSentence, MaskedInstance, ParallelPair,
    SourceTag,
};
use crate::error::Result;
use crate::text::{self, Upos, MASK};

/// `(idiom, literal)`; the first ten describe states, the rest actions.
pub const IBT_LEXICON: [(&str, &str); 20] = [
    ("behind bars", "in prison"),
    ("over the moon", "very happy"),
    ("under the weather", "slightly ill"),
    ("in hot water", "in serious trouble"),
    ("on thin ice", "at great risk"),
    ("in the dark", "not informed"),
    ("up in the air", "still undecided"),
    ("on cloud nine", "extremely pleased"),
    ("at sixes and sevens", "totally confused"),
    ("down in the dumps", "rather sad"),
    ("spilled the beans", "revealed the secret"),
    ("broke the ice", "eased the tension"),
    ("hit the sack", "went to bed"),
    ("kicked the bucket", "passed away"),
    ("bit the bullet", "accepted the pain"),
    ("jumped the gun", "acted too early"),
    ("let off steam", "released anger"),
    ("pulled strings", "used influence"),
    ("threw in the towel", "gave up"),
    ("burned the midnight oil", "worked late"),
];
const STATE_IDIOMS: usize = 10;

const NAMES: [&str; 12] = [
    "Anna", "Ben", "Carla", "David", "Elena", "Frank", "Grace", "Hugo", "Iris", "Jack", "Karen", "Leo",
];
const STATE_VERBS: [&str; 4] = ["is", "was", "remained", "seemed"];
const TAILS: [&str; 8] = [
    "",
    "yesterday",
    "last night",
    "again",
    "after the meeting",
    "at the party",
    "this morning",
    "before dinner",
];

pub fn lexicon_pairs() -> Vec<(String, String)> {
    IBT_LEXICON
        .iter()
        .map(|(i, l)| (i.to_string(), l.to_string()))
        .collect()
}

/// Builds `(idiomatic sentence, literal sentence)` for one template slot.
fn lexicon_sentence(entry: usize, name: &str, verb: Option<&str>, tail: &str) -> (String, IdiomSpan, String) {
    let (idiom, literal) = IBT_LEXICON[entry];
    let mut head = vec![name.to_string()];
    if let Some(v) = verb {
        head.push(v.to_string());
    }
    let tail: Vec<&str> = tail.split_whitespace().collect();
    let render = |phrase: &str| {
        let mut toks: Vec<String> = head.clone();
        toks.extend(text::tokenize(phrase));
        toks.extend(tail.iter().map(|t| t.to_string()));
        toks.push(".".into());
        text::detokenize(&toks)
    };
    let start = head.len();
    let span = IdiomSpan::new(start, start + text::tokenize(idiom).len()).expect("non-empty idiom");
    (render(idiom), span, render(literal))
}

/// Every sentence the lexicon world can produce, in a fixed order.
fn all_lexicon_sentences() -> Vec<(usize, String, IdiomSpan, String)> {
    let mut out = Vec::new();
    for entry in 0..IBT_LEXICON.len() {
        for name in NAMES {
            for tail in TAILS {
                if entry < STATE_IDIOMS {
                    for verb in STATE_VERBS {
                        let (i, s, l) = lexicon_sentence(entry, name, Some(verb), tail);
                        out.push((entry, i, s, l));
                    }
                } else {
                    let (i, s, l) = lexicon_sentence(entry, name, None, tail);
                    out.push((entry, i, s, l));
                }
            }
        }
    }
    out
}

/// Seed parallel pairs and disjoint monolingual idiomatic sentences.
#[derive(Debug, Clone)]
pub struct IbtWorld {
    pub lexicon: Vec<(String, String)>,
    pub seed_pairs: Vec<ParallelPair>,
    pub mono: Vec<IdiomaticRecord>,
    /// Literal counterpart of each `mono` sentence, for evaluation.
    pub mono_literals: Vec<String>,
}

/// Draws `n_seed + n_mono` distinct sentences. When `n_seed ≥ 20` every
/// idiom appears at least once in the seed pairs.
pub fn ibt_world(n_seed: usize, n_mono: usize, seed: u64) -> Result<IbtWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = all_lexicon_sentences();
    pool.shuffle(&mut rng);
    let mut seed_rows = Vec::new();
    let mut covered = HashSet::new();
    // One sentence per idiom first, so every idiom is learnable from the seed.
    let mut rest = Vec::new();
    for row in pool {
        if seed_rows.len() < n_seed && covered.insert(row.0) {
            seed_rows.push(row);
        } else {
            rest.push(row);
        }
    }
    let missing = n_seed - seed_rows.len();
    seed_rows.extend(rest.drain(..missing.min(rest.len())));
    let mono_rows: Vec<_> = rest.into_iter().take(n_mono).collect();

    let mut seed_pairs = Vec::new();
    for (entry, idiomatic, span, literal) in seed_rows {
        let sentence = IdiomaticSentence::new(idiomatic, span)?;
        seed_pairs.push(ParallelPair::new(
            sentence,
            LiteralSentence::new(literal),
            IBT_LEXICON[entry].0,
            SourceTag::Seed,
        ));
    }
    let mut mono = Vec::new();
    let mut mono_literals = Vec::new();
    for (entry, idiomatic, span, literal) in mono_rows {
        mono.push(IdiomaticRecord {
            sentence: IdiomaticSentence::new(idiomatic, span)?,
            idiom: IBT_LEXICON[entry].0.to_string(),
        });
        mono_literals.push(literal);
    }
    Ok(IbtWorld {
        lexicon: lexicon_pairs(),
        seed_pairs,
        mono,
        mono_literals,
    })
}

/// `n` distinct idiomatic → literal sentence pairs, shuffled by `seed`.
pub fn substitution_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = all_lexicon_sentences();
    pool.shuffle(&mut rng);
    pool.into_iter().take(n).map(|(_, i, _, l)| (i, l)).collect()
}

// ---------------------------------------------------------------------------
// Definition-substitution world
// ---------------------------------------------------------------------------

/// A fillable slot value with glosses from three dictionary-like sources.
#[derive(Debug, Clone, Copy)]
pub struct Concept {
    pub filler: &'static str,
    pub pos: Upos,
    pub glosses: [&'static [&'static str]; 3],
}

macro_rules! concept {
    ($filler:expr, $pos:ident, [$($a:expr),*], [$($b:expr),*], [$($c:expr),*]) => {
        Concept { filler: $filler, pos: Upos::$pos, glosses: [&[$($a),*], &[$($b),*], &[$($c),*]] }
    };
}

pub const CONCEPTS: [Concept; 36] = [
    concept!("quickly", Adv, ["with rapid movement"], ["at a fast speed", "without delay"], ["fast"]),
    concept!("slowly", Adv, ["without speed"], ["at a low speed"], ["not fast"]),
    concept!("hard", Adv, ["with effort or force", "with firmness"], ["with great energy"], ["firmly"]),
    concept!("quietly", Adv, ["with little or no sound"], ["making no noise"], ["silently"]),
    concept!("loudly", Adv, ["with great volume"], ["making a lot of noise"], ["noisily"]),
    concept!("carefully", Adv, ["with caution and attention"], ["paying close attention"], ["with care"]),
    concept!("badly", Adv, ["in a poor manner"], ["not well at all"], ["poorly"]),
    concept!("early", Adv, ["before the usual time"], ["ahead of schedule"], ["too soon"]),
    concept!("late", Adv, ["after the expected time"], ["behind schedule"], ["not on time"]),
    concept!("gladly", Adv, ["with pleasure"], ["in a willing way"], ["willingly"]),
    concept!("alone", Adv, ["without any company"], ["by oneself"], ["on your own"]),
    concept!("twice", Adv, ["two times"], ["on two occasions"], ["a second time"]),
    concept!("happy", Adj, ["feeling pleasure or joy"], ["in a good mood"], ["glad"]),
    concept!("sad", Adj, ["feeling sorrow"], ["unhappy and low"], ["gloomy"]),
    concept!("angry", Adj, ["feeling strong annoyance"], ["full of rage"], ["mad"]),
    concept!("tired", Adj, ["in need of sleep"], ["worn out by work"], ["sleepy"]),
    concept!("hungry", Adj, ["wanting food"], ["in need of a meal"], ["starving"]),
    concept!("brave", Adj, ["showing courage"], ["not afraid of danger"], ["bold"]),
    concept!("calm", Adj, ["free from agitation"], ["relaxed and peaceful"], ["serene"]),
    concept!("rich", Adj, ["having much money"], ["owning great wealth"], ["wealthy"]),
    concept!("sick", Adj, ["affected by illness"], ["not in good health"], ["unwell"]),
    concept!("in prison", Adj, ["confined in a jail"], ["locked up as a punishment"], ["in prison"]),
    concept!("very happy", Adj, ["extremely pleased"], ["full of great joy"], ["delighted"]),
    concept!("in trouble", Adj, ["facing serious problems"], ["likely to be punished"], ["in difficulty"]),
    concept!("at home", Adj, ["in the place where one lives"], ["inside your own house"], ["indoors"]),
    concept!("ready", Adj, ["fully prepared"], ["set to begin"], ["prepared"]),
    concept!("ran", Verb, ["moved fast on foot"], ["went at a running pace"], ["sprinted"]),
    concept!("slept", Verb, ["rested with eyes closed"], ["was asleep"], ["dozed"]),
    concept!("laughed", Verb, ["made sounds of amusement"], ["showed joy with a laugh"], ["giggled"]),
    concept!("cried", Verb, ["shed tears"], ["wept with sorrow"], ["sobbed"]),
    concept!("waited", Verb, ["stayed until something happened"], ["remained in place"], ["paused"]),
    concept!("worked", Verb, ["did a job"], ["put in effort at a task"], ["labored"]),
    concept!("sang", Verb, ["made music with the voice"], ["performed a song"], ["chanted"]),
    concept!("left", Verb, ["went away from a place"], ["departed"], ["exited"]),
    concept!("gave up", Verb, ["stopped trying"], ["abandoned the effort"], ["quit"]),
    concept!("passed away", Verb, ["stopped living"], ["reached the end of life"], ["died"]),
];

const SUBJECTS: [&str; 50] = [
    "He",
    "She",
    "They",
    "We",
    "Tom",
    "Mia",
    "Omar",
    "Lena",
    "Paul",
    "Nora",
    "Sam",
    "Rita",
    "The boy",
    "The girl",
    "The driver",
    "The teacher",
    "My aunt",
    "Our coach",
    "The pilot",
    "The baker",
    "Her son",
    "His wife",
    "The guard",
    "The nurse",
    "Victor",
    "Yuki",
    "Zara",
    "Felix",
    "Ivan",
    "Olga",
    "Pedro",
    "Hana",
    "The farmer",
    "The singer",
    "My uncle",
    "Your sister",
    "The doctor",
    "The old man",
    "A stranger",
    "The mayor",
    "The captain",
    "The clerk",
    "My neighbour",
    "The tourist",
    "The waiter",
    "Our guide",
    "The janitor",
    "The poet",
    "Grandma",
    "Uncle Bob",
];
const ADV_VERBS: [&str; 14] = [
    "spoke",
    "walked",
    "answered",
    "drove",
    "played",
    "moved",
    "arrived",
    "trained",
    "smiled",
    "listened",
    "argued",
    "climbed",
    "swam",
    "danced",
];
const ADJ_VERBS: [&str; 7] = ["was", "seemed", "felt", "stayed", "looked", "became", "remained"];
const OBJECT_VERBS: [&str; 4] = ["kept", "found", "saw", "wanted"];
const OBJECTS: [&str; 4] = ["him", "her", "them", "us"];
const CONTEXT_TAILS: [&str; 56] = [
    "",
    "today",
    "in the garden",
    "near the river",
    "after lunch",
    "during the storm",
    "at the station",
    "for an hour",
    "with a friend",
    "on the bus",
    "last summer",
    "in the office",
    "at the market",
    "before noon",
    "by the lake",
    "under the bridge",
    "on monday",
    "after school",
    "behind the house",
    "in the morning",
    "at the harbor",
    "near the castle",
    "inside the tent",
    "beside the fountain",
    "across the valley",
    "through the forest",
    "along the beach",
    "under a lamp",
    "during the concert",
    "after the wedding",
    "at the airport",
    "in the kitchen",
    "on the roof",
    "near the factory",
    "behind the church",
    "at the library",
    "during winter",
    "on friday",
    "on sunday",
    "after midnight",
    "around sunset",
    "before breakfast",
    "near the bakery",
    "at the stadium",
    "in the museum",
    "beside the road",
    "over the hill",
    "in the village",
    "at the hospital",
    "on the train",
    "with his brother",
    "with her cousin",
    "without a word",
    "despite the noise",
    "until dawn",
    "near the border",
];

/// Tokens of a definition-substitution sentence with the filler span.
fn concept_sentence(rng: &mut ChaCha8Rng, concept: &Concept) -> (Vec<String>, usize, usize) {
    let mut toks = text::tokenize(SUBJECTS.choose(rng).unwrap());
    match concept.pos {
        Upos::Adv => toks.push(ADV_VERBS.choose(rng).unwrap().to_string()),
        Upos::Adj if rng.random_bool(0.3) => {
            toks.push(OBJECT_VERBS.choose(rng).unwrap().to_string());
            toks.push(OBJECTS.choose(rng).unwrap().to_string());
        }
        Upos::Adj => toks.push(ADJ_VERBS.choose(rng).unwrap().to_string()),
        _ => {}
    }
    let start = toks.len();
    toks.extend(text::tokenize(concept.filler));
    let end = toks.len();
    toks.extend(text::tokenize(CONTEXT_TAILS.choose(rng).unwrap()));
    toks.push(".".into());
    (toks, start, end)
}

/// Definitions for one instance: all glosses of one source chosen uniformly.
fn concept_definitions(rng: &mut ChaCha8Rng, concept: &Concept) -> Vec<String> {
    let source = rng.random_range(0..concept.glosses.len());
    concept.glosses[source].iter().map(|g| g.to_string()).collect()
}

/// `n` distinct clean instances whose filler span (one or two tokens) is
/// collapsed into a single mask. Targets listed in `exclude` are skipped, so
/// a held-out split never overlaps its training split.
pub fn definition_world(n: usize, seed: u64, exclude: &HashSet<String>) -> Vec<MaskedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < n * 50 {
        attempts += 1;
        let concept = CONCEPTS.choose(&mut rng).unwrap();
        let (toks, start, end) = concept_sentence(&mut rng, concept);
        let target = text::detokenize(&toks);
        let definitions = concept_definitions(&mut rng, concept);
        if !seen.insert(target.clone()) {
            continue;
        }
        let mut masked: Vec<String> = toks[..start].to_vec();
        masked.push(MASK.into());
        masked.extend_from_slice(&toks[end..]);
        out.push(MaskedInstance {
            masked_tokens: masked,
            mask_index: start,
            pos: concept.pos,
            definitions,
            target_text: target,
            flags: CorruptionFlags::default(),
        });
    }
    out
}

/// Distinct target-side word types (the decoder's vocabulary; glosses only
/// reach the model through the frozen sentence embedder).
pub fn vocabulary_size(instances: &[MaskedInstance]) -> usize {
    let words: HashSet<String> = instances
        .iter()
        .flat_map(|inst| text::tokenize(&inst.target_text))
        .map(|t| t.to_lowercase())
        .collect();
    words.len()
}

// ---------------------------------------------------------------------------
// Plain sentence fixtures
// ---------------------------------------------------------------------------

/// Short sentences for language-model fixtures. Always contains "the cat",
/// never "the quietly".
pub fn lm_fixture(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = ["the cat", "the dog", "a bird", "my friend", "the child"];
    let verbs = ["sat", "ran", "slept", "waited", "sang"];
    let tails = ["quietly .", "on the mat .", "at home .", "all day .", "again ."];
    (0..n)
        .map(|i| {
            let subject = if i == 0 { "the cat" } else { subjects.choose(&mut rng).unwrap() };
            format!("{subject} {} {}", verbs.choose(&mut rng).unwrap(), tails.choose(&mut rng).unwrap())
        })
        .collect()
}

/// News-like sentences with stop words, inflected forms and at least one
/// verb, adjective or adverb from the bundled dictionary fixture.
pub fn sentence_fixture(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = [
        "The workers", "The mayor", "Two cats", "The players", "A reporter", "The children", "Our neighbours",
        "The committee", "He", "She",
    ];
    let verbs = ["ran", "worked", "waited", "laughed", "cried", "slept", "played", "walked", "talked"];
    let adverbs = ["hard", "quickly", "slowly", "quietly", "carefully", "early", "late"];
    let adjectives = ["happy", "tired", "angry", "calm", "ready", "sad"];
    let places = [
        "on the bridge", "in the park", "at the meeting", "near the old mill", "with the others", "for the team",
        "in the rain", "at the station",
    ];
    (0..n)
        .map(|_| {
            let subject = subjects.choose(&mut rng).unwrap();
            let place = places.choose(&mut rng).unwrap();
            if rng.random_bool(0.5) {
                format!(
                    "{subject} {} {} {place}.",
                    verbs.choose(&mut rng).unwrap(),
                    adverbs.choose(&mut rng).unwrap()
                )
            } else {
                format!("{subject} were {} {place}.", adjectives.choose(&mut rng).unwrap())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibt::contains_idiom;

    #[test]
    fn lexicon_phrases_do_not_overlap() {
        for (i, (idiom, literal)) in IBT_LEXICON.iter().enumerate() {
            for (j, (other_i, other_l)) in IBT_LEXICON.iter().enumerate() {
                assert!(!contains_idiom(literal, &text::lemma_key(&text::tokenize(other_i))));
                if i != j {
                    assert!(!contains_idiom(idiom, &text::lemma_key(&text::tokenize(other_i))));
                    assert!(!contains_idiom(literal, &text::lemma_key(&text::tokenize(other_l))));
                }
            }
        }
    }

    #[test]
    fn ibt_world_is_disjoint_and_covers_idioms() {
        let w = ibt_world(40, 200, 3).unwrap();
        assert_eq!(w.seed_pairs.len(), 40);
        assert_eq!(w.mono.len(), 200);
        let idioms: HashSet<_> = w.seed_pairs.iter().map(|p| p.idiom.clone()).collect();
        assert_eq!(idioms.len(), 20);
        let seed_texts: HashSet<_> = w.seed_pairs.iter().map(|p| p.idiomatic.text.clone()).collect();
        assert!(w.mono.iter().all(|r| !seed_texts.contains(&r.sentence.text)));
        let span = &w.mono[0].sentence;
        assert_eq!(span.idiom_surface().to_lowercase(), w.mono[0].idiom);
    }

    #[test]
    fn definition_world_has_small_vocab_and_one_mask() {
        let insts = definition_world(2000, 1, &HashSet::new());
        assert_eq!(insts.len(), 2000);
        for inst in &insts {
            inst.validate().unwrap();
        }
        let v = vocabulary_size(&insts);
        assert!((180..=220).contains(&v), "vocab {v}");
        let train: HashSet<String> = insts.iter().map(|i| i.target_text.clone()).collect();
        let held = definition_world(100, 2, &train);
        assert!(held.iter().all(|i| !train.contains(&i.target_text)));
    }

    #[test]
    fn lm_fixture_contents() {
        let s = lm_fixture(100, 5).join(" ");
        assert!(s.contains("the cat"));
        assert!(!s.contains("the quietly"));
    }
}
