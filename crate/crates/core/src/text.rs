//! Domain-level text handling: the whitespace-plus-punctuation tokenizer,
//! the universal POS tag set, and the bundled lemma/stop-word/stem fixtures.
//!
//! Everything here is table driven so that outputs are reproducible across
//! machines; model backends apply their own subword handling on top.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Placeholder emitted in place of the masked word or idiom span.
pub const MASK: &str = "<mask>";
/// Separator between a masked sentence and its POS tag.
pub const SEP: &str = "<sep>";

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const LEMMAS: &str = include_str!("../data/lemmas.tsv");

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk as single-character tokens. Punctuation flanked by word characters
/// (`won't`, `well-known`, `3.5`) stays inside its token. The mask symbol is
/// always a single token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let padded;
    let text = if text.contains(MASK) || text.contains(SEP) {
        padded = text.replace(MASK, &format!(" {MASK} ")).replace(SEP, &format!(" {SEP} "));
        padded.as_str()
    } else {
        text
    };
    for chunk in text.split_whitespace() {
        if chunk == MASK || chunk == SEP {
            out.push(chunk.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|&c| is_word_char(c));
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| is_word_char(c)).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

fn attaches_left(tok: &str) -> bool {
    matches!(tok, "." | "," | "!" | "?" | ";" | ":" | "%" | ")" | "]" | "}")
}

fn attaches_right(tok: &str) -> bool {
    matches!(tok, "(" | "[" | "{" | "$")
}

/// Inverse of [`tokenize`] for any token list it produced.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for tok in tokens {
        let tok = tok.as_ref();
        if !glue_next && !attaches_left(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = attaches_right(tok);
    }
    out
}

pub fn is_punct(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| !is_word_char(c))
}

/// The 17-tag universal POS set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }

    /// Spelled-out name fed to the model after the separator (`ADVERB`).
    pub fn long_name(self) -> &'static str {
        match self {
            Upos::Adj => "ADJECTIVE",
            Upos::Adp => "ADPOSITION",
            Upos::Adv => "ADVERB",
            Upos::Aux => "AUXILIARY",
            Upos::Cconj => "CONJUNCTION",
            Upos::Det => "DETERMINER",
            Upos::Intj => "INTERJECTION",
            Upos::Noun => "NOUN",
            Upos::Num => "NUMERAL",
            Upos::Part => "PARTICLE",
            Upos::Pron => "PRONOUN",
            Upos::Propn => "PROPER-NOUN",
            Upos::Punct => "PUNCTUATION",
            Upos::Sconj => "SUBORDINATOR",
            Upos::Sym => "SYMBOL",
            Upos::Verb => "VERB",
            Upos::X => "OTHER",
        }
    }

    /// Tags a masked word may carry: verbs, adjectives and adverbs.
    pub fn is_maskable(self) -> bool {
        matches!(self, Upos::Verb | Upos::Adj | Upos::Adv)
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase();
        Upos::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == up || t.long_name() == up)
            .ok_or_else(|| Error::invalid(format!("unknown POS tag `{s}`")))
    }
}

fn stopword_set() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(&token.to_lowercase())
}

fn lemma_table() -> &'static HashMap<String, String> {
    static TABLE: OnceLock<HashMap<String, String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        LEMMAS
            .lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(s, l)| (s.to_string(), l.to_string()))
            .collect()
    })
}

/// Table lemmatizer: lowercases, then maps known inflected forms.
pub fn lemmatize(token: &str) -> String {
    let lower = token.to_lowercase();
    match lemma_table().get(&lower) {
        Some(lemma) => lemma.clone(),
        None => lower,
    }
}

/// Canonical lemma form of a token sequence, space-joined.
pub fn lemma_key<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| lemmatize(t.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Porter-family stem used by the METEOR stem matcher.
pub fn stem(token: &str) -> String {
    static STEMMER: OnceLock<rust_stemmers::Stemmer> = OnceLock::new();
    let stemmer =
        STEMMER.get_or_init(|| rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English));
    stemmer.stem(&token.to_lowercase()).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_edge_punctuation() {
        assert_eq!(
            tokenize("Putting him behind bars won't serve any purpose."),
            ["Putting", "him", "behind", "bars", "won't", "serve", "any", "purpose", "."]
        );
        assert_eq!(tokenize("(a) \"b\""), ["(", "a", ")", "\"", "b", "\""]);
        assert_eq!(tokenize("well-known 3.5%"), ["well-known", "3.5", "%"]);
        assert_eq!(tokenize("   "), Vec::<String>::new());
        assert_eq!(tokenize("he <mask> it"), ["he", "<mask>", "it"]);
    }

    #[test]
    fn detokenize_reattaches_punctuation() {
        let toks = tokenize("He left (quickly), didn't he?");
        assert_eq!(detokenize(&toks), "He left (quickly), didn't he?");
        assert_eq!(detokenize(&["a", "-", "b"]), "a - b");
        let masked = ["he", "is", MASK, "."];
        assert_eq!(tokenize(&detokenize(&masked)), masked);
        assert_eq!(tokenize("(<mask>)<sep> NOUN"), ["(", MASK, ")", SEP, "NOUN"]);
    }

    #[test]
    fn lemma_and_stopword_fixtures() {
        assert_eq!(lemmatize("Bars"), "bar");
        assert_eq!(lemmatize("running"), "run");
        assert_eq!(lemmatize("crossbars"), "crossbars");
        assert_eq!(lemma_key(&["behind", "bars"]), "behind bar");
        assert!(is_stopword("The"));
        assert!(!is_stopword("cat"));
        assert_eq!(stem("running"), "run");
    }

    #[test]
    fn upos_parses_short_and_long_names() {
        assert_eq!("adv".parse::<Upos>().unwrap(), Upos::Adv);
        assert_eq!("ADVERB".parse::<Upos>().unwrap(), Upos::Adv);
        assert!("ADVERBIAL".parse::<Upos>().is_err());
        assert_eq!(Upos::ALL.len(), 17);
    }
}
