use std::collections::HashMap;
use std::sync::OnceLock;

use super::PosTagger;
use crate::text::{self, Upos, MASK};

const LEXICON: &str = include_str!("../../data/pos_lexicon.tsv");

fn lexicon() -> &'static HashMap<String, Vec<Upos>> {
    static LEX: OnceLock<HashMap<String, Vec<Upos>>> = OnceLock::new();
    LEX.get_or_init(|| {
        LEXICON
            .lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(w, tags)| {
                let tags = tags.split('|').filter_map(|t| t.parse().ok()).collect();
                (w.to_string(), tags)
            })
            .collect()
    })
}

/// Lexicon tagger with a handful of contextual and suffix rules. Stands in
/// for a pretrained tagger in tests and toy runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

impl LexiconTagger {
    fn guess(token: &str, first: bool) -> Upos {
        if text::is_punct(token) {
            return if token.chars().all(|c| "$%&*+/<=>@#".contains(c)) {
                Upos::Sym
            } else {
                Upos::Punct
            };
        }
        if token.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
            return Upos::Num;
        }
        let lower = token.to_lowercase();
        if !first && token.chars().next().is_some_and(char::is_uppercase) {
            return Upos::Propn;
        }
        if lower.ends_with("ly") {
            Upos::Adv
        } else if lower.ends_with("ing") || lower.ends_with("ed") {
            Upos::Verb
        } else if ["ous", "ful", "able", "ive", "less"].iter().any(|s| lower.ends_with(s)) {
            Upos::Adj
        } else {
            Upos::Noun
        }
    }
}

/// A mask right after one of these is read as a predicate complement.
const OBJECT_PRONOUNS: [&str; 4] = ["him", "them", "me", "us"];

impl PosTagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<Upos> {
        let mut tags: Vec<Upos> = Vec::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            let prev = tags.last().copied();
            let tag = if tok == MASK {
                let after_object = i > 0 && OBJECT_PRONOUNS.contains(&tokens[i - 1].to_lowercase().as_str());
                match prev {
                    _ if after_object => Upos::Adj,
                    Some(Upos::Verb) => Upos::Adv,
                    Some(Upos::Aux | Upos::Det) => Upos::Adj,
                    _ => Upos::Verb,
                }
            } else {
                match lexicon().get(&tok.to_lowercase()) {
                    Some(cands) if cands.len() > 1 => {
                        if cands.contains(&Upos::Adv) && prev == Some(Upos::Verb) {
                            Upos::Adv
                        } else if cands.contains(&Upos::Adj) && matches!(prev, Some(Upos::Det | Upos::Aux)) {
                            Upos::Adj
                        } else {
                            cands[0]
                        }
                    }
                    Some(cands) if !cands.is_empty() => cands[0],
                    _ => Self::guess(tok, i == 0),
                }
            };
            tags.push(tag);
        }
        tags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::pos_tag;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn he_ran_hard() {
        assert_eq!(pos_tag(&LexiconTagger, &toks("he ran hard")), [Upos::Pron, Upos::Verb, Upos::Adv]);
    }

    #[test]
    fn single_token_and_unknowns() {
        assert_eq!(pos_tag(&LexiconTagger, &toks("run")).len(), 1);
        assert_eq!(
            pos_tag(&LexiconTagger, &toks("Zorblax quietly glimmered near Quux 42 .")),
            [Upos::Noun, Upos::Adv, Upos::Verb, Upos::Adp, Upos::Propn, Upos::Num, Upos::Punct]
        );
    }

    #[test]
    fn mask_is_tagged_from_context() {
        assert_eq!(pos_tag(&LexiconTagger, &toks("he ran <mask>"))[2], Upos::Adv);
        assert_eq!(pos_tag(&LexiconTagger, &toks("he was <mask>"))[2], Upos::Adj);
        assert_eq!(pos_tag(&LexiconTagger, &toks("putting him <mask>"))[2], Upos::Adj);
    }
}
