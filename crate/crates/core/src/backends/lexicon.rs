//! Rule-based substitution backend. With `error_rate = 0` it applies its
//! table exactly, which makes an ISP/ISG pair built from one table an exact
//! inverse pair: the oracle for back-translation tests.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::stable_hash;
use super::{BackendConfig, Capabilities, DecodeParams, Direction, LossCurve, Seq2SeqBackend, TrainSchedule};
use crate::error::{Error, Result};
use crate::text;

pub const NAME: &str = "toy-lexicon";
const TABLE_FILE: &str = "table.jsonl";
const META_FILE: &str = "lexicon.json";

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    /// Lowercased match tokens.
    from: Vec<String>,
    to: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ToyLexiconBackend {
    rules: Vec<Rule>,
    error_rate: f64,
    trainable: bool,
    max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    #[serde(alias = "idiom")]
    from: String,
    #[serde(alias = "literal", default)]
    to: Option<String>,
    #[serde(default)]
    glosses: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    error_rate: f64,
    trainable: bool,
    max_len: usize,
}

impl ToyLexiconBackend {
    pub fn new<S: AsRef<str>>(table: impl IntoIterator<Item = (S, S)>) -> Self {
        let mut b = Self {
            rules: Vec::new(),
            error_rate: 0.0,
            trainable: true,
            max_len: 128,
        };
        for (from, to) in table {
            b.add_rule(from.as_ref(), to.as_ref());
        }
        b
    }

    pub fn empty() -> Self {
        Self::new(std::iter::empty::<(&str, &str)>())
    }

    /// Same table, opposite direction.
    pub fn reversed(&self) -> Self {
        let mut b = Self {
            rules: Vec::new(),
            ..self.clone()
        };
        for r in &self.rules {
            b.add_rule(&r.to.join(" "), &r.from.join(" "));
        }
        b
    }

    pub fn with_error_rate(mut self, error_rate: f64) -> Self {
        self.error_rate = error_rate.clamp(0.0, 1.0);
        self
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn error_rate(&self) -> f64 {
        self.error_rate
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    /// Adds `from → to` unless `from` already has a rule. Returns whether it
    /// was added.
    pub fn add_rule(&mut self, from: &str, to: &str) -> bool {
        let from: Vec<String> = text::tokenize(from).iter().map(|t| t.to_lowercase()).collect();
        if from.is_empty() || self.rules.iter().any(|r| r.from == from) {
            return false;
        }
        let rule = Rule {
            from,
            to: text::tokenize(to),
        };
        // Longest match first; stable among equal lengths.
        let at = self
            .rules
            .iter()
            .position(|r| r.from.len() < rule.from.len())
            .unwrap_or(self.rules.len());
        self.rules.insert(at, rule);
        true
    }

    /// Left-to-right longest-match substitution, case-insensitive, carrying
    /// sentence-initial capitalization over to the replacement.
    pub fn apply(&self, tokens: &[String]) -> Vec<String> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .rules
                .iter()
                .find(|r| lower[i..].starts_with(&r.from));
            match hit {
                Some(rule) => {
                    let capital = tokens[i].chars().next().is_some_and(char::is_uppercase);
                    for (k, t) in rule.to.iter().enumerate() {
                        out.push(if k == 0 && capital { capitalize(t) } else { t.clone() });
                    }
                    i += rule.from.len();
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }

    fn corrupt(tokens: &mut Vec<String>, rng: &mut ChaCha8Rng) {
        let words: Vec<usize> = (0..tokens.len()).filter(|&i| !text::is_punct(&tokens[i])).collect();
        if words.len() > 1 {
            let at = words[rng.random_range(0..words.len())];
            tokens.remove(at);
        } else {
            tokens.push("<err>".into());
        }
    }

    fn exact_match_rate(&self, pairs: &[(String, String)]) -> f64 {
        let hits = pairs
            .iter()
            .filter(|(s, t)| text::detokenize(&self.apply(&text::tokenize(s))) == *t)
            .count();
        hits as f64 / pairs.len().max(1) as f64
    }

    /// Induces one rule per pair from the differing middle of the two token
    /// sequences (after stripping their common prefix and suffix).
    fn induce(&mut self, source: &str, target: &str) {
        let s = text::tokenize(source);
        let t = text::tokenize(target);
        let eq = |a: &String, b: &String| a.to_lowercase() == b.to_lowercase();
        let prefix = s.iter().zip(&t).take_while(|(a, b)| eq(a, b)).count();
        let max_suffix = s.len().min(t.len()) - prefix;
        let suffix = s
            .iter()
            .rev()
            .zip(t.iter().rev())
            .take(max_suffix)
            .take_while(|(a, b)| eq(a, b))
            .count();
        let from = &s[prefix..s.len() - suffix];
        let to = &t[prefix..t.len() - suffix];
        if !from.is_empty() {
            self.add_rule(&from.join(" "), &to.join(" "));
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl Seq2SeqBackend for ToyLexiconBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            embedding_dim: 0,
            max_len: self.max_len,
            trainable: self.trainable,
        }
    }

    fn generate(&self, input: &[String], _decode: &DecodeParams, seed: u64) -> Result<String> {
        if input.len() > self.max_len {
            return Err(Error::TooLong {
                len: input.len(),
                max: self.max_len,
            });
        }
        let mut out = self.apply(input);
        if self.error_rate > 0.0 {
            let key = input.join(" ");
            let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&seed.to_string(), &key]));
            if rng.random_bool(self.error_rate) {
                Self::corrupt(&mut out, &mut rng);
            }
        }
        Ok(text::detokenize(&out))
    }

    fn fine_tune(&mut self, pairs: &[(String, String)], _schedule: &TrainSchedule, _seed: u64) -> Result<LossCurve> {
        if !self.trainable {
            return Err(Error::NotTrainable(NAME.into()));
        }
        if pairs.is_empty() {
            return Err(Error::invalid("cannot fine-tune on an empty pair list"));
        }
        let before = 1.0 - self.exact_match_rate(pairs);
        for (s, t) in pairs {
            self.induce(s, t);
        }
        let after = 1.0 - self.exact_match_rate(pairs);
        Ok(LossCurve {
            steps: vec![before, after],
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(TABLE_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for r in &self.rules {
            let row = TableRow {
                from: r.from.join(" "),
                to: Some(text::detokenize(&r.to)),
                glosses: Vec::new(),
            };
            writeln!(f, "{}", serde_json::to_string(&row)?).map_err(|e| Error::io(&path, e))?;
        }
        let meta = Meta {
            error_rate: self.error_rate,
            trainable: self.trainable,
            max_len: self.max_len,
        };
        let meta_path = dir.join(META_FILE);
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Reads a substitution table: JSONL rows `{"idiom", "literal"}` (or
/// `{"idiom", "glosses"}`, using the first gloss), or a directory written by
/// [`Seq2SeqBackend::save`].
pub fn load_table(path: &Path) -> Result<Vec<(String, String)>> {
    let file = if path.is_dir() { path.join(TABLE_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TableRow = serde_json::from_str(line).map_err(|e| Error::Schema {
            path: file.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let to = row.to.or_else(|| row.glosses.into_iter().next()).ok_or_else(|| Error::Schema {
            path: file.clone(),
            line: i + 1,
            message: "row has neither `literal` nor `glosses`".into(),
        })?;
        out.push((row.from, to));
    }
    Ok(out)
}

/// A directory written by `save` already holds rules in the model's own
/// direction; a bare idiom table is read idiom → literal and flipped for ISG.
pub(super) fn from_config(config: &BackendConfig, direction: Direction) -> Result<Box<dyn Seq2SeqBackend>> {
    let meta = config
        .backend
        .checkpoint_path
        .as_ref()
        .filter(|p| p.is_dir())
        .map(|p| p.join(META_FILE))
        .filter(|p| p.exists());
    let mut backend = match &config.backend.checkpoint_path {
        Some(path) => {
            let forward = ToyLexiconBackend::new(load_table(path)?);
            match direction {
                Direction::Isg if meta.is_none() => forward.reversed(),
                _ => forward,
            }
        }
        None => ToyLexiconBackend::empty(),
    };
    if let Some(meta) = meta {
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let m: Meta = serde_json::from_str(&text)?;
        backend.error_rate = m.error_rate;
        backend.trainable = m.trainable;
        backend.max_len = m.max_len;
    }
    if let Some(rate) = config.error_rate {
        backend = backend.with_error_rate(rate);
    }
    backend.max_len = config.decode.max_len;
    Ok(Box::new(backend))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{fine_tune, generate};

    fn toks(s: &str) -> Vec<String> {
        text::tokenize(s)
    }

    fn prison() -> ToyLexiconBackend {
        ToyLexiconBackend::new([("behind bars", "in prison")])
    }

    #[test]
    fn applies_rule() {
        let out = generate(&prison(), &toks("he was behind bars"), &DecodeParams::default(), 0).unwrap();
        assert_eq!(out, "he was in prison");
    }

    #[test]
    fn no_rule_is_identity() {
        let input = "She left early, as usual.";
        let out = generate(&prison(), &toks(input), &DecodeParams::default(), 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn deterministic_under_seed_even_with_errors() {
        let b = prison().with_error_rate(0.5);
        let input = toks("Putting him behind bars won't serve any purpose.");
        let a = generate(&b, &input, &DecodeParams::default(), 9).unwrap();
        assert_eq!(a, generate(&b, &input, &DecodeParams::default(), 9).unwrap());
    }

    #[test]
    fn reversed_is_exact_inverse() {
        let isp = ToyLexiconBackend::new([("behind bars", "in prison"), ("over the moon", "very happy")]);
        let isg = isp.reversed();
        let d = DecodeParams::default();
        for s in ["Behind bars he stayed.", "We were over the moon about it."] {
            let lit = generate(&isp, &toks(s), &d, 1).unwrap();
            assert_eq!(generate(&isg, &toks(&lit), &d, 1).unwrap(), s);
        }
    }

    #[test]
    fn capitalization_carries_over() {
        let out = generate(&prison(), &toks("Behind bars, he read."), &DecodeParams::default(), 0).unwrap();
        assert_eq!(out, "In prison, he read.");
    }

    #[test]
    fn too_long_input_is_rejected() {
        let input: Vec<String> = (0..129).map(|i| format!("w{i}")).collect();
        assert!(matches!(
            generate(&prison(), &input, &DecodeParams::default(), 0),
            Err(Error::TooLong { len: 129, max: 128 })
        ));
    }

    #[test]
    fn fine_tune_induces_rules_from_pairs() {
        let mut b = ToyLexiconBackend::empty();
        let pairs = vec![
            ("He is behind bars now.".to_string(), "He is in prison now.".to_string()),
            ("They were over the moon.".to_string(), "They were very happy.".to_string()),
        ];
        let curve = fine_tune(&mut b, &pairs, &TrainSchedule::default(), 0).unwrap();
        assert_eq!(curve.steps, vec![1.0, 0.0]);
        let out = generate(&b, &toks("She was behind bars."), &DecodeParams::default(), 0).unwrap();
        assert_eq!(out, "She was in prison.");
    }

    #[test]
    fn frozen_and_empty_training_fail() {
        let mut frozen = prison().frozen();
        let pairs = vec![("a b".to_string(), "a c".to_string())];
        assert!(matches!(
            fine_tune(&mut frozen, &pairs, &TrainSchedule::default(), 0),
            Err(Error::NotTrainable(_))
        ));
        let mut b = prison();
        assert!(fine_tune(&mut b, &[], &TrainSchedule::default(), 0).is_err());
    }

    #[test]
    fn save_then_load_table() {
        let dir = tempfile::tempdir().unwrap();
        let b = ToyLexiconBackend::new([("behind bars", "in prison")]).with_error_rate(0.25);
        b.save(dir.path()).unwrap();
        let mut cfg = BackendConfig::named(NAME);
        cfg.backend.checkpoint_path = Some(dir.path().to_path_buf());
        let loaded = from_config(&cfg, Direction::Isp).unwrap();
        let out = loaded.generate(&toks("he was behind bars"), &DecodeParams::default(), 3).unwrap();
        assert_eq!(out, b.generate(&toks("he was behind bars"), &DecodeParams::default(), 3).unwrap());

        let isg = b.reversed();
        isg.save(dir.path()).unwrap();
        let loaded = from_config(&cfg, Direction::Isg).unwrap();
        let out = loaded.generate(&toks("he was in prison"), &DecodeParams::default(), 3).unwrap();
        assert_eq!(out, isg.generate(&toks("he was in prison"), &DecodeParams::default(), 3).unwrap());
    }
}
