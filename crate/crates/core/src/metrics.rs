//! Automatic evaluation: corpus BLEU, ROUGE-1/2/L, METEOR (exact and stem
//! matching only), SARI and LM perplexity, plus the results table.
//!
//! Every text metric tokenizes with [`text::tokenize`] and lowercases.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::LmScorer;
use crate::error::{Error, Result};
use crate::text;

/// One system output with its input and references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub source: String,
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalRecord {
    pub fn new(source: impl Into<String>, candidate: impl Into<String>, references: Vec<String>) -> Result<Self> {
        let r = Self {
            source: source.into(),
            candidate: candidate.into(),
            references,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::invalid("evaluation record needs at least one reference"));
        }
        if self.references.iter().any(|r| r.trim().is_empty()) || self.source.trim().is_empty() {
            return Err(Error::invalid("evaluation record has an empty source or reference"));
        }
        Ok(())
    }
}

pub fn load_eval_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EvalRecord = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        rec.validate().map_err(|e| schema_err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn tokens(s: &str) -> Vec<String> {
    text::tokenize(s).into_iter().map(|t| t.to_lowercase()).collect()
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn nonempty(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    Ok(())
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

pub const BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matches: [usize; BLEU_ORDER],
    totals: [usize; BLEU_ORDER],
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn of(candidate: &str, references: &[String]) -> Self {
        let cand = tokens(candidate);
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r)).collect();
        let mut s = BleuStats {
            cand_len: cand.len(),
            // Closest reference length, shorter on ties.
            ref_len: refs
                .iter()
                .map(|r| r.len())
                .min_by_key(|&l| (l.abs_diff(cand.len()), l))
                .unwrap_or(0),
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            let counts = ngram_counts(&cand, n);
            s.totals[n - 1] = counts.values().sum();
            s.matches[n - 1] = counts
                .iter()
                .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for i in 0..BLEU_ORDER {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    /// Uniform weights over the orders the candidate side actually has
    /// n-grams for; no smoothing, so any such order with zero matches
    /// gives 0.
    fn score(&self) -> f64 {
        let orders: Vec<usize> = (0..BLEU_ORDER).filter(|&i| self.totals[i] > 0).collect();
        if orders.is_empty() {
            return 0.0;
        }
        if orders.iter().any(|&i| self.matches[i] == 0) {
            return 0.0;
        }
        let log_p: f64 = orders
            .iter()
            .map(|&i| (self.matches[i] as f64 / self.totals[i] as f64).ln())
            .sum::<f64>()
            / orders.len() as f64;
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        100.0 * bp * log_p.exp()
    }
}

/// Corpus BLEU-4 in `[0, 100]`.
pub fn bleu(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    let mut total = BleuStats::default();
    for r in records {
        total.add(&BleuStats::of(&r.candidate, &r.references));
    }
    Ok(total.score())
}

pub fn sentence_bleu(candidate: &str, references: &[String]) -> f64 {
    BleuStats::of(candidate, references).score()
}

// ---------------------------------------------------------------------------
// ROUGE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rouge {
    One,
    Two,
    L,
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { row[j + 1].max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_pair(cand: &[String], reference: &[String], variant: Rouge) -> f64 {
    let (overlap, c_total, r_total) = match variant {
        Rouge::L => (lcs(cand, reference), cand.len(), reference.len()),
        Rouge::One | Rouge::Two => {
            let n = if variant == Rouge::One { 1 } else { 2 };
            let c = ngram_counts(cand, n);
            let r = ngram_counts(reference, n);
            let overlap = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
            (overlap, c.values().sum(), r.values().sum())
        }
    };
    if c_total == 0 || r_total == 0 {
        return 0.0;
    }
    100.0 * f1(overlap as f64 / c_total as f64, overlap as f64 / r_total as f64)
}

/// F1 against the best-matching reference, in `[0, 100]`.
pub fn sentence_rouge(candidate: &str, references: &[String], variant: Rouge) -> f64 {
    let cand = tokens(candidate);
    references
        .iter()
        .map(|r| rouge_pair(&cand, &tokens(r), variant))
        .fold(0.0, f64::max)
}

/// Mean sentence F1 in `[0, 100]`.
pub fn rouge(records: &[EvalRecord], variant: Rouge) -> Result<f64> {
    nonempty(records)?;
    Ok(records
        .iter()
        .map(|r| sentence_rouge(&r.candidate, &r.references, variant))
        .sum::<f64>()
        / records.len() as f64)
}

// ---------------------------------------------------------------------------
// METEOR
// ---------------------------------------------------------------------------

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_VARIANT: &str = "METEOR-ex+stem";

/// Aligns in two stages (exact, then stem). Within a stage each hypothesis
/// word takes the unmatched reference word right after the previous match if
/// it fits, else the first one that does. Returns `(hyp, ref)` index pairs.
fn meteor_align(hyp: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let stems_h: Vec<String> = hyp.iter().map(|t| text::stem(t)).collect();
    let stems_r: Vec<String> = reference.iter().map(|t| text::stem(t)).collect();
    let mut ref_used = vec![false; reference.len()];
    let mut hyp_used = vec![false; hyp.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let stages: [&dyn Fn(usize, usize) -> bool; 2] =
        [&|i, j| hyp[i] == reference[j], &|i, j| stems_h[i] == stems_r[j]];
    for same in stages {
        let mut last: Option<usize> = None;
        for i in 0..hyp.len() {
            if hyp_used[i] {
                last = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
                continue;
            }
            let next = last.map(|j| j + 1).filter(|&j| j < reference.len() && !ref_used[j] && same(i, j));
            let pick = next.or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && same(i, j)));
            if let Some(j) = pick {
                ref_used[j] = true;
                hyp_used[i] = true;
                pairs.push((i, j));
                last = Some(j);
            } else {
                last = None;
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn meteor_pair(hyp: &[String], reference: &[String]) -> f64 {
    let pairs = meteor_align(hyp, reference);
    let m = pairs.len();
    if m == 0 || hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Best score over the references, in `[0, 1]`.
pub fn sentence_meteor(candidate: &str, references: &[String]) -> f64 {
    let hyp = tokens(candidate);
    references
        .iter()
        .map(|r| meteor_pair(&hyp, &tokens(r)))
        .fold(0.0, f64::max)
}

/// Mean sentence METEOR in `[0, 1]`.
pub fn meteor(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(records
        .iter()
        .map(|r| sentence_meteor(&r.candidate, &r.references))
        .sum::<f64>()
        / records.len() as f64)
}

// ---------------------------------------------------------------------------
// SARI
// ---------------------------------------------------------------------------

pub const SARI_ORDER: usize = 4;

/// F1 with the zero-count convention: when nothing should be done in a
/// category and the candidate does nothing either, the score is 1.
fn op_f1(good: f64, proposed: f64, expected: f64) -> f64 {
    if expected == 0.0 && proposed == 0.0 {
        return 1.0;
    }
    let p = if proposed > 0.0 { good / proposed } else { 0.0 };
    let r = if expected > 0.0 { good / expected } else { 0.0 };
    f1(p, r)
}

type Counts<'a> = HashMap<&'a [String], f64>;

fn scaled<'a>(toks: &'a [String], n: usize, k: f64) -> Counts<'a> {
    ngram_counts(toks, n).into_iter().map(|(g, c)| (g, c as f64 * k)).collect()
}

fn min_counts<'a>(a: &Counts<'a>, b: &Counts<'a>) -> Counts<'a> {
    a.iter()
        .filter_map(|(g, x)| b.get(g).map(|y| (*g, x.min(*y))))
        .filter(|(_, v)| *v > 0.0)
        .collect()
}

fn minus<'a>(a: &Counts<'a>, b: &Counts<'a>) -> Counts<'a> {
    a.iter()
        .map(|(g, x)| (*g, x - b.get(g).copied().unwrap_or(0.0)))
        .filter(|(_, v)| *v > 0.0)
        .collect()
}

/// `(add F1, keep F1, delete precision)` for one n-gram order. Keep and
/// delete use reference-count-weighted n-grams; add uses n-gram sets.
fn sari_ngram(src: &[String], cand: &[String], refs: &[Vec<String>], n: usize) -> (f64, f64, f64) {
    let k = refs.len() as f64;
    let s = scaled(src, n, k);
    let c = scaled(cand, n, k);
    let mut r: Counts = HashMap::new();
    for rt in refs {
        for (g, v) in scaled(rt, n, 1.0) {
            *r.entry(g).or_insert(0.0) += v;
        }
    }

    let keep = min_counts(&s, &c);
    let keep_good = min_counts(&keep, &r);
    let keep_all = min_counts(&s, &r);
    let ratio = |num: &Counts, den: &Counts| -> f64 {
        den.iter().map(|(g, d)| num.get(g).copied().unwrap_or(0.0) / d).sum()
    };
    let keep_p = if keep.is_empty() { 0.0 } else { ratio(&keep_good, &keep) / keep.len() as f64 };
    let keep_r = if keep_all.is_empty() { 0.0 } else { ratio(&keep_good, &keep_all) / keep_all.len() as f64 };
    let keep_f = if keep.is_empty() && keep_all.is_empty() { 1.0 } else { f1(keep_p, keep_r) };

    let del = minus(&s, &c);
    let del_good = minus(&del, &r);
    let del_all = minus(&s, &r);
    let del_p = if del.is_empty() {
        if del_all.is_empty() { 1.0 } else { 0.0 }
    } else {
        ratio(&del_good, &del) / del.len() as f64
    };

    let src_set: HashSet<&[String]> = s.keys().copied().collect();
    let ref_set: HashSet<&[String]> = r.keys().copied().collect();
    let add: HashSet<&[String]> = c.keys().copied().filter(|g| !src_set.contains(g)).collect();
    let add_all: HashSet<&[String]> = ref_set.difference(&src_set).copied().collect();
    let add_good = add.intersection(&add_all).count();
    let add_f = op_f1(add_good as f64, add.len() as f64, add_all.len() as f64);
    (add_f, keep_f, del_p)
}

/// Sentence SARI in `[0, 100]`: the mean of the add, keep and delete scores,
/// each averaged over n = 1..4.
pub fn sentence_sari(source: &str, candidate: &str, references: &[String]) -> f64 {
    let src = tokens(source);
    let cand = tokens(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r)).collect();
    let (mut add, mut keep, mut del) = (0.0, 0.0, 0.0);
    for n in 1..=SARI_ORDER {
        let (a, k, d) = sari_ngram(&src, &cand, &refs, n);
        add += a;
        keep += k;
        del += d;
    }
    let n = SARI_ORDER as f64;
    100.0 * (add / n + keep / n + del / n) / 3.0
}

/// Mean sentence SARI in `[0, 100]`.
pub fn sari(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(records
        .iter()
        .map(|r| sentence_sari(&r.source, &r.candidate, &r.references))
        .sum::<f64>()
        / records.len() as f64)
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

/// Significant digits kept in a perplexity value. Log-probabilities arrive
/// already rounded, so `exp(ln V)` lands an ulp or two off `V`; rounding the
/// result keeps the uniform and deterministic cases exact.
pub const PPL_DIGITS: i32 = 12;

fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let shift = digits - 1 - x.abs().log10().floor() as i32;
    if shift >= 0 {
        let scale = 10f64.powi(shift);
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi(-shift);
        (x / scale).round() * scale
    }
}

/// `exp` of the mean per-token negative log-probability over all texts,
/// rounded to [`PPL_DIGITS`] significant digits.
pub fn perplexity<S: AsRef<str>>(texts: &[S], scorer: &dyn LmScorer) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for t in texts {
        let lp = scorer.score(t.as_ref())?;
        nll -= lp.iter().sum::<f64>();
        n += lp.len();
    }
    if n == 0 {
        return Err(Error::invalid("no tokens to score"));
    }
    Ok(round_significant((nll / n as f64).exp(), PPL_DIGITS))
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    pub meteor: f64,
    pub sari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub records: usize,
    pub tokenizer: String,
    pub bleu_smoothing: String,
    pub meteor_variant: String,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    /// Reported ×100.
    pub meteor: f64,
    pub sari: f64,
    /// Always absent; kept so the table keeps its column.
    pub gruen: Option<f64>,
    pub ppl: Option<f64>,
    pub per_record: Vec<RecordScores>,
}

/// A fixed row of reference numbers shown under the measured one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub label: &'static str,
    /// BLEU, ROUGE-1, ROUGE-2, ROUGE-L, METEOR, SARI, GRUEN, PPL.
    pub values: [f64; 8],
}

/// Full-scale idiomatic → literal reference numbers.
pub const ISP_REFERENCE: ReferenceRow = ReferenceRow {
    label: "reference ISP (full scale)",
    values: [83.69, 87.82, 82.47, 88.19, 87.92, 81.39, 83.06, 3.12],
};

/// Full-scale literal → idiomatic reference numbers.
pub const ISG_REFERENCE: ReferenceRow = ReferenceRow {
    label: "reference ISG (full scale)",
    values: [91.08, 93.01, 90.08, 93.19, 92.86, 83.87, 89.13, 3.01],
};

pub const TABLE_COLUMNS: [&str; 8] = ["BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR", "SARI", "GRUEN", "PPL"];

/// Scores every metric; perplexity is computed on the candidates when a
/// scorer is given.
pub fn evaluate(records: &[EvalRecord], scorer: Option<&dyn LmScorer>) -> Result<ScoreReport> {
    nonempty(records)?;
    for r in records {
        r.validate()?;
    }
    let per_record = records
        .iter()
        .map(|r| RecordScores {
            bleu: sentence_bleu(&r.candidate, &r.references),
            rouge1: sentence_rouge(&r.candidate, &r.references, Rouge::One),
            rouge2: sentence_rouge(&r.candidate, &r.references, Rouge::Two),
            rougel: sentence_rouge(&r.candidate, &r.references, Rouge::L),
            meteor: 100.0 * sentence_meteor(&r.candidate, &r.references),
            sari: sentence_sari(&r.source, &r.candidate, &r.references),
        })
        .collect::<Vec<_>>();
    let mean = |f: fn(&RecordScores) -> f64| per_record.iter().map(f).sum::<f64>() / per_record.len() as f64;
    let ppl = match scorer {
        Some(s) => {
            let cands: Vec<&str> = records
                .iter()
                .map(|r| r.candidate.as_str())
                .filter(|c| !c.trim().is_empty())
                .collect();
            Some(perplexity(&cands, s)?)
        }
        None => None,
    };
    Ok(ScoreReport {
        records: records.len(),
        tokenizer: "core tokenizer, lowercased".into(),
        bleu_smoothing: "none".into(),
        meteor_variant: METEOR_VARIANT.into(),
        bleu: bleu(records)?,
        rouge1: mean(|r| r.rouge1),
        rouge2: mean(|r| r.rouge2),
        rougel: mean(|r| r.rougel),
        meteor: mean(|r| r.meteor),
        sari: mean(|r| r.sari),
        gruen: None,
        ppl,
        per_record,
    })
}

impl ScoreReport {
    fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.bleu),
            Some(self.rouge1),
            Some(self.rouge2),
            Some(self.rougel),
            Some(self.meteor),
            Some(self.sari),
            self.gruen,
            self.ppl,
        ]
    }

    /// Aligned plain-text table: a header, the measured row `label`, then
    /// any reference rows.
    pub fn table(&self, label: &str, references: &[ReferenceRow]) -> String {
        let mut rows: Vec<(String, Vec<String>)> = vec![(
            label.to_string(),
            self.values()
                .iter()
                .map(|v| v.map_or("n/a".to_string(), |x| format!("{x:.2}")))
                .collect(),
        )];
        for r in references {
            rows.push((r.label.to_string(), r.values.iter().map(|x| format!("{x:.2}")).collect()));
        }
        let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("System".len());
        let col_w: Vec<usize> = (0..TABLE_COLUMNS.len())
            .map(|i| rows.iter().map(|r| r.1[i].len()).max().unwrap_or(0).max(TABLE_COLUMNS[i].len()))
            .collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# tokenizer: {}; BLEU smoothing: {}; METEOR: {}; records: {}",
            self.tokenizer, self.bleu_smoothing, self.meteor_variant, self.records
        );
        let _ = write!(out, "{:<name_w$}", "System");
        for (c, w) in TABLE_COLUMNS.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (name, vals) in rows {
            let _ = write!(out, "{name:<name_w$}");
            for (v, w) in vals.iter().zip(&col_w) {
                let _ = write!(out, "  {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
