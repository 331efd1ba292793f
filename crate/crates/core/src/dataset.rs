//! Domain types shared by every stage, the parallel-dataset model, and JSONL
//! persistence.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ibt::contains_idiom;
use crate::text::{self, Upos};

/// Token span `[start, end)` of an idiomatic expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct IdiomSpan {
    start: usize,
    end: usize,
}

impl IdiomSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty span [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<[usize; 2]> for IdiomSpan {
    type Error = Error;

    fn try_from([start, end]: [usize; 2]) -> Result<Self> {
        IdiomSpan::new(start, end)
    }
}

impl From<IdiomSpan> for [usize; 2] {
    fn from(s: IdiomSpan) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdiomaticSentence {
    pub text: String,
    pub tokens: Vec<String>,
    pub span: IdiomSpan,
    /// Lemmatized, lowercased form of the tokens under `span`.
    pub idiom_lemma: String,
}

impl IdiomaticSentence {
    pub fn new(text: impl Into<String>, span: IdiomSpan) -> Result<Self> {
        let text = text.into();
        let tokens = text::tokenize(&text);
        if span.end > tokens.len() {
            return Err(Error::invalid(format!(
                "span [{}, {}) out of range for {} tokens",
                span.start,
                span.end,
                tokens.len()
            )));
        }
        let idiom_lemma = text::lemma_key(&tokens[span.start..span.end]);
        Ok(Self {
            text,
            tokens,
            span,
            idiom_lemma,
        })
    }

    /// Surface tokens of the idiomatic expression.
    pub fn idiom_tokens(&self) -> &[String] {
        &self.tokens[self.span.start..self.span.end]
    }

    pub fn idiom_surface(&self) -> String {
        self.idiom_tokens().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LiteralSentence {
    pub text: String,
    pub tokens: Vec<String>,
}

impl LiteralSentence {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = text::tokenize(&text);
        Self { text, tokens }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Provenance of a parallel pair: hand-made seed data or the back-translation
/// iteration that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    Seed,
    Augmented(u32),
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::Seed => f.write_str("seed"),
            SourceTag::Augmented(n) => write!(f, "augmented-iter-{n}"),
        }
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "seed" {
            return Ok(SourceTag::Seed);
        }
        s.strip_prefix("augmented-iter-")
            .and_then(|n| n.parse().ok())
            .map(SourceTag::Augmented)
            .ok_or_else(|| Error::invalid(format!("unknown source_tag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParallelPair {
    pub idiomatic: IdiomaticSentence,
    pub literal: LiteralSentence,
    pub idiom: String,
    pub source_tag: SourceTag,
}

impl ParallelPair {
    pub fn new(
        idiomatic: IdiomaticSentence,
        literal: LiteralSentence,
        idiom: impl Into<String>,
        source_tag: SourceTag,
    ) -> Self {
        Self {
            idiomatic,
            literal,
            idiom: idiom.into(),
            source_tag,
        }
    }
}

/// A monolingual idiomatic sentence with its known expression span.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdiomaticRecord {
    pub sentence: IdiomaticSentence,
    pub idiom: String,
}

/// `(I_M, Ŝ_M, Î_M)`: an idiomatic sentence, its literal hypothesis, and the
/// hypothesis translated back into idiomatic form. Generation failures are
/// recorded with empty texts and rejected during selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateTriple {
    pub original: IdiomaticRecord,
    pub literal_hyp: String,
    pub roundtrip: String,
}

impl CandidateTriple {
    pub fn is_complete(&self) -> bool {
        !self.original.sentence.text.trim().is_empty()
            && !self.literal_hyp.trim().is_empty()
            && !self.roundtrip.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionFlags {
    pub stopwords_dropped: bool,
    pub lemmatized: bool,
}

impl CorruptionFlags {
    pub fn is_clean(&self) -> bool {
        !self.stopwords_dropped && !self.lemmatized
    }
}

/// Training unit of the definition-conditioned infilling model.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedInstance {
    /// Corrupted sentence with exactly one [`text::MASK`] token.
    pub masked_tokens: Vec<String>,
    pub mask_index: usize,
    pub pos: Upos,
    pub definitions: Vec<String>,
    /// The original, uncorrupted sentence.
    pub target_text: String,
    pub flags: CorruptionFlags,
}

impl MaskedInstance {
    pub fn validate(&self) -> Result<()> {
        let masks = self.masked_tokens.iter().filter(|t| *t == text::MASK).count();
        if masks != 1 {
            return Err(Error::invalid(format!("expected one mask token, found {masks}")));
        }
        if self.masked_tokens.get(self.mask_index).map(String::as_str) != Some(text::MASK) {
            return Err(Error::invalid(format!(
                "mask_index {} does not point at the mask token",
                self.mask_index
            )));
        }
        if !self.pos.is_maskable() {
            return Err(Error::invalid(format!("tag {} cannot be masked", self.pos)));
        }
        if self.definitions.is_empty() || self.definitions.iter().any(|d| d.trim().is_empty()) {
            return Err(Error::invalid("definitions must be non-empty"));
        }
        if self.target_text.trim().is_empty() {
            return Err(Error::invalid("empty target"));
        }
        Ok(())
    }
}

/// Training hyperparameters. Defaults are the full-scale settings; toy runs
/// override them through config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub ucd_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub ucd_epochs: usize,
    pub max_seq_len: usize,
    pub beams: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub ibt_lr: f64,
    pub ibt_iterations: usize,
    pub p_stopword_drop: f64,
    pub p_lemmatize: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            ucd_lr: 1e-5,
            warmup_steps: 20_000,
            batch_size: 16,
            ucd_epochs: 3,
            max_seq_len: 128,
            beams: 5,
            top_k: 100,
            top_p: 0.5,
            ibt_lr: 5e-5,
            ibt_iterations: 5,
            p_stopword_drop: 0.8,
            p_lemmatize: 0.4,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("top_p", self.top_p),
            ("p_stopword_drop", self.p_stopword_drop),
            ("p_lemmatize", self.p_lemmatize),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} is not a probability")));
            }
        }
        for (name, n) in [
            ("batch_size", self.batch_size),
            ("ucd_epochs", self.ucd_epochs),
            ("max_seq_len", self.max_seq_len),
            ("beams", self.beams),
            ("top_k", self.top_k),
            ("ibt_iterations", self.ibt_iterations),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.ucd_lr > 0.0 && self.ibt_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Parallel,
    IdiomaticOnly,
    MaskedInstance,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Schema::Parallel),
            "idiomatic-only" => Ok(Schema::IdiomaticOnly),
            "masked-instance" => Ok(Schema::MaskedInstance),
            other => Err(Error::invalid(format!("unknown schema `{other}`"))),
        }
    }
}

/// A record type with a fixed one-object-per-line JSON form.
pub trait JsonlRecord: Sized {
    const SCHEMA: Schema;
    type Row: Serialize + DeserializeOwned;

    fn to_row(&self) -> Self::Row;
    fn from_row(row: Self::Row) -> Result<Self>;
}

#[derive(Serialize, Deserialize)]
pub struct ParallelRow {
    pub idiomatic: String,
    pub literal: String,
    pub idiom: String,
    pub span: [usize; 2],
    pub source_tag: String,
}

impl JsonlRecord for ParallelPair {
    const SCHEMA: Schema = Schema::Parallel;
    type Row = ParallelRow;

    fn to_row(&self) -> ParallelRow {
        ParallelRow {
            idiomatic: self.idiomatic.text.clone(),
            literal: self.literal.text.clone(),
            idiom: self.idiom.clone(),
            span: self.idiomatic.span.into(),
            source_tag: self.source_tag.to_string(),
        }
    }

    fn from_row(row: ParallelRow) -> Result<Self> {
        let span = IdiomSpan::try_from(row.span)?;
        Ok(ParallelPair {
            idiomatic: IdiomaticSentence::new(row.idiomatic, span)?,
            literal: LiteralSentence::new(row.literal),
            idiom: row.idiom,
            source_tag: row.source_tag.parse()?,
        })
    }
}

#[derive(Serialize, Deserialize)]
pub struct IdiomaticRow {
    pub idiomatic: String,
    pub idiom: String,
    pub span: [usize; 2],
}

impl JsonlRecord for IdiomaticRecord {
    const SCHEMA: Schema = Schema::IdiomaticOnly;
    type Row = IdiomaticRow;

    fn to_row(&self) -> IdiomaticRow {
        IdiomaticRow {
            idiomatic: self.sentence.text.clone(),
            idiom: self.idiom.clone(),
            span: self.sentence.span.into(),
        }
    }

    fn from_row(row: IdiomaticRow) -> Result<Self> {
        let span = IdiomSpan::try_from(row.span)?;
        Ok(IdiomaticRecord {
            sentence: IdiomaticSentence::new(row.idiomatic, span)?,
            idiom: row.idiom,
        })
    }
}

#[derive(Serialize, Deserialize)]
pub struct MaskedRow {
    pub masked: String,
    pub mask_index: usize,
    pub pos: Upos,
    pub definitions: Vec<String>,
    pub target: String,
    #[serde(default, skip_serializing_if = "CorruptionFlags::is_clean")]
    pub flags: CorruptionFlags,
}

impl JsonlRecord for MaskedInstance {
    const SCHEMA: Schema = Schema::MaskedInstance;
    type Row = MaskedRow;

    fn to_row(&self) -> MaskedRow {
        MaskedRow {
            masked: text::detokenize(&self.masked_tokens),
            mask_index: self.mask_index,
            pos: self.pos,
            definitions: self.definitions.clone(),
            target: self.target_text.clone(),
            flags: self.flags,
        }
    }

    fn from_row(row: MaskedRow) -> Result<Self> {
        let inst = MaskedInstance {
            masked_tokens: text::tokenize(&row.masked),
            mask_index: row.mask_index,
            pos: row.pos,
            definitions: row.definitions,
            target_text: row.target,
            flags: row.flags,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Loaded records of any schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Parallel(Vec<ParallelPair>),
    IdiomaticOnly(Vec<IdiomaticRecord>),
    MaskedInstance(Vec<MaskedInstance>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Parallel(v) => v.len(),
            Dataset::IdiomaticOnly(v) => v.len(),
            Dataset::MaskedInstance(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
    Ok(match schema {
        Schema::Parallel => Dataset::Parallel(load_jsonl(path)?),
        Schema::IdiomaticOnly => Dataset::IdiomaticOnly(load_jsonl(path)?),
        Schema::MaskedInstance => Dataset::MaskedInstance(load_jsonl(path)?),
    })
}

/// Reads one record per non-blank line. The first malformed line aborts the
/// load with its 1-based line number.
pub fn load_jsonl<R: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
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
        let row: R::Row = serde_json::from_str(&line)
            .map_err(|e| schema_err(format!("{:?} record: {e}", R::SCHEMA)))?;
        out.push(R::from_row(row).map_err(|e| schema_err(e.to_string()))?);
    }
    Ok(out)
}

/// Writes records one per line with a fixed field order; returns the count.
pub fn save_jsonl<R: JsonlRecord>(records: &[R], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r.to_row())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn save_dataset(records: &Dataset, path: impl AsRef<Path>) -> Result<usize> {
    match records {
        Dataset::Parallel(v) => save_jsonl(v, path),
        Dataset::IdiomaticOnly(v) => save_jsonl(v, path),
        Dataset::MaskedInstance(v) => save_jsonl(v, path),
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    EmptyIdiomatic,
    EmptyLiteral,
    EmptyIdiom,
    SpanOutOfRange,
    IdiomMismatch,
    IdiomInLiteral,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::EmptyIdiomatic => "empty-idiomatic",
            Violation::EmptyLiteral => "empty-literal",
            Violation::EmptyIdiom => "empty-idiom",
            Violation::SpanOutOfRange => "span-out-of-range",
            Violation::IdiomMismatch => "idiom-mismatch",
            Violation::IdiomInLiteral => "idiom-in-literal",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}

/// Checks the pair invariants. Only the expression region is constrained;
/// the surrounding context may differ between the two sides.
pub fn validate_pair(pair: &ParallelPair) -> ValidationReport {
    let mut violations = Vec::new();
    let idiomatic = &pair.idiomatic;
    if idiomatic.tokens.is_empty() {
        violations.push(Violation::EmptyIdiomatic);
    }
    if pair.literal.is_empty() {
        violations.push(Violation::EmptyLiteral);
    }
    let idiom_tokens = text::tokenize(&pair.idiom);
    if idiom_tokens.is_empty() {
        violations.push(Violation::EmptyIdiom);
    }
    if idiomatic.span.end() > idiomatic.tokens.len() {
        violations.push(Violation::SpanOutOfRange);
    } else if !idiom_tokens.is_empty() {
        let surface = idiomatic.idiom_tokens().join(" ").to_lowercase();
        let given = idiom_tokens.join(" ").to_lowercase();
        let lemma = text::lemma_key(&idiom_tokens);
        if given != surface && lemma != idiomatic.idiom_lemma {
            violations.push(Violation::IdiomMismatch);
        }
    }
    if !pair.literal.is_empty()
        && !idiomatic.idiom_lemma.is_empty()
        && contains_idiom(&pair.literal.text, &idiomatic.idiom_lemma)
    {
        violations.push(Violation::IdiomInLiteral);
    }
    ValidationReport { violations }
}
