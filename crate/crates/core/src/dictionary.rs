//! Definition lookup across several dictionary sources with seeded source
//! selection and an on-disk cache of raw source responses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::embed::stable_hash;
use crate::error::{Error, Result};
use crate::text::{self, Upos};

/// Upper bound on definitions returned by one lookup.
pub const MAX_DEFINITIONS: usize = 16;

const WORDNET_LIKE: &str = include_str!("../data/dictionary/wordnet_like.json");
const WIKI_LIKE: &str = include_str!("../data/dictionary/wiki_like.json");
const WEBAPI_LIKE: &str = include_str!("../data/dictionary/webapi_like.json");
const IDIOM_LEXICON: &str = include_str!("../data/dictionary/idioms.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    WordnetLike,
    WikiLike,
    WebapiLike,
    LocalIdiomLexicon,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::WordnetLike => "wordnet-like",
            SourceKind::WikiLike => "wiki-like",
            SourceKind::WebapiLike => "webapi-like",
            SourceKind::LocalIdiomLexicon => "local-idiom-lexicon",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SourceKind::WordnetLike,
            SourceKind::WikiLike,
            SourceKind::WebapiLike,
            SourceKind::LocalIdiomLexicon,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown dictionary source `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub gloss: String,
    pub source: SourceKind,
    #[serde(default)]
    pub pos: Option<Upos>,
}

impl Definition {
    pub fn new(gloss: impl Into<String>, source: SourceKind, pos: Option<Upos>) -> Result<Self> {
        let gloss = gloss.into();
        if gloss.trim().is_empty() || gloss.contains('\n') {
            return Err(Error::invalid(format!("bad gloss {gloss:?}")));
        }
        Ok(Self { gloss, source, pos })
    }
}

/// Why a source produced no answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceError {
    /// Transient failure; the client moves on and does not cache it.
    Unavailable(String),
}

/// One dictionary backend. `fetch` returns every sense it has (empty when
/// the lemma is unknown); POS filtering happens in the client.
pub trait DictionarySource: Send + Sync {
    fn kind(&self) -> SourceKind;

    /// Stable name used for the cache directory and counters.
    fn id(&self) -> &str {
        self.kind().as_str()
    }

    fn fetch(&self, lemma: &str) -> std::result::Result<Vec<Definition>, SourceError>;
}

#[derive(Deserialize)]
struct FixtureSense {
    gloss: String,
    #[serde(default)]
    pos: Option<Upos>,
}

/// In-memory snapshot: JSON object `{lemma: [{"gloss", "pos"}...]}`.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    kind: SourceKind,
    entries: HashMap<String, Vec<Definition>>,
}

impl FixtureSource {
    pub fn from_json(kind: SourceKind, json: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<FixtureSense>> = serde_json::from_str(json)?;
        let mut entries = HashMap::new();
        for (lemma, senses) in raw {
            let defs = senses
                .into_iter()
                .map(|s| Definition::new(s.gloss, kind, s.pos))
                .collect::<Result<Vec<_>>>()?;
            entries.insert(lemma.to_lowercase(), defs);
        }
        Ok(Self { kind, entries })
    }

    pub fn load(kind: SourceKind, path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(kind, &json)
    }

    /// The three bundled fixture snapshots, in source order.
    pub fn bundled() -> Vec<Self> {
        [
            (SourceKind::WordnetLike, WORDNET_LIKE),
            (SourceKind::WikiLike, WIKI_LIKE),
            (SourceKind::WebapiLike, WEBAPI_LIKE),
        ]
        .into_iter()
        .map(|(k, j)| Self::from_json(k, j).expect("bundled fixture is valid"))
        .collect()
    }
}

impl DictionarySource for FixtureSource {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(&self, lemma: &str) -> std::result::Result<Vec<Definition>, SourceError> {
        Ok(self.entries.get(lemma).cloned().unwrap_or_default())
    }
}

#[derive(Deserialize)]
struct IdiomRow {
    idiom: String,
    glosses: Vec<String>,
}

/// Idiom → glosses table keyed by the idiom's lemma form.
#[derive(Debug, Clone, Default)]
pub struct IdiomLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl IdiomLexicon {
    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: IdiomRow = serde_json::from_str(line).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if row.glosses.is_empty() {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("idiom `{}` has no glosses", row.idiom),
                });
            }
            entries.insert(idiom_key(&row.idiom), row.glosses);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    pub fn bundled() -> Self {
        Self::from_jsonl(IDIOM_LEXICON, Path::new("idioms.jsonl")).expect("bundled lexicon is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl DictionarySource for IdiomLexicon {
    fn kind(&self) -> SourceKind {
        SourceKind::LocalIdiomLexicon
    }

    fn fetch(&self, lemma: &str) -> std::result::Result<Vec<Definition>, SourceError> {
        Ok(self
            .entries
            .get(lemma)
            .map(|gs| {
                gs.iter()
                    .filter_map(|g| Definition::new(g.clone(), SourceKind::LocalIdiomLexicon, None).ok())
                    .collect()
            })
            .unwrap_or_default())
    }
}

fn idiom_key(idiom: &str) -> String {
    text::lemma_key(&text::tokenize(idiom))
}

/// Remote source speaking the free-dictionary JSON shape
/// (`[{"meanings": [{"partOfSpeech", "definitions": [{"definition"}]}]}]`).
/// `url_template` contains `{lemma}`.
pub struct HttpSource {
    kind: SourceKind,
    url_template: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ApiEntry {
    #[serde(default)]
    meanings: Vec<ApiMeaning>,
}

#[derive(Deserialize)]
struct ApiMeaning {
    #[serde(rename = "partOfSpeech", default)]
    part_of_speech: String,
    #[serde(default)]
    definitions: Vec<ApiDefinition>,
}

#[derive(Deserialize)]
struct ApiDefinition {
    definition: String,
}

fn api_pos(name: &str) -> Option<Upos> {
    match name {
        "adverb" => Some(Upos::Adv),
        "adjective" => Some(Upos::Adj),
        "verb" => Some(Upos::Verb),
        "noun" => Some(Upos::Noun),
        _ => None,
    }
}

impl HttpSource {
    pub fn new(kind: SourceKind, url_template: impl Into<String>, timeout: Duration) -> Self {
        Self {
            kind,
            url_template: url_template.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl DictionarySource for HttpSource {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn fetch(&self, lemma: &str) -> std::result::Result<Vec<Definition>, SourceError> {
        let url = self.url_template.replace("{lemma}", lemma);
        let body = match self.agent.get(&url).call() {
            Ok(resp) => resp.into_string().map_err(|e| SourceError::Unavailable(e.to_string()))?,
            Err(ureq::Error::Status(404, _)) => return Ok(Vec::new()),
            Err(e) => return Err(SourceError::Unavailable(e.to_string())),
        };
        let entries: Vec<ApiEntry> =
            serde_json::from_str(&body).map_err(|e| SourceError::Unavailable(format!("bad response: {e}")))?;
        Ok(entries
            .into_iter()
            .flat_map(|e| e.meanings)
            .flat_map(|m| {
                let pos = api_pos(&m.part_of_speech);
                m.definitions
                    .into_iter()
                    .filter_map(move |d| Definition::new(d.definition.replace('\n', " "), self.kind, pos).ok())
            })
            .collect())
    }
}

/// Call counters, observable by tests and logs.
#[derive(Debug, Default)]
pub struct Counters {
    source_calls: Mutex<BTreeMap<String, usize>>,
    cache_hits: AtomicUsize,
}

impl Counters {
    pub fn source_calls(&self, source: &str) -> usize {
        self.source_calls.lock().unwrap().get(source).copied().unwrap_or(0)
    }

    pub fn total_source_calls(&self) -> usize {
        self.source_calls.lock().unwrap().values().sum()
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }
}

type Shard = BTreeMap<String, Vec<Definition>>;

/// Raw per-source responses (including empty ones), in memory and
/// optionally on disk as `<dir>/<source>/<shard>.json`.
#[derive(Debug, Default)]
struct Cache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<(String, String), Vec<Definition>>>,
    disk_lock: Mutex<()>,
}

fn shard_name(lemma: &str) -> String {
    let prefix: String = lemma
        .chars()
        .take(2)
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect();
    if prefix.is_empty() {
        "_".into()
    } else {
        prefix
    }
}

impl Cache {
    fn shard_path(&self, source: &str, lemma: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(source).join(format!("{}.json", shard_name(lemma))))
    }

    fn read_shard(path: &Path) -> Shard {
        fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn get(&self, source: &str, lemma: &str) -> Option<Vec<Definition>> {
        let key = (source.to_string(), lemma.to_string());
        if let Some(hit) = self.memory.lock().unwrap().get(&key) {
            return Some(hit.clone());
        }
        let path = self.shard_path(source, lemma)?;
        let hit = Self::read_shard(&path).remove(lemma)?;
        self.memory.lock().unwrap().insert(key, hit.clone());
        Some(hit)
    }

    fn put(&self, source: &str, lemma: &str, defs: &[Definition]) -> Result<()> {
        self.memory
            .lock()
            .unwrap()
            .insert((source.to_string(), lemma.to_string()), defs.to_vec());
        let Some(path) = self.shard_path(source, lemma) else {
            return Ok(());
        };
        let _guard = self.disk_lock.lock().unwrap();
        let mut shard = Self::read_shard(&path);
        shard.insert(lemma.to_string(), defs.to_vec());
        let dir = path.parent().expect("shard has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension(format!("json.tmp{}", std::process::id()));
        fs::write(&tmp, serde_json::to_string_pretty(&shard)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Looks definitions up across ordered sources; see [`DictClient::lookup`].
pub struct DictClient {
    sources: Vec<Arc<dyn DictionarySource>>,
    idiom_lexicon: Option<Arc<dyn DictionarySource>>,
    seed: u64,
    cache: Cache,
    counters: Counters,
}

impl DictClient {
    pub fn new(sources: Vec<Arc<dyn DictionarySource>>, seed: u64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("a dictionary client needs at least one source".into()));
        }
        Ok(Self {
            sources,
            idiom_lexicon: None,
            seed,
            cache: Cache::default(),
            counters: Counters::default(),
        })
    }

    /// Bundled fixture sources plus the bundled idiom lexicon, no disk cache.
    pub fn bundled(seed: u64) -> Self {
        let sources = FixtureSource::bundled()
            .into_iter()
            .map(|s| Arc::new(s) as Arc<dyn DictionarySource>)
            .collect();
        Self::new(sources, seed)
            .expect("bundled sources")
            .with_idiom_lexicon(IdiomLexicon::bundled())
    }

    pub fn with_idiom_lexicon(mut self, lexicon: impl DictionarySource + 'static) -> Self {
        self.idiom_lexicon = Some(Arc::new(lexicon));
        self
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache.dir = Some(dir.into());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Drops the in-memory cache (the disk cache is kept).
    pub fn clear_memory_cache(&self) {
        self.cache.memory.lock().unwrap().clear();
    }

    fn fetch_cached(&self, source: &dyn DictionarySource, lemma: &str) -> Option<Vec<Definition>> {
        if let Some(hit) = self.cache.get(source.id(), lemma) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Some(hit);
        }
        *self
            .counters
            .source_calls
            .lock()
            .unwrap()
            .entry(source.id().to_string())
            .or_default() += 1;
        match source.fetch(lemma) {
            Ok(defs) => {
                // A failed cache write only costs a refetch later.
                let _ = self.cache.put(source.id(), lemma, &defs);
                Some(defs)
            }
            Err(SourceError::Unavailable(_)) => None,
        }
    }

    fn choose(&self, sources: &[Arc<dyn DictionarySource>], lemma: &str, pos: Option<Upos>) -> Option<Vec<Definition>> {
        let found: Vec<Vec<Definition>> = sources
            .iter()
            .filter_map(|s| self.fetch_cached(s.as_ref(), lemma))
            .filter(|d| !d.is_empty())
            .collect();
        if found.is_empty() {
            return None;
        }
        let pos_key = pos.map_or("-", Upos::as_str);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&self.seed.to_string(), lemma, pos_key]));
        let defs = &found[rng.random_range(0..found.len())];
        Some(select_senses(defs, pos))
    }

    /// Definitions for a word lemma from one source chosen uniformly among
    /// the sources that have it. A pure function of `(seed, lemma, pos)`.
    pub fn lookup(&self, lemma: &str, pos: Option<Upos>) -> Result<Vec<Definition>> {
        let lemma = normalize(lemma)?;
        self.choose(&self.sources, &lemma, pos)
            .ok_or(Error::NotFound(lemma))
    }

    /// Definitions for an idiom (lemma form, e.g. "behind bar"). Regular
    /// sources are tried first; the local idiom lexicon is the last resort.
    pub fn lookup_idiom(&self, idiom_lemma: &str) -> Result<Vec<Definition>> {
        let key = idiom_key(&normalize(idiom_lemma)?);
        if let Some(defs) = self.choose(&self.sources, &key, None) {
            return Ok(defs);
        }
        self.idiom_lexicon
            .as_ref()
            .and_then(|lex| self.choose(std::slice::from_ref(lex), &key, None))
            .ok_or(Error::NotFound(key))
    }
}

fn normalize(lemma: &str) -> Result<String> {
    let lemma = lemma.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if lemma.is_empty() {
        return Err(Error::invalid("lookup of an empty lemma"));
    }
    Ok(lemma)
}

/// Senses matching `pos` if there are any, otherwise all senses; capped.
fn select_senses(defs: &[Definition], pos: Option<Upos>) -> Vec<Definition> {
    let matching: Vec<Definition> = match pos {
        Some(p) => defs.iter().filter(|d| d.pos == Some(p)).cloned().collect(),
        None => Vec::new(),
    };
    let mut out = if matching.is_empty() { defs.to_vec() } else { matching };
    out.truncate(MAX_DEFINITIONS);
    out
}

/// Gloss strings of a definition list.
pub fn glosses(defs: &[Definition]) -> Vec<String> {
    defs.iter().map(|d| d.gloss.clone()).collect()
}
