//! Exit-code classification, config resolution, run manifests and JSON logs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use idiolit_core::dataset::Hyperparams;
use idiolit_core::Error;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::Common;

pub const MANIFEST_NAME: &str = "run-manifest.json";
pub const CACHE_ENV: &str = "IDIOLIT_CACHE_DIR";

#[derive(Debug)]
pub enum Failure {
    /// Bad input, flags or config: exit 1.
    Validation(String),
    /// Anything that went wrong while running: exit 2.
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Failure::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Failure::Runtime(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_)
            | Error::Schema { .. }
            | Error::Config(_)
            | Error::TooLong { .. }
            | Error::NotFound(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

/// One JSON object per line on stderr.
pub fn log(event: &str, fields: Value) {
    let mut obj = serde_json::Map::new();
    obj.insert("event".into(), Value::String(event.into()));
    if let Value::Object(m) = fields {
        obj.extend(m);
    }
    eprintln!("{}", Value::Object(obj));
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::validation(format!("input file {} does not exist", path.display())))
    }
}

pub fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::validation(format!("directory {} does not exist", path.display())))
    }
}

/// Hyperparameters and seed: defaults, then the config file, then flags
/// (applied by each command).
pub fn resolve(common: &Common) -> CliResult<(Hyperparams, u64)> {
    let mut hp = Hyperparams::default();
    let mut seed = 0;
    if let Some(path) = &common.config {
        require_file(path)?;
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        if let Some(v) = table.remove("seed") {
            seed = v
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .ok_or_else(|| Failure::validation("`seed` must be a non-negative integer"))?;
        }
        let known = toml::Table::try_from(Hyperparams::default()).map_err(|e| Failure::runtime(e.to_string()))?;
        if let Some(k) = table.keys().find(|k| !known.contains_key(*k)) {
            return Err(Failure::validation(format!("{}: unknown key `{k}`", path.display())));
        }
        hp = table
            .try_into()
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    }
    if let Some(s) = common.seed {
        seed = s;
    }
    Ok((hp, seed))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Hashes of every file under `root`, keyed by relative path.
pub fn hash_tree(root: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_NAME) {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                out.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// The record every run leaves behind. Output locations are deliberately
/// absent so two runs into different directories compare equal.
#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub status: &'static str,
    pub seed: u64,
    pub config: C,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &'static str, seed: u64, config: C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            status: "ok",
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = if path.is_dir() {
            let tree = hash_tree(path)?;
            format!("{:x}", Sha256::digest(serde_json::to_vec(&tree)?))
        } else {
            sha256_file(path)?
        };
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output_file(&mut self, path: &Path) -> CliResult<()> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn output_dir(&mut self, root: &Path) -> CliResult<()> {
        self.outputs.extend(hash_tree(root)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| io_err(path, e))?;
        log("manifest", json!({ "path": path.display().to_string(), "status": self.status }));
        Ok(())
    }
}

/// `<out>.run-manifest.json` for a single-file output.
pub fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(MANIFEST_NAME);
    out.with_file_name(name)
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

pub fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let lines = rows
        .iter()
        .map(serde_json::to_string)
        .collect::<Result<Vec<_>, _>>()?;
    write_lines(path, &lines)
}
