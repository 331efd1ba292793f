use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use idiolit_core::backends::{
    generate, BackendConfig, BackendRegistry, BigramLm, DecodeParams, Direction, LexiconTagger, Seq2SeqBackend,
    TrainSchedule,
};
use idiolit_core::corpus::{build_corpus, write_corpus, CorpusConfig};
use idiolit_core::dataset::{load_jsonl, save_jsonl, Hyperparams, IdiomaticRecord, MaskedInstance, ParallelPair, SourceTag};
use idiolit_core::dictionary::DictClient;
use idiolit_core::ibt::{run_ibt, IbtConfig, IbtState, RegistryFactory, RetrainMode};
use idiolit_core::metrics::{self, EvalRecord, ReferenceRow, ISG_REFERENCE, ISP_REFERENCE};
use idiolit_core::text;
use idiolit_core::ucd::{self, infer_paraphrase, mask_fill_accuracy, train_ucd, UcdConfig, UcdModel};
use idiolit_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::run::*;

/// Written next to every back-translation checkpoint so it can be reloaded
/// through the registry.
pub const BACKEND_FILE: &str = "backend.toml";

fn dict_client(seed: u64) -> DictClient {
    let client = DictClient::bundled(seed);
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => client.with_cache_dir(PathBuf::from(dir)),
        _ => client,
    }
}

fn read_sentences(path: &Path) -> CliResult<Vec<String>> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn load<R: idiolit_core::dataset::JsonlRecord>(path: &Path) -> CliResult<Vec<R>> {
    require_file(path)?;
    Ok(load_jsonl(path)?)
}

// ---------------------------------------------------------------------------
// prep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PrepConfig {
    input: String,
    corpus: CorpusConfig,
    cache_dir: Option<String>,
}

pub fn prep(a: &PrepArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let config = CorpusConfig {
        p_stopword_drop: a.p_stopword_drop.unwrap_or(hp.p_stopword_drop),
        p_lemmatize: a.p_lemmatize.unwrap_or(hp.p_lemmatize),
        max_len: a.max_len.unwrap_or(hp.max_seq_len),
    };
    config.validate()?;
    let sentences = read_sentences(&a.input)?;
    let client = dict_client(seed);
    let (instances, stats) = build_corpus(&sentences, &config, &client, &LexiconTagger, seed)?;
    let stats_path = a.stats.clone().unwrap_or_else(|| {
        let mut n = a.out.file_name().unwrap_or_default().to_os_string();
        n.push(".stats.json");
        a.out.with_file_name(n)
    });
    ensure_parent(&a.out)?;
    ensure_parent(&stats_path)?;
    write_corpus(&instances, &stats, &a.out, &stats_path)?;
    log("prep", serde_json::to_value(&stats)?);

    let mut m = Manifest::new(
        "prep",
        seed,
        PrepConfig {
            input: a.input.display().to_string(),
            corpus: config,
            cache_dir: std::env::var(CACHE_ENV).ok(),
        },
    );
    m.input(&a.input)?;
    m.output_file(&a.out)?;
    m.output_file(&stats_path)?;
    m.write(&manifest_beside(&a.out))
}

// ---------------------------------------------------------------------------
// train-ucd
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrainUcdConfig {
    corpus: String,
    model: UcdConfig,
    schedule: TrainSchedule,
    eval: Option<String>,
}

pub fn train_ucd_cmd(a: &TrainUcdArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let mut schedule = TrainSchedule::ucd(&hp);
    schedule.lr = a.lr.unwrap_or(schedule.lr);
    schedule.epochs = a.epochs.unwrap_or(schedule.epochs);
    schedule.batch_size = a.batch_size.unwrap_or(schedule.batch_size);
    schedule.warmup_steps = a.warmup_steps.unwrap_or(schedule.warmup_steps);
    schedule.max_len = a.max_len.unwrap_or(schedule.max_len);
    schedule.validate()?;
    let model_config = UcdConfig {
        max_len: schedule.max_len,
        ..UcdConfig::default()
    };
    let instances: Vec<MaskedInstance> = load(&a.corpus)?;
    let held: Option<Vec<MaskedInstance>> = a.eval.as_deref().map(load).transpose()?;

    log("train-ucd.start", json!({ "instances": instances.len(), "schedule": schedule }));
    let (model, curve) = train_ucd(&instances, &model_config, &schedule, seed)?;
    model.save(&a.out)?;
    let loss_path = a.out.join("loss.json");
    fs::write(&loss_path, serde_json::to_string(&curve)? + "\n").map_err(|e| io_err(&loss_path, e))?;
    log(
        "train-ucd.done",
        json!({ "params": model.num_params(), "steps": curve.steps.len(), "final_loss": curve.last() }),
    );
    if let Some(held) = &held {
        let acc = mask_fill_accuracy(&model, held, &DecodeParams::greedy(schedule.max_len))?;
        let path = a.out.join("eval.json");
        fs::write(&path, json!({ "instances": held.len(), "exact_match": acc }).to_string() + "\n")
            .map_err(|e| io_err(&path, e))?;
        log("train-ucd.eval", json!({ "exact_match": acc }));
    }

    let mut m = Manifest::new(
        "train-ucd",
        seed,
        TrainUcdConfig {
            corpus: a.corpus.display().to_string(),
            model: model_config,
            schedule,
            eval: a.eval.as_ref().map(|p| p.display().to_string()),
        },
    );
    m.input(&a.corpus)?;
    if let Some(p) = &a.eval {
        m.input(p)?;
    }
    m.output_dir(&a.out)?;
    m.write(&a.out.join(MANIFEST_NAME))
}

// ---------------------------------------------------------------------------
// ibt
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct IbtRunConfig {
    parallel: String,
    mono: String,
    backend: BackendConfig,
    ibt: IbtConfig,
}

fn hp_decode(hp: &Hyperparams, max_len: usize) -> DecodeParams {
    DecodeParams {
        beams: hp.beams,
        top_k: hp.top_k,
        top_p: hp.top_p,
        max_len,
        sample: false,
    }
}

fn write_state(out: &Path, state: &IbtState) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    save_jsonl(&state.parallel, out.join("parallel.jsonl"))?;
    save_jsonl(&state.remaining, out.join("remaining.jsonl"))?;
    write_json_lines(&out.join("stats.jsonl"), &state.stats)
}

fn save_checkpoint(model: &dyn Seq2SeqBackend, base: &BackendConfig, dir: &Path) -> CliResult<()> {
    model.save(dir)?;
    let mut cfg = base.clone();
    cfg.backend.checkpoint_path = None;
    let path = dir.join(BACKEND_FILE);
    fs::write(&path, cfg.to_toml()?).map_err(|e| io_err(&path, e))
}

pub fn ibt(a: &IbtArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let max_len = a.max_len.unwrap_or(hp.max_seq_len);
    let mut backend = match &a.backend_config {
        Some(p) => {
            require_file(p)?;
            BackendConfig::load(p)?
        }
        None => BackendConfig::named(a.backend.as_deref().unwrap_or("toy-lexicon")),
    };
    let registry = BackendRegistry::default();
    if !registry.names().any(|n| n == backend.backend.name) {
        return Err(Failure::validation(format!("unknown backend `{}`", backend.backend.name)));
    }
    let mut schedule = backend.schedule.unwrap_or_else(|| TrainSchedule::ibt(&hp));
    schedule.lr = a.lr.unwrap_or(hp.ibt_lr);
    schedule.max_len = max_len;
    schedule.epochs = a.epochs.unwrap_or(schedule.epochs);
    schedule.batch_size = a.batch_size.unwrap_or(schedule.batch_size);
    schedule.validate()?;
    let decode = match &a.backend_config {
        Some(_) => DecodeParams {
            max_len,
            ..backend.decode
        },
        None => hp_decode(&hp, max_len),
    };
    decode.validate()?;
    backend.decode = decode;
    backend.schedule = Some(schedule);
    let config = IbtConfig {
        iterations: a.iterations.unwrap_or(hp.ibt_iterations),
        mode: match a.mode {
            Mode::Fresh => RetrainMode::Fresh,
            Mode::Continue => RetrainMode::Continue,
        },
        schedule,
        decode,
        seed,
    };
    let seed_pairs: Vec<ParallelPair> = load(&a.parallel)?;
    let mono: Vec<IdiomaticRecord> = load(&a.mono)?;
    log(
        "ibt.start",
        json!({ "parallel": seed_pairs.len(), "mono": mono.len(), "iterations": config.iterations }),
    );
    let factory = RegistryFactory {
        registry,
        isp: backend.clone(),
        isg: backend.clone(),
    };

    let mut m = Manifest::new(
        "ibt",
        seed,
        IbtRunConfig {
            parallel: a.parallel.display().to_string(),
            mono: a.mono.display().to_string(),
            backend: backend.clone(),
            ibt: config.clone(),
        },
    );
    m.input(&a.parallel)?;
    m.input(&a.mono)?;
    if let Some(p) = &a.backend_config {
        m.input(p)?;
    }

    let result = run_ibt(seed_pairs, mono, &factory, &config, |s| {
        log("ibt.iteration", serde_json::to_value(s).unwrap_or_default())
    });
    match result {
        Ok(outcome) => {
            write_state(&a.out, &outcome.state)?;
            save_checkpoint(outcome.models.isp.as_ref(), &backend, &a.out.join("isp"))?;
            save_checkpoint(outcome.models.isg.as_ref(), &backend, &a.out.join("isg"))?;
            log(
                "ibt.done",
                json!({ "parallel": outcome.state.parallel.len(), "remaining": outcome.state.remaining.len() }),
            );
            m.output_dir(&a.out)?;
            m.write(&a.out.join(MANIFEST_NAME))
        }
        Err(abort) => {
            write_state(&a.out, &abort.state)?;
            m.status = "aborted";
            m.output_dir(&a.out)?;
            m.write(&a.out.join(MANIFEST_NAME))?;
            log("ibt.aborted", json!({ "completed": abort.state.iteration, "error": abort.error.to_string() }));
            Err(Failure::runtime(abort.to_string()))
        }
    }
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

enum Model {
    Ucd(Box<UcdModel>, DictClient),
    Seq(Box<dyn Seq2SeqBackend>),
}

#[derive(Serialize)]
struct ModelConfig {
    source: String,
    kind: &'static str,
    decode: DecodeParams,
}

fn load_model(a: &ModelArgs, hp: &Hyperparams, direction: Direction, seed: u64) -> CliResult<(Model, ModelConfig)> {
    let mut decode = hp_decode(hp, hp.max_seq_len);
    let registry = BackendRegistry::default();
    let (model, source, kind) = match (&a.backend_config, &a.model) {
        (Some(p), _) => {
            require_file(p)?;
            let cfg = BackendConfig::load(p)?;
            decode = cfg.decode;
            (Model::Seq(registry.create(&cfg, direction)?), p, "backend")
        }
        (None, Some(dir)) => {
            require_dir(dir)?;
            let backend_file = dir.join(BACKEND_FILE);
            if backend_file.is_file() {
                let mut cfg = BackendConfig::load(&backend_file)?;
                cfg.backend.checkpoint_path = Some(dir.clone());
                decode = cfg.decode;
                (Model::Seq(registry.create(&cfg, direction)?), dir, "backend")
            } else if dir.join(ucd::MANIFEST_FILE).is_file() {
                if direction == Direction::Isg {
                    return Err(Failure::validation(
                        "an infilling checkpoint only paraphrases idiomatic → literal",
                    ));
                }
                let model = UcdModel::load(dir)?;
                (Model::Ucd(Box::new(model), dict_client(seed)), dir, "ucd")
            } else {
                return Err(Failure::validation(format!(
                    "{} holds neither {BACKEND_FILE} nor an infilling checkpoint",
                    dir.display()
                )));
            }
        }
        (None, None) => return Err(Failure::validation("one of --model or --backend-config is required")),
    };
    decode.beams = a.beams.unwrap_or(decode.beams);
    decode.top_k = a.top_k.unwrap_or(decode.top_k);
    decode.top_p = a.top_p.unwrap_or(decode.top_p);
    decode.max_len = a.max_len.unwrap_or(decode.max_len);
    decode.validate()?;
    let config = ModelConfig {
        source: source.display().to_string(),
        kind,
        decode,
    };
    Ok((model, config))
}

#[derive(Serialize)]
struct OutputRow {
    source: String,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn item_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Per-sentence lookup and length problems are reported in the row;
/// anything else stops the run.
fn row_or_fail(source: &str, result: idiolit_core::Result<String>) -> CliResult<OutputRow> {
    match result {
        Ok(text) => Ok(OutputRow {
            source: source.to_string(),
            text,
            error: None,
        }),
        Err(e @ (Error::NotFound(_) | Error::TooLong { .. })) => {
            log("skip", json!({ "source": source, "error": e.to_string() }));
            Ok(OutputRow {
                source: source.to_string(),
                text: String::new(),
                error: Some(e.to_string()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn paraphrase_all(model: &Model, decode: &DecodeParams, records: &[IdiomaticRecord], seed: u64) -> CliResult<Vec<OutputRow>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = item_seed(seed, i);
            let result = match model {
                Model::Ucd(m, client) => {
                    infer_paraphrase(m, &r.sentence, client, &LexiconTagger, decode, s).map(|l| l.text)
                }
                Model::Seq(b) => generate(b.as_ref(), &r.sentence.tokens, decode, s),
            };
            row_or_fail(&r.sentence.text, result)
        })
        .collect()
}

#[derive(Serialize)]
struct InferConfig {
    input: String,
    model: ModelConfig,
}

pub fn paraphrase(a: &ParaphraseArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let (model, mc) = load_model(&a.model, &hp, Direction::Isp, seed)?;
    let records: Vec<IdiomaticRecord> = load(&a.input)?;
    let rows = paraphrase_all(&model, &mc.decode, &records, seed)?;
    write_json_lines(&a.out, &rows)?;
    log("paraphrase", json!({ "records": rows.len(), "failed": rows.iter().filter(|r| r.error.is_some()).count() }));
    let mut m = Manifest::new(
        "paraphrase",
        seed,
        InferConfig {
            input: a.input.display().to_string(),
            model: mc,
        },
    );
    m.input(&a.input)?;
    if let Some(p) = a.model.backend_config.as_ref().or(a.model.model.as_ref()) {
        m.input(p)?;
    }
    m.output_file(&a.out)?;
    m.write(&manifest_beside(&a.out))
}

#[derive(Deserialize)]
struct TextRow {
    #[serde(alias = "literal")]
    text: String,
}

pub fn idiomatize(a: &IdiomatizeArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let (model, mc) = load_model(&a.model, &hp, Direction::Isg, seed)?;
    let Model::Seq(backend) = &model else {
        unreachable!("load_model rejects infilling checkpoints for ISG")
    };
    require_file(&a.input)?;
    let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: TextRow = serde_json::from_str(line)
            .map_err(|e| Failure::validation(format!("{}:{}: {e}", a.input.display(), i + 1)))?;
        let toks = text::tokenize(&row.text);
        rows.push(row_or_fail(&row.text, generate(backend.as_ref(), &toks, &mc.decode, item_seed(seed, rows.len())))?);
    }
    write_json_lines(&a.out, &rows)?;
    log("idiomatize", json!({ "records": rows.len() }));
    let mut m = Manifest::new(
        "idiomatize",
        seed,
        InferConfig {
            input: a.input.display().to_string(),
            model: mc,
        },
    );
    m.input(&a.input)?;
    if let Some(p) = a.model.backend_config.as_ref().or(a.model.model.as_ref()) {
        m.input(p)?;
    }
    m.output_file(&a.out)?;
    m.write(&manifest_beside(&a.out))
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvaluateConfig {
    input: String,
    lm_corpus: Option<String>,
    lm_smoothing: f64,
    label: String,
    reference_rows: Vec<&'static str>,
    blind_tsv: Option<String>,
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let (_, seed) = resolve(&a.common)?;
    require_file(&a.input)?;
    let records = metrics::load_eval_records(&a.input)?;
    let lm = match &a.lm_corpus {
        Some(p) => Some(BigramLm::train(&read_sentences(p)?, a.lm_smoothing)?),
        None => None,
    };
    let report = metrics::evaluate(&records, lm.as_ref().map(|l| l as &dyn idiolit_core::backends::LmScorer))?;
    let refs: Vec<ReferenceRow> = match a.reference_rows {
        ReferenceRows::Isp => vec![ISP_REFERENCE],
        ReferenceRows::Isg => vec![ISG_REFERENCE],
        ReferenceRows::Both => vec![ISP_REFERENCE, ISG_REFERENCE],
        ReferenceRows::None => vec![],
    };
    print!("{}", report.table(&a.label, &refs));

    let out = a.out.clone().unwrap_or_else(|| {
        let mut n = a.input.file_name().unwrap_or_default().to_os_string();
        n.push(".report.json");
        a.input.with_file_name(n)
    });
    ensure_parent(&out)?;
    fs::write(&out, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| io_err(&out, e))?;
    log("evaluate", json!({ "records": report.records, "bleu": report.bleu, "sari": report.sari }));

    let mut m = Manifest::new(
        "evaluate",
        seed,
        EvaluateConfig {
            input: a.input.display().to_string(),
            lm_corpus: a.lm_corpus.as_ref().map(|p| p.display().to_string()),
            lm_smoothing: a.lm_smoothing,
            label: a.label.clone(),
            reference_rows: refs.iter().map(|r| r.label).collect(),
            blind_tsv: a.blind_tsv.as_ref().map(|p| p.display().to_string()),
        },
    );
    m.input(&a.input)?;
    if let Some(p) = &a.lm_corpus {
        m.input(p)?;
    }
    m.output_file(&out)?;
    if let Some(tsv) = &a.blind_tsv {
        write_blind_tsv(tsv, &records, seed)?;
        m.output_file(tsv)?;
        m.output_file(&key_path(tsv))?;
    }
    m.write(&manifest_beside(&out))
}

fn key_path(tsv: &Path) -> PathBuf {
    let mut n = tsv.file_name().unwrap_or_default().to_os_string();
    n.push(".key.json");
    tsv.with_file_name(n)
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Shuffled rows with opaque ids; the id → record index key goes in a
/// separate file so raters never see it.
fn write_blind_tsv(path: &Path, records: &[EvalRecord], seed: u64) -> CliResult<()> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut lines = vec!["id\tsource\tcandidate".to_string()];
    let mut key = serde_json::Map::new();
    for (id, &i) in order.iter().enumerate() {
        let r = &records[i];
        lines.push(format!("{id}\t{}\t{}", tsv_field(&r.source), tsv_field(&r.candidate)));
        key.insert(id.to_string(), json!(i));
    }
    write_lines(path, &lines)?;
    let kp = key_path(path);
    fs::write(&kp, serde_json::to_string_pretty(&key)? + "\n").map_err(|e| io_err(&kp, e))
}

// ---------------------------------------------------------------------------
// export-parallel
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ExportConfig {
    input: String,
    format: &'static str,
    direction: &'static str,
    only_augmented: bool,
}

#[derive(Serialize)]
struct ExportRow<'a> {
    source: &'a str,
    target: &'a str,
    tag: String,
}

pub fn export_parallel(a: &ExportArgs) -> CliResult<()> {
    let (_, seed) = resolve(&a.common)?;
    let pairs: Vec<ParallelPair> = load(&a.input)?;
    let rows: Vec<ExportRow> = pairs
        .iter()
        .filter(|p| !a.only_augmented || p.source_tag != SourceTag::Seed)
        .map(|p| {
            let (source, target) = match a.direction {
                ExportDirection::Isp => (&p.idiomatic.text, &p.literal.text),
                ExportDirection::Isg => (&p.literal.text, &p.idiomatic.text),
            };
            ExportRow {
                source,
                target,
                tag: p.source_tag.to_string(),
            }
        })
        .collect();
    match a.format {
        ExportFormat::Jsonl => write_json_lines(&a.out, &rows)?,
        ExportFormat::Tsv => write_lines(
            &a.out,
            &rows
                .iter()
                .map(|r| format!("{}\t{}", tsv_field(r.source), tsv_field(r.target)))
                .collect::<Vec<_>>(),
        )?,
    }
    log("export-parallel", json!({ "pairs": rows.len() }));
    let mut m = Manifest::new(
        "export-parallel",
        seed,
        ExportConfig {
            input: a.input.display().to_string(),
            format: match a.format {
                ExportFormat::Jsonl => "jsonl",
                ExportFormat::Tsv => "tsv",
            },
            direction: match a.direction {
                ExportDirection::Isp => "isp",
                ExportDirection::Isg => "isg",
            },
            only_augmented: a.only_augmented,
        },
    );
    m.input(&a.input)?;
    m.output_file(&a.out)?;
    m.write(&manifest_beside(&a.out))
}

// ---------------------------------------------------------------------------
// demo-mt
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DemoConfig {
    input: String,
    references: String,
    translate_cmd: String,
    model: ModelConfig,
}

fn translate(cmd: &str, lines: &[String]) -> CliResult<Vec<String>> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Failure::runtime(format!("cannot start `{cmd}`: {e}")))?;
    let input = lines.join("\n") + "\n";
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let output = child
        .wait_with_output()
        .map_err(|e| Failure::runtime(format!("`{cmd}`: {e}")))?;
    writer
        .join()
        .map_err(|_| Failure::runtime("stdin writer panicked"))?
        .map_err(|e| Failure::runtime(format!("`{cmd}`: {e}")))?;
    if !output.status.success() {
        return Err(Failure::runtime(format!("`{cmd}` exited with {}", output.status)));
    }
    let out: Vec<String> = String::from_utf8_lossy(&output.stdout).lines().map(String::from).collect();
    if out.len() != lines.len() {
        return Err(Failure::runtime(format!(
            "`{cmd}` returned {} lines for {} inputs",
            out.len(),
            lines.len()
        )));
    }
    Ok(out)
}

fn corpus_bleu(sources: &[String], hyps: &[String], refs: &[String]) -> CliResult<f64> {
    let records = sources
        .iter()
        .zip(hyps)
        .zip(refs)
        .map(|((s, h), r)| EvalRecord::new(s.clone(), h.clone(), vec![r.clone()]))
        .collect::<idiolit_core::Result<Vec<_>>>()?;
    Ok(metrics::bleu(&records)?)
}

pub fn demo_mt(a: &DemoMtArgs) -> CliResult<()> {
    let (hp, seed) = resolve(&a.common)?;
    let (model, mc) = load_model(&a.model, &hp, Direction::Isp, seed)?;
    let records: Vec<IdiomaticRecord> = load(&a.input)?;
    let references = read_sentences(&a.references)?;
    if references.len() != records.len() {
        return Err(Failure::validation(format!(
            "{} references for {} sentences",
            references.len(),
            records.len()
        )));
    }
    let originals: Vec<String> = records.iter().map(|r| r.sentence.text.clone()).collect();
    let paraphrased: Vec<String> = paraphrase_all(&model, &mc.decode, &records, seed)?
        .into_iter()
        .zip(&originals)
        .map(|(row, orig)| if row.error.is_some() { orig.clone() } else { row.text })
        .collect();

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_lines(&a.out.join("source.txt"), &originals)?;
    write_lines(&a.out.join("paraphrased.txt"), &paraphrased)?;
    let mt_source = translate(&a.translate_cmd, &originals)?;
    let mt_para = translate(&a.translate_cmd, &paraphrased)?;
    write_lines(&a.out.join("mt_source.txt"), &mt_source)?;
    write_lines(&a.out.join("mt_paraphrased.txt"), &mt_para)?;
    let baseline = corpus_bleu(&originals, &mt_source, &references)?;
    let improved = corpus_bleu(&originals, &mt_para, &references)?;
    let summary = json!({ "bleu_source": baseline, "bleu_paraphrased": improved, "sentences": originals.len() });
    let path = a.out.join("bleu.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| io_err(&path, e))?;
    println!("BLEU source {baseline:.2} -> paraphrased {improved:.2}");
    log("demo-mt", summary);

    let mut m = Manifest::new(
        "demo-mt",
        seed,
        DemoConfig {
            input: a.input.display().to_string(),
            references: a.references.display().to_string(),
            translate_cmd: a.translate_cmd.clone(),
            model: mc,
        },
    );
    m.input(&a.input)?;
    m.input(&a.references)?;
    m.output_dir(&a.out)?;
    m.write(&a.out.join(MANIFEST_NAME))
}
