use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use idiolit_core::backends::{Seq2SeqBackend, ToyLexiconBackend};
use idiolit_core::dataset::{load_jsonl, save_jsonl, IdiomSpan, IdiomaticRecord, IdiomaticSentence, ParallelPair};
use idiolit_core::synth::ibt_world;
use serde_json::Value;

fn idiolit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idiolit"))
        .args(args)
        .env_remove("IDIOLIT_CACHE_DIR")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_world(dir: &Path) -> (PathBuf, PathBuf) {
    let world = ibt_world(30, 120, 5).unwrap();
    let seed = dir.join("seed.jsonl");
    let mono = dir.join("mono.jsonl");
    save_jsonl(&world.seed_pairs, &seed).unwrap();
    save_jsonl(&world.mono, &mono).unwrap();
    (seed, mono)
}

fn table1_input(dir: &Path) -> PathBuf {
    let rec = IdiomaticRecord {
        sentence: IdiomaticSentence::new(
            "Putting him behind bars won't serve any purpose.",
            IdiomSpan::new(2, 4).unwrap(),
        )
        .unwrap(),
        idiom: "behind bars".into(),
    };
    let path = dir.join("idiomatic.jsonl");
    save_jsonl(&[rec], &path).unwrap();
    path
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(idiolit(&["--help"]).status.code(), Some(0));
    assert_eq!(idiolit(&["ibt", "--help"]).status.code(), Some(0));
    assert_eq!(idiolit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(idiolit(&["evaluate", "--in", "x.jsonl", "--bogus"]).status.code(), Some(1));
    assert_eq!(idiolit(&["evaluate", "--in", "/nonexistent/eval.jsonl"]).status.code(), Some(1));
    let conflicting = idiolit(&[
        "ibt", "--parallel", "a", "--mono", "b", "--out", "c", "--backend", "toy-lexicon", "--backend-config", "d",
    ]);
    assert_eq!(conflicting.status.code(), Some(1));
}

#[test]
fn ibt_then_paraphrase_idiomatize_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let (seed, mono) = write_world(dir.path());
    let run = dir.path().join("run");
    let o = idiolit(&[
        "ibt", "--parallel", p(&seed), "--mono", p(&mono), "--iterations", "5", "--out", p(&run), "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let pairs: Vec<ParallelPair> = load_jsonl(run.join("parallel.jsonl")).unwrap();
    assert_eq!(pairs.len(), 150);
    let stats = fs::read_to_string(run.join("stats.jsonl")).unwrap();
    assert_eq!(stats.lines().count(), 5);
    for dir in ["isp", "isg"] {
        assert!(run.join(dir).join("backend.toml").is_file());
    }
    let log_lines: Vec<Value> = String::from_utf8_lossy(&o.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log_lines.iter().filter(|v| v["event"] == "ibt.iteration").count(), 5);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["ibt"]["iterations"], 5);
    assert_eq!(manifest["config"]["ibt"]["schedule"]["lr"], 5e-5);
    assert_eq!(manifest["config"]["ibt"]["schedule"]["max_len"], 128);
    assert!(manifest["inputs"][p(&seed)].is_string());
    assert!(manifest["outputs"]["parallel.jsonl"].is_string());
    assert!(manifest["outputs"]["isp/backend.toml"].is_string());

    let input = table1_input(dir.path());
    let out = dir.path().join("literal.jsonl");
    let o = idiolit(&["paraphrase", "--model", p(&run.join("isp")), "--in", p(&input), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let row: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    let text = row["text"].as_str().unwrap();
    assert!(text.contains("in prison") && !text.contains("behind bars"), "{text}");
    assert!(dir.path().join("literal.jsonl.run-manifest.json").is_file());

    let lit = dir.path().join("lit.jsonl");
    fs::write(&lit, "{\"text\": \"They put him in prison.\"}\n").unwrap();
    let back = dir.path().join("back.jsonl");
    let o = idiolit(&["idiomatize", "--model", p(&run.join("isg")), "--in", p(&lit), "--out", p(&back)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let row: Value = serde_json::from_str(fs::read_to_string(&back).unwrap().trim()).unwrap();
    assert!(row["text"].as_str().unwrap().contains("behind bars"));

    let tsv = dir.path().join("aug.tsv");
    let o = idiolit(&[
        "export-parallel", "--in", p(&run.join("parallel.jsonl")), "--out", p(&tsv), "--format", "tsv",
        "--only-augmented",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let n = fs::read_to_string(&tsv).unwrap().lines().count();
    assert_eq!(n, 120);
}

#[test]
fn paraphrase_with_the_bundled_idiom_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/dictionary/idioms.jsonl");
    let cfg = dir.path().join("backend.toml");
    fs::write(
        &cfg,
        format!("[backend]\nname = \"toy-lexicon\"\ncheckpoint_path = {:?}\n", table.to_str().unwrap()),
    )
    .unwrap();
    let input = table1_input(dir.path());
    let out = dir.path().join("out.jsonl");
    let o = idiolit(&["paraphrase", "--backend-config", p(&cfg), "--in", p(&input), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let row: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(row["text"], "Putting him in prison won't serve any purpose.");
}

#[test]
fn evaluate_identical_gives_a_bleu_100_row() {
    let dir = tempfile::tempdir().unwrap();
    let eval = dir.path().join("eval.jsonl");
    fs::write(
        &eval,
        "{\"source\":\"he is behind bars\",\"candidate\":\"he is in prison\",\"references\":[\"he is in prison\"]}\n\
         {\"source\":\"she was over the moon\",\"candidate\":\"she was very happy\",\"references\":[\"she was very happy\"]}\n",
    )
    .unwrap();
    let tsv = dir.path().join("blind.tsv");
    let o = idiolit(&["evaluate", "--in", p(&eval), "--label", "toy", "--blind-tsv", p(&tsv)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let row = table.lines().find(|l| l.starts_with("toy")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[1..5], ["100.00"; 4]);
    assert_eq!(cells[7], "n/a");
    assert!(table.contains("83.69") && table.contains("91.08"));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval.jsonl.report.json")).unwrap()).unwrap();
    assert_eq!(report["bleu"], 100.0);
    assert_eq!(report["meteor_variant"], "METEOR-ex+stem");
    assert_eq!(fs::read_to_string(&tsv).unwrap().lines().count(), 3);

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"source\":\"a\",\"candidate\":\"b\",\"references\":[]}\n").unwrap();
    assert_eq!(idiolit(&["evaluate", "--in", p(&bad)]).status.code(), Some(1));
}

#[test]
fn training_failure_exits_2_and_keeps_partial_state() {
    let dir = tempfile::tempdir().unwrap();
    let (seed, mono) = write_world(dir.path());
    let ckpt = dir.path().join("frozen");
    ToyLexiconBackend::empty().frozen().save(&ckpt).unwrap();
    let cfg = dir.path().join("backend.toml");
    fs::write(
        &cfg,
        format!("[backend]\nname = \"toy-lexicon\"\ncheckpoint_path = {:?}\n", ckpt.to_str().unwrap()),
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = idiolit(&[
        "ibt", "--parallel", p(&seed), "--mono", p(&mono), "--out", p(&run), "--backend-config", p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let pairs: Vec<ParallelPair> = load_jsonl(run.join("parallel.jsonl")).unwrap();
    assert_eq!(pairs.len(), 30);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "aborted");
}

#[test]
fn demo_mt_chains_paraphrase_into_a_translation_command() {
    let dir = tempfile::tempdir().unwrap();
    let table = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/dictionary/idioms.jsonl");
    let cfg = dir.path().join("backend.toml");
    fs::write(
        &cfg,
        format!("[backend]\nname = \"toy-lexicon\"\ncheckpoint_path = {:?}\n", table.to_str().unwrap()),
    )
    .unwrap();
    let input = table1_input(dir.path());
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "Putting him in prison won't serve any purpose.\n").unwrap();
    let out = dir.path().join("demo");
    let o = idiolit(&[
        "demo-mt", "--backend-config", p(&cfg), "--in", p(&input), "--translate-cmd", "cat", "--references",
        p(&refs), "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let bleu: Value = serde_json::from_str(&fs::read_to_string(out.join("bleu.json")).unwrap()).unwrap();
    assert_eq!(bleu["bleu_paraphrased"], 100.0);
    assert!(bleu["bleu_source"].as_f64().unwrap() < 100.0);
}
