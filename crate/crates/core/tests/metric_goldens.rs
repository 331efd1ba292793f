use std::collections::BTreeMap;

use idiolit_core::backends::{BigramLm, UniformLm};
use idiolit_core::metrics::{
    bleu, evaluate, load_eval_records, meteor, perplexity, rouge, sari, sentence_sari, EvalRecord, Rouge,
};
use idiolit_core::text;
use proptest::prelude::*;

fn rec(src: &str, cand: &str, refs: &[&str]) -> EvalRecord {
    EvalRecord::new(src, cand, refs.iter().map(|r| r.to_string()).collect()).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    text::tokenize(s).into_iter().map(|t| t.to_lowercase()).collect()
}

// Brute-force SARI over explicit n-gram multisets, one reference.
fn sari_oracle(src: &str, cand: &str, reference: &str) -> f64 {
    fn grams(t: &[String], n: usize) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if t.len() >= n {
            for i in 0..=t.len() - n {
                *m.entry(t[i..i + n].join(" ")).or_insert(0.0) += 1.0;
            }
        }
        m
    }
    let get = |m: &BTreeMap<String, f64>, g: &str| m.get(g).copied().unwrap_or(0.0);
    let (s, c, r) = (toks(src), toks(cand), toks(reference));
    let mut keep_sum = 0.0;
    let mut del_sum = 0.0;
    let mut add_sum = 0.0;
    for n in 1..=4 {
        let (sg, cg, rg) = (grams(&s, n), grams(&c, n), grams(&r, n));

        // keep: min(S, C) against min(S, R)
        let mut kp = (0.0, 0usize);
        let mut kr = (0.0, 0usize);
        for g in sg.keys() {
            let kept = get(&sg, g).min(get(&cg, g));
            let should = get(&sg, g).min(get(&rg, g));
            let good = kept.min(get(&rg, g));
            if kept > 0.0 {
                kp.0 += good / kept;
                kp.1 += 1;
            }
            if should > 0.0 {
                kr.0 += good / should;
                kr.1 += 1;
            }
        }
        keep_sum += match (kp.1, kr.1) {
            (0, 0) => 1.0,
            _ => {
                let p = if kp.1 > 0 { kp.0 / kp.1 as f64 } else { 0.0 };
                let rc = if kr.1 > 0 { kr.0 / kr.1 as f64 } else { 0.0 };
                if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 }
            }
        };

        // delete: S - C, precision against S - R
        let mut dp = (0.0, 0usize);
        let mut should_delete = 0usize;
        for g in sg.keys() {
            let deleted = get(&sg, g) - get(&cg, g);
            if get(&sg, g) - get(&rg, g) > 0.0 {
                should_delete += 1;
            }
            if deleted > 0.0 {
                dp.0 += (deleted - get(&rg, g)).max(0.0) / deleted;
                dp.1 += 1;
            }
        }
        del_sum += match (dp.1, should_delete) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (k, _) => dp.0 / k as f64,
        };

        // add: set semantics
        let added: Vec<&String> = cg.keys().filter(|g| !sg.contains_key(*g)).collect();
        let wanted: Vec<&String> = rg.keys().filter(|g| !sg.contains_key(*g)).collect();
        let good = added.iter().filter(|g| wanted.contains(g)).count() as f64;
        add_sum += if added.is_empty() && wanted.is_empty() {
            1.0
        } else {
            let p = if added.is_empty() { 0.0 } else { good / added.len() as f64 };
            let rc = if wanted.is_empty() { 0.0 } else { good / wanted.len() as f64 };
            if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 }
        };
    }
    100.0 * (keep_sum / 4.0 + del_sum / 4.0 + add_sum / 4.0) / 3.0
}

const SRC: &str = "he is behind bars";
const LIT: &str = "he is in prison";

#[test]
fn sari_matches_the_brute_force_oracle() {
    let correct = sari(&[rec(SRC, LIT, &[LIT])]).unwrap();
    let want = sari_oracle(SRC, LIT, LIT);
    assert!((correct - want).abs() < 1e-9, "{correct} vs {want}");

    let unrelated = sentence_sari(SRC, "a dog ran home", &[LIT.to_string()]);
    let want_u = sari_oracle(SRC, "a dog ran home", LIT);
    assert!((unrelated - want_u).abs() < 1e-9, "{unrelated} vs {want_u}");
    assert!(unrelated < correct);

    assert_eq!(sari(&[rec(SRC, SRC, &[SRC, SRC])]).unwrap(), 100.0);
}

#[test]
fn bleu_rouge_meteor_goldens() {
    assert_eq!(bleu(&[rec("x y", "the cat sat on the mat", &["the cat sat on the mat"])]).unwrap(), 100.0);
    let hand = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
    assert!((bleu(&[rec("x", "the cat sat", &["the cat sat down"])]).unwrap() - hand).abs() < 1e-9);
    assert_eq!(rouge(&[rec("x", "a b c", &["a c"])], Rouge::One).unwrap(), 80.0);
    assert_eq!(meteor(&[rec("x", "a b c d", &["a b c d"])]).unwrap(), 0.9921875);
    assert_eq!(meteor(&[rec("x", "a", &["a"])]).unwrap(), 0.5);
}

#[test]
fn meteor_identity_approaches_one_with_length() {
    let mut last = 0.0;
    for n in [2, 4, 8, 16, 32] {
        let s: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let s = s.join(" ");
        let m = meteor(&[rec("x", &s, &[&s])]).unwrap();
        assert!(m > last);
        last = m;
    }
    assert!(last > 0.9999);
}

#[test]
fn perplexity_goldens() {
    for v in [2usize, 50, 1000] {
        let p = perplexity(&["one two three", "four five"], &UniformLm { vocab: v }).unwrap();
        assert_eq!(p, v as f64);
    }

    // count oracle for add-k bigrams over the training text itself
    let corpus = ["the cat sat", "the dog sat down", "a cat ran"];
    let k = 0.5;
    let lm = BigramLm::train(&corpus, k).unwrap();
    let mut vocab: Vec<String> = corpus.iter().flat_map(|s| toks(s)).collect();
    vocab.sort();
    vocab.dedup();
    let v = vocab.len() as f64 + 1.0;
    let mut pairs = Vec::new();
    for s in &corpus {
        let mut prev = "<s>".to_string();
        for t in toks(s) {
            pairs.push((prev.clone(), t.clone()));
            prev = t;
        }
    }
    let mut nll = 0.0;
    for (a, b) in &pairs {
        let c_ab = pairs.iter().filter(|(x, y)| x == a && y == b).count() as f64;
        let c_a = pairs.iter().filter(|(x, _)| x == a).count() as f64;
        nll -= ((c_ab + k) / (c_a + k * v)).ln();
    }
    let want = (nll / pairs.len() as f64).exp();
    assert!((perplexity(&corpus, &lm).unwrap() - want).abs() < 1e-9);
}

#[test]
fn order_sensitivity() {
    let a = [rec("x", "he kept the old car in the garage", &["he kept the old car in the garage"])];
    let b = [rec("x", "garage the in car old the kept he", &["he kept the old car in the garage"])];
    assert_eq!(rouge(&a, Rouge::One).unwrap(), rouge(&b, Rouge::One).unwrap());
    assert!(bleu(&b).unwrap() < bleu(&a).unwrap());
}

#[test]
fn eval_jsonl_roundtrip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    std::fs::write(
        &path,
        "{\"source\":\"he is behind bars\",\"candidate\":\"he is in prison\",\"references\":[\"he is in prison\"]}\n",
    )
    .unwrap();
    let recs = load_eval_records(&path).unwrap();
    assert_eq!(recs, vec![rec(SRC, LIT, &[LIT])]);
    std::fs::write(&path, "{\"source\":\"a\",\"candidate\":\"b\",\"references\":[]}\n").unwrap();
    assert!(load_eval_records(&path).is_err());
    assert!(EvalRecord::new("a", "b", vec![" ".into()]).is_err());
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "the", "cat", "ran"]), 0..9)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn every_metric_stays_in_range(
        src in sentence().prop_filter("non-empty", |s| !s.is_empty()),
        cand in sentence(),
        refs in prop::collection::vec(sentence().prop_filter("non-empty", |s| !s.is_empty()), 1..4),
    ) {
        let r = EvalRecord::new(src, cand, refs).unwrap();
        let report = evaluate(std::slice::from_ref(&r), Some(&UniformLm { vocab: 10 })).unwrap_or_else(|_| {
            evaluate(std::slice::from_ref(&r), None).unwrap()
        });
        for v in [report.bleu, report.rouge1, report.rouge2, report.rougel, report.meteor, report.sari] {
            prop_assert!((0.0..=100.0).contains(&v), "{v}");
        }
        if let Some(p) = report.ppl {
            prop_assert!(p > 0.0);
        }
    }
}
