use std::time::Instant;

use idiolit_core::backends::{fine_tune, generate, DecodeParams, Seq2SeqBackend, TinySeq2Seq, TinySeq2SeqConfig, TrainSchedule};
use idiolit_core::synth::substitution_pairs;
use idiolit_core::text;

#[test]
fn toy_seq2seq_learns_substitutions() {
    let all = substitution_pairs(2200, 11);
    let (train, held) = all.split_at(2000);
    let mut model = TinySeq2Seq::new(TinySeq2SeqConfig::default());
    let schedule = TrainSchedule {
        lr: 1e-2,
        warmup_steps: 20,
        batch_size: 8,
        epochs: 3,
        max_len: 64,
        grad_clip: 1.0,
    };
    let t = Instant::now();
    let curve = fine_tune(&mut model, train, &schedule, 21).unwrap();
    eprintln!("params {} train {:?} loss {:?} -> {:?}", model.num_params(), t.elapsed(), curve.head_mean(10), curve.tail_mean(10));
    let d = DecodeParams::greedy(32);
    let hits = held
        .iter()
        .filter(|(s, t)| generate(&model, &text::tokenize(s), &d, 0).unwrap() == *t)
        .count();
    let acc = hits as f64 / held.len() as f64;
    eprintln!("held-out exact match {acc}");
    for (s, _) in held.iter().take(3) {
        eprintln!("{s} => {}", model.generate(&text::tokenize(s), &d, 0).unwrap());
    }
    assert!(acc >= 0.90, "{acc}");
}
