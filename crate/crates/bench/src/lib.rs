//! Fixtures shared by the benchmarks.

use idiolit_core::metrics::EvalRecord;
use idiolit_core::synth::ibt_world;

/// `n` evaluation records from the synthetic world: the candidate is the
/// literal reference for even rows and the untouched idiomatic source for odd
/// rows.
pub fn eval_records(n: usize) -> Vec<EvalRecord> {
    let world = ibt_world(20, n, 11).expect("synthetic world");
    world
        .mono
        .iter()
        .zip(&world.mono_literals)
        .enumerate()
        .map(|(i, (m, lit))| {
            let cand = if i % 2 == 0 { lit.clone() } else { m.sentence.text.clone() };
            EvalRecord::new(m.sentence.text.clone(), cand, vec![lit.clone()]).expect("valid record")
        })
        .collect()
}
