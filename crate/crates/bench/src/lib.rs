//! Shared fixtures for the benchmarks.

use nmtvocab::corpus::ParallelText;
use nmtvocab::pipeline::{PrepConfig, Prepared};
use nmtvocab::synth::{ambiguous_corpus, SynthConfig};

/// The toy ambiguous corpus: 500 training pairs, 100 test pairs.
pub fn toy_split() -> (ParallelText, ParallelText) {
    let all = ambiguous_corpus(&SynthConfig {
        sentences: 600,
        ..SynthConfig::default()
    });
    let part = |r: std::ops::Range<usize>| ParallelText {
        source: all.source[r.clone()].to_vec(),
        target: all.target[r.clone()].to_vec(),
        line_ids: (0..r.len()).collect(),
        dropped: 0,
    };
    (part(0..500), part(500..600))
}

pub fn toy_prepared() -> Prepared {
    let (train, _) = toy_split();
    Prepared::build(&train, &PrepConfig::default()).expect("toy corpus prepares")
}
