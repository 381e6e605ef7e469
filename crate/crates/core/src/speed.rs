//! Timing helpers for the restricted output layer and for training.

use std::hint::black_box;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::SentencePair;
use crate::error::Result;
use crate::nmt::train::Trainer;
use crate::nmt::{softmax_in_place, Model, ModelDims, TrainConfig};
use crate::vocab::SentenceVocab;

pub const DEFAULT_RUNS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub runs: Vec<Duration>,
    pub median: Duration,
}

/// One warmup call, then `runs` timed calls (at least 1).
pub fn median_time(runs: usize, mut f: impl FnMut()) -> Timing {
    f();
    let mut times: Vec<Duration> = (0..runs.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .collect();
    let runs = times.clone();
    times.sort();
    Timing {
        median: times[times.len() / 2],
        runs,
    }
}

/// A model sized for output-layer timing: full-size projection, tiny
/// everything else.
pub fn output_layer_model(tgt_vocab: usize, d_o: usize, seed: u64) -> Result<Model> {
    let mut dims = ModelDims::uniform(5, tgt_vocab, 1);
    dims.out_hidden = d_o;
    Model::new(dims, seed)
}

/// Logits and softmax over `ids` for a fixed output state.
pub fn output_layer_step(model: &Model, o: &Array1<f64>, ids: &[u32]) -> f64 {
    let mut p = model.logits(o.view(), ids);
    softmax_in_place(&mut p);
    p[0]
}

/// Median seconds per output-layer step over `steps` random output states.
pub fn output_layer_seconds(model: &Model, vocab: &SentenceVocab, steps: usize, runs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<Array1<f64>> = (0..steps.max(1))
        .map(|_| Array1::from_shape_fn(model.dims.out_hidden, |_| rng.random_range(-1.0..1.0)))
        .collect();
    let t = median_time(runs, || {
        for o in &states {
            black_box(output_layer_step(model, o, black_box(vocab.ids())));
        }
    });
    t.median.as_secs_f64() / states.len() as f64
}

/// Median wall time of one training epoch, each run starting from `model`.
pub fn epoch_timing(
    model: &Model,
    pairs: &[SentencePair],
    vocabs: &[SentenceVocab],
    config: &TrainConfig,
    runs: usize,
) -> Result<Timing> {
    let mut failure = None;
    let t = median_time(runs, || {
        let mut m = model.clone();
        let run = Trainer::new(&m, pairs, vocabs.to_vec(), config.clone()).and_then(|mut t| t.run_epoch(&mut m));
        if let Err(e) = run {
            failure = Some(e);
        }
        black_box(&m);
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through (x, y).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { slope, intercept, r2 }
}
