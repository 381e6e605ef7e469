//! Synthetic parallel corpora for smoke tests and the toy task.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::ParallelText;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub symbols: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Symbol of rank r is drawn with weight 1 / (r + zipf_offset).
    pub zipf_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 500,
            symbols: 120,
            min_len: 4,
            max_len: 10,
            zipf_offset: 20.0,
            seed: 1,
        }
    }
}

fn sample_sentences(config: &SynthConfig) -> Vec<Vec<usize>> {
    let weights = (0..config.symbols).map(|r| 1.0 / (r as f64 + config.zipf_offset));
    let dist = WeightedIndex::new(weights).expect("at least one symbol");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.sentences)
        .map(|_| {
            let len = rng.random_range(config.min_len..=config.max_len);
            (0..len).map(|_| dist.sample(&mut rng)).collect()
        })
        .collect()
}

fn text(pairs: impl Iterator<Item = (Vec<String>, Vec<String>)>) -> ParallelText {
    let mut out = ParallelText::default();
    for (k, (s, t)) in pairs.enumerate() {
        out.source.push(s);
        out.target.push(t);
        out.line_ids.push(k);
    }
    out
}

/// Target equals source; tokens `s{i}`.
pub fn copy_corpus(config: &SynthConfig) -> ParallelText {
    text(sample_sentences(config).into_iter().map(|sent| {
        let s: Vec<String> = sent.iter().map(|i| format!("s{i}")).collect();
        (s.clone(), s)
    }))
}

/// Source tokens `x{i}`; each translates to `w{i}_a` when the previous
/// source symbol has an even index (or at the sentence start) and to
/// `w{i}_b` otherwise.
pub fn ambiguous_corpus(config: &SynthConfig) -> ParallelText {
    text(sample_sentences(config).into_iter().map(|sent| {
        let s = sent.iter().map(|i| format!("x{i}")).collect();
        let t = sent
            .iter()
            .enumerate()
            .map(|(k, i)| {
                let odd = k > 0 && sent[k - 1] % 2 == 1;
                format!("w{i}_{}", if odd { 'b' } else { 'a' })
            })
            .collect();
        (s, t)
    }))
}
