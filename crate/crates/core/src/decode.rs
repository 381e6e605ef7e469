//! Beam search over a sentence vocabulary, attention-based UNK replacement
//! and corpus BLEU-4.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;

use crate::corpus::{Vocabulary, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::lexicon::WordDictionary;
use crate::nmt::{EncoderStates, Model};
use crate::vocab::SentenceVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, EOS excluded.
    pub tokens: Vec<u32>,
    /// Sum of log-probabilities, including the EOS step when finished.
    pub score: f64,
    pub state: Array1<f64>,
    /// One attention vector per emitted token.
    pub attn_trace: Vec<Array1<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    /// Score used for ranking.
    pub fn rank_score(&self, length_norm: bool) -> f64 {
        if length_norm {
            let len = self.tokens.len() + usize::from(self.finished);
            self.score / len.max(1) as f64
        } else {
            self.score
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    pub common_top_n: usize,
    pub dict_top_n: usize,
    pub phrase_top_k: usize,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 12,
            max_len: 100,
            common_top_n: 2000,
            dict_top_n: 10,
            phrase_top_k: 10,
            length_norm: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidArgument("beam must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    /// No hypothesis reached EOS within `max_len`; `hypotheses` are the
    /// surviving partial ones.
    pub partial: bool,
}

impl BeamResult {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

struct Candidate {
    score: f64,
    parent: usize,
    local: usize,
}

/// Beam search whose effective width shrinks by one for every completed
/// hypothesis.
pub fn beam_search(model: &Model, x: &[u32], vocab: &SentenceVocab, config: &DecodeConfig) -> Result<BeamResult> {
    config.validate()?;
    if !vocab.contains(EOS) {
        return Err(Error::MissingEos);
    }
    let enc = model.encode(x)?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: model.initial_state(&enc),
        attn_trace: Vec::new(),
        finished: false,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();
    let eos_local = vocab.local(EOS).unwrap();

    for _ in 0..config.max_len {
        let width = config.beam - completed.len();
        let mut cands: Vec<Candidate> = Vec::new();
        let mut steps = Vec::with_capacity(live.len());
        for (parent, h) in live.iter().enumerate() {
            let y_prev = h.tokens.last().copied().unwrap_or(BOS);
            let (st, p) = model.step(&enc, h.state.view(), y_prev, vocab)?;
            cands.extend(p.iter().enumerate().map(|(local, &pk)| Candidate {
                score: h.score + pk.ln(),
                parent,
                local,
            }));
            steps.push(st);
        }
        // Ties break toward earlier parents and smaller ids.
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.parent.cmp(&b.parent))
                .then(a.local.cmp(&b.local))
        });
        let mut next = Vec::with_capacity(width);
        for cand in cands.into_iter().take(width) {
            let parent = &live[cand.parent];
            let st = &steps[cand.parent];
            if cand.local == eos_local {
                completed.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    score: cand.score,
                    state: st.s.clone(),
                    attn_trace: parent.attn_trace.clone(),
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(vocab.ids()[cand.local]);
                let mut attn_trace = parent.attn_trace.clone();
                attn_trace.push(st.alpha.clone());
                next.push(Hypothesis {
                    tokens,
                    score: cand.score,
                    state: st.s.clone(),
                    attn_trace,
                    finished: false,
                });
            }
        }
        live = next;
        if completed.len() >= config.beam || live.is_empty() {
            break;
        }
    }

    let partial = completed.is_empty();
    let mut hypotheses = if partial { live } else { completed };
    hypotheses.sort_by(|a, b| {
        b.rank_score(config.length_norm)
            .total_cmp(&a.rank_score(config.length_norm))
    });
    Ok(BeamResult { hypotheses, partial })
}

/// Argmax chain; the same as a width-1 beam.
pub fn greedy_decode(model: &Model, enc: &EncoderStates, vocab: &SentenceVocab, max_len: usize) -> Result<Vec<u32>> {
    let mut s = model.initial_state(enc);
    let mut y = BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (st, p) = model.step(enc, s.view(), y, vocab)?;
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        y = vocab.ids()[best];
        if y == EOS {
            break;
        }
        out.push(y);
        s = st.s;
    }
    Ok(out)
}

/// Decodes every source independently, preserving order.
pub fn decode_corpus(
    model: &Model,
    sources: &[Vec<u32>],
    vocabs: &[SentenceVocab],
    config: &DecodeConfig,
) -> Result<Vec<BeamResult>> {
    if sources.len() != vocabs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sources but {} vocabularies",
            sources.len(),
            vocabs.len()
        )));
    }
    sources
        .par_iter()
        .zip(vocabs)
        .map(|(x, v)| beam_search(model, x, v, config))
        .collect()
}

fn argmax(alpha: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &a) in alpha.iter().enumerate() {
        if a > alpha[best] {
            best = i;
        }
    }
    best
}

/// Surface tokens of `hyp` with each UNK replaced by the dictionary's best
/// translation of the most-attended source word, or by that word itself
/// when it has no dictionary entry. `source_ids` and `source_tokens` are
/// the same sentence as ids and as raw surface strings.
pub fn unk_replace<S: AsRef<str>>(
    hyp: &Hypothesis,
    source_ids: &[u32],
    source_tokens: &[S],
    dict: &WordDictionary,
    tgt_vocab: &Vocabulary,
) -> Vec<String> {
    hyp.tokens
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            if id != UNK {
                return tgt_vocab.token(id).to_string();
            }
            let Some(alpha) = hyp.attn_trace.get(t) else {
                return tgt_vocab.token(id).to_string();
            };
            let i = argmax(alpha);
            match dict.best(source_ids[i]) {
                Some(y) => tgt_vocab.token(y).to_string(),
                None => source_tokens[i].as_ref().to_string(),
            }
        })
        .collect()
}

/// Lines `t i*` (0-based target step, most-attended source position) for
/// every emitted token, followed by a blank line.
pub fn write_attention_dump<W: Write>(mut out: W, hyp: &Hypothesis) -> std::io::Result<()> {
    for (t, alpha) in hyp.attn_trace.iter().enumerate() {
        writeln!(out, "{t} {}", argmax(alpha))?;
    }
    writeln!(out)
}

/// Position-wise matches over Σ max(|hyp|, |ref|).
pub fn token_accuracy<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for (h, r) in hyps.iter().zip(refs) {
        hits += h.iter().zip(r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// In [0, 100].
    pub score: f64,
    pub precisions: [f64; 4],
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub smoothed: bool,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratio = if self.ref_len > 0 {
            self.hyp_len as f64 / self.ref_len as f64
        } else {
            0.0
        };
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.score,
            100.0 * self.precisions[0],
            100.0 * self.precisions[1],
            100.0 * self.precisions[2],
            100.0 * self.precisions[3],
            self.brevity_penalty,
            ratio,
            self.hyp_len,
            self.ref_len
        )?;
        if self.smoothed {
            write!(f, " [add-one smoothing for n>=2]")?;
        }
        Ok(())
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 with clipped counts aggregated over the corpus, a brevity
/// penalty of exp(1 - r/c) when c < r, and 0 whenever any precision is 0.
/// With `smoothing`, n-gram orders 2..4 use (matches+1)/(total+1).
pub fn bleu4_report<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>], smoothing: bool) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::LineCountMismatch {
            source_lines: candidates.len(),
            target_lines: references.len(),
        });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        hyp_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        let (m, t) = if smoothing && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        smoothed: smoothing,
    })
}

pub fn bleu4<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    Ok(bleu4_report(candidates, references, false)?.score)
}
