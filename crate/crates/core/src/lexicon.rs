//! Word-to-word dictionary D(x) distilled from a translation table.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::align::{for_each_tsv_line, TTable, NULL_ID};
use crate::corpus::{is_reserved, IdSet, Vocabulary};
use crate::error::Result;

pub const DEFAULT_MAX_CANDIDATES: usize = 50;
pub const DEFAULT_TOP_N: usize = 10;

/// Source id -> candidate translations, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordDictionary {
    entries: HashMap<u32, Vec<(u32, f64)>>,
    max_candidates: usize,
}

fn rank(candidates: &mut [(u32, f64)]) {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

impl WordDictionary {
    /// Keeps, per real source word, the targets with probability >= `min_prob`,
    /// truncated to the `max_candidates` best. NULL rows and reserved ids on
    /// either side are dropped.
    pub fn from_ttable(ttable: &TTable, max_candidates: usize, min_prob: f64) -> Self {
        let mut entries = HashMap::new();
        for (given, row) in ttable.rows() {
            if given == NULL_ID || is_reserved(given) {
                continue;
            }
            let mut candidates: Vec<(u32, f64)> = row
                .iter()
                .filter(|&(&w, &p)| !is_reserved(w) && p >= min_prob)
                .map(|(&w, &p)| (w, p))
                .collect();
            rank(&mut candidates);
            candidates.truncate(max_candidates);
            if !candidates.is_empty() {
                entries.insert(given, candidates);
            }
        }
        WordDictionary {
            entries,
            max_candidates,
        }
    }

    pub fn candidates(&self, source: u32) -> &[(u32, f64)] {
        self.entries.get(&source).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn best(&self, source: u32) -> Option<u32> {
        self.candidates(source).first().map(|&(w, _)| w)
    }

    pub fn max_candidates(&self) -> usize {
        self.max_candidates
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets `top_n` best candidates of every word in `source` (V_x^D).
    /// `top_n` beyond the stored maximum is clamped to it.
    pub fn sentence_vocab(&self, source: &[u32], top_n: usize) -> IdSet {
        let mut out = IdSet::new();
        let mut seen = IdSet::new();
        for &x in source {
            if !seen.insert(x) {
                continue;
            }
            out.extend(self.candidates(x).iter().take(top_n).map(|&(w, _)| w));
        }
        out
    }

    /// Same TSV layout as the translation table, grouped by source token.
    pub fn write_tsv<W: Write>(
        &self,
        mut out: W,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
    ) -> std::io::Result<()> {
        let mut sources: Vec<(&str, u32)> = self
            .entries
            .keys()
            .map(|&s| (src_vocab.token(s), s))
            .collect();
        sources.sort();
        for (tok, s) in sources {
            for &(w, p) in &self.entries[&s] {
                writeln!(out, "{tok}\t{}\t{p}", tgt_vocab.token(w))?;
            }
        }
        Ok(())
    }

    /// Reads a dictionary or translation-table TSV; rows are re-ranked and
    /// truncated to `max_candidates`. Unknown and reserved tokens are skipped.
    pub fn read_tsv<R: BufRead>(
        reader: R,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
        max_candidates: usize,
    ) -> Result<Self> {
        let mut entries: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        for_each_tsv_line(reader, |s, t, p| {
            let (s, t) = (src_vocab.id(s), tgt_vocab.id(t));
            if !is_reserved(s) && !is_reserved(t) {
                entries.entry(s).or_default().push((t, p));
            }
        })?;
        for candidates in entries.values_mut() {
            rank(candidates);
            candidates.truncate(max_candidates);
        }
        Ok(WordDictionary {
            entries,
            max_candidates,
        })
    }
}
