//! Phrase library P(x_i..x_j): source phrases mapped to ranked target word
//! sets, stored in a trie keyed by source ids.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::align::AlignmentLinks;
use crate::corpus::{IdSet, SentencePair, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_PHRASE_LEN: usize = 4;
pub const DEFAULT_TOP_K: usize = 10;

/// Half-open source and target spans of a phrase pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhraseSpan {
    pub src_start: usize,
    pub src_end: usize,
    pub tgt_start: usize,
    pub tgt_end: usize,
}

/// All phrase pairs consistent with `links` on an l x m sentence pair with
/// source span length <= `max_src` and target span length <= `max_tgt`.
/// Unaligned target words at the boundary are absorbed in every
/// combination, as in the usual extraction algorithm.
pub fn consistent_spans(
    l: usize,
    m: usize,
    links: &AlignmentLinks,
    max_src: usize,
    max_tgt: usize,
) -> Vec<PhraseSpan> {
    let mut tgt_aligned = vec![false; m];
    let mut src_links: Vec<Vec<usize>> = vec![Vec::new(); l];
    let mut tgt_links: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, j) in links.iter() {
        tgt_aligned[j] = true;
        src_links[i].push(j);
        tgt_links[j].push(i);
    }

    let mut spans = Vec::new();
    for src_start in 0..l {
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for src_end in src_start..l.min(src_start + max_src) {
            for &j in &src_links[src_end] {
                lo = lo.min(j);
                hi = hi.max(j);
            }
            if lo == usize::MAX {
                continue;
            }
            // no target word inside [lo, hi] may link outside the source span
            let consistent = (lo..=hi)
                .all(|j| tgt_links[j].iter().all(|&i| i >= src_start && i <= src_end));
            if !consistent || hi - lo + 1 > max_tgt {
                continue;
            }
            let mut ts = lo;
            loop {
                let mut te = hi;
                while te - ts < max_tgt {
                    spans.push(PhraseSpan {
                        src_start,
                        src_end: src_end + 1,
                        tgt_start: ts,
                        tgt_end: te + 1,
                    });
                    te += 1;
                    if te >= m || tgt_aligned[te] {
                        break;
                    }
                }
                if ts == 0 || tgt_aligned[ts - 1] || hi + 1 - (ts - 1) > max_tgt {
                    break;
                }
                ts -= 1;
            }
        }
    }
    spans
}

/// A target word set and how often it was extracted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseCandidate {
    /// sorted, deduplicated target ids
    pub targets: Vec<u32>,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct TrieNode {
    children: HashMap<u32, usize>,
    candidates: Vec<PhraseCandidate>,
}

/// A matched source span and its ranked candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhraseMatch<'a> {
    pub start: usize,
    pub end: usize,
    pub candidates: &'a [PhraseCandidate],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseSetTable {
    nodes: Vec<TrieNode>,
    max_src_len: usize,
    max_tgt_len: usize,
    num_phrases: usize,
}

fn rank(candidates: &mut [PhraseCandidate]) {
    candidates.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.targets.cmp(&b.targets)));
}

impl PhraseSetTable {
    pub fn new(max_src_len: usize, max_tgt_len: usize) -> Self {
        PhraseSetTable {
            nodes: vec![TrieNode::default()],
            max_src_len,
            max_tgt_len,
            num_phrases: 0,
        }
    }

    fn node_for(&mut self, phrase: &[u32]) -> usize {
        let mut node = 0;
        for &id in phrase {
            node = match self.nodes[node].children.get(&id) {
                Some(&child) => child,
                None => {
                    let child = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(id, child);
                    child
                }
            };
        }
        node
    }

    /// Adds `count` observations of `targets` for `source`. Call
    /// [`PhraseSetTable::finish`] afterwards to restore candidate order.
    fn add(&mut self, source: &[u32], targets: Vec<u32>, count: u64) {
        let node = self.node_for(source);
        let cands = &mut self.nodes[node].candidates;
        if cands.is_empty() {
            self.num_phrases += 1;
        }
        match cands.iter_mut().find(|c| c.targets == targets) {
            Some(c) => c.count += count,
            None => cands.push(PhraseCandidate { targets, count }),
        }
    }

    fn finish(&mut self) {
        for node in &mut self.nodes {
            rank(&mut node.candidates);
        }
    }

    pub fn max_src_len(&self) -> usize {
        self.max_src_len
    }

    pub fn max_tgt_len(&self) -> usize {
        self.max_tgt_len
    }

    /// Number of distinct source phrases.
    pub fn len(&self) -> usize {
        self.num_phrases
    }

    pub fn is_empty(&self) -> bool {
        self.num_phrases == 0
    }

    pub fn lookup(&self, phrase: &[u32]) -> &[PhraseCandidate] {
        let mut node = 0;
        for id in phrase {
            match self.nodes[node].children.get(id) {
                Some(&child) => node = child,
                None => return &[],
            }
        }
        &self.nodes[node].candidates
    }

    fn matches_counted(&self, x: &[u32]) -> (Vec<PhraseMatch<'_>>, usize) {
        let mut out = Vec::new();
        let mut probes = 0;
        for start in 0..x.len() {
            let mut node = 0;
            for end in start..x.len().min(start + self.max_src_len) {
                probes += 1;
                match self.nodes[node].children.get(&x[end]) {
                    Some(&child) => node = child,
                    None => break,
                }
                let candidates = &self.nodes[node].candidates;
                if !candidates.is_empty() {
                    out.push(PhraseMatch {
                        start,
                        end: end + 1,
                        candidates,
                    });
                }
            }
        }
        (out, probes)
    }

    /// Every span of `x` no longer than the source length limit that is a
    /// stored phrase, in (start, end) order.
    pub fn match_subsequences(&self, x: &[u32]) -> Vec<PhraseMatch<'_>> {
        self.matches_counted(x).0
    }

    /// V_x^P: union of the target sets of the `top_k` best candidates of
    /// every matched span.
    pub fn sentence_vocab(&self, x: &[u32], top_k: usize) -> IdSet {
        let mut out = IdSet::new();
        for m in self.match_subsequences(x) {
            for c in m.candidates.iter().take(top_k) {
                out.extend(c.targets.iter().copied());
            }
        }
        out
    }

    /// All (source phrase, candidates) entries in lexicographic id order.
    pub fn entries(&self) -> Vec<(Vec<u32>, &[PhraseCandidate])> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if !self.nodes[node].candidates.is_empty() {
                out.push((path.clone(), self.nodes[node].candidates.as_slice()));
            }
            let mut children: Vec<(u32, usize)> =
                self.nodes[node].children.iter().map(|(&k, &v)| (k, v)).collect();
            children.sort_unstable_by(|a, b| b.cmp(a));
            for (id, child) in children {
                let mut p = path.clone();
                p.push(id);
                stack.push((child, p));
            }
        }
        out
    }

    /// Lines `src tokens ||| tgt tokens sorted by id ||| count`.
    pub fn write_to<W: Write>(
        &self,
        mut out: W,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
    ) -> std::io::Result<()> {
        for (phrase, candidates) in self.entries() {
            let src: Vec<&str> = phrase.iter().map(|&s| src_vocab.token(s)).collect();
            let src = src.join(" ");
            for c in candidates {
                let tgt: Vec<&str> = c.targets.iter().map(|&t| tgt_vocab.token(t)).collect();
                writeln!(out, "{src} ||| {} ||| {}", tgt.join(" "), c.count)?;
            }
        }
        Ok(())
    }

    /// Reads the phrase file format; target tokens may come in any order.
    pub fn read_from<R: BufRead>(
        reader: R,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
        max_src_len: usize,
        max_tgt_len: usize,
    ) -> Result<Self> {
        let mut table = PhraseSetTable::new(max_src_len, max_tgt_len);
        for (n, line) in reader.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: n + 1,
                message,
            };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 ' ||| '-separated fields, found {}",
                    fields.len()
                )));
            }
            let source = src_vocab.encode(&fields[0].split_whitespace().collect::<Vec<_>>());
            if source.is_empty() || source.len() > max_src_len {
                return Err(parse_err(format!(
                    "source phrase length {} outside 1..={max_src_len}",
                    source.len()
                )));
            }
            let mut targets = tgt_vocab.encode(&fields[1].split_whitespace().collect::<Vec<_>>());
            targets.sort_unstable();
            targets.dedup();
            let count: u64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad count {:?}", fields[2])))?;
            table.add(&source, targets, count);
        }
        table.finish();
        Ok(table)
    }
}

/// Extracts every consistent phrase pair from word-aligned data and counts
/// (source phrase, target word set) occurrences.
pub fn extract_phrases(
    pairs: &[SentencePair],
    alignments: &[AlignmentLinks],
    max_src: usize,
    max_tgt: usize,
) -> Result<PhraseSetTable> {
    if pairs.len() != alignments.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sentence pairs but {} alignments",
            pairs.len(),
            alignments.len()
        )));
    }
    if max_src == 0 || max_tgt == 0 {
        return Err(Error::InvalidArgument("phrase length limits must be >= 1".into()));
    }
    for (pair, links) in pairs.iter().zip(alignments) {
        links
            .check_bounds(pair.source.len(), pair.target.len())
            .map_err(|message| Error::AlignmentMismatch {
                pair_id: pair.pair_id,
                message,
            })?;
    }

    let per_pair: Vec<Vec<(Vec<u32>, Vec<u32>)>> = pairs
        .par_iter()
        .zip(alignments)
        .map(|(pair, links)| {
            consistent_spans(pair.source.len(), pair.target.len(), links, max_src, max_tgt)
                .into_iter()
                .map(|s| {
                    let mut targets = pair.target[s.tgt_start..s.tgt_end].to_vec();
                    targets.sort_unstable();
                    targets.dedup();
                    (pair.source[s.src_start..s.src_end].to_vec(), targets)
                })
                .collect()
        })
        .collect();

    let mut counts: HashMap<Vec<u32>, HashMap<Vec<u32>, u64>> = HashMap::new();
    for (source, targets) in per_pair.into_iter().flatten() {
        *counts.entry(source).or_default().entry(targets).or_default() += 1;
    }
    let mut table = PhraseSetTable::new(max_src, max_tgt);
    for (source, cands) in counts {
        for (targets, count) in cands {
            table.add(&source, targets, count);
        }
    }
    table.finish();
    Ok(table)
}
