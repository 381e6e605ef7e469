//! IBM Model 1 word alignment with grow-diag-final-and symmetrization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::{SentencePair, Vocabulary};
use crate::error::{Error, Result};

/// Conditioning id standing for the empty word.
pub const NULL_ID: u32 = u32::MAX;
pub const NULL_TOKEN: &str = "<null>";

/// Floor used for unseen (given, word) pairs when aligning.
pub const SMOOTHING_FLOOR: f64 = 1e-12;

/// Pairs per E-step work unit. Fixed so the reduction order does not depend
/// on the thread count.
const ESTEP_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// t(target word | source word)
    SourceToTarget,
    /// t(source word | target word)
    TargetToSource,
}

impl Direction {
    /// (conditioning side, generated side) of a pair.
    fn sides<'a>(&self, pair: &'a SentencePair) -> (&'a [u32], &'a [u32]) {
        match self {
            Direction::SourceToTarget => (&pair.source, &pair.target),
            Direction::TargetToSource => (&pair.target, &pair.source),
        }
    }
}

/// Sparse translation table t(word | given).
#[derive(Debug, Clone, PartialEq)]
pub struct TTable {
    pub direction: Direction,
    rows: BTreeMap<u32, BTreeMap<u32, f64>>,
}

impl TTable {
    pub fn new(direction: Direction) -> Self {
        TTable {
            direction,
            rows: BTreeMap::new(),
        }
    }

    pub fn prob(&self, given: u32, word: u32) -> f64 {
        self.rows
            .get(&given)
            .and_then(|r| r.get(&word))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn row(&self, given: u32) -> Option<&BTreeMap<u32, f64>> {
        self.rows.get(&given)
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, &BTreeMap<u32, f64>)> {
        self.rows.iter().map(|(&g, r)| (g, r))
    }

    pub fn insert(&mut self, given: u32, word: u32, prob: f64) {
        self.rows.entry(given).or_default().insert(word, prob);
    }

    pub fn num_entries(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    /// TSV `given \t word \t prob`, sorted by given token then descending
    /// probability. `given_vocab` is the conditioning side's vocabulary.
    pub fn write_tsv<W: Write>(
        &self,
        mut out: W,
        given_vocab: &Vocabulary,
        word_vocab: &Vocabulary,
    ) -> std::io::Result<()> {
        let surface = |id: u32| {
            if id == NULL_ID {
                NULL_TOKEN
            } else {
                given_vocab.token(id)
            }
        };
        let mut givens: Vec<(&str, u32)> = self.rows.keys().map(|&g| (surface(g), g)).collect();
        givens.sort();
        for (given_tok, given) in givens {
            let mut entries: Vec<(&str, f64)> = self.rows[&given]
                .iter()
                .map(|(&w, &p)| (word_vocab.token(w), p))
                .collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
            for (word_tok, p) in entries {
                writeln!(out, "{given_tok}\t{word_tok}\t{p}")?;
            }
        }
        Ok(())
    }

    /// Reads the TSV format written by [`TTable::write_tsv`]. Lines starting
    /// with `#` are skipped.
    pub fn read_tsv<R: BufRead>(
        reader: R,
        direction: Direction,
        given_vocab: &Vocabulary,
        word_vocab: &Vocabulary,
    ) -> Result<Self> {
        let mut table = TTable::new(direction);
        for_each_tsv_line(reader, |given, word, p| {
            let given = if given == NULL_TOKEN {
                NULL_ID
            } else {
                given_vocab.id(given)
            };
            table.insert(given, word_vocab.id(word), p);
        })?;
        Ok(table)
    }
}

pub(crate) fn for_each_tsv_line<R: BufRead>(
    reader: R,
    mut f: impl FnMut(&str, &str, f64),
) -> Result<()> {
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let p: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: n + 1,
            message: format!("bad probability {:?}", fields[2]),
        })?;
        f(fields[0], fields[1], p);
    }
    Ok(())
}

/// Result of EM training: the table plus the corpus log-likelihood of the
/// initial parameters and after every iteration (`iterations + 1` values).
#[derive(Debug, Clone)]
pub struct Model1 {
    pub ttable: TTable,
    pub log_likelihoods: Vec<f64>,
}

/// Flat parameter layout shared by the E and M steps.
struct Model1Index {
    /// given id of each parameter slot
    given_of: Vec<u32>,
    word_of: Vec<u32>,
    /// per pair: for each generated position, the slots of
    /// (NULL, given_0, .., given_{l-1}) laid out contiguously
    slots: Vec<Vec<usize>>,
    /// per pair: l + 1
    widths: Vec<usize>,
}

impl Model1Index {
    fn build(pairs: &[SentencePair], direction: Direction) -> Self {
        let mut lookup: HashMap<(u32, u32), usize> = HashMap::new();
        let mut given_of = Vec::new();
        let mut word_of = Vec::new();
        let mut slots = Vec::with_capacity(pairs.len());
        let mut widths = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let (given, generated) = direction.sides(pair);
            let mut pair_slots = Vec::with_capacity(generated.len() * (given.len() + 1));
            for &w in generated {
                for g in std::iter::once(NULL_ID).chain(given.iter().copied()) {
                    let slot = *lookup.entry((g, w)).or_insert_with(|| {
                        given_of.push(g);
                        word_of.push(w);
                        given_of.len() - 1
                    });
                    pair_slots.push(slot);
                }
            }
            slots.push(pair_slots);
            widths.push(given.len() + 1);
        }
        Model1Index {
            given_of,
            word_of,
            slots,
            widths,
        }
    }

    /// Uniform t(.|g) over the words co-occurring with g.
    fn uniform_init(&self) -> Vec<f64> {
        let mut fanout: HashMap<u32, usize> = HashMap::new();
        for &g in &self.given_of {
            *fanout.entry(g).or_default() += 1;
        }
        self.given_of
            .iter()
            .map(|g| 1.0 / fanout[g] as f64)
            .collect()
    }

    /// Expected counts and log-likelihood over a range of pairs.
    fn expected_counts(&self, probs: &[f64], pairs: std::ops::Range<usize>) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; probs.len()];
        let mut loglik = 0.0;
        for p in pairs {
            let width = self.widths[p];
            for row in self.slots[p].chunks(width) {
                let total: f64 = row.iter().map(|&s| probs[s]).sum();
                loglik += (total / width as f64).ln();
                for &s in row {
                    counts[s] += probs[s] / total;
                }
            }
        }
        (counts, loglik)
    }

    /// Chunked E-step; chunk results are merged in chunk order.
    fn e_step(&self, probs: &[f64]) -> (Vec<f64>, f64) {
        let n = self.slots.len();
        let starts: Vec<usize> = (0..n).step_by(ESTEP_CHUNK).collect();
        let partials: Vec<(Vec<f64>, f64)> = starts
            .par_iter()
            .map(|&s| self.expected_counts(probs, s..(s + ESTEP_CHUNK).min(n)))
            .collect();
        let mut counts = vec![0.0; probs.len()];
        let mut loglik = 0.0;
        for (c, ll) in partials {
            for (acc, v) in counts.iter_mut().zip(c) {
                *acc += v;
            }
            loglik += ll;
        }
        (counts, loglik)
    }

    fn m_step(&self, counts: &[f64]) -> Vec<f64> {
        let mut totals: HashMap<u32, f64> = HashMap::new();
        for (&g, &c) in self.given_of.iter().zip(counts) {
            *totals.entry(g).or_default() += c;
        }
        self.given_of
            .iter()
            .zip(counts)
            .map(|(g, &c)| c / totals[g])
            .collect()
    }

    fn log_likelihood(&self, probs: &[f64]) -> f64 {
        self.e_step(probs).1
    }

    fn to_table(&self, probs: &[f64], direction: Direction) -> TTable {
        let mut table = TTable::new(direction);
        for ((&g, &w), &p) in self.given_of.iter().zip(&self.word_of).zip(probs) {
            table.insert(g, w, p);
        }
        table
    }
}

/// Trains IBM Model 1 by EM from a uniform start. A NULL word is prepended
/// to the conditioning side of every pair.
pub fn train_model1(
    pairs: &[SentencePair],
    iterations: usize,
    direction: Direction,
) -> Result<Model1> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("EM iterations must be >= 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let index = Model1Index::build(pairs, direction);
    let mut probs = index.uniform_init();
    let mut log_likelihoods = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (counts, loglik) = index.e_step(&probs);
        log_likelihoods.push(loglik);
        probs = index.m_step(&counts);
    }
    log_likelihoods.push(index.log_likelihood(&probs));
    Ok(Model1 {
        ttable: index.to_table(&probs, direction),
        log_likelihoods,
    })
}

/// Set of (source position, target position) links, 0-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentLinks {
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentLinks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, i: usize, j: usize) -> bool {
        self.links.insert((i, j))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.links.contains(&(i, j))
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied()
    }

    /// Swaps the coordinate frame.
    pub fn transposed(&self) -> Self {
        self.iter().map(|(i, j)| (j, i)).collect()
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.links.intersection(&other.links).copied().collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        self.links.union(&other.links).copied().collect()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.links.is_subset(&other.links)
    }

    /// Parses Pharaoh `i-j i-j ...`.
    pub fn parse_pharaoh(line: &str) -> std::result::Result<Self, String> {
        line.split_whitespace()
            .map(|link| {
                let (i, j) = link
                    .split_once('-')
                    .ok_or_else(|| format!("bad link {link:?}"))?;
                let i = i.parse().map_err(|_| format!("bad link {link:?}"))?;
                let j = j.parse().map_err(|_| format!("bad link {link:?}"))?;
                Ok((i, j))
            })
            .collect()
    }

    /// Checks that every link fits an l x m sentence pair.
    pub fn check_bounds(&self, l: usize, m: usize) -> std::result::Result<(), String> {
        match self.iter().find(|&(i, j)| i >= l || j >= m) {
            Some((i, j)) => Err(format!("link {i}-{j} outside {l}x{m} sentence pair")),
            None => Ok(()),
        }
    }
}

impl FromIterator<(usize, usize)> for AlignmentLinks {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        AlignmentLinks {
            links: iter.into_iter().collect(),
        }
    }
}

/// Pharaoh format.
impl fmt::Display for AlignmentLinks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (i, j)) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{i}-{j}")?;
        }
        Ok(())
    }
}

/// Viterbi alignment under Model 1. Each generated word links to the
/// conditioning position with the highest t; ties go to the smallest
/// position, and NULL wins only when strictly better than every real word.
/// Links are returned in the pair's (source i, target j) frame whatever the
/// table direction; NULL links are omitted.
pub fn viterbi_align(ttable: &TTable, pair: &SentencePair) -> AlignmentLinks {
    let (given, generated) = ttable.direction.sides(pair);
    let floored = |g: u32, w: u32| ttable.prob(g, w).max(SMOOTHING_FLOOR);
    let mut links = AlignmentLinks::new();
    for (wpos, &w) in generated.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gpos, &g) in given.iter().enumerate() {
            let p = floored(g, w);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((gpos, p));
            }
        }
        let null_p = floored(NULL_ID, w);
        if let Some((gpos, p)) = best {
            if p >= null_p {
                match ttable.direction {
                    Direction::SourceToTarget => links.insert(gpos, wpos),
                    Direction::TargetToSource => links.insert(wpos, gpos),
                };
            }
        }
    }
    links
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, 0),
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// grow-diag-final-and over two directional alignments in the same
/// (i, j) frame for an l x m pair.
pub fn grow_diag_final_and(
    fwd: &AlignmentLinks,
    rev: &AlignmentLinks,
    l: usize,
    m: usize,
) -> AlignmentLinks {
    let union = fwd.union(rev);
    let mut alignment = fwd.intersection(rev);
    let mut src_aligned = vec![false; l];
    let mut tgt_aligned = vec![false; m];
    for (i, j) in alignment.iter() {
        src_aligned[i] = true;
        tgt_aligned[j] = true;
    }

    // grow-diag
    loop {
        let mut added = false;
        for i in 0..l {
            for j in 0..m {
                if !alignment.contains(i, j) {
                    continue;
                }
                for (di, dj) in NEIGHBORS {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= l as isize || nj >= m as isize {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if (!src_aligned[ni] || !tgt_aligned[nj])
                        && union.contains(ni, nj)
                        && alignment.insert(ni, nj)
                    {
                        src_aligned[ni] = true;
                        tgt_aligned[nj] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    // final-and, once per direction
    for directional in [fwd, rev] {
        for (i, j) in directional.iter() {
            if !src_aligned[i] && !tgt_aligned[j] {
                alignment.insert(i, j);
                src_aligned[i] = true;
                tgt_aligned[j] = true;
            }
        }
    }
    alignment
}

/// Trains both directions, Viterbi-aligns every pair and symmetrizes.
/// Returns the source-to-target table (the word dictionary seed), the
/// reverse table, and one link set per pair.
pub fn align_corpus(
    pairs: &[SentencePair],
    iterations: usize,
) -> Result<(Model1, Model1, Vec<AlignmentLinks>)> {
    let fwd = train_model1(pairs, iterations, Direction::SourceToTarget)?;
    let rev = train_model1(pairs, iterations, Direction::TargetToSource)?;
    let links = pairs
        .iter()
        .map(|pair| {
            let a = viterbi_align(&fwd.ttable, pair);
            let b = viterbi_align(&rev.ttable, pair);
            grow_diag_final_and(&a, &b, pair.source.len(), pair.target.len())
        })
        .collect();
    Ok((fwd, rev, links))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pair_lines, Vocabulary};
    use proptest::prelude::*;

    fn corpus(src: &[&str], tgt: &[&str]) -> (Vec<SentencePair>, Vocabulary, Vocabulary) {
        let text = pair_lines(src, tgt, 50).unwrap();
        let sv = Vocabulary::build(&text.source, 100).unwrap();
        let tv = Vocabulary::build(&text.target, 100).unwrap();
        (text.index(&sv, &tv), sv, tv)
    }

    #[test]
    fn das_haus_converges() {
        let (pairs, sv, tv) = corpus(&["das Haus", "das Buch"], &["the house", "the book"]);
        let m1 = train_model1(&pairs, 20, Direction::SourceToTarget).unwrap();
        let t = m1.ttable.prob(sv.id("das"), tv.id("the"));
        assert!(t > 0.9, "t(the|das) = {t}");

        let links = viterbi_align(&m1.ttable, &pairs[0]);
        assert_eq!(links, AlignmentLinks::from_iter([(0, 0), (1, 1)]));
    }

    #[test]
    fn single_pair_single_candidate() {
        let (pairs, sv, tv) = corpus(&["a"], &["x"]);
        let m1 = train_model1(&pairs, 1, Direction::SourceToTarget).unwrap();
        assert_eq!(m1.ttable.prob(sv.id("a"), tv.id("x")), 1.0);
        assert_eq!(m1.ttable.prob(NULL_ID, tv.id("x")), 1.0);
        assert_eq!(m1.log_likelihoods.len(), 2);
    }

    #[test]
    fn rows_are_distributions_and_likelihood_is_monotone() {
        let (pairs, _, _) = corpus(
            &["a b c", "a c", "b d a", "d d c a", "c"],
            &["x y z", "x z", "y w x", "w w z x", "z z"],
        );
        for dir in [Direction::SourceToTarget, Direction::TargetToSource] {
            let m1 = train_model1(&pairs, 10, dir).unwrap();
            for (_, row) in m1.ttable.rows() {
                let s: f64 = row.values().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(row.values().all(|&p| p >= 0.0));
            }
            for w in m1.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", m1.log_likelihoods);
            }
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            train_model1(&[], 5, Direction::SourceToTarget),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn null_only_words_are_unaligned() {
        let pair = SentencePair {
            pair_id: 0,
            source: vec![4],
            target: vec![5, 6],
        };
        let mut t = TTable::new(Direction::SourceToTarget);
        t.insert(NULL_ID, 5, 0.5);
        t.insert(NULL_ID, 6, 0.5);
        t.insert(4, 7, 1.0);
        assert!(viterbi_align(&t, &pair).is_empty());
    }

    #[test]
    fn viterbi_ties_go_to_first_position() {
        let pair = SentencePair {
            pair_id: 0,
            source: vec![4, 5],
            target: vec![6],
        };
        let mut t = TTable::new(Direction::SourceToTarget);
        t.insert(4, 6, 0.5);
        t.insert(5, 6, 0.5);
        assert_eq!(viterbi_align(&t, &pair), AlignmentLinks::from_iter([(0, 0)]));
    }

    #[test]
    fn reverse_direction_reports_pair_frame() {
        let pair = SentencePair {
            pair_id: 0,
            source: vec![4, 5],
            target: vec![6],
        };
        // given = target word 6; both source words generated from it
        let mut t = TTable::new(Direction::TargetToSource);
        t.insert(6, 4, 0.5);
        t.insert(6, 5, 0.5);
        assert_eq!(
            viterbi_align(&t, &pair),
            AlignmentLinks::from_iter([(0, 0), (1, 0)])
        );
    }

    #[test]
    fn gdfa_identical_inputs() {
        let s = AlignmentLinks::from_iter([(0, 1), (1, 0), (2, 2)]);
        assert_eq!(grow_diag_final_and(&s, &s, 3, 3), s);
    }

    #[test]
    fn gdfa_grows_diagonally() {
        let fwd = AlignmentLinks::from_iter([(0, 0), (1, 1)]);
        let rev = AlignmentLinks::from_iter([(0, 0)]);
        assert_eq!(grow_diag_final_and(&fwd, &rev, 2, 2), fwd);
    }

    #[test]
    fn gdfa_final_and_needs_both_ends_unaligned() {
        // (2,0) is far from the intersection and its target is taken
        let fwd = AlignmentLinks::from_iter([(0, 0), (2, 0)]);
        let rev = AlignmentLinks::from_iter([(0, 0), (2, 2)]);
        let out = grow_diag_final_and(&fwd, &rev, 3, 3);
        assert_eq!(out, AlignmentLinks::from_iter([(0, 0), (2, 2)]));
    }

    #[test]
    fn pharaoh_round_trip() {
        let a = AlignmentLinks::parse_pharaoh("0-0 1-2 2-1").unwrap();
        assert_eq!(a.to_string(), "0-0 1-2 2-1");
        assert!(AlignmentLinks::parse_pharaoh("0-x").is_err());
        assert!(AlignmentLinks::parse_pharaoh("").unwrap().is_empty());
        assert!(a.check_bounds(3, 3).is_ok());
        assert!(a.check_bounds(3, 2).is_err());
    }

    #[test]
    fn ttable_tsv_round_trip() {
        let (pairs, sv, tv) = corpus(&["das Haus", "das Buch"], &["the house", "the book"]);
        let m1 = train_model1(&pairs, 3, Direction::SourceToTarget).unwrap();
        let mut buf = Vec::new();
        m1.ttable.write_tsv(&mut buf, &sv, &tv).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first_given: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        let mut sorted = first_given.clone();
        sorted.sort();
        assert_eq!(first_given, sorted);
        let back = TTable::read_tsv(buf.as_slice(), Direction::SourceToTarget, &sv, &tv).unwrap();
        assert_eq!(back, m1.ttable);
    }

    fn links_strategy(l: usize, m: usize) -> impl Strategy<Value = AlignmentLinks> {
        proptest::collection::btree_set((0..l, 0..m), 0..=(l * m))
            .prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn gdfa_is_sandwiched(
            (l, m, fwd, rev) in (1usize..=4, 1usize..=4).prop_flat_map(|(l, m)| {
                (Just(l), Just(m), links_strategy(l, m), links_strategy(l, m))
            })
        ) {
            let out = grow_diag_final_and(&fwd, &rev, l, m);
            prop_assert!(fwd.intersection(&rev).is_subset(&out));
            prop_assert!(out.is_subset(&fwd.union(&rev)));
        }
    }
}
