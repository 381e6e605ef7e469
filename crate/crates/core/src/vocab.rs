//! Sentence-level and batch-level output vocabularies.
//!
//! A sentence vocabulary is the union of the dictionary candidates of its
//! words (D), the target sets of its matched phrases (P), the most common
//! target words (T) and, in training, the reference words (R). Reserved ids
//! are always present. A batch vocabulary is the union over its sentences.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::ops::Deref;
use std::str::FromStr;

use crate::corpus::{IdSet, SentencePair, Vocabulary, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::lexicon::WordDictionary;
use crate::phrase::PhraseSetTable;

/// Provenance bits recorded per id.
pub mod source {
    pub const DICT: u8 = 1;
    pub const PHRASE: u8 = 2;
    pub const COMMON: u8 = 4;
    pub const REFERENCE: u8 = 8;
    pub const RESERVED: u8 = 16;
}

/// Sorted restricted id set with a global -> local index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceVocab {
    ids: Vec<u32>,
    local: HashMap<u32, u32>,
    provenance: Vec<u8>,
}

impl SentenceVocab {
    /// Builds from (id, provenance) pairs; reserved ids are added.
    pub fn from_tagged(mut tagged: Vec<(u32, u8)>) -> Self {
        tagged.extend((0..NUM_RESERVED).map(|id| (id, source::RESERVED)));
        Self::assemble(tagged)
    }

    /// Exactly `ids`, without the reserved ids.
    pub fn exact(ids: impl IntoIterator<Item = u32>, tag: u8) -> Self {
        Self::assemble(ids.into_iter().map(|id| (id, tag)).collect())
    }

    fn assemble(mut tagged: Vec<(u32, u8)>) -> Self {
        tagged.sort_unstable_by_key(|&(id, _)| id);
        let mut ids: Vec<u32> = Vec::with_capacity(tagged.len());
        let mut provenance: Vec<u8> = Vec::with_capacity(tagged.len());
        for (id, tag) in tagged {
            if ids.last() == Some(&id) {
                *provenance.last_mut().unwrap() |= tag;
            } else {
                ids.push(id);
                provenance.push(tag);
            }
        }
        let local = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, k as u32))
            .collect();
        SentenceVocab {
            ids,
            local,
            provenance,
        }
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>, tag: u8) -> Self {
        Self::from_tagged(ids.into_iter().map(|id| (id, tag)).collect())
    }

    /// Every id of a vocabulary of `size` entries.
    pub fn full(size: usize) -> Self {
        Self::from_ids(0..size as u32, source::COMMON)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.local.contains_key(&id)
    }

    pub fn local(&self, id: u32) -> Option<usize> {
        self.local.get(&id).map(|&k| k as usize)
    }

    pub fn provenance(&self, id: u32) -> Option<u8> {
        self.local(id).map(|k| self.provenance[k])
    }

    /// Ids tagged with any of the bits in `mask`.
    pub fn ids_from(&self, mask: u8) -> impl Iterator<Item = u32> + '_ {
        self.ids
            .iter()
            .zip(&self.provenance)
            .filter(move |(_, &p)| p & mask != 0)
            .map(|(&id, _)| id)
    }

    fn tagged(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.ids.iter().copied().zip(self.provenance.iter().copied())
    }

    /// Grows the set to `size` ids out of `0..universe`, adding the smallest
    /// missing ids first. Used to force a fixed output size.
    pub fn padded_to(&self, size: usize, universe: usize) -> SentenceVocab {
        let mut tagged: Vec<(u32, u8)> = self.tagged().collect();
        let mut missing = size.saturating_sub(self.len());
        let mut id = 0u32;
        while missing > 0 && (id as usize) < universe {
            if !self.contains(id) {
                tagged.push((id, 0));
                missing -= 1;
            }
            id += 1;
        }
        SentenceVocab::from_tagged(tagged)
    }
}

/// Union of the vocabularies of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchVocab {
    vocab: SentenceVocab,
    pub members: Vec<usize>,
}

impl BatchVocab {
    pub fn vocab(&self) -> &SentenceVocab {
        &self.vocab
    }

    pub fn into_vocab(self) -> SentenceVocab {
        self.vocab
    }
}

impl Deref for BatchVocab {
    type Target = SentenceVocab;
    fn deref(&self) -> &SentenceVocab {
        &self.vocab
    }
}

/// V_b: the sorted union of the member vocabularies. `members` are the
/// pair ids of the sentences.
pub fn build_batch_vocab(vocabs: &[&SentenceVocab], members: Vec<usize>) -> Result<BatchVocab> {
    if vocabs.is_empty() {
        return Err(Error::InvalidArgument("cannot build an empty batch vocabulary".into()));
    }
    let tagged = vocabs.iter().flat_map(|v| v.tagged()).collect();
    Ok(BatchVocab {
        vocab: SentenceVocab::from_tagged(tagged),
        members,
    })
}

/// Which ingredients go into a sentence vocabulary and how many candidates
/// each contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabConfig {
    pub dict_top_n: usize,
    pub phrase_top_k: usize,
    pub common_top_n: usize,
    pub use_dict: bool,
    pub use_phrases: bool,
    pub use_common: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            dict_top_n: 10,
            phrase_top_k: 10,
            common_top_n: 2000,
            use_dict: true,
            use_phrases: true,
            use_common: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Decode,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Mode::Train),
            "decode" => Ok(Mode::Decode),
            other => Err(format!("unknown mode {other:?} (expected train or decode)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Decode => "decode",
        })
    }
}

/// Assembles sentence vocabularies from a dictionary, a phrase table and the
/// common-word set.
#[derive(Debug, Clone)]
pub struct VocabBuilder<'a> {
    pub dict: &'a WordDictionary,
    pub phrases: &'a PhraseSetTable,
    common: IdSet,
    pub config: VocabConfig,
}

impl<'a> VocabBuilder<'a> {
    pub fn new(
        dict: &'a WordDictionary,
        phrases: &'a PhraseSetTable,
        target_vocab: &Vocabulary,
        config: VocabConfig,
    ) -> Self {
        VocabBuilder {
            dict,
            phrases,
            common: target_vocab.top_common_words(config.common_top_n),
            config,
        }
    }

    pub fn with_common(
        dict: &'a WordDictionary,
        phrases: &'a PhraseSetTable,
        common: IdSet,
        config: VocabConfig,
    ) -> Self {
        VocabBuilder {
            dict,
            phrases,
            common,
            config,
        }
    }

    pub fn common(&self) -> &IdSet {
        &self.common
    }

    fn ingredients(&self, x: &[u32]) -> Vec<(u32, u8)> {
        let mut tagged = Vec::new();
        if self.config.use_dict {
            tagged.extend(
                self.dict
                    .sentence_vocab(x, self.config.dict_top_n)
                    .into_iter()
                    .map(|id| (id, source::DICT)),
            );
        }
        if self.config.use_phrases {
            tagged.extend(
                self.phrases
                    .sentence_vocab(x, self.config.phrase_top_k)
                    .into_iter()
                    .map(|id| (id, source::PHRASE)),
            );
        }
        if self.config.use_common {
            tagged.extend(self.common.iter().map(|&id| (id, source::COMMON)));
        }
        tagged
    }

    /// V_x = D ∪ P ∪ T ∪ R.
    pub fn train_vocab(&self, x: &[u32], y: &[u32]) -> SentenceVocab {
        let mut tagged = self.ingredients(x);
        tagged.extend(y.iter().map(|&id| (id, source::REFERENCE)));
        SentenceVocab::from_tagged(tagged)
    }

    /// V_x = D ∪ P ∪ T; no reference term.
    pub fn decode_vocab(&self, x: &[u32]) -> SentenceVocab {
        SentenceVocab::from_tagged(self.ingredients(x))
    }

    pub fn vocab_for(&self, pair: &SentencePair, mode: Mode) -> SentenceVocab {
        match mode {
            Mode::Train => self.train_vocab(&pair.source, &pair.target),
            Mode::Decode => self.decode_vocab(&pair.source),
        }
    }
}

/// Training vocabulary with every ingredient switched on.
pub fn build_train_vocab(
    x: &[u32],
    y: &[u32],
    dict: &WordDictionary,
    phrases: &PhraseSetTable,
    common: &IdSet,
    top_n_dict: usize,
    top_k_phrase: usize,
) -> SentenceVocab {
    let config = VocabConfig {
        dict_top_n: top_n_dict,
        phrase_top_k: top_k_phrase,
        ..VocabConfig::default()
    };
    VocabBuilder::with_common(dict, phrases, common.clone(), config).train_vocab(x, y)
}

pub fn build_decode_vocab(
    x: &[u32],
    dict: &WordDictionary,
    phrases: &PhraseSetTable,
    common: &IdSet,
    top_n_dict: usize,
    top_k_phrase: usize,
) -> SentenceVocab {
    let config = VocabConfig {
        dict_top_n: top_n_dict,
        phrase_top_k: top_k_phrase,
        ..VocabConfig::default()
    };
    VocabBuilder::with_common(dict, phrases, common.clone(), config).decode_vocab(x)
}

/// Reference coverage and vocabulary-size statistics. Sizes count the
/// reserved ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub sentences: usize,
    pub word_level_ratio: f64,
    pub full_sentence_ratio: f64,
    pub avg_sentence_vocab: f64,
    pub avg_batch_vocab: f64,
    pub avg_reference_vocab: f64,
}

impl fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences={}", self.sentences)?;
        writeln!(f, "word_level_ratio={}", self.word_level_ratio)?;
        writeln!(f, "full_sentence_ratio={}", self.full_sentence_ratio)?;
        writeln!(f, "avg_sentence_vocab={}", self.avg_sentence_vocab)?;
        writeln!(f, "avg_batch_vocab={}", self.avg_batch_vocab)?;
        writeln!(f, "avg_reference_vocab={}", self.avg_reference_vocab)
    }
}

impl FromStr for CoverageReport {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for line in s.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {line:?}"))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| -> std::result::Result<f64, String> {
            fields
                .get(k)
                .ok_or_else(|| format!("missing key {k}"))?
                .parse()
                .map_err(|_| format!("bad value for {k}"))
        };
        Ok(CoverageReport {
            sentences: get("sentences")? as usize,
            word_level_ratio: get("word_level_ratio")?,
            full_sentence_ratio: get("full_sentence_ratio")?,
            avg_sentence_vocab: get("avg_sentence_vocab")?,
            avg_batch_vocab: get("avg_batch_vocab")?,
            avg_reference_vocab: get("avg_reference_vocab")?,
        })
    }
}

/// Coverage of every reference by its sentence vocabulary. Batch sizes are
/// measured over consecutive chunks of `batch_size` pairs in corpus order.
pub fn coverage_stats(
    pairs: &[SentencePair],
    builder: &VocabBuilder<'_>,
    mode: Mode,
    batch_size: usize,
) -> CoverageReport {
    let batch_size = batch_size.max(1);
    let mut covered = 0usize;
    let mut tokens = 0usize;
    let mut full = 0usize;
    let mut vocab_total = 0usize;
    let mut reference_total = 0usize;
    let mut batch_total = 0usize;
    let mut batches = 0usize;

    for chunk in pairs.chunks(batch_size) {
        let vocabs: Vec<SentenceVocab> = chunk.iter().map(|p| builder.vocab_for(p, mode)).collect();
        for (pair, v) in chunk.iter().zip(&vocabs) {
            let hits = pair.target.iter().filter(|&&y| v.contains(y)).count();
            covered += hits;
            tokens += pair.target.len();
            if hits == pair.target.len() {
                full += 1;
            }
            vocab_total += v.len();
            reference_total += pair.target.iter().copied().collect::<IdSet>().len();
        }
        let refs: Vec<&SentenceVocab> = vocabs.iter().collect();
        if let Ok(b) = build_batch_vocab(&refs, Vec::new()) {
            batch_total += b.len();
            batches += 1;
        }
    }

    let n = pairs.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CoverageReport {
        sentences: n,
        word_level_ratio: ratio(covered, tokens),
        full_sentence_ratio: ratio(full, n),
        avg_sentence_vocab: ratio(vocab_total, n),
        avg_batch_vocab: ratio(batch_total, batches),
        avg_reference_vocab: ratio(reference_total, n),
    }
}

/// One line per sentence: `pair_id : id id id ...`.
pub fn write_vocab_dump<W: Write>(
    mut out: W,
    vocabs: &[(usize, SentenceVocab)],
) -> std::io::Result<()> {
    for (pair_id, v) in vocabs {
        write!(out, "{pair_id} :")?;
        for id in v.ids() {
            write!(out, " {id}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
