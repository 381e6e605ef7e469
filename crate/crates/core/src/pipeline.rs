//! Alignment, dictionary and phrase artifacts for one tokenized corpus.

use crate::align::{align_corpus, AlignmentLinks, Model1};
use crate::corpus::{ParallelText, SentencePair, Vocabulary};
use crate::error::Result;
use crate::lexicon::{WordDictionary, DEFAULT_MAX_CANDIDATES};
use crate::phrase::{extract_phrases, PhraseSetTable, DEFAULT_MAX_PHRASE_LEN};
use crate::vocab::{VocabBuilder, VocabConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub em_iterations: usize,
    pub max_phrase_src: usize,
    pub max_phrase_tgt: usize,
    pub dict_max_candidates: usize,
    pub dict_min_prob: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            src_vocab_size: 30_000,
            tgt_vocab_size: 30_000,
            em_iterations: 5,
            max_phrase_src: DEFAULT_MAX_PHRASE_LEN,
            max_phrase_tgt: DEFAULT_MAX_PHRASE_LEN,
            dict_max_candidates: DEFAULT_MAX_CANDIDATES,
            dict_min_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<SentencePair>,
    pub forward: Model1,
    pub reverse: Model1,
    pub alignments: Vec<AlignmentLinks>,
    pub dict: WordDictionary,
    pub phrases: PhraseSetTable,
}

impl Prepared {
    pub fn build(text: &ParallelText, config: &PrepConfig) -> Result<Self> {
        let src_vocab = Vocabulary::build(text.source.iter(), config.src_vocab_size)?;
        let tgt_vocab = Vocabulary::build(text.target.iter(), config.tgt_vocab_size)?;
        let pairs = text.index(&src_vocab, &tgt_vocab);
        let (forward, reverse, alignments) = align_corpus(&pairs, config.em_iterations)?;
        let dict = WordDictionary::from_ttable(&forward.ttable, config.dict_max_candidates, config.dict_min_prob);
        let phrases = extract_phrases(&pairs, &alignments, config.max_phrase_src, config.max_phrase_tgt)?;
        Ok(Prepared {
            src_vocab,
            tgt_vocab,
            pairs,
            forward,
            reverse,
            alignments,
            dict,
            phrases,
        })
    }

    pub fn builder(&self, config: VocabConfig) -> VocabBuilder<'_> {
        VocabBuilder::new(&self.dict, &self.phrases, &self.tgt_vocab, config)
    }
}
