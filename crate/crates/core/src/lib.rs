//! Target-vocabulary manipulation for attention-based neural machine
//! translation.
//!
//! The pipeline: [`corpus`] ingests parallel text, [`align`] learns IBM
//! Model 1 tables and symmetrized alignments, [`lexicon`] and [`phrase`]
//! distill them into a word dictionary and a phrase library, [`vocab`]
//! assembles small per-sentence and per-batch output vocabularies, [`nmt`]
//! trains an attention encoder-decoder whose softmax runs over those
//! vocabularies only, and [`decode`] runs beam search, UNK replacement and
//! BLEU.

pub mod align;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod lexicon;
pub mod nmt;
pub mod phrase;
pub mod speed;
pub mod pipeline;
pub mod synth;
pub mod vocab;

pub use align::{AlignmentLinks, Direction, Model1, TTable};
pub use corpus::{SentencePair, Vocabulary, BOS, EOS, PAD, UNK};
pub use error::{Error, Result};
pub use lexicon::WordDictionary;
pub use phrase::PhraseSetTable;
pub use vocab::{BatchVocab, CoverageReport, Mode, SentenceVocab, VocabBuilder, VocabConfig};
