//! Stage lineage hashes and loaders for upstream artifacts.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context};
use nmtvocab::corpus::{load_parallel, ParallelText};
use nmtvocab::nmt::checkpoint::file_sha256;
use nmtvocab::{AlignmentLinks, PhraseSetTable, SentencePair, Vocabulary, WordDictionary};

use crate::artifact;
use crate::config::PipelineConfig;

pub fn align_hash(cfg: &PipelineConfig) -> anyhow::Result<String> {
    let (src, tgt) = cfg.corpus_paths()?;
    let src_digest = file_sha256(&src)?;
    let tgt_digest = file_sha256(&tgt)?;
    Ok(cfg.lineage_hash(
        "align",
        &[],
        &["max_len", "src_vocab_size", "tgt_vocab_size", "em_iters"],
        &[&src_digest, &tgt_digest],
    ))
}

pub fn lexicon_hash(cfg: &PipelineConfig) -> anyhow::Result<String> {
    let parent = align_hash(cfg)?;
    Ok(cfg.lineage_hash("lexicon", &[&parent], &["dict_max_candidates", "dict_min_prob"], &[]))
}

pub fn phrases_hash(cfg: &PipelineConfig) -> anyhow::Result<String> {
    let parent = align_hash(cfg)?;
    Ok(cfg.lineage_hash("phrases", &[&parent], &["max_phrase_len"], &[]))
}

pub const TRAIN_KEYS: &[&str] = &[
    "dict_top_n",
    "phrase_top_k",
    "common_top_n",
    "use_dict",
    "use_phrases",
    "use_common",
    "d_emb",
    "d_h",
    "d_s",
    "d_o",
    "d_attn",
    "out_layers",
    "init_scale",
    "rho",
    "epsilon",
    "batch_size",
    "epochs",
    "seed",
    "freeze_embeddings_after",
    "workers",
    "full_softmax",
];

pub fn train_hash(cfg: &PipelineConfig) -> anyhow::Result<String> {
    let lexicon = lexicon_hash(cfg)?;
    let phrases = phrases_hash(cfg)?;
    Ok(cfg.lineage_hash("train", &[&lexicon, &phrases], TRAIN_KEYS, &[]))
}

pub fn load_corpus(cfg: &PipelineConfig) -> anyhow::Result<ParallelText> {
    let (src, tgt) = cfg.corpus_paths()?;
    let text = load_parallel(&src, &tgt, cfg.max_len)?;
    if text.is_empty() {
        bail!("no sentence pairs of length 1..={} in {} / {}", cfg.max_len, src.display(), tgt.display());
    }
    Ok(text)
}

pub fn load_vocabs(cfg: &PipelineConfig) -> anyhow::Result<(Vocabulary, Vocabulary)> {
    let (sp, tp) = (cfg.src_vocab_path(), cfg.tgt_vocab_path());
    artifact::require(&sp, "source vocabulary", "align")?;
    artifact::require(&tp, "target vocabulary", "align")?;
    Ok((Vocabulary::load(&sp)?, Vocabulary::load(&tp)?))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Training pairs plus the vocabularies the align stage wrote.
pub struct Corpus {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub pairs: Vec<SentencePair>,
}

pub fn load_indexed(cfg: &PipelineConfig) -> anyhow::Result<Corpus> {
    let (src_vocab, tgt_vocab) = load_vocabs(cfg)?;
    let text = load_corpus(cfg)?;
    let pairs = text.index(&src_vocab, &tgt_vocab);
    Ok(Corpus {
        src_vocab,
        tgt_vocab,
        pairs,
    })
}

pub fn load_alignments(cfg: &PipelineConfig, pairs: &[SentencePair], force: bool) -> anyhow::Result<Vec<AlignmentLinks>> {
    let path = cfg.alignments_path();
    artifact::check(&path, "alignment file", "align", &align_hash(cfg)?, force)?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut out = Vec::with_capacity(pairs.len());
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#')) {
        let links = AlignmentLinks::parse_pharaoh(line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), n + 1))?;
        out.push(links);
    }
    if out.len() != pairs.len() {
        bail!(
            "{} has {} alignments but the corpus has {} pairs; rerun `nmtvocab align`",
            path.display(),
            out.len(),
            pairs.len()
        );
    }
    Ok(out)
}

pub fn load_dict(cfg: &PipelineConfig, sv: &Vocabulary, tv: &Vocabulary, force: bool) -> anyhow::Result<WordDictionary> {
    let path = cfg.dict_path();
    artifact::check(&path, "dictionary", "lexicon", &lexicon_hash(cfg)?, force)?;
    Ok(WordDictionary::read_tsv(open(&path)?, sv, tv, cfg.dict_max_candidates)?)
}

pub fn load_phrases(cfg: &PipelineConfig, sv: &Vocabulary, tv: &Vocabulary, force: bool) -> anyhow::Result<PhraseSetTable> {
    let path = cfg.phrases_path();
    artifact::check(&path, "phrase table", "phrases", &phrases_hash(cfg)?, force)?;
    Ok(PhraseSetTable::read_from(
        open(&path)?,
        sv,
        tv,
        cfg.max_phrase_len,
        cfg.max_phrase_len,
    )?)
}
