use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use nmtvocab::align::align_corpus;
use nmtvocab::corpus::load_monolingual;
use nmtvocab::decode::{bleu4_report, decode_corpus, unk_replace, write_attention_dump};
use nmtvocab::nmt::checkpoint::{embedding_digest, file_sha256, Checkpoint};
use nmtvocab::nmt::{train, EpochLog};
use nmtvocab::phrase::extract_phrases;
use nmtvocab::speed::{epoch_timing, output_layer_model, output_layer_seconds};
use nmtvocab::synth::{ambiguous_corpus, copy_corpus, SynthConfig};
use nmtvocab::vocab::{coverage_stats, source};
use nmtvocab::{Mode, SentenceVocab, VocabBuilder, VocabConfig, Vocabulary, WordDictionary};

use crate::artifact;
use crate::config::{usage, PipelineConfig};
use crate::stages::{self, Corpus};

/// Report output; a closed stdout (as in `| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub force: bool,
}

fn save_vocab(path: &Path, v: &Vocabulary) -> anyhow::Result<()> {
    artifact::ensure_parent(path)?;
    Ok(v.save(path)?)
}

pub fn align(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let hash = stages::align_hash(cfg)?;
    let text = stages::load_corpus(cfg)?;
    let src_vocab = Vocabulary::build(text.source.iter(), cfg.src_vocab_size)?;
    let tgt_vocab = Vocabulary::build(text.target.iter(), cfg.tgt_vocab_size)?;
    let pairs = text.index(&src_vocab, &tgt_vocab);
    let (fwd, rev, links) = align_corpus(&pairs, cfg.em_iters)?;

    save_vocab(&cfg.src_vocab_path(), &src_vocab)?;
    save_vocab(&cfg.tgt_vocab_path(), &tgt_vocab)?;
    let header = artifact::header("align", &hash, cfg);
    let mut body = Vec::new();
    fwd.ttable.write_tsv(&mut body, &src_vocab, &tgt_vocab)?;
    artifact::write(&cfg.ttable_path(), &header, &body)?;
    body.clear();
    rev.ttable.write_tsv(&mut body, &tgt_vocab, &src_vocab)?;
    artifact::write(&cfg.ttable_rev_path(), &header, &body)?;
    let mut lines = String::new();
    for l in &links {
        writeln!(lines, "{l}")?;
    }
    artifact::write(&cfg.alignments_path(), &header, lines.as_bytes())?;

    say!(
        "pairs {} dropped {} src_vocab {} tgt_vocab {}",
        pairs.len(),
        text.dropped,
        src_vocab.len(),
        tgt_vocab.len()
    );
    for (name, m) in [("s2t", &fwd), ("t2s", &rev)] {
        for (k, ll) in m.log_likelihoods.iter().enumerate() {
            say!("em {name} iteration {k} loglik {ll:.6}");
        }
    }
    Ok(())
}

pub fn lexicon(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let (sv, tv) = stages::load_vocabs(cfg)?;
    let path = cfg.ttable_path();
    artifact::check(&path, "translation table", "align", &stages::align_hash(cfg)?, ctx.force)?;
    let file = std::fs::File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let table = nmtvocab::TTable::read_tsv(
        std::io::BufReader::new(file),
        nmtvocab::Direction::SourceToTarget,
        &sv,
        &tv,
    )?;
    let dict = WordDictionary::from_ttable(&table, cfg.dict_max_candidates, cfg.dict_min_prob);
    let mut body = Vec::new();
    dict.write_tsv(&mut body, &sv, &tv)?;
    let hash = stages::lexicon_hash(cfg)?;
    artifact::write(&cfg.dict_path(), &artifact::header("lexicon", &hash, cfg), &body)?;
    say!("dictionary entries {}", dict.len());
    Ok(())
}

pub fn phrases(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let corpus = stages::load_indexed(cfg)?;
    let links = stages::load_alignments(cfg, &corpus.pairs, ctx.force)?;
    let table = extract_phrases(&corpus.pairs, &links, cfg.max_phrase_len, cfg.max_phrase_len)?;
    let mut body = Vec::new();
    table.write_to(&mut body, &corpus.src_vocab, &corpus.tgt_vocab)?;
    let hash = stages::phrases_hash(cfg)?;
    artifact::write(&cfg.phrases_path(), &artifact::header("phrases", &hash, cfg), &body)?;
    say!("source phrases {}", table.len());
    Ok(())
}

struct Row {
    label: String,
    n: Option<usize>,
    config: VocabConfig,
}

fn stats_rows(cfg: &PipelineConfig) -> Vec<Row> {
    let base = VocabConfig {
        use_dict: false,
        use_phrases: false,
        use_common: false,
        ..cfg.vocab_config()
    };
    let mut rows = vec![Row {
        label: "P".into(),
        n: None,
        config: VocabConfig {
            use_phrases: true,
            ..base.clone()
        },
    }];
    let variants: [(&str, bool, bool); 3] = [("D", false, false), ("D+P", true, false), ("D+P+T", true, true)];
    for (label, use_phrases, use_common) in variants {
        for &n in &cfg.sweep {
            rows.push(Row {
                label: label.into(),
                n: Some(n),
                config: VocabConfig {
                    dict_top_n: n,
                    use_dict: true,
                    use_phrases,
                    use_common,
                    ..base.clone()
                },
            });
        }
    }
    rows
}

pub fn stats(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let corpus = stages::load_indexed(cfg)?;
    let dict = stages::load_dict(cfg, &corpus.src_vocab, &corpus.tgt_vocab, ctx.force)?;
    let phrases = stages::load_phrases(cfg, &corpus.src_vocab, &corpus.tgt_vocab, ctx.force)?;
    let pairs = match (cfg.mode, &cfg.input, &cfg.references) {
        (Mode::Decode, Some(src), Some(refs)) => {
            nmtvocab::corpus::load_parallel(src, refs, usize::MAX)?.index(&corpus.src_vocab, &corpus.tgt_vocab)
        }
        _ => corpus.pairs.clone(),
    };
    let common = corpus.tgt_vocab.top_common_words(cfg.common_top_n);

    let hash = cfg.lineage_hash(
        "stats",
        &[&stages::lexicon_hash(cfg)?, &stages::phrases_hash(cfg)?],
        &["mode", "sweep", "phrase_top_k", "common_top_n", "batch_size"],
        &[],
    );
    let mut table = format!(
        "# mode={} sentences={} phrase_top_k={} common_top_n={}\n{:<8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        cfg.mode,
        pairs.len(),
        cfg.phrase_top_k,
        cfg.common_top_n,
        "config",
        "n",
        "word_cov",
        "sent_cov",
        "avg_vocab",
        "avg_batch",
        "avg_ref"
    );
    for row in stats_rows(cfg) {
        let builder = VocabBuilder::with_common(&dict, &phrases, common.clone(), row.config);
        let r = coverage_stats(&pairs, &builder, cfg.mode, cfg.batch_size);
        let n = row.n.map_or("-".to_string(), |n| n.to_string());
        writeln!(
            table,
            "{:<8} {:>5} {:>10.4} {:>10.4} {:>10.1} {:>10.1} {:>10.1}",
            row.label,
            n,
            r.word_level_ratio,
            r.full_sentence_ratio,
            r.avg_sentence_vocab,
            r.avg_batch_vocab,
            r.avg_reference_vocab
        )?;
    }
    say!("{}", table.trim_end());
    if let Some(path) = &cfg.stats_output {
        artifact::write(path, &artifact::header("stats", &hash, cfg), table.as_bytes())?;
    }
    Ok(())
}

fn builder<'a>(
    cfg: &PipelineConfig,
    corpus_tgt: &Vocabulary,
    dict: &'a WordDictionary,
    phrases: &'a nmtvocab::PhraseSetTable,
) -> VocabBuilder<'a> {
    VocabBuilder::new(dict, phrases, corpus_tgt, cfg.vocab_config())
}

pub fn train_cmd(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let Corpus {
        src_vocab,
        tgt_vocab,
        pairs,
        ..
    } = stages::load_indexed(cfg)?;
    let dict = stages::load_dict(cfg, &src_vocab, &tgt_vocab, ctx.force)?;
    let phrases = stages::load_phrases(cfg, &src_vocab, &tgt_vocab, ctx.force)?;
    let builder = builder(cfg, &tgt_vocab, &dict, &phrases);
    let tc = cfg.train_config();
    let mut model = tc.init_model(src_vocab.len(), tgt_vocab.len())?;

    let hash = stages::train_hash(cfg)?;
    let src_sha = file_sha256(&cfg.src_vocab_path())?;
    let tgt_sha = file_sha256(&cfg.tgt_vocab_path())?;
    let log_path = cfg.train_log_path();
    let mut log = artifact::header("train", &hash, cfg);
    let final_path = cfg.model_path();
    artifact::ensure_parent(&final_path)?;

    let on_epoch = |entry: &EpochLog, m: &nmtvocab::nmt::Model| -> nmtvocab::Result<()> {
        let mut ck = Checkpoint::new(m.clone());
        ck.meta.insert("lineage".into(), hash.clone());
        ck.meta.insert("epoch".into(), entry.epoch.to_string());
        ck.meta.insert("src_vocab_sha256".into(), src_sha.clone());
        ck.meta.insert("tgt_vocab_sha256".into(), tgt_sha.clone());
        ck.meta.insert("embedding_digest".into(), embedding_digest(m));
        ck.meta.insert("config".into(), cfg.echo());
        ck.save(&cfg.epoch_model_path(entry.epoch))?;
        if entry.epoch == cfg.epochs {
            ck.save(&final_path)?;
        }
        say!("{entry}");
        log.push_str(&format!("{entry}\n"));
        std::fs::write(&log_path, &log).map_err(|e| nmtvocab::Error::io(&log_path, e))
    };
    train(&mut model, &pairs, &builder, &tc, on_epoch)?;
    Ok(())
}

pub fn decode(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let Some(input) = &cfg.input else {
        return Err(usage("decode needs `input`"));
    };
    let model_path = cfg.model_path();
    artifact::require(&model_path, "checkpoint", "train")?;
    let (src_vocab, tgt_vocab) = stages::load_vocabs(cfg)?;
    let ck = Checkpoint::load(&model_path)?;
    for (key, path) in [("src_vocab_sha256", cfg.src_vocab_path()), ("tgt_vocab_sha256", cfg.tgt_vocab_path())] {
        let actual = file_sha256(&path)?;
        match ck.meta.get(key) {
            Some(expected) if *expected == actual => {}
            Some(_) if ctx.force => {}
            Some(expected) => bail!(
                "{} changed since {} was trained (sha256 {actual}, checkpoint expects {expected}); \
                 retrain or pass --force",
                path.display(),
                model_path.display()
            ),
            None if ctx.force => {}
            None => bail!("{} records no {key}; pass --force to decode anyway", model_path.display()),
        }
    }
    let model = ck.model;
    if model.dims.src_vocab != src_vocab.len() || model.dims.tgt_vocab != tgt_vocab.len() {
        bail!(
            "checkpoint dims {}x{} do not match vocabularies {}x{}",
            model.dims.src_vocab,
            model.dims.tgt_vocab,
            src_vocab.len(),
            tgt_vocab.len()
        );
    }
    let dict = stages::load_dict(cfg, &src_vocab, &tgt_vocab, ctx.force)?;
    let phrases = stages::load_phrases(cfg, &src_vocab, &tgt_vocab, ctx.force)?;
    let builder = builder(cfg, &tgt_vocab, &dict, &phrases);
    let dcfg = cfg.decode_config();
    dcfg.validate()?;

    let sentences = load_monolingual(input)?;
    let kept: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
    let sources: Vec<Vec<u32>> = kept.iter().map(|&i| src_vocab.encode(&sentences[i])).collect();
    let vocabs: Vec<SentenceVocab> = sources.iter().map(|x| builder.decode_vocab(x)).collect();
    let results = decode_corpus(&model, &sources, &vocabs, &dcfg)?;

    let mut outputs: Vec<Vec<String>> = vec![Vec::new(); sentences.len()];
    let mut dump = Vec::new();
    let mut partial = 0;
    for (k, (&i, r)) in kept.iter().zip(&results).enumerate() {
        let best = r.best();
        partial += usize::from(r.partial);
        outputs[i] = if cfg.unk_replace {
            unk_replace(best, &sources[k], &sentences[i], &dict, &tgt_vocab)
        } else {
            tgt_vocab.decode(&best.tokens)
        };
        write_attention_dump(&mut dump, best)?;
    }
    let mut text = String::new();
    for o in &outputs {
        writeln!(text, "{}", o.join(" "))?;
    }
    let out_path = cfg.output_path();
    artifact::ensure_parent(&out_path)?;
    std::fs::write(&out_path, text).with_context(|| format!("cannot write {}", out_path.display()))?;
    if let Some(path) = &cfg.attention_dump {
        artifact::ensure_parent(path)?;
        std::fs::write(path, dump).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let avg_vocab = vocabs.iter().map(SentenceVocab::len).sum::<usize>() as f64 / vocabs.len().max(1) as f64;
    say!(
        "sentences {} avg_vocab {avg_vocab:.1} partial {partial}",
        sentences.len()
    );
    if let Some(refs) = &cfg.references {
        let references = load_monolingual(refs)?;
        if references.len() != outputs.len() {
            bail!(
                "{} has {} lines but {} has {}",
                refs.display(),
                references.len(),
                input.display(),
                outputs.len()
            );
        }
        say!("{}", bleu4_report(&outputs, &references, cfg.bleu_smoothing)?);
    }
    Ok(())
}

pub fn bench(ctx: &Ctx) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let full_size = cfg.bench_vocab;
    if cfg.bench_runs == 0 || cfg.bench_steps == 0 || cfg.bench_pairs == 0 {
        return Err(usage("bench_runs, bench_steps and bench_pairs must be >= 1"));
    }
    let layer = output_layer_model(full_size, cfg.d_o, cfg.seed)?;

    let text = ambiguous_corpus(&SynthConfig {
        sentences: cfg.bench_pairs,
        seed: cfg.seed,
        ..SynthConfig::default()
    });
    let sv = Vocabulary::build(text.source.iter(), usize::MAX)?;
    let tv = Vocabulary::build(text.target.iter(), usize::MAX)?;
    let pairs = text.index(&sv, &tv);
    let tokens: usize = pairs.iter().map(|p| p.target.len() + 1).sum();
    let references: Vec<SentenceVocab> = pairs
        .iter()
        .map(|p| SentenceVocab::from_ids(p.target.iter().copied(), source::REFERENCE))
        .collect();
    let mut tc = cfg.train_config();
    tc.epochs = 1;
    let model = tc.init_model(sv.len(), full_size.max(tv.len()))?;

    let mut sizes: Vec<Option<usize>> = cfg
        .bench_sizes
        .iter()
        .map(|&n| Some(n.min(full_size)))
        .collect();
    sizes.push(None);
    say!(
        "# |V_y|={full_size} d_o={} steps={} runs={} pairs={} tokens={tokens}",
        cfg.d_o, cfg.bench_steps, cfg.bench_runs, pairs.len()
    );
    say!(
        "{:>8} {:>12} {:>10} {:>14} {:>10}",
        "size", "step_us", "speedup", "tokens_per_sec", "slowdown"
    );
    let mut rows = Vec::new();
    for size in &sizes {
        let ids = SentenceVocab::exact(0..size.unwrap_or(full_size) as u32, source::COMMON);
        let step = output_layer_seconds(&layer, &ids, cfg.bench_steps, cfg.bench_runs, cfg.seed);
        let mut run_cfg = tc.clone();
        match size {
            Some(n) => run_cfg.force_batch_vocab = Some(*n),
            None => run_cfg.full_softmax = true,
        }
        let epoch = epoch_timing(&model, &pairs, &references, &run_cfg, cfg.bench_runs)?;
        rows.push((*size, step, tokens as f64 / epoch.median.as_secs_f64()));
    }
    let full_step = rows.last().map(|r| r.1).unwrap_or(f64::NAN);
    let fastest = rows.first().map(|r| r.2).unwrap_or(f64::NAN);
    for (size, step, tps) in rows {
        let label = size.map_or("full".to_string(), |n| n.to_string());
        say!(
            "{label:>8} {:>12.2} {:>10.2} {tps:>14.1} {:>10.2}",
            step * 1e6,
            full_step / step,
            fastest / tps
        );
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// `ambiguous` (context-dependent translations) or `copy`
    #[arg(long, default_value = "ambiguous")]
    pub kind: String,
    /// Total pairs; the last `test` of them form the test split
    #[arg(long, default_value_t = 600)]
    pub sentences: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: std::path::PathBuf,
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    if args.test > args.sentences {
        return Err(usage("--test cannot exceed --sentences"));
    }
    let sc = SynthConfig {
        sentences: args.sentences,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let text = match args.kind.as_str() {
        "ambiguous" => ambiguous_corpus(&sc),
        "copy" => copy_corpus(&sc),
        other => return Err(usage(format!("unknown corpus kind {other:?}"))),
    };
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let split = args.sentences - args.test;
    for (name, range) in [("train", 0..split), ("test", split..args.sentences)] {
        for (ext, side) in [("src", &text.source), ("tgt", &text.target)] {
            let mut body = String::new();
            for s in &side[range.clone()] {
                writeln!(body, "{}", s.join(" "))?;
            }
            let path = args.out_dir.join(format!("{name}.{ext}"));
            std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
        }
    }
    Ok(())
}
