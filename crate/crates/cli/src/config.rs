//! Flat `key = value` pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use nmtvocab::decode::DecodeConfig;
use nmtvocab::nmt::{TrainConfig, DEFAULT_INIT_SCALE};
use nmtvocab::nmt::adadelta::{DEFAULT_EPSILON, DEFAULT_RHO};
use nmtvocab::{Mode, VocabConfig};
use sha2::{Digest, Sha256};

/// Bad flags, unknown keys and unparseable values. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
    /// Anchors relative paths read from a config file to its directory.
    fn rebase(&mut self, _base: &Path) {}
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse {s:?} as {}", stringify!($t)))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, f64, bool, String);

impl Value for Mode {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("mode must be train or decode, got {s:?}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for PathBuf {
    fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
    fn rebase(&mut self, base: &Path) {
        if self.is_relative() {
            *self = base.join(&*self);
        }
    }
}

impl<T: Value> Value for Option<T> {
    fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() || s == "none" {
            Ok(None)
        } else {
            T::parse(s).map(Some)
        }
    }
    fn render(&self) -> String {
        match self {
            Some(v) => v.render(),
            None => "none".into(),
        }
    }
    fn rebase(&mut self, base: &Path) {
        if let Some(v) = self {
            v.rebase(base);
        }
    }
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad list element {p:?} in {s:?}")))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

macro_rules! pipeline_config {
    ($($(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                PipelineConfig { $($name: $default,)* }
            }
        }

        /// Command-line overrides, one optional `--key value` per config key.
        #[derive(clap::Args, Debug, Clone, Default)]
        pub struct Overrides {
            $($(#[doc = $doc])* #[arg(long, value_name = "VALUE", help_heading = "Config keys")]
            pub $name: Option<String>,)*
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            /// Sets one key; `base` anchors relative paths.
            pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> anyhow::Result<()> {
                let value = value.trim();
                match key.replace('-', "_").as_str() {
                    $(stringify!($name) => {
                        let mut v = <$ty as Value>::parse(value)
                            .map_err(|e| usage(format!("{key}: {e}")))?;
                        if let Some(base) = base {
                            v.rebase(base);
                        }
                        self.$name = v;
                    })*
                    _ => return Err(usage(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($name) => Some(self.$name.render()),)*
                    _ => None,
                }
            }

            pub fn apply(&mut self, overrides: &Overrides) -> anyhow::Result<()> {
                $(if let Some(v) = &overrides.$name {
                    self.set(stringify!($name), v, None)?;
                })*
                Ok(())
            }
        }
    };
}

pipeline_config! {
    /// Source side of the training corpus
    src: Option<PathBuf> = None;
    /// Target side of the training corpus
    tgt: Option<PathBuf> = None;
    /// Directory for artifacts whose path is not set explicitly
    work_dir: PathBuf = PathBuf::from("work");
    src_vocab: Option<PathBuf> = None;
    tgt_vocab: Option<PathBuf> = None;
    /// Source-to-target translation table (dictionary seed)
    ttable: Option<PathBuf> = None;
    /// Target-to-source translation table
    ttable_rev: Option<PathBuf> = None;
    /// Symmetrized alignments, one Pharaoh line per kept pair
    alignments: Option<PathBuf> = None;
    dict: Option<PathBuf> = None;
    phrases: Option<PathBuf> = None;
    /// Final checkpoint; per-epoch checkpoints get an `.epochK` suffix
    model: Option<PathBuf> = None;
    train_log: Option<PathBuf> = None;
    /// Source sentences to translate
    input: Option<PathBuf> = None;
    /// Reference translations of `input`
    references: Option<PathBuf> = None;
    /// Translations, one per input line
    output: Option<PathBuf> = None;
    /// Most-attended source position per emitted token
    attention_dump: Option<PathBuf> = None;
    /// Copy of the stats table
    stats_output: Option<PathBuf> = None;

    /// Pairs with a side longer than this are dropped
    max_len: usize = 50;
    src_vocab_size: usize = 30_000;
    tgt_vocab_size: usize = 30_000;
    em_iters: usize = 5;
    dict_max_candidates: usize = 50;
    dict_min_prob: f64 = 0.0;
    max_phrase_len: usize = 4;

    dict_top_n: usize = 10;
    phrase_top_k: usize = 10;
    common_top_n: usize = 2000;
    use_dict: bool = true;
    use_phrases: bool = true;
    use_common: bool = true;

    d_emb: usize = 64;
    d_h: usize = 64;
    d_s: usize = 64;
    d_o: usize = 64;
    d_attn: usize = 64;
    out_layers: usize = 1;
    init_scale: f64 = DEFAULT_INIT_SCALE;
    rho: f64 = DEFAULT_RHO;
    epsilon: f64 = DEFAULT_EPSILON;
    batch_size: usize = 80;
    epochs: usize = 10;
    seed: u64 = 1;
    /// Embeddings train in epochs 1..=K only
    freeze_embeddings_after: Option<usize> = None;
    workers: usize = 1;
    /// Train over the whole target vocabulary
    full_softmax: bool = false;

    beam: usize = 12;
    max_decode_len: usize = 100;
    length_norm: bool = false;
    unk_replace: bool = true;
    bleu_smoothing: bool = false;

    /// Coverage mode for stats: train or decode
    mode: Mode = Mode::Train;
    /// Dictionary top-n values for stats
    sweep: Vec<usize> = vec![10, 20, 50];

    /// Batch vocabulary sizes for bench
    bench_sizes: Vec<usize> = vec![2000, 6000, 30_000];
    /// Target vocabulary size of the synthetic bench model
    bench_vocab: usize = 50_000;
    bench_runs: usize = 5;
    bench_steps: usize = 50;
    bench_pairs: usize = 40;
}

impl PipelineConfig {
    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str, base: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value, base)
                .map_err(|e| usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// `key=value` pairs of every key, separated by spaces.
    pub fn echo(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}", self.get(k).unwrap_or_default()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn corpus_paths(&self) -> anyhow::Result<(PathBuf, PathBuf)> {
        match (&self.src, &self.tgt) {
            (Some(s), Some(t)) => Ok((s.clone(), t.clone())),
            _ => Err(usage("the training corpus needs both `src` and `tgt`")),
        }
    }

    fn artifact(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.work_dir.join(name))
    }

    pub fn src_vocab_path(&self) -> PathBuf {
        self.artifact(&self.src_vocab, "src.vocab")
    }
    pub fn tgt_vocab_path(&self) -> PathBuf {
        self.artifact(&self.tgt_vocab, "tgt.vocab")
    }
    pub fn ttable_path(&self) -> PathBuf {
        self.artifact(&self.ttable, "ttable.s2t.tsv")
    }
    pub fn ttable_rev_path(&self) -> PathBuf {
        self.artifact(&self.ttable_rev, "ttable.t2s.tsv")
    }
    pub fn alignments_path(&self) -> PathBuf {
        self.artifact(&self.alignments, "aligned.gdfa")
    }
    pub fn dict_path(&self) -> PathBuf {
        self.artifact(&self.dict, "dict.tsv")
    }
    pub fn phrases_path(&self) -> PathBuf {
        self.artifact(&self.phrases, "phrases.txt")
    }
    pub fn model_path(&self) -> PathBuf {
        self.artifact(&self.model, "model.ckpt")
    }
    pub fn train_log_path(&self) -> PathBuf {
        self.artifact(&self.train_log, "train.log")
    }
    pub fn output_path(&self) -> PathBuf {
        self.artifact(&self.output, "output.txt")
    }

    pub fn epoch_model_path(&self, epoch: usize) -> PathBuf {
        let mut p = self.model_path().into_os_string();
        p.push(format!(".epoch{epoch}"));
        PathBuf::from(p)
    }

    pub fn vocab_config(&self) -> VocabConfig {
        VocabConfig {
            dict_top_n: self.dict_top_n,
            phrase_top_k: self.phrase_top_k,
            common_top_n: self.common_top_n,
            use_dict: self.use_dict,
            use_phrases: self.use_phrases,
            use_common: self.use_common,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d_emb: self.d_emb,
            d_h: self.d_h,
            d_s: self.d_s,
            d_o: self.d_o,
            d_attn: self.d_attn,
            out_layers: self.out_layers,
            init_scale: self.init_scale,
            rho: self.rho,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            freeze_embeddings_after: self.freeze_embeddings_after,
            workers: self.workers,
            full_softmax: self.full_softmax,
            force_batch_vocab: None,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_len: self.max_decode_len,
            common_top_n: self.common_top_n,
            dict_top_n: self.dict_top_n,
            phrase_top_k: self.phrase_top_k,
            length_norm: self.length_norm,
        }
    }

    /// Short hex digest over a stage name, its parents' hashes, the listed
    /// keys' values and any extra inputs (such as corpus digests).
    pub fn lineage_hash(&self, stage: &str, parents: &[&str], keys: &[&str], extra: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(format!("stage={stage}\n"));
        for p in parents {
            h.update(format!("parent={p}\n"));
        }
        for k in keys {
            let v = self.get(k).unwrap_or_else(|| panic!("lineage key {k} is not a config key"));
            h.update(format!("{k}={v}\n"));
        }
        for e in extra {
            h.update(format!("input={e}\n"));
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file_with_comments() {
        let cfg = PipelineConfig::parse("# toy\nem_iters = 3\n\nsweep = 5, 7\nfreeze_embeddings_after = 2\n", None).unwrap();
        assert_eq!(cfg.em_iters, 3);
        assert_eq!(cfg.sweep, vec![5, 7]);
        assert_eq!(cfg.freeze_embeddings_after, Some(2));
        assert_eq!(cfg.beam, 12);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let cfg = PipelineConfig::parse("src = data/a.src\nmodel = /abs/m.ckpt\n", Some(Path::new("/etc/p"))).unwrap();
        assert_eq!(cfg.src, Some(PathBuf::from("/etc/p/data/a.src")));
        assert_eq!(cfg.model, Some(PathBuf::from("/abs/m.ckpt")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        for text in ["nope = 1", "em_iters = x", "no equals sign"] {
            let err = PipelineConfig::parse(text, None).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{text}");
        }
    }

    #[test]
    fn overrides_win_and_accept_dashes() {
        let mut cfg = PipelineConfig::parse("em_iters = 3", None).unwrap();
        let o = Overrides {
            em_iters: Some("1".into()),
            ..Overrides::default()
        };
        cfg.apply(&o).unwrap();
        assert_eq!(cfg.em_iters, 1);
        cfg.set("common-top-n", "50", None).unwrap();
        assert_eq!(cfg.common_top_n, 50);
    }

    #[test]
    fn every_key_round_trips_through_echo() {
        let mut cfg = PipelineConfig::default();
        cfg.src = Some("a b.src".into());
        cfg.freeze_embeddings_after = Some(4);
        let mut back = PipelineConfig::default();
        for k in PipelineConfig::KEYS {
            back.set(k, &cfg.get(k).unwrap(), None).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn lineage_hash_tracks_listed_keys_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.beam = 3;
        assert_eq!(a.lineage_hash("align", &[], &["em_iters"], &[]), b.lineage_hash("align", &[], &["em_iters"], &[]));
        b.em_iters = 1;
        assert_ne!(a.lineage_hash("align", &[], &["em_iters"], &[]), b.lineage_hash("align", &[], &["em_iters"], &[]));
    }
}
