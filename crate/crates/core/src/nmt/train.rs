//! Mini-batch training over batch vocabularies.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use super::adadelta::{AdaDelta, DEFAULT_EPSILON, DEFAULT_RHO};
use super::model::{GradientFault, Gradients, Model, ModelDims, DEFAULT_INIT_SCALE};
use crate::corpus::{BatchPlan, SentencePair};
use crate::error::{Error, Result};
use crate::vocab::{build_batch_vocab, SentenceVocab, VocabBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_emb: usize,
    pub d_h: usize,
    pub d_s: usize,
    pub d_o: usize,
    pub d_attn: usize,
    pub out_layers: usize,
    pub init_scale: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Embeddings are updated in epochs `1..=k` and frozen afterwards.
    pub freeze_embeddings_after: Option<usize>,
    /// Forward/backward workers per batch; 1 is the deterministic
    /// single-threaded path.
    pub workers: usize,
    /// Train every batch over all of V_y (the baseline).
    pub full_softmax: bool,
    /// Pad each batch vocabulary with extra ids up to this size.
    pub force_batch_vocab: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_emb: 64,
            d_h: 64,
            d_s: 64,
            d_o: 64,
            d_attn: 64,
            out_layers: 1,
            init_scale: DEFAULT_INIT_SCALE,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            batch_size: 80,
            epochs: 10,
            seed: 1,
            freeze_embeddings_after: None,
            workers: 1,
            full_softmax: false,
            force_batch_vocab: None,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self, src_vocab: usize, tgt_vocab: usize) -> ModelDims {
        ModelDims {
            src_vocab,
            tgt_vocab,
            emb: self.d_emb,
            enc_hidden: self.d_h,
            dec_hidden: self.d_s,
            attn_hidden: self.d_attn,
            out_hidden: self.d_o,
            out_layers: self.out_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims(1, 1).validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must be in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }

    /// A fresh model with this configuration's dims and init.
    pub fn init_model(&self, src_vocab: usize, tgt_vocab: usize) -> Result<Model> {
        Model::random(self.dims(src_vocab, tgt_vocab), self.init_scale, self.seed)
    }

    pub fn embeddings_trainable(&self, epoch: usize) -> bool {
        self.freeze_embeddings_after.is_none_or(|k| epoch <= k)
    }
}

/// Shuffle seed of epoch `epoch` (1-based).
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean negative log-likelihood per target token (EOS included).
    pub loss: f64,
    pub tokens: usize,
    pub seconds: f64,
    pub avg_batch_vocab: f64,
}

impl EpochLog {
    pub fn tokens_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.tokens as f64 / self.seconds
        } else {
            0.0
        }
    }
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} tokens/sec {:.1} avg_batch_vocab {:.1}",
            self.epoch,
            self.loss,
            self.tokens_per_sec(),
            self.avg_batch_vocab
        )
    }
}

/// One batch of an epoch: member indices and its output vocabulary.
#[derive(Debug, Clone)]
pub struct PlannedBatch {
    pub members: Vec<usize>,
    pub vocab: SentenceVocab,
}

/// Training state that persists across epochs.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pairs: &'a [SentencePair],
    vocabs: Vec<SentenceVocab>,
    optimizer: AdaDelta,
    tgt_vocab: usize,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    /// `vocabs[i]` is the training vocabulary of `pairs[i]`.
    pub fn new(model: &Model, pairs: &'a [SentencePair], vocabs: Vec<SentenceVocab>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if vocabs.len() != pairs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} vocabularies for {} pairs",
                vocabs.len(),
                pairs.len()
            )));
        }
        Ok(Trainer {
            optimizer: AdaDelta::new(model, config.rho, config.epsilon),
            tgt_vocab: model.dims.tgt_vocab,
            config,
            pairs,
            vocabs,
            epoch: 0,
        })
    }

    pub fn sentence_vocabs(&self) -> &[SentenceVocab] {
        &self.vocabs
    }

    /// Number of completed epochs.
    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// The shuffled batches and batch vocabularies of epoch `epoch`.
    pub fn plan(&self, epoch: usize) -> Result<Vec<PlannedBatch>> {
        let plan = BatchPlan::new(self.pairs.len(), self.config.batch_size, epoch_seed(self.config.seed, epoch))?;
        plan.batches()
            .map(|members| {
                let vocab = if self.config.full_softmax {
                    SentenceVocab::full(self.tgt_vocab)
                } else {
                    let parts: Vec<&SentenceVocab> = members.iter().map(|&i| &self.vocabs[i]).collect();
                    build_batch_vocab(&parts, members.to_vec())?.into_vocab()
                };
                let vocab = match self.config.force_batch_vocab {
                    Some(n) => vocab.padded_to(n, self.tgt_vocab),
                    None => vocab,
                };
                Ok(PlannedBatch {
                    members: members.to_vec(),
                    vocab,
                })
            })
            .collect()
    }

    /// Summed loss and gradient of `members` over `vocab`.
    pub fn batch_gradient(&self, model: &Model, members: &[usize], vocab: &SentenceVocab) -> Result<(f64, Gradients)> {
        let run = |chunk: &[usize]| -> Result<(f64, Gradients)> {
            let mut grads = Gradients::new(model, vocab);
            let mut loss = 0.0;
            for &i in chunk {
                loss += model.sentence_loss_and_grad(&self.pairs[i], vocab, &mut grads, GradientFault::None)?;
            }
            Ok((loss, grads))
        };
        if self.config.workers <= 1 || members.len() < 2 {
            return run(members);
        }
        let chunk = members.len().div_ceil(self.config.workers);
        let parts: Vec<Result<(f64, Gradients)>> = members.par_chunks(chunk).map(run).collect();
        let mut parts = parts.into_iter();
        let (mut loss, mut grads) = parts.next().unwrap()?;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grads.add(&g);
        }
        Ok((loss, grads))
    }

    /// Runs the next epoch.
    pub fn run_epoch(&mut self, model: &mut Model) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let start = Instant::now();
        let batches = self.plan(epoch)?;
        let update_embeddings = self.config.embeddings_trainable(epoch);
        let mut total_loss = 0.0;
        let mut tokens = 0;
        let mut vocab_total = 0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, mut grads) = self.batch_gradient(model, &batch.members, &batch.vocab)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            grads.scale(1.0 / batch.members.len() as f64);
            self.optimizer.step(model, &grads, update_embeddings);
            total_loss += loss;
            tokens += batch
                .members
                .iter()
                .map(|&i| self.pairs[i].target.len() + 1)
                .sum::<usize>();
            vocab_total += batch.vocab.len();
        }
        self.epoch = epoch;
        Ok(EpochLog {
            epoch,
            loss: total_loss / tokens as f64,
            tokens,
            seconds: start.elapsed().as_secs_f64(),
            avg_batch_vocab: vocab_total as f64 / batches.len() as f64,
        })
    }
}

/// Trains `model` for `config.epochs` epochs, building each pair's training
/// vocabulary with `builder`. `on_epoch` sees every epoch log and the model
/// after that epoch.
pub fn train<F>(
    model: &mut Model,
    pairs: &[SentencePair],
    builder: &VocabBuilder,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&EpochLog, &Model) -> Result<()>,
{
    let vocabs = pairs
        .iter()
        .map(|p| builder.train_vocab(&p.source, &p.target))
        .collect();
    let mut trainer = Trainer::new(model, pairs, vocabs, config.clone())?;
    let mut logs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let log = trainer.run_epoch(model)?;
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}
