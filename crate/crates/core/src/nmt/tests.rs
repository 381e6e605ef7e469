use ndarray::{s, Array1};

use super::checkpoint::embedding_digest;
use super::gradcheck::gradient_check;
use super::train::Trainer;
use super::*;
use crate::corpus::SentencePair;
use crate::vocab::{source, SentenceVocab};

fn pair(source: Vec<u32>, target: Vec<u32>) -> SentencePair {
    SentencePair {
        pair_id: 1,
        source,
        target,
    }
}

fn small_dims() -> ModelDims {
    let mut d = ModelDims::uniform(12, 15, 4);
    d.enc_hidden = 3;
    d.attn_hidden = 5;
    d.out_hidden = 6;
    d
}

#[test]
fn single_token_source_has_one_state_and_trivial_attention() {
    let m = Model::new(small_dims(), 1).unwrap();
    let enc = m.encode(&[5]).unwrap();
    assert_eq!(enc.len(), 1);
    assert_eq!(enc.h()[0].len(), 6);
    let s = m.initial_state(&enc);
    let att = m.attend(s.view(), &enc, m.tgt_embed.row(1));
    assert_eq!(att.alpha.to_vec(), vec![1.0]);
    assert_eq!(att.context, enc.h()[0]);
}

#[test]
fn reversal_swaps_directions() {
    let mut m = Model::new(small_dims(), 2).unwrap();
    m.dense.enc_bwd = m.dense.enc_fwd.clone();
    let x = [4, 7, 9, 5];
    let mut rx = x;
    rx.reverse();
    let a = m.encode(&x).unwrap();
    let b = m.encode(&rx).unwrap();
    let hd = m.dims.enc_hidden;
    for i in 0..x.len() {
        let hi = &a.h()[i];
        let hj = &b.h()[x.len() - 1 - i];
        assert_eq!(hi.slice(s![..hd]), hj.slice(s![hd..]));
        assert_eq!(hi.slice(s![hd..]), hj.slice(s![..hd]));
    }
}

#[test]
fn zero_model_gives_constant_zero_states() {
    let m = Model::zeros(small_dims()).unwrap();
    let enc = m.encode(&[4, 5, 6]).unwrap();
    for h in enc.h() {
        assert!(h.iter().all(|&v| v == 0.0));
    }
    let c = Array1::zeros(m.dims.context());
    let s = m.decode_step(Array1::zeros(m.dims.dec_hidden).view(), 1, c.view()).unwrap();
    assert!(s.iter().all(|&v| v == 0.0));
}

#[test]
fn constant_scorer_gives_uniform_attention() {
    let mut m = Model::new(small_dims(), 3).unwrap();
    m.dense.attn_v.fill(0.0);
    let enc = m.encode(&[4, 5, 6, 7, 8]).unwrap();
    let s = m.initial_state(&enc);
    let att = m.attend(s.view(), &enc, m.tgt_embed.row(3));
    for a in &att.alpha {
        assert!((a - 0.2).abs() < 1e-15);
    }
}

#[test]
fn context_matches_direct_weighted_sum() {
    let m = Model::random(small_dims(), 0.5, 4).unwrap();
    let enc = m.encode(&[4, 11, 6, 6]).unwrap();
    let s = m.initial_state(&enc);
    let ey = m.tgt_embed.row(7);
    let att = m.attend(s.view(), &enc, ey);
    // Recompute scores from the raw parameters.
    let d = &m.dense;
    let scores: Vec<f64> = enc
        .h()
        .iter()
        .map(|h| {
            let pre = d.attn_wh.dot(h) + d.attn_ws.dot(&s) + d.attn_wy.dot(&ey) + &d.attn_b;
            d.attn_v.dot(&pre.mapv(f64::tanh))
        })
        .collect();
    let z: f64 = scores.iter().map(|e| e.exp()).sum();
    let mut c: Array1<f64> = Array1::zeros(m.dims.context());
    for (e, h) in scores.iter().zip(enc.h()) {
        c = c + h * (e.exp() / z);
    }
    for (a, b) in att.context.iter().zip(&c) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((att.alpha.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn restricted_distribution_is_renormalized_full_softmax() {
    let m = Model::random(small_dims(), 0.5, 5).unwrap();
    let enc = m.encode(&[4, 5]).unwrap();
    let s = m.initial_state(&enc);
    let c = enc.h()[1].clone();
    let full = m.full_distribution(s.view(), 6, c.view()).unwrap();
    let sub = SentenceVocab::from_ids([2, 7, 9, 14], source::COMMON);
    let p = m.output_distribution(s.view(), 6, c.view(), &sub).unwrap();
    let z: f64 = sub.ids().iter().map(|&i| full[i as usize]).sum();
    for (k, &id) in sub.ids().iter().enumerate() {
        assert!((p[k] - full[id as usize] / z).abs() < 1e-12);
    }
    let all = m
        .output_distribution(s.view(), 6, c.view(), &SentenceVocab::full(15))
        .unwrap();
    for (a, b) in all.iter().zip(&full) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn missing_eos_is_an_error() {
    let m = Model::new(small_dims(), 6).unwrap();
    let enc = m.encode(&[4]).unwrap();
    let s = m.initial_state(&enc);
    let v = SentenceVocab::exact([5, 6], source::COMMON);
    let err = m.output_distribution(s.view(), 1, enc.h()[0].view(), &v).unwrap_err();
    assert!(matches!(err, crate::Error::MissingEos));
    assert!(m.sentence_loss(&pair(vec![4], vec![5]), &v).is_err());
    let with_eos = SentenceVocab::exact([2, 5, 6], source::COMMON);
    let p = m.output_distribution(s.view(), 1, enc.h()[0].view(), &with_eos).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn out_of_range_ids_are_rejected() {
    let m = Model::new(small_dims(), 6).unwrap();
    assert!(m.encode(&[4, 12]).is_err());
    assert!(m.encode(&[]).is_err());
    let v = SentenceVocab::from_ids([20], source::COMMON);
    assert!(m.sentence_loss(&pair(vec![4], vec![5]), &v).is_err());
}

#[test]
fn loss_is_nonnegative_and_grows_with_vocab() {
    let m = Model::random(small_dims(), 0.3, 7).unwrap();
    let p = pair(vec![4, 5, 6], vec![7, 8]);
    let small = SentenceVocab::from_ids([7, 8], source::REFERENCE);
    let mid = SentenceVocab::from_ids([7, 8, 9, 10], source::REFERENCE);
    let full = SentenceVocab::full(15);
    let a = m.sentence_loss(&p, &small).unwrap();
    let b = m.sentence_loss(&p, &mid).unwrap();
    let c = m.sentence_loss(&p, &full).unwrap();
    assert!(a >= 0.0);
    assert!(a <= b && b <= c);
}

#[test]
fn loss_at_zero_init_is_uniform() {
    let m = Model::zeros(small_dims()).unwrap();
    let p = pair(vec![4, 5, 6], vec![7, 8]);
    let v = SentenceVocab::from_ids([7, 8], source::REFERENCE);
    let loss = m.sentence_loss(&p, &v).unwrap();
    let expected = 3.0 * (v.len() as f64).ln();
    assert!((loss - expected).abs() < 1e-12);
}

#[test]
fn reference_outside_vocab_is_an_error() {
    let m = Model::new(small_dims(), 8).unwrap();
    let v = SentenceVocab::from_ids([7], source::REFERENCE);
    let err = m.sentence_loss(&pair(vec![4], vec![7, 8]), &v).unwrap_err();
    assert!(matches!(err, crate::Error::ReferenceNotInVocab { id: 8, .. }));
}

#[test]
fn gradient_check_passes_and_mutation_fails() {
    let mut dims = small_dims();
    dims.out_layers = 2;
    let m = Model::random(dims, 0.5, 9).unwrap();
    let p = pair(vec![4, 5, 6, 4], vec![7, 8, 9]);
    let v = SentenceVocab::from_ids([7, 8, 9, 11], source::REFERENCE);
    let ok = gradient_check(&m, &p, &v, GradientFault::None).unwrap();
    assert!(ok.max_rel_error < 1e-4, "{ok:?}");
    assert_eq!(ok.checked, m.num_parameters());
    let bad = gradient_check(&m, &p, &v, GradientFault::HalvedAttentionScores).unwrap();
    assert!(bad.max_rel_error > 1e-2, "{bad:?}");
    assert!(bad.worst_tensor.starts_with("attn") || bad.worst_tensor.starts_with("enc"));
}

#[test]
fn gradient_check_minimal_pair() {
    let m = Model::random(small_dims(), 0.5, 10).unwrap();
    let p = pair(vec![4], vec![7]);
    let v = SentenceVocab::from_ids([7], source::REFERENCE);
    let r = gradient_check(&m, &p, &v, GradientFault::None).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

fn copy_pairs(n: usize, symbols: u32, seed: u64) -> Vec<SentencePair> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let len = rng.random_range(2..6);
            let x: Vec<u32> = (0..len).map(|_| 4 + rng.random_range(0..symbols)).collect();
            SentencePair {
                pair_id: k + 1,
                source: x.clone(),
                target: x,
            }
        })
        .collect()
}

fn reference_vocabs(pairs: &[SentencePair]) -> Vec<SentenceVocab> {
    pairs
        .iter()
        .map(|p| SentenceVocab::from_ids(p.target.iter().copied(), source::REFERENCE))
        .collect()
}

fn copy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        d_emb: 16,
        d_h: 16,
        d_s: 16,
        d_o: 16,
        d_attn: 16,
        batch_size: 10,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn copy_task_loss_decreases_and_is_deterministic() {
    let pairs = copy_pairs(50, 30, 1);
    let config = copy_config(3);
    let run = || {
        let mut m = config.init_model(34, 34).unwrap();
        let mut t = Trainer::new(&m, &pairs, reference_vocabs(&pairs), config.clone()).unwrap();
        let logs: Vec<EpochLog> = (0..5).map(|_| t.run_epoch(&mut m).unwrap()).collect();
        (m, logs)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    for w in l1.windows(2) {
        assert!(w[1].loss < w[0].loss, "{} !< {}", w[1].loss, w[0].loss);
    }
    assert_eq!(m1, m2);
    let losses = |l: &[EpochLog]| l.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&l1), losses(&l2));
}

#[test]
fn absent_rows_are_untouched_by_an_epoch() {
    let mut pairs = copy_pairs(40, 20, 2);
    // Ids 24.. never occur; make sure 23 does not either.
    for p in &mut pairs {
        for t in p.source.iter_mut().chain(p.target.iter_mut()) {
            if *t == 23 {
                *t = 22;
            }
        }
    }
    let config = TrainConfig {
        freeze_embeddings_after: Some(0),
        ..copy_config(4)
    };
    let mut m = config.init_model(30, 30).unwrap();
    let mut t = Trainer::new(&m, &pairs, reference_vocabs(&pairs), config).unwrap();
    let plan = t.plan(1).unwrap();
    let used: std::collections::BTreeSet<u32> = plan.iter().flat_map(|b| b.vocab.ids().to_vec()).collect();
    let before = m.clone();
    t.run_epoch(&mut m).unwrap();
    let absent: Vec<u32> = (0..30).filter(|i| !used.contains(i)).collect();
    assert!(absent.len() >= 7);
    for &id in &absent {
        let r = id as usize;
        assert_eq!(m.proj_w.row(r), before.proj_w.row(r));
        assert_eq!(m.proj_b[r].to_bits(), before.proj_b[r].to_bits());
    }
    assert_eq!(embedding_digest(&m), embedding_digest(&before));
    assert_ne!(m.proj_w.row(5), before.proj_w.row(5));
}

#[test]
fn workers_reduce_in_a_fixed_order() {
    let pairs = copy_pairs(30, 10, 5);
    let run = |workers| {
        let config = TrainConfig {
            workers,
            ..copy_config(6)
        };
        let mut m = config.init_model(14, 14).unwrap();
        let mut t = Trainer::new(&m, &pairs, reference_vocabs(&pairs), config).unwrap();
        t.run_epoch(&mut m).unwrap();
        m
    };
    let a = run(3);
    let b = run(3);
    let single = run(1);
    assert_eq!(a, b);
    for (x, y) in a.proj_w.iter().zip(single.proj_w.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn epoch_log_format() {
    let log = EpochLog {
        epoch: 3,
        loss: 1.25,
        tokens: 100,
        seconds: 2.0,
        avg_batch_vocab: 41.5,
    };
    assert_eq!(
        log.to_string(),
        "epoch 3 loss 1.250000 tokens/sec 50.0 avg_batch_vocab 41.5"
    );
}
