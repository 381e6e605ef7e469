//! Invariants that span modules, checked on tables and models produced by
//! the real pipeline rather than hand-built fixtures.

use std::collections::BTreeSet;

use nmtvocab::corpus::{is_reserved, pair_lines, NUM_RESERVED};
use nmtvocab::decode::{beam_search, greedy_decode, DecodeConfig};
use nmtvocab::nmt::checkpoint::Checkpoint;
use nmtvocab::nmt::{Model, ModelDims};
use nmtvocab::pipeline::{PrepConfig, Prepared};
use nmtvocab::synth::{ambiguous_corpus, SynthConfig};
use nmtvocab::vocab::{build_batch_vocab, coverage_stats};
use nmtvocab::{Mode, PhraseSetTable, SentenceVocab, VocabConfig, WordDictionary, EOS};
use proptest::prelude::*;

fn toy(sentences: usize, seed: u64) -> Prepared {
    let text = ambiguous_corpus(&SynthConfig {
        sentences,
        symbols: 30,
        seed,
        ..SynthConfig::default()
    });
    Prepared::build(&text, &PrepConfig::default()).unwrap()
}

#[test]
fn dictionary_from_em_respects_its_list_invariants() {
    let prep = Prepared::build(
        &ambiguous_corpus(&SynthConfig {
            sentences: 200,
            symbols: 30,
            ..SynthConfig::default()
        }),
        &PrepConfig {
            dict_max_candidates: 7,
            dict_min_prob: 0.01,
            ..PrepConfig::default()
        },
    )
    .unwrap();
    assert!(!prep.dict.is_empty());
    for s in 0..prep.src_vocab.len() as u32 {
        let c = prep.dict.candidates(s);
        assert!(c.len() <= 7);
        for w in c.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0), "{c:?}");
        }
        for &(t, p) in c {
            assert!(p >= 0.01 && !is_reserved(t) && (t as usize) < prep.tgt_vocab.len());
        }
    }
}

#[test]
fn phrase_table_from_alignments_respects_its_invariants() {
    let prep = toy(150, 3);
    let max = prep.phrases.max_src_len();
    for (phrase, cands) in prep.phrases.entries() {
        assert!((1..=max).contains(&phrase.len()));
        for c in cands {
            assert!(c.targets.windows(2).all(|w| w[0] < w[1]), "target set not a sorted set");
        }
        for w in cands.windows(2) {
            assert!(w[0].count > w[1].count || (w[0].count == w[1].count && w[0].targets < w[1].targets));
        }
    }
}

#[test]
fn artifacts_round_trip_through_their_file_formats() {
    let prep = toy(120, 4);
    let mut buf = Vec::new();
    prep.dict.write_tsv(&mut buf, &prep.src_vocab, &prep.tgt_vocab).unwrap();
    let dict = WordDictionary::read_tsv(buf.as_slice(), &prep.src_vocab, &prep.tgt_vocab, prep.dict.max_candidates()).unwrap();
    buf.clear();
    prep.phrases.write_to(&mut buf, &prep.src_vocab, &prep.tgt_vocab).unwrap();
    let phrases = PhraseSetTable::read_from(buf.as_slice(), &prep.src_vocab, &prep.tgt_vocab, 4, 4).unwrap();

    let config = VocabConfig {
        common_top_n: 20,
        ..VocabConfig::default()
    };
    let original = prep.builder(config.clone());
    let reread = nmtvocab::VocabBuilder::new(&dict, &phrases, &prep.tgt_vocab, config);
    for p in &prep.pairs {
        assert_eq!(original.train_vocab(&p.source, &p.target), reread.train_vocab(&p.source, &p.target));
    }
}

#[test]
fn checkpointed_model_decodes_identically() {
    let prep = toy(40, 5);
    let model = Model::random(ModelDims::uniform(prep.src_vocab.len(), prep.tgt_vocab.len(), 6), 0.3, 9).unwrap();
    let mut buf = Vec::new();
    Checkpoint::new(model.clone()).write_to(&mut buf).unwrap();
    let back = Checkpoint::read_from(buf.as_slice()).unwrap().model;
    let builder = prep.builder(VocabConfig::default());
    let config = DecodeConfig {
        beam: 4,
        max_len: 15,
        ..DecodeConfig::default()
    };
    for p in prep.pairs.iter().take(10) {
        let v = builder.decode_vocab(&p.source);
        assert_eq!(
            beam_search(&model, &p.source, &v, &config).unwrap(),
            beam_search(&back, &p.source, &v, &config).unwrap()
        );
    }
}

#[test]
fn coverage_ratios_are_bounded_and_training_mode_is_exact() {
    let prep = toy(100, 6);
    for n in [0, 1, 3, 10] {
        for use_common in [false, true] {
            let builder = prep.builder(VocabConfig {
                dict_top_n: n,
                phrase_top_k: n,
                common_top_n: 5,
                use_common,
                ..VocabConfig::default()
            });
            let train = coverage_stats(&prep.pairs, &builder, Mode::Train, 8);
            assert_eq!(train.word_level_ratio, 1.0);
            assert_eq!(train.full_sentence_ratio, 1.0);
            let decode = coverage_stats(&prep.pairs, &builder, Mode::Decode, 8);
            for r in [decode.word_level_ratio, decode.full_sentence_ratio] {
                assert!((0.0..=1.0).contains(&r));
            }
            assert!(decode.avg_batch_vocab >= decode.avg_sentence_vocab);
        }
    }
}

#[test]
fn decode_vocab_is_contained_in_train_vocab_minus_reference() {
    let prep = toy(80, 7);
    let builder = prep.builder(VocabConfig {
        common_top_n: 10,
        ..VocabConfig::default()
    });
    for p in &prep.pairs {
        let d: BTreeSet<u32> = builder.decode_vocab(&p.source).ids().iter().copied().collect();
        let t: BTreeSet<u32> = builder.train_vocab(&p.source, &p.target).ids().iter().copied().collect();
        let mut expected = d.clone();
        expected.extend(p.target.iter().copied());
        assert_eq!(t, expected);
        assert!((0..NUM_RESERVED).all(|r| d.contains(&r)));
    }
}

#[test]
fn greedy_equals_width_one_beam_on_pipeline_vocabularies() {
    let prep = toy(30, 8);
    let model = Model::random(ModelDims::uniform(prep.src_vocab.len(), prep.tgt_vocab.len(), 5), 0.5, 2).unwrap();
    let builder = prep.builder(VocabConfig::default());
    let config = DecodeConfig {
        beam: 1,
        max_len: 12,
        ..DecodeConfig::default()
    };
    for p in &prep.pairs {
        let v = builder.decode_vocab(&p.source);
        let enc = model.encode(&p.source).unwrap();
        let greedy = greedy_decode(&model, &enc, &v, 12).unwrap();
        let beam = beam_search(&model, &p.source, &v, &config).unwrap();
        assert_eq!(greedy, beam.best().tokens);
    }
}

fn random_instance(seed: u64, src_len: usize, vocab_size: usize) -> (Model, Vec<u32>, SentenceVocab) {
    let dims = ModelDims::uniform(12, 40, 4);
    let model = Model::random(dims, 1.5, seed).unwrap();
    let x: Vec<u32> = (0..src_len).map(|k| NUM_RESERVED + ((seed as u32 + 5 * k as u32) % 8)).collect();
    let ids = (NUM_RESERVED..40).step_by(40 / vocab_size.max(1)).take(vocab_size);
    (model, x, SentenceVocab::from_ids(ids, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hypotheses_are_consistent(seed in 0u64..10_000, l in 1usize..6, n in 1usize..12, beam in 1usize..6) {
        let (model, x, vocab) = random_instance(seed, l, n);
        let config = DecodeConfig { beam, max_len: 8, ..DecodeConfig::default() };
        let r = beam_search(&model, &x, &vocab, &config).unwrap();
        prop_assert!(!r.hypotheses.is_empty());
        for h in &r.hypotheses {
            prop_assert!(h.score <= 0.0);
            prop_assert_eq!(h.attn_trace.len(), h.tokens.len());
            prop_assert!(h.tokens.iter().all(|&t| vocab.contains(t) && t != EOS));
            prop_assert_eq!(h.finished, !r.partial);
            for a in &h.attn_trace {
                prop_assert_eq!(a.len(), l);
                prop_assert!((a.sum() - 1.0).abs() < 1e-6);
            }
        }
        for w in r.hypotheses.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    /// The score along one hypothesis never increases: every prefix of the
    /// best hypothesis, rescored step by step, is at least as good.
    #[test]
    fn prefix_scores_are_non_increasing(seed in 0u64..10_000, l in 1usize..5, n in 2usize..10) {
        let (model, x, vocab) = random_instance(seed, l, n);
        let config = DecodeConfig { beam: 3, max_len: 8, ..DecodeConfig::default() };
        let best = beam_search(&model, &x, &vocab, &config).unwrap().best().clone();
        let enc = model.encode(&x).unwrap();
        let mut s = model.initial_state(&enc);
        let mut y_prev = nmtvocab::BOS;
        let mut score = 0.0;
        let mut steps: Vec<u32> = best.tokens.clone();
        if best.finished {
            steps.push(EOS);
        }
        for y in steps {
            let (st, p) = model.step(&enc, s.view(), y_prev, &vocab).unwrap();
            let next = score + p[vocab.local(y).unwrap()].ln();
            prop_assert!(next <= score);
            score = next;
            s = st.s;
            y_prev = y;
        }
        prop_assert!((score - best.score).abs() < 1e-9 * best.score.abs().max(1.0));
    }

    #[test]
    fn batch_vocab_is_the_union_with_reserved_ids(
        sets in proptest::collection::vec(proptest::collection::btree_set(0u32..60, 0..12), 1..6)
    ) {
        let vocabs: Vec<SentenceVocab> = sets.iter().map(|s| SentenceVocab::from_ids(s.iter().copied(), 0)).collect();
        let refs: Vec<&SentenceVocab> = vocabs.iter().collect();
        let batch = build_batch_vocab(&refs, (0..vocabs.len()).collect()).unwrap();
        let mut expected: BTreeSet<u32> = sets.iter().flatten().copied().collect();
        expected.extend(0..NUM_RESERVED);
        prop_assert_eq!(batch.ids().to_vec(), expected.into_iter().collect::<Vec<_>>());
    }
}

#[test]
fn wider_beams_find_scores_at_least_as_good() {
    let mut checked = 0;
    for seed in 0..60u64 {
        let (model, x, vocab) = random_instance(seed, 1 + (seed as usize % 5), 3 + (seed as usize % 9));
        let mut previous = f64::NEG_INFINITY;
        for beam in [1usize, 2, 4, 8] {
            let config = DecodeConfig {
                beam,
                max_len: 10,
                ..DecodeConfig::default()
            };
            let r = beam_search(&model, &x, &vocab, &config).unwrap();
            if r.partial {
                continue;
            }
            let best = r.best().score;
            assert!(best >= previous - 1e-12, "seed {seed}: beam {beam} found {best} < {previous}");
            previous = best;
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn pair_lines_drops_never_reach_the_vocabulary() {
    let text = pair_lines(&["a b", "", "c"], &["x", "y", ""], 50).unwrap();
    assert_eq!(text.len(), 1);
    assert_eq!(text.dropped, 2);
}
