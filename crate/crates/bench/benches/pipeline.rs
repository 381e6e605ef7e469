use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nmtvocab::decode::{beam_search, DecodeConfig};
use nmtvocab::nmt::{GradientFault, Gradients, TrainConfig};
use nmtvocab::vocab::VocabConfig;
use nmtvocab::SentenceVocab;
use nmtvocab_bench::{toy_prepared, toy_split};
use std::hint::black_box;

fn vocab_building(c: &mut Criterion) {
    let prep = toy_prepared();
    let builder = prep.builder(VocabConfig {
        common_top_n: 50,
        ..VocabConfig::default()
    });
    c.bench_function("train_vocab/toy_corpus", |b| {
        b.iter(|| {
            prep.pairs
                .iter()
                .map(|p| builder.train_vocab(&p.source, &p.target).len())
                .sum::<usize>()
        })
    });
}

fn loss_and_gradient(c: &mut Criterion) {
    let prep = toy_prepared();
    let model = TrainConfig::default()
        .init_model(prep.src_vocab.len(), prep.tgt_vocab.len())
        .unwrap();
    let builder = prep.builder(VocabConfig {
        common_top_n: 50,
        ..VocabConfig::default()
    });
    let pair = &prep.pairs[0];
    let restricted = builder.train_vocab(&pair.source, &pair.target);
    let full = SentenceVocab::full(prep.tgt_vocab.len());
    let mut group = c.benchmark_group("sentence_loss_and_grad");
    for (name, vocab) in [("restricted", &restricted), ("full", &full)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), vocab, |b, vocab| {
            b.iter(|| {
                let mut grads = Gradients::new(&model, vocab);
                model
                    .sentence_loss_and_grad(black_box(pair), vocab, &mut grads, GradientFault::None)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let prep = toy_prepared();
    let (_, test) = toy_split();
    let model = TrainConfig::default()
        .init_model(prep.src_vocab.len(), prep.tgt_vocab.len())
        .unwrap();
    let x = prep.src_vocab.encode(&test.source[0]);
    let config = DecodeConfig {
        max_len: 12,
        ..DecodeConfig::default()
    };
    let mut group = c.benchmark_group("beam_search");
    for common in [50usize, 2000] {
        let builder = prep.builder(VocabConfig {
            common_top_n: common,
            ..VocabConfig::default()
        });
        let vocab = builder.decode_vocab(&x);
        group.bench_with_input(BenchmarkId::new("common_top_n", common), &vocab, |b, vocab| {
            b.iter(|| beam_search(&model, black_box(&x), vocab, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, vocab_building, loss_and_gradient, decoding);
criterion_main!(benches);
