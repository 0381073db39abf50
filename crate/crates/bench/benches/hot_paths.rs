//! Benchmarks for the throughput-critical paths: corruption, segmentation,
//! the encoder forward pass, and metric computation.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use spellforge_bench::corpus;
use spellforge_core::autodiff::{EncoderConfig, Graph};
use spellforge_core::corpus::{build_word_vocab, derive_char_vocab};
use spellforge_core::eval::{evaluate, ReportCounters};
use spellforge_core::models::{forward, Model, Resources};
use spellforge_core::noise::{
    corrupt_corpus, CorruptionConfig, KeyboardMap, MisspellingLexicon, Provenance,
};
use spellforge_core::tokenize::train_subword;

fn bench_corruption(c: &mut Criterion) {
    let sentences = corpus(200, 300, 12);
    let word_vocab = build_word_vocab(&sentences, 300).unwrap();
    let char_vocab = derive_char_vocab(&word_vocab);
    let mut lexicon = MisspellingLexicon::new();
    for w in sentences.iter().flat_map(|s| &s.tokens).take(600) {
        let mut cs: Vec<char> = w.chars().collect();
        cs.swap(0, 1);
        let m: String = cs.into_iter().collect();
        if m != *w {
            lexicon.insert(w, &m, Provenance::Natural);
        }
    }
    let cfg = CorruptionConfig { sigma: 0.2, synthetic_fraction: 0.3, seed: 1, max_word_len: 12 };
    let keyboard = KeyboardMap::qwerty();
    c.bench_function("corrupt_corpus/200x12", |b| {
        b.iter(|| {
            corrupt_corpus(
                black_box(&sentences),
                &lexicon,
                &cfg,
                &word_vocab,
                &char_vocab,
                &keyboard,
            )
        })
    });
}

fn bench_segmentation(c: &mut Criterion) {
    let sentences = corpus(300, 400, 10);
    let model = train_subword(&sentences, 300).unwrap();
    let words: Vec<&str> =
        sentences.iter().take(100).flat_map(|s| s.tokens.iter()).map(String::as_str).collect();
    c.bench_function("subword_segment/1000words", |b| {
        b.iter(|| {
            for w in &words {
                black_box(model.segment(w));
            }
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let sentences = corpus(50, 100, 16);
    let word_vocab = build_word_vocab(&sentences, 100).unwrap();
    let char_vocab = derive_char_vocab(&word_vocab);
    let mut cfg = EncoderConfig::new(64, 2, 4, 32, 0);
    cfg.dropout_rate = 0.0;
    let model: Model<f32> =
        Model::new_word_char(Some(cfg), Some(cfg), &word_vocab, &char_vocab, 12, 3).unwrap();
    let resources = Resources {
        word_vocab: word_vocab.clone(),
        char_vocab,
        subword_model: None,
        max_word_len: 12,
    };
    let enc = resources.encode(&sentences[0].tokens);
    c.bench_function("forward/wordchar_64h_2l_16w", |b| {
        b.iter_batched(
            || (),
            |()| {
                let mut g: Graph<f32> = Graph::eval();
                let bound = model.params.bind(&mut g);
                black_box(forward(&model, &mut g, &bound, &enc).unwrap())
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_metrics(c: &mut Criterion) {
    let sentences = corpus(200, 300, 12);
    let word_vocab = build_word_vocab(&sentences, 300).unwrap();
    let triples: Vec<(String, String, String)> = sentences
        .iter()
        .flat_map(|s| &s.tokens)
        .enumerate()
        .map(|(i, w)| {
            let noisy = if i % 5 == 0 { format!("{w}x") } else { w.clone() };
            let pred = if i % 7 == 0 { noisy.clone() } else { w.clone() };
            (noisy, pred, w.clone())
        })
        .collect();
    c.bench_function("evaluate/2400words", |b| {
        b.iter(|| {
            evaluate(
                triples.iter().map(|(n, p, g)| (n.as_str(), p.as_str(), g.as_str())),
                black_box(&word_vocab),
                0.5,
                ReportCounters::default(),
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_corruption, bench_segmentation, bench_forward, bench_metrics);
criterion_main!(benches);
