use std::hint::black_box;

use blxam::decode::{beam_decode, collapse_path, greedy_decode, wer, Lexicons};
use blxam::lexicon::word_to_units;
use blxam::numcore::matmul_into;
use blxam::training::{train_step, TrainingPlan};
use blxam::{CombinationMode, DecodeMode, Locale, Stage};
use blxam_bench::{example, model, specs, utterance};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn numeric(c: &mut Criterion) {
    let (m, k, n) = (64, 64, 128);
    let a: Vec<f64> = (0..m * k).map(|i| (i % 7) as f64 * 0.1).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i % 5) as f64 * 0.2).collect();
    let mut out = vec![0.0; m * n];
    c.bench_function("matmul 64x64x128", |bch| {
        bch.iter(|| matmul_into(black_box(&a), black_box(&b), m, k, n, &mut out))
    });
}

fn model_benches(c: &mut Criterion) {
    let (a, _, map) = specs(1);
    let utt = utterance(&a, 3, 7);
    let aux = model(&map, CombinationMode::Aux);
    let lid = model(&map, CombinationMode::Lid);
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    g.bench_function(
        format!("forward bilingual {} frames", utt.frames()),
        |bch| {
            bch.iter(|| {
                aux.posteriors(black_box(&utt.features), DecodeMode::Bilingual)
                    .unwrap()
            })
        },
    );
    g.bench_function("stream lid-combined feed 8", |bch| {
        bch.iter(|| {
            lid.stream_utterance(black_box(&utt.features), DecodeMode::LidCombined, 8)
                .unwrap()
        })
    });
    let ex = example(&utt, &map);
    let plan = TrainingPlan::for_stage(Stage::AuxJoint);
    g.bench_function("train step aux-joint 1 utterance", |bch| {
        bch.iter_batched(
            || aux.clone(),
            |mut m| train_step(&mut m, &[&ex], &plan, 1e-3).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn decode_benches(c: &mut Criterion) {
    let (a, b, map) = specs(2);
    let utt = utterance(&a, 3, 9);
    let lex_a = a.lexicon().unwrap();
    let lex_b = b.lexicon().unwrap();
    let lexicons = Lexicons::new(&map.bilingual, &[(Locale::A, &lex_a), (Locale::B, &lex_b)]);
    let aux = model(&map, CombinationMode::Aux);
    let (post, _) = aux
        .posteriors(&utt.features, DecodeMode::Bilingual)
        .unwrap();
    c.bench_function("collapse 1000 frames", |bch| {
        let path: Vec<usize> = (0..1000).map(|i| (i / 3) % 11).collect();
        bch.iter(|| collapse_path(black_box(&path)))
    });
    c.bench_function("greedy decode", |bch| {
        bch.iter(|| greedy_decode(black_box(&post), &lexicons))
    });
    c.bench_function("beam decode width 4", |bch| {
        bch.iter(|| beam_decode(black_box(&post), &lexicons, 4, None))
    });
    let r: Vec<String> = (0..30).map(|i| format!("w{}", i % 9)).collect();
    let h: Vec<String> = (0..28).map(|i| format!("w{}", (i * 2) % 9)).collect();
    c.bench_function("wer 30 words", |bch| {
        bch.iter(|| wer(black_box(&r), black_box(&h)).unwrap())
    });
    c.bench_function("word_to_units", |bch| {
        bch.iter(|| word_to_units(black_box("precipitevolissimevolmente")).unwrap())
    });
}

criterion_group!(benches, numeric, model_benches, decode_benches);
criterion_main!(benches);
