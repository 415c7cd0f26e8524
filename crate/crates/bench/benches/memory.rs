use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use memforge::{
    activate, embed_text, fuse_edge_weight, ActivationConfig, Document, EmbeddingProvider, FusionParams, HashEmbedder,
    InputSequence, MockExtractor, Pipeline, PipelineConfig, RelationSchema, SynonymTable,
};
use memforge::extraction::Extractor;
use memforge_bench::{abstracts, evidence, rng, tokens, unit_bank};

fn fusion(c: &mut Criterion) {
    let mut group = c.benchmark_group("fuse_edge_weight");
    let mut r = rng(1);
    for m in [1, 8, 64] {
        let ev = evidence(&mut r, m, 256);
        group.bench_with_input(BenchmarkId::from_parameter(m), &ev, |b, ev| {
            b.iter(|| fuse_edge_weight(black_box(ev), FusionParams::default()).unwrap())
        });
    }
    group.finish();
}

fn embedding(c: &mut Criterion) {
    let text = "glioblastoma EXHIBITS_FEATURE pseudopalisading necrosis";
    let mut group = c.benchmark_group("embed_text");
    for d in [64, 256, 1024] {
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| b.iter(|| embed_text(black_box(text), d)));
    }
    group.finish();
}

fn extraction(c: &mut Criterion) {
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashEmbedder::new(256).unwrap());
    let extractor = MockExtractor::new(RelationSchema::default(), embedder);
    let docs: Vec<Document> = abstracts(&mut rng(2), 64)
        .into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(i.to_string(), t))
        .collect();
    c.bench_function("mock_extract_64_docs", |b| {
        b.iter(|| docs.iter().map(|d| extractor.extract(d).triples.len()).sum::<usize>())
    });
}

fn build(c: &mut Criterion) {
    let docs: Vec<Document> = abstracts(&mut rng(3), 500)
        .into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(i.to_string(), format!("{t} Study {i}.")))
        .collect();
    let pipeline = Pipeline::with_mock(PipelineConfig::default(), SynonymTable::default(), Default::default()).unwrap();
    let mut group = c.benchmark_group("build");
    group.sample_size(20);
    group.bench_function("500_docs", |b| b.iter(|| pipeline.build_from_documents(docs.clone()).unwrap()));
    group.finish();
}

fn activation(c: &mut Criterion) {
    let mut group = c.benchmark_group("activate");
    let mut r = rng(4);
    for n in [100, 1000, 10_000] {
        let bank = unit_bank(&mut r, n, 256);
        let x = InputSequence::from_rows(&tokens(&mut r, 16, 256)).unwrap();
        let config = ActivationConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| activate(black_box(&bank), black_box(&x), &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fusion, embedding, extraction, build, activation);
criterion_main!(benches);
