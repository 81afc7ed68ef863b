use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use richtx::attnmap::{spectral_segment, SimilarityMatrix};
use richtx::regionfuse::{color_gradient, texture_gradient, ConvExtractor, GenerationConfig};
use richtx::sampler::NoiseSchedule;
use richtx::tensor::{Map2, Tensor};
use richtx::toy_engine;
use richtx_bench::sample_document;

fn similarity(side: usize, seed: u64) -> SimilarityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = side * side;
    let raw = Array2::<f64>::from_shape_fn((n, n), |_| rng.gen());
    SimilarityMatrix::new((&raw + &raw.t()) / 2.0).unwrap()
}

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral_segment");
    g.sample_size(10);
    for side in [8, 16] {
        let sim = similarity(side, 1);
        g.bench_with_input(BenchmarkId::from_parameter(side), &sim, |b, sim| {
            b.iter(|| spectral_segment(black_box(sim), (side, side), 15, 0).unwrap())
        });
    }
    g.finish();
}

fn generate(c: &mut Criterion) {
    let doc = sample_document();
    let mut config = GenerationConfig::default();
    config.guidance.cfg_scale = 1.0;
    config.preview_interval = 0;
    let mut g = c.benchmark_group("toy_generate");
    g.sample_size(10);
    for side in [16, 32] {
        let engine = toy_engine(&doc, (side, side)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(side), &engine, |b, engine| {
            b.iter(|| engine.generate(black_box(&doc), &config).unwrap())
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sched = NoiseSchedule::from_alphas_bar(vec![1.0, 0.5], 0.0).unwrap();
    let shape = (3, 32, 32);
    let x = Tensor::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let eps = Tensor::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let tex = Tensor::from_shape_fn(shape, |_| rng.gen());
    let map = Map2::from_shape_fn((32, 32), |_| rng.gen());
    let ext = ConvExtractor::reference();
    c.bench_function("color_gradient_32", |b| {
        b.iter(|| color_gradient(black_box(&x), &eps, &map, [0.2, 0.4, 0.6], &sched, 1).unwrap())
    });
    c.bench_function("texture_gradient_32", |b| {
        b.iter(|| texture_gradient(black_box(&x), &eps, &map, &tex, &ext, &sched, 1).unwrap())
    });
}

criterion_group!(benches, spectral, generate, gradients);
criterion_main!(benches);
