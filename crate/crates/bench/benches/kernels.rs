use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fraudformer::data::{generate_corpus, Generator, GeneratorConfig};
use fraudformer::pretrain::{forward_loss, EventBatch};
use fraudformer::{rng, Graph, Mode, Model, ModelConfig, Tensor};

fn matmul(c: &mut Criterion) {
    let mut r = rng::stream(0, "bench");
    let a: Tensor<f32> = fraudformer::numerics::init_truncated_normal(&[1056, 64], 1.0, &mut r);
    let b: Tensor<f32> = fraudformer::numerics::init_truncated_normal(&[64, 192], 1.0, &mut r);
    c.bench_function("matmul 1056x64x192", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
            black_box(g.matmul(x, y).unwrap());
        })
    });
}

fn setup(d: usize) -> (Model<f32>, EventBatch) {
    let gen = GeneratorConfig {
        n_users: 32,
        min_len: 32,
        max_len: 32,
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let cfg = ModelConfig::new(gen.vocab().cardinalities(), d, 2, 2, 33, 0.1, 1).unwrap();
    let batch = EventBatch::from_sequences(&corpus, cfg.n_dims()).unwrap();
    (Model::init(cfg).unwrap(), batch)
}

fn train_step(c: &mut Criterion) {
    let (model, batch) = setup(64);
    let mut r = rng::stream(1, "bench.dropout");
    c.bench_function("forward 32x32 d64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            black_box(forward_loss(&mut g, &model, &batch, Mode::Eval, &mut r).unwrap());
        })
    });
    c.bench_function("forward+backward 32x32 d64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let loss = forward_loss(&mut g, &model, &batch, Mode::Train, &mut r).unwrap();
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn generator(c: &mut Criterion) {
    let gen = Generator::new(GeneratorConfig {
        n_users: 1000,
        ..GeneratorConfig::default()
    })
    .unwrap();
    c.bench_function("generate 1000 users", |bench| {
        bench.iter(|| black_box(gen.iter().count()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, train_step, generator
}
criterion_main!(benches);
