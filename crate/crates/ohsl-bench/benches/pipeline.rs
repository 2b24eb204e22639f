//! Throughput of the hot paths: encoding a point, ranking a query with each
//! engine, and absorbing one labeled point into the online model.
//!
//! Run with `cargo bench -p ohsl-bench`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use nalgebra::DVector;
use ohsl::{
    build_multi_index, default_segments, hamming_topk, linear_scan_topk, multi_index_topk,
    query_weights, train_itq, BinaryCode, CodeDatabase, HashModel, ItqConfig, SimilarityModel,
    TargetCodebook,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const DIM: usize = 64;
const BITS: usize = 32;
const CLASSES: usize = 8;
const DB_SIZE: usize = 100_000;
const K: usize = 10;

fn uniform_vec(rng: &mut ChaCha12Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5)
}

fn fitted_hash(rng: &mut ChaCha12Rng) -> HashModel {
    let sample: Vec<DVector<f64>> = (0..300).map(|_| uniform_vec(rng, DIM)).collect();
    train_itq(
        &sample,
        &ItqConfig {
            bits: BITS,
            iterations: 25,
            seed: 1,
        },
    )
    .expect("hash fit")
}

fn random_database(rng: &mut ChaCha12Rng) -> CodeDatabase {
    let mut db = CodeDatabase::new(BITS);
    for _ in 0..DB_SIZE {
        let code =
            BinaryCode::from_words(vec![rng.random::<u64>() & 0xFFFF_FFFF], BITS).expect("code");
        db.append(&code, &[]).expect("append");
    }
    db
}

/// A model that has absorbed a few hundred points, so its weights are shaped
/// rather than fresh-initialized.
fn warmed_model(rng: &mut ChaCha12Rng, hash: &HashModel, codebook: &TargetCodebook) -> SimilarityModel {
    let mut model = SimilarityModel::new(3 * BITS, DIM, BITS, 0.01).expect("model");
    for t in 0..200 {
        let x = uniform_vec(rng, DIM);
        model
            .observe(&x, &[(t % CLASSES) as u32], hash, codebook)
            .expect("observe");
    }
    model
}

fn bench_encode(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let hash = fitted_hash(&mut rng);
    let x = uniform_vec(&mut rng, DIM);

    let mut g = c.benchmark_group("encode");
    g.throughput(Throughput::Elements(1));
    g.bench_function(format!("{DIM}d_to_{BITS}b"), |b| {
        b.iter(|| black_box(hash.encode(black_box(&x)).unwrap()))
    });
    g.finish();
}

fn bench_engines(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let hash = fitted_hash(&mut rng);
    let codebook = TargetCodebook::new(CLASSES, 3 * BITS, 1).expect("codebook");
    let model = warmed_model(&mut rng, &hash, &codebook);
    let db = random_database(&mut rng);
    let index = build_multi_index(&db, default_segments(BITS)).expect("index");

    let q = uniform_vec(&mut rng, DIM);
    let w = query_weights(model.m(), &q).expect("weights");
    let q_code = hash.encode(&q).expect("encode");

    let mut g = c.benchmark_group("rank_100k");
    g.throughput(Throughput::Elements(DB_SIZE as u64));
    g.bench_function("linear_scan", |b| {
        b.iter(|| black_box(linear_scan_topk(black_box(&w), &db, K).unwrap()))
    });
    g.bench_function("multi_index", |b| {
        b.iter(|| black_box(multi_index_topk(&index, black_box(&w), &db, K).unwrap()))
    });
    g.bench_function("hamming", |b| {
        b.iter(|| black_box(hamming_topk(black_box(&q_code), &db, K).unwrap()))
    });
    g.finish();
}

fn bench_observe(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let hash = fitted_hash(&mut rng);
    let codebook = TargetCodebook::new(CLASSES, 3 * BITS, 1).expect("codebook");
    let mut model = warmed_model(&mut rng, &hash, &codebook);
    let x = uniform_vec(&mut rng, DIM);

    let mut g = c.benchmark_group("observe");
    g.throughput(Throughput::Elements(1));
    g.bench_function(format!("l{}_d{DIM}_b{BITS}", 3 * BITS), |b| {
        b.iter(|| black_box(model.observe(&x, &[3], &hash, &codebook).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, bench_encode, bench_engines, bench_observe);
criterion_main!(benches);
