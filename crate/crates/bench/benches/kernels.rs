//! Criterion benchmarks for the numeric kernels on the hot path:
//! colour deconvolution, DoG detection, CNN passes, and t-SNE affinities.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use phenotile_core::classify::{CnnConfig, LossKind, Mode, TinyCnn};
use phenotile_core::detect::{dog_detect, DogParams};
use phenotile_core::embed::{pairwise_affinities, EmbeddingMatrix};
use phenotile_core::imgcore::Image;
use phenotile_core::rng::{seeded_rng, stream_rng};
use phenotile_core::stain::{hed_to_rgb, rgb_to_hed, StainMatrix};
use phenotile_core::synthgen::{generate_tile, SynthSpec};
use rand::Rng;

fn random_image(w: u32, h: u32, seed: u64) -> Image {
    let mut rng = seeded_rng(seed);
    let data: Vec<u8> = (0..w as usize * h as usize * 3).map(|_| rng.gen()).collect();
    Image::from_raw(w, h, data).unwrap()
}

fn bench_stain(c: &mut Criterion) {
    let matrix = StainMatrix::he_dab();
    let img = random_image(256, 256, 1);
    c.bench_function("stain_round_trip_256", |b| {
        b.iter(|| {
            let hed = rgb_to_hed(black_box(&img), &matrix);
            black_box(hed_to_rgb(&hed, &matrix))
        })
    });
}

fn bench_dog(c: &mut Criterion) {
    let spec = SynthSpec::default();
    let tile = generate_tile(&spec, 3).unwrap();
    let matrix = StainMatrix::he_dab();
    let params = DogParams::default();
    c.bench_function("dog_detect_640x480", |b| {
        b.iter(|| black_box(dog_detect(black_box(&tile.image), &matrix, &params).unwrap()))
    });
}

fn bench_cnn(c: &mut Criterion) {
    let model = TinyCnn::new(CnnConfig::default(), 5).unwrap();
    let mut rng = seeded_rng(6);
    let input: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
    c.bench_function("cnn_forward_infer_32", |b| {
        b.iter(|| black_box(model.forward_one(black_box(&input), Mode::Infer, None).unwrap()))
    });
    c.bench_function("cnn_forward_backward_32", |b| {
        b.iter_batched(
            || stream_rng(7, &[0]),
            |mut drng| {
                let out = model
                    .forward_one(black_box(&input), Mode::Train, Some(&mut drng))
                    .unwrap();
                black_box(
                    model
                        .backward_one(&out.cache.unwrap(), 2, &LossKind::CrossEntropy, 1.0)
                        .unwrap(),
                )
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_affinities(c: &mut Criterion) {
    let mut rng = seeded_rng(8);
    let n = 200;
    let data: Vec<f64> = (0..n * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    let x = EmbeddingMatrix::new(ids, 64, data).unwrap();
    c.bench_function("tsne_affinities_200x64", |b| {
        b.iter(|| black_box(pairwise_affinities(black_box(&x), 30.0).unwrap()))
    });
}

criterion_group!(benches, bench_stain, bench_dog, bench_cnn, bench_affinities);
criterion_main!(benches);
