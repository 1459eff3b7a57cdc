use std::hint::black_box;

use claimguard_core::features::{fuse, EmbedKind, EmbeddingProvider, FusionConfig, ToyProvider};
use claimguard_core::imaging::{color_histogram, ImageBuffer};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> ImageBuffer {
    let pixels = (0..w * h * 3).map(|_| rng.random()).collect();
    ImageBuffer::new(w, h, pixels).unwrap()
}

fn bench_histogram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = image(&mut rng, 640, 480);
    let mut group = c.benchmark_group("color_histogram_640x480");
    for bins in [8usize, 16, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(bins), &bins, |b, &bins| {
            b.iter(|| color_histogram(black_box(&img), bins).unwrap())
        });
    }
    group.finish();
}

fn bench_embed_and_fuse(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let provider = ToyProvider::default();
    let roi = image(&mut rng, 96, 96);
    let body = image(&mut rng, 640, 480);
    c.bench_function("toy_embed_roi_96", |b| {
        b.iter(|| {
            provider
                .embed("roi", black_box(&roi), EmbedKind::LocalRoi)
                .unwrap()
        })
    });
    c.bench_function("toy_embed_body_640x480", |b| {
        b.iter(|| {
            provider
                .embed("body", black_box(&body), EmbedKind::GlobalBody)
                .unwrap()
        })
    });

    let layout = FusionConfig::default();
    let local = provider.embed("roi", &roi, EmbedKind::LocalRoi).unwrap();
    let global = provider
        .embed("body", &body, EmbedKind::GlobalBody)
        .unwrap();
    let hist = color_histogram(&body, layout.hist_bins).unwrap();
    c.bench_function("fuse_152d", |b| {
        b.iter(|| fuse(black_box(&local), &global, Some(&hist), &layout).unwrap())
    });
}

criterion_group!(benches, bench_histogram, bench_embed_and_fuse);
criterion_main!(benches);
