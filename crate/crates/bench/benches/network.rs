use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hyperleaf::srnet::ops::{conv2d_backward, conv2d_forward, l1_loss, ConvRef, Feature, Geom};
use hyperleaf::srnet::{adam_step, backward, forward_batch, forward_train, AdamState, NetArch, NetworkParams, TrainConfig};

fn conv(c: &mut Criterion) {
    // A dense-block layer of the default network on a training batch.
    let (cin, cout) = (80, 16);
    let g = Geom::new(8, 16, 16);
    let x: Vec<f64> = (0..cin * g.plane()).map(|k| (k % 17) as f64 * 0.05).collect();
    let w: Vec<f64> = (0..cout * cin * 9).map(|k| ((k % 13) as f64 - 6.0) * 0.01).collect();
    let bias = vec![0.0; cout];
    let layer = ConvRef { weight: &w, bias: &bias, in_ch: cin, out_ch: cout, kernel: 3 };
    c.bench_function("conv3x3 80->16 8x16x16 forward", |b| b.iter(|| conv2d_forward(black_box(&x), g, layer).unwrap()));
    let dy = vec![0.01; cout * g.plane()];
    c.bench_function("conv3x3 80->16 8x16x16 backward", |b| {
        b.iter(|| {
            let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; cout], vec![0.0; x.len()]);
            conv2d_backward(&x, g, layer, black_box(&dy), &mut dw, &mut db, Some(&mut dx)).unwrap();
            dx
        })
    });
}

fn network(c: &mut Criterion) {
    let arch = NetArch::default();
    let params = NetworkParams::init(&arch, 1).unwrap();
    let x = Feature::from_vec(6, Geom::new(1, 32, 32), vec![1.0 / 6.0; 6 * 1024]).unwrap();
    let mut group = c.benchmark_group("default network");
    group.sample_size(10);
    group.bench_function("forward 6x32x32", |b| b.iter(|| forward_batch(&params, black_box(&x)).unwrap()));

    let batch = Feature::from_vec(6, Geom::new(8, 16, 16), vec![1.0 / 6.0; 6 * 8 * 256]).unwrap();
    let target = vec![0.2; 6 * 8 * 64 * 64];
    let cfg = TrainConfig::default();
    group.bench_function("train step batch 8 patch 16", |b| {
        let mut p = params.clone();
        let mut adam = AdamState::new(p.values.len());
        b.iter(|| {
            let cache = forward_train(&p, &batch).unwrap();
            let (_, d) = l1_loss(&cache.output.data, &target).unwrap();
            let (grads, _) = backward(&p, &cache, &d, false).unwrap();
            adam_step(&mut p.values, &grads, &mut adam, &cfg);
        })
    });
    group.finish();
}

criterion_group!(benches, conv, network);
criterion_main!(benches);
