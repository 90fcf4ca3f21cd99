use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use magniflow::flowcore::{estimate_flow_pyrlk, warp_backward};
use magniflow::substrate::{ops, Var};
use magniflow_bench::{smooth_flow, textured_image, uniform_array};

fn conv(c: &mut Criterion) {
    let x = Var::constant(uniform_array(&[4, 32, 32, 32], 1));
    let w = Var::constant(uniform_array(&[32, 32, 3, 3], 2));
    c.bench_function("conv2d 4x32x32x32 k3", |b| b.iter(|| ops::conv2d(black_box(&x), &w, None, 1, 1).unwrap()));
    let w = Var::parameter(uniform_array(&[32, 32, 3, 3], 2));
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            w.zero_grad();
            ops::sum(&ops::conv2d(&x, &w, None, 1, 1).unwrap()).backward().unwrap()
        })
    });
}

fn upsample(c: &mut Criterion) {
    let flow = Var::constant(uniform_array(&[4, 2, 8, 8], 3));
    let logits = Var::constant(uniform_array(&[4, 2, 9, 64 * 64], 4));
    let weights = ops::reshape(&ops::softmax(&logits, 2).unwrap(), &[4, 1152, 8, 8]).unwrap();
    c.bench_function("convex_upsample 8x8 -> 64x64", |b| b.iter(|| ops::convex_upsample(black_box(&flow), &weights, 8).unwrap()));
}

fn flow(c: &mut Criterion) {
    let a = textured_image(128, 128, 5);
    let flow = smooth_flow(128, 128, 1.5);
    let b_img = warp_backward(&a, &flow).unwrap();
    c.bench_function("warp_backward 128x128", |b| b.iter(|| warp_backward(black_box(&a), &flow).unwrap()));
    c.bench_function("pyramidal LK 128x128", |b| b.iter(|| estimate_flow_pyrlk(black_box(&a), &b_img, 3, 9).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, upsample, flow
}
criterion_main!(benches);
