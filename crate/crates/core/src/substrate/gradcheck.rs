//! Central finite-difference checks of analytic gradients, run in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::substrate::{no_grad, ops, Array, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so vanishing gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_per_input: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6, max_per_input: usize::MAX }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares backward-pass gradients of `loss()` with respect to `inputs`
/// against central differences.
pub fn check_gradients(inputs: &[Var<f64>], opts: GradCheckOptions, loss: impl Fn() -> Result<Var<f64>>) -> Result<GradCheckReport> {
    inputs.iter().for_each(Var::zero_grad);
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs.iter().map(Var::grad_or_zeros).collect();
    let eval = || -> Result<f64> { Ok(no_grad(&loss)?.item()) };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(opts.max_per_input.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = input.value().data()[i];
            input.value_mut().data_mut()[i] = orig + opts.step;
            let plus = eval()?;
            input.value_mut().data_mut()[i] = orig - opts.step;
            let minus = eval()?;
            input.value_mut().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, i, a, numeric));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces any tensor to a scalar through fixed random weights, so every
/// output element contributes a distinct gradient.
pub fn probe_loss(y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Var::constant(Array::from_fn(&y.shape(), |_| rng.random_range(-1.0..1.0)));
    Ok(ops::sum(&ops::mul(y, &weights)?))
}

/// Random tracked input whose entries avoid `[-margin, margin]`, keeping
/// kinked primitives away from their kinks.
pub fn random_input(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Var<f64> {
    Var::parameter(Array::from_fn(shape, |_| {
        let m: f64 = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    }))
}

/// Names of the primitives covered by [`check_primitives`].
pub const PRIMITIVES: &[&str] = &[
    "add", "sub", "mul", "scale", "add_scalar", "sigmoid", "silu", "abs", "square", "soft_shrink", "sum", "mean",
    "l1_loss", "reshape", "concat_channels", "slice_channels", "add_channel_bias", "mul_channel_broadcast", "conv2d",
    "linear", "group_norm", "resample_up", "resample_down", "resize_bilinear", "softmax", "warp", "convex_upsample",
    "gram",
];

fn small(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Builds one randomized gradient check of `name` and runs it.
fn check_one(name: &str, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let opts = GradCheckOptions::default();
    let (n, c) = (small(rng, 1, 2), small(rng, 1, 3));
    let (h, w) = (small(rng, 2, 5), small(rng, 2, 5));
    let nchw = [n, c, h, w];
    let probe = rng.random::<u64>();
    let input = |rng: &mut ChaCha8Rng, shape: &[usize]| random_input(shape, 0.05, rng);
    macro_rules! run {
        ([$($v:ident),*], $body:expr) => {{
            let inputs = vec![$($v.clone()),*];
            check_gradients(&inputs, opts, || probe_loss(&$body?, probe))
        }};
    }
    match name {
        "add" | "sub" | "mul" => {
            let (a, b) = (input(rng, &nchw), input(rng, &nchw));
            match name {
                "add" => run!([a, b], ops::add(&a, &b)),
                "sub" => run!([a, b], ops::sub(&a, &b)),
                _ => run!([a, b], ops::mul(&a, &b)),
            }
        }
        "scale" => {
            let a = input(rng, &nchw);
            run!([a], Ok::<_, crate::Error>(ops::scale(&a, -1.7)))
        }
        "add_scalar" => {
            let a = input(rng, &nchw);
            run!([a], Ok::<_, crate::Error>(ops::add_scalar(&a, 0.4)))
        }
        "sigmoid" | "silu" | "abs" | "square" => {
            let a = input(rng, &nchw);
            let f = match name {
                "sigmoid" => ops::sigmoid,
                "silu" => ops::silu,
                "abs" => ops::abs,
                _ => ops::square,
            };
            run!([a], Ok::<_, crate::Error>(f(&a)))
        }
        "soft_shrink" => {
            // keep inputs away from the +-0.3 kinks
            let a = Var::parameter(Array::from_fn(&nchw, |_| {
                let m: f64 = rng.random_range(0.0..0.6);
                let m = if m < 0.3 { m * 0.8 } else { m + 0.05 };
                if rng.random_bool(0.5) { m } else { -m }
            }));
            run!([a], Ok::<_, crate::Error>(ops::soft_shrink(&a, 0.3)))
        }
        "sum" | "mean" => {
            let a = input(rng, &nchw);
            let inputs = vec![a.clone()];
            let reduce = if name == "sum" { ops::sum } else { ops::mean };
            check_gradients(&inputs, opts, || Ok(ops::square(&reduce(&a))))
        }
        "l1_loss" => {
            let (a, b) = (input(rng, &nchw), input(rng, &nchw));
            let inputs = vec![a.clone(), b.clone()];
            check_gradients(&inputs, opts, || ops::l1_loss(&a, &b))
        }
        "reshape" => {
            let a = input(rng, &nchw);
            run!([a], ops::reshape(&a, &[n * c, h * w]))
        }
        "concat_channels" => {
            let c2 = small(rng, 1, 3);
            let (a, b) = (input(rng, &nchw), input(rng, &[n, c2, h, w]));
            run!([a, b], ops::concat_channels(&[&a, &b]))
        }
        "slice_channels" => {
            let a = input(rng, &[n, c + 2, h, w]);
            let start = small(rng, 0, 2);
            run!([a], ops::slice_channels(&a, start, c))
        }
        "add_channel_bias" => {
            let (a, b) = (input(rng, &nchw), input(rng, &[n, c]));
            run!([a, b], ops::add_channel_bias(&a, &b))
        }
        "mul_channel_broadcast" => {
            let (a, s) = (input(rng, &nchw), input(rng, &[n, 1, h, w]));
            run!([a, s], ops::mul_channel_broadcast(&a, &s))
        }
        "conv2d" => {
            let k = [1, 3][small(rng, 0, 1)];
            let stride = small(rng, 1, 2);
            let pad = small(rng, 0, 1);
            let (h, w) = (h + 2, w + 2);
            let x = input(rng, &[n, c, h, w]);
            let co = small(rng, 1, 3);
            let wt = input(rng, &[co, c, k, k]);
            let b = input(rng, &[wt.shape()[0]]);
            run!([x, wt, b], ops::conv2d(&x, &wt, Some(&b), stride, pad))
        }
        "linear" => {
            let (i, o) = (small(rng, 1, 5), small(rng, 1, 4));
            let (x, wt, b) = (input(rng, &[n, i]), input(rng, &[o, i]), input(rng, &[o]));
            run!([x, wt, b], ops::linear(&x, &wt, Some(&b)))
        }
        "group_norm" => {
            let groups = small(rng, 1, 2);
            let c = groups * small(rng, 1, 2);
            let x = input(rng, &[n, c, h, w]);
            let (g, s) = (input(rng, &[c]), input(rng, &[c]));
            run!([x, g, s], ops::group_norm(&x, groups, &g, &s, 1e-3))
        }
        "resample_up" => {
            let x = input(rng, &nchw);
            run!([x], ops::resample2x(&x, ops::Resample::Up))
        }
        "resample_down" => {
            let x = input(rng, &[n, c, 2 * h, 2 * w]);
            run!([x], ops::resample2x(&x, ops::Resample::Down))
        }
        "resize_bilinear" => {
            let x = input(rng, &nchw);
            let (oh, ow) = (small(rng, 1, 7), small(rng, 1, 7));
            run!([x], ops::resize_bilinear(&x, oh, ow))
        }
        "softmax" => {
            let x = input(rng, &nchw);
            let axis = small(rng, 0, 3);
            run!([x], ops::softmax(&x, axis))
        }
        "warp" => {
            let x = input(rng, &nchw);
            let flow = Array::from_fn(&[n, 2, h, w], |_| rng.random_range(-1.5..1.5));
            run!([x], ops::warp(&x, &flow))
        }
        "convex_upsample" => {
            let f = small(rng, 1, 3);
            let flow = input(rng, &nchw);
            let logits = input(rng, &[n, c, 9, f * f * h * w]);
            let inputs = vec![flow.clone(), logits.clone()];
            check_gradients(&inputs, opts, || {
                let weights = ops::reshape(&ops::softmax(&logits, 2)?, &[n, c * 9 * f * f, h, w])?;
                probe_loss(&ops::convex_upsample(&flow, &weights, f)?, probe)
            })
        }
        "gram" => {
            let x = input(rng, &nchw);
            run!([x], ops::gram(&x))
        }
        other => Err(crate::Error::contract(format!("no gradient check for {other}"))),
    }
}

/// Runs `trials` randomized gradient checks of every primitive and returns
/// the worst relative error per primitive.
pub fn check_primitives(trials: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &name in PRIMITIVES {
        let mut worst = 0f64;
        for _ in 0..trials {
            worst = worst.max(check_one(name, &mut rng)?.max_rel_error);
        }
        out.push((name, worst));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // abs through a kink-free region is fine; a deliberately broken rule is not
        let x = Var::parameter(Array::new(&[2], vec![0.5, -0.7]).unwrap());
        let ok = check_gradients(std::slice::from_ref(&x), GradCheckOptions::default(), || Ok(ops::sum(&ops::abs(&x)))).unwrap();
        assert!(ok.max_rel_error < 1e-8);
        let bad = check_gradients(std::slice::from_ref(&x), GradCheckOptions::default(), || {
            Ok(ops::sum(&ops::add(&ops::abs(&x), &Var::constant(x.value().clone()))?))
        })
        .unwrap();
        assert!(bad.max_rel_error > 0.1);
    }
}
