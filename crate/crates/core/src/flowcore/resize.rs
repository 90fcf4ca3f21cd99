//! Bicubic resampling (Keys kernel, a = -0.5) with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::flowcore::Raster;

const KEYS_A: f32 = -0.5;

#[inline]
pub fn cubic_weight(t: f32) -> f32 {
    let t = t.abs();
    if t <= 1.0 {
        ((KEYS_A + 2.0) * t - (KEYS_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((KEYS_A * t - 5.0 * KEYS_A) * t + 8.0 * KEYS_A) * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Source coordinate of destination index `i` when mapping `n_in` samples onto `n_out`.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f32 {
    (i as f32 + 0.5) * (n_in as f32 / n_out as f32) - 0.5
}

/// 1-D taps: `(indices, weights)` for each output position.
fn taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f32; 4])> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            let base = s.floor();
            let mut idx = [0usize; 4];
            let mut wts = [0f32; 4];
            for k in 0..4 {
                let p = base + k as f32 - 1.0;
                idx[k] = (p.max(0.0) as usize).min(n_in - 1);
                wts[k] = cubic_weight(s - p);
            }
            let sum: f32 = wts.iter().sum();
            for w in &mut wts {
                *w /= sum;
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resample of one row-major plane to `out_w x out_h`.
pub fn resample_plane(plane: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut rows = vec![0f32; h * out_w];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for (x, (idx, wts)) in tx.iter().enumerate() {
            rows[y * out_w + x] = (0..4).map(|k| wts[k] * src[idx[k]]).sum();
        }
    }
    let mut out = vec![0f32; out_w * out_h];
    for (y, (idx, wts)) in ty.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = (0..4).map(|k| wts[k] * rows[idx[k] * out_w + x]).sum();
        }
    }
    out
}

fn is_power_of_two_factor(f: f64) -> bool {
    f > 0.0 && f.is_finite() && f.log2().fract() == 0.0
}

/// Resizes by a power-of-two factor. Flow values are multiplied by the factor so
/// displacements stay in pixels of the new grid.
pub fn resize<R: Raster>(raster: &R, factor: f64) -> Result<R> {
    if !is_power_of_two_factor(factor) {
        return Err(Error::contract(format!("resize factor must be a power of two, got {factor}")));
    }
    let (w, h) = raster.raster_dims();
    let out_w = (w as f64 * factor).floor() as usize;
    let out_h = (h as f64 * factor).floor() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::contract(format!("resize of {w}x{h} by {factor} yields an empty raster")));
    }
    let value_scale = if raster.values_scale_with_space() { factor as f32 } else { 1.0 };
    let planes = raster
        .to_planes()
        .iter()
        .map(|p| {
            let mut out = resample_plane(p, w, h, out_w, out_h);
            if value_scale != 1.0 {
                out.iter_mut().for_each(|x| *x *= value_scale);
            }
            out
        })
        .collect();
    raster.with_planes(out_w, out_h, planes)
}

/// Resizes to explicit dimensions. Flow `u` scales by `out_w / w` and `v` by `out_h / h`.
pub fn resize_to<R: Raster>(raster: &R, out_w: usize, out_h: usize) -> Result<R> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::contract("resize_to: target dimensions must be >= 1"));
    }
    let (w, h) = raster.raster_dims();
    let scales = [out_w as f32 / w as f32, out_h as f32 / h as f32];
    let planes = raster
        .to_planes()
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let mut out = resample_plane(p, w, h, out_w, out_h);
            if raster.values_scale_with_space() {
                let s = scales[c.min(1)];
                out.iter_mut().for_each(|x| *x *= s);
            }
            out
        })
        .collect();
    raster.with_planes(out_w, out_h, planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::{FlowField, ImageBuffer};

    #[test]
    fn constants_survive_any_factor() {
        let img = ImageBuffer::filled(8, 6, 3, 0.37).unwrap();
        for f in [0.5, 0.25, 2.0, 4.0] {
            let out = resize(&img, f).unwrap();
            assert!(out.data().iter().all(|&x| (x - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn flow_values_follow_the_factor() {
        let flow = FlowField::constant(8, 8, 4.0, 0.0);
        let half = resize(&flow, 0.5).unwrap();
        assert_eq!(half.dims(), (4, 4));
        assert!(half.u().iter().all(|&x| (x - 2.0).abs() < 1e-6));
        assert!(half.v().iter().all(|&x| x.abs() < 1e-6));
    }

    #[test]
    fn downsample_matches_direct_kernel_evaluation() {
        let n = 8;
        let ramp: Vec<f32> = (0..n * n).map(|i| ((i % n) as f32 + 2.0 * (i / n) as f32) / 24.0).collect();
        let img = ImageBuffer::new(n, n, 1, ramp.clone()).unwrap();
        let out = resize(&img, 0.5).unwrap();
        // dense oracle: 2-D sum over the full source grid with clamped indices folded in
        for oy in 0..n / 2 {
            for ox in 0..n / 2 {
                let sx = (ox as f64 + 0.5) * 2.0 - 0.5;
                let sy = (oy as f64 + 0.5) * 2.0 - 0.5;
                let (mut acc, mut wsum) = (0f64, 0f64);
                for py in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                    for px in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                        let wgt = cubic_weight((sx - px as f64) as f32) as f64 * cubic_weight((sy - py as f64) as f32) as f64;
                        let cx = px.clamp(0, n as i64 - 1) as usize;
                        let cy = py.clamp(0, n as i64 - 1) as usize;
                        acc += wgt * ramp[cy * n + cx] as f64;
                        wsum += wgt;
                    }
                }
                let want = acc / wsum;
                assert!((out.get(ox, oy, 0) as f64 - want).abs() <= 1e-5, "({ox},{oy})");
            }
        }
    }

    #[test]
    fn rejects_bad_factors_and_empty_results() {
        let img = ImageBuffer::filled(2, 2, 1, 0.5).unwrap();
        assert!(resize(&img, 0.3).is_err());
        assert!(resize(&img, 0.25).is_err());
        assert!(resize(&img, 0.5).is_ok());
    }

    #[test]
    fn flow_resize_commutes_with_scaling() {
        let flow = FlowField::from_fn(16, 12, |x, y| ((x as f32 * 0.3).sin(), (y as f32 * 0.2).cos())).unwrap();
        for f in [0.5, 2.0] {
            let a = resize(&flow.scaled(3.5), f).unwrap();
            let b = resize(&flow, f).unwrap().scaled(3.5);
            for (x, y) in a.u().iter().chain(a.v()).zip(b.u().iter().chain(b.v())) {
                assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()) * 4.0);
            }
        }
    }
}
