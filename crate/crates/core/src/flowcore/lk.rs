//! Dense coarse-to-fine Lucas-Kanade flow.
//!
//! Every pixel solves the 2x2 normal equations of the brightness-constancy
//! residual over a square window, iterating a few Gauss-Newton updates per
//! pyramid level. The result is a forward flow: `frame_b(p + flow(p)) ~ frame_a(p)`.

use crate::error::{Error, Result};
use crate::flowcore::blur::{convolve_separable, gaussian_kernel, reflect_index};
use crate::flowcore::resize::resample_plane;
use crate::flowcore::warp::sample_bilinear;
use crate::flowcore::{FlowField, ImageBuffer};

const ITERATIONS: usize = 10;
/// Smallest per-pixel-averaged structure-tensor eigenvalue still treated as textured.
const MIN_EIGEN: f32 = 1e-7;

struct Level {
    w: usize,
    h: usize,
    a: Vec<f32>,
    b: Vec<f32>,
}

fn box_sum(p: &[f32], w: usize, h: usize, size: usize) -> Vec<f32> {
    convolve_separable(p, w, h, &vec![1.0; size])
}

fn gradients(p: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let xl = reflect_index(x as isize - 1, w);
            let xr = reflect_index(x as isize + 1, w);
            let yu = reflect_index(y as isize - 1, h);
            let yd = reflect_index(y as isize + 1, h);
            gx[y * w + x] = 0.5 * (p[y * w + xr] - p[y * w + xl]);
            gy[y * w + x] = 0.5 * (p[yd * w + x] - p[yu * w + x]);
        }
    }
    (gx, gy)
}

fn build_pyramid(a: Vec<f32>, b: Vec<f32>, w: usize, h: usize, levels: usize, window: usize) -> Vec<Level> {
    let mut out = vec![Level { w, h, a, b }];
    let prefilter = gaussian_kernel(1.0);
    while out.len() < levels {
        let last = out.last().unwrap();
        let (nw, nh) = (last.w / 2, last.h / 2);
        if nw < window || nh < window {
            break;
        }
        let down = |p: &[f32]| resample_plane(&convolve_separable(p, last.w, last.h, &prefilter), last.w, last.h, nw, nh);
        let level = Level { w: nw, h: nh, a: down(&last.a), b: down(&last.b) };
        out.push(level);
    }
    out
}

fn refine_level(level: &Level, window: usize, u: &mut [f32], v: &mut [f32]) {
    let (w, h) = (level.w, level.h);
    let r = (window / 2) as isize;
    let area = (window * window) as f32;
    let (ix, iy) = gradients(&level.a, w, h);
    let mul = |p: &[f32], q: &[f32]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let sxx = box_sum(&mul(&ix, &ix), w, h, window);
    let sxy = box_sum(&mul(&ix, &iy), w, h, window);
    let syy = box_sum(&mul(&iy, &iy), w, h, window);
    let max_step = r.max(1) as f32;

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (a, b, c) = (sxx[i], sxy[i], syy[i]);
            let min_eig = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
            if min_eig / area < MIN_EIGEN {
                continue;
            }
            let det = a * c - b * b;
            for _ in 0..ITERATIONS {
                // The whole window moves with the centre pixel's displacement.
                let (mut bx, mut by) = (0f32, 0f32);
                for dy in -r..=r {
                    let qy = reflect_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let qx = reflect_index(x as isize + dx, w);
                        let q = qy * w + qx;
                        let it = sample_bilinear(&level.b, w, h, qx as f32 + u[i], qy as f32 + v[i]) - level.a[q];
                        bx += ix[q] * it;
                        by += iy[q] * it;
                    }
                }
                let du = -(c * bx - b * by) / det;
                let dv = -(a * by - b * bx) / det;
                if !(du.is_finite() && dv.is_finite()) {
                    break;
                }
                u[i] += du.clamp(-max_step, max_step);
                v[i] += dv.clamp(-max_step, max_step);
                if du.abs() < 1e-3 && dv.abs() < 1e-3 {
                    break;
                }
            }
        }
    }
}

/// Estimates the flow from `frame_a` to `frame_b` on grayscale luminance.
///
/// Textureless windows keep a zero update, so uniform images yield zero flow.
pub fn estimate_flow_pyrlk(frame_a: &ImageBuffer, frame_b: &ImageBuffer, levels: usize, window: usize) -> Result<FlowField> {
    if frame_a.dims() != frame_b.dims() {
        return Err(Error::contract("estimate_flow_pyrlk: frame dimensions differ"));
    }
    if levels == 0 {
        return Err(Error::contract("estimate_flow_pyrlk: levels must be >= 1"));
    }
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::contract(format!("estimate_flow_pyrlk: window must be odd and >= 3, got {window}")));
    }
    let (w, h) = frame_a.dims();
    let pyramid = build_pyramid(frame_a.luminance(), frame_b.luminance(), w, h, levels, window);

    let coarsest = pyramid.last().unwrap();
    let mut u = vec![0f32; coarsest.w * coarsest.h];
    let mut v = vec![0f32; coarsest.w * coarsest.h];
    let (mut cw, mut ch) = (coarsest.w, coarsest.h);
    for level in pyramid.iter().rev() {
        if (level.w, level.h) != (cw, ch) {
            let sx = level.w as f32 / cw as f32;
            let sy = level.h as f32 / ch as f32;
            u = resample_plane(&u, cw, ch, level.w, level.h).into_iter().map(|x| x * sx).collect();
            v = resample_plane(&v, cw, ch, level.w, level.h).into_iter().map(|x| x * sy).collect();
            (cw, ch) = (level.w, level.h);
        }
        refine_level(level, window, &mut u, &mut v);
    }
    for x in u.iter_mut().chain(v.iter_mut()) {
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    FlowField::new(w, h, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth band-limited texture evaluated at continuous coordinates.
    fn texture(x: f32, y: f32) -> f32 {
        0.5 + 0.18 * (0.31 * x + 0.17 * y).sin()
            + 0.12 * (0.23 * y - 0.41 * x + 1.0).cos()
            + 0.08 * (0.57 * x + 0.49 * y + 2.0).sin()
    }

    fn shifted(n: usize, dx: f32, dy: f32) -> ImageBuffer {
        ImageBuffer::from_fn(n, n, 3, |x, y, _| texture(x as f32 - dx, y as f32 - dy)).unwrap()
    }

    fn interior_mean(f: &FlowField, margin: usize) -> (f32, f32) {
        let (w, h) = f.dims();
        let (mut su, mut sv, mut k) = (0f32, 0f32, 0f32);
        for y in margin..h - margin {
            for x in margin..w - margin {
                let (u, v) = f.get(x, y);
                su += u;
                sv += v;
                k += 1.0;
            }
        }
        (su / k, sv / k)
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = shifted(32, 0.0, 0.0);
        let f = estimate_flow_pyrlk(&a, &a, 3, 9).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn textureless_frames_stay_finite_and_zero() {
        let a = ImageBuffer::filled(24, 24, 3, 0.4).unwrap();
        let b = ImageBuffer::filled(24, 24, 3, 0.6).unwrap();
        let f = estimate_flow_pyrlk(&a, &b, 2, 5).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn integer_shift_is_recovered() {
        let n = 48;
        let f = estimate_flow_pyrlk(&shifted(n, 0.0, 0.0), &shifted(n, 2.0, 0.0), 3, 9).unwrap();
        let truth = FlowField::constant(n, n, 2.0, 0.0);
        let margin = 8;
        let mut err = 0f64;
        let mut k = 0;
        for y in margin..n - margin {
            for x in margin..n - margin {
                let (u, v) = f.get(x, y);
                let (tu, tv) = truth.get(x, y);
                err += ((u - tu) as f64).hypot((v - tv) as f64);
                k += 1;
            }
        }
        assert!(err / (k as f64) < 0.2, "interior EPE {}", err / k as f64);
    }

    #[test]
    fn subpixel_shift_is_recovered() {
        let n = 40;
        let f = estimate_flow_pyrlk(&shifted(n, 0.0, 0.0), &shifted(n, 0.3, 0.0), 2, 9).unwrap();
        let (u, v) = interior_mean(&f, 8);
        assert!((u - 0.3).abs() < 0.1, "u = {u}");
        assert!(v.abs() < 0.1);
    }

    #[test]
    fn rejects_bad_parameters() {
        let a = shifted(16, 0.0, 0.0);
        assert!(estimate_flow_pyrlk(&a, &a, 0, 5).is_err());
        assert!(estimate_flow_pyrlk(&a, &a, 1, 4).is_err());
        assert!(estimate_flow_pyrlk(&a, &shifted(12, 0.0, 0.0), 1, 5).is_err());
    }
}
