//! Spatial resampling, softmax, warping, convex upsampling and Gram matrices.

use crate::error::{Error, Result};
use crate::substrate::{Array, Real, Var};

/// Source taps `(i0, i1, frac)` for half-pixel-centred linear resampling.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            (i0, (i0 + 1).min(input - 1), src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `x[N, C, H, W]` to `oh x ow`, edge-clamped.
pub fn resize_bilinear<T: Real>(x: &Var<T>, oh: usize, ow: usize) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::contract("resize_bilinear: empty output"));
    }
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = vec![T::zero(); n * c * oh * ow];
    {
        let xv = x.value();
        for (plane, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
    }
    let out = Array::new(&[n, c, oh, ow], out)?;
    Ok(Var::from_op(out, vec![x.clone()], move |dy, _, p| {
        p[0].with_grad(|acc| {
            for (src, dst) in dy.chunks(oh * ow).zip(acc.chunks_mut(h * w)) {
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::of(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::of(fx);
                        let g = src[oy * ow + ox];
                        let (gt, gb) = (g * (T::one() - fy), g * fy);
                        dst[y0 * w + x0] += gt * (T::one() - fx);
                        dst[y0 * w + x1] += gt * fx;
                        dst[y1 * w + x0] += gb * (T::one() - fx);
                        dst[y1 * w + x1] += gb * fx;
                    }
                }
            }
        });
    }))
}

/// 2x2 average pooling; extents must be even.
pub fn avg_pool2<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(format!("avg_pool2: extents {h}x{w} must be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); n * c * oh * ow];
    {
        let xv = x.value();
        for (plane, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
                }
            }
        }
    }
    let out = Array::new(&[n, c, oh, ow], out)?;
    Ok(Var::from_op(out, vec![x.clone()], move |dy, _, p| {
        p[0].with_grad(|acc| {
            for (src, dst) in dy.chunks(oh * ow).zip(acc.chunks_mut(h * w)) {
                for y in 0..oh {
                    for xx in 0..ow {
                        let g = src[y * ow + xx] * quarter;
                        let i = 2 * y * w + 2 * xx;
                        for j in [i, i + 1, i + w, i + w + 1] {
                            dst[j] += g;
                        }
                    }
                }
            }
        });
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Up,
    Down,
}

/// Bilinear doubling or 2x2 average halving.
pub fn resample2x<T: Real>(x: &Var<T>, direction: Resample) -> Result<Var<T>> {
    match direction {
        Resample::Up => {
            let (_, _, h, w) = x.value().dims4()?;
            resize_bilinear(x, 2 * h, 2 * w)
        }
        Resample::Down => avg_pool2(x),
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::contract(format!("softmax: axis {axis} out of range for {shape:?}")));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.value().data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len).map(|k| out[base + k * inner]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..len {
                let e = (out[base + k * inner] - max).exp();
                out[base + k * inner] = e;
                total += e;
            }
            for k in 0..len {
                out[base + k * inner] /= total;
            }
        }
    }
    let out = Array::new(&shape, out)?;
    Ok(Var::from_op(out, vec![x.clone()], move |dy, y, p| {
        let y = y.data();
        let mut dx = vec![T::zero(); dy.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dot: T = (0..len).map(|k| dy[base + k * inner] * y[base + k * inner]).sum();
                for k in 0..len {
                    let j = base + k * inner;
                    dx[j] = y[j] * (dy[j] - dot);
                }
            }
        }
        p[0].accumulate(&dx);
    }))
}

/// Bilinear sample taps with clamp-to-edge; same arithmetic as the image warp.
#[inline]
fn bilinear_taps<T: Real>(w: usize, h: usize, x: T, y: T) -> ([usize; 4], T, T) {
    let x = x.max(T::zero()).min(T::of((w - 1) as f64));
    let y = y.max(T::zero()).min(T::of((h - 1) as f64));
    let x0 = x.floor().to_usize().unwrap_or(0);
    let y0 = y.floor().to_usize().unwrap_or(0);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - T::of(x0 as f64);
    let fy = y - T::of(y0 as f64);
    ([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], fx, fy)
}

/// Backward warp of `x[N, C, H, W]` by a constant flow `[N, 2, H, W]`:
/// `out(p) = x(p + flow(p))`. Differentiable with respect to `x` only.
pub fn warp<T: Real>(x: &Var<T>, flow: &Array<T>) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::contract(format!("warp: flow {:?} does not fit image {:?}", flow.shape(), x.shape())));
    }
    let hw = h * w;
    let mut taps = Vec::with_capacity(n * hw);
    for b in 0..n {
        let u = &flow.data()[b * 2 * hw..b * 2 * hw + hw];
        let v = &flow.data()[b * 2 * hw + hw..(b + 1) * 2 * hw];
        for y in 0..h {
            for xx in 0..w {
                let i = y * w + xx;
                taps.push(bilinear_taps(w, h, T::of(xx as f64) + u[i], T::of(y as f64) + v[i]));
            }
        }
    }
    let mut out = vec![T::zero(); n * c * hw];
    {
        let xv = x.value();
        for b in 0..n {
            for ch in 0..c {
                let plane = &xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (i, (t, fx, fy)) in taps[b * hw..(b + 1) * hw].iter().enumerate() {
                    let top = plane[t[0]] + *fx * (plane[t[1]] - plane[t[0]]);
                    let bottom = plane[t[2]] + *fx * (plane[t[3]] - plane[t[2]]);
                    dst[i] = top + *fy * (bottom - top);
                }
            }
        }
    }
    let out = Array::new(&[n, c, h, w], out)?;
    Ok(Var::from_op(out, vec![x.clone()], move |dy, _, p| {
        p[0].with_grad(|acc| {
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for (i, (t, fx, fy)) in taps[b * hw..(b + 1) * hw].iter().enumerate() {
                        let g = dy[off + i];
                        let (gt, gb) = (g * (T::one() - *fy), g * *fy);
                        acc[off + t[0]] += gt * (T::one() - *fx);
                        acc[off + t[1]] += gt * *fx;
                        acc[off + t[2]] += gb * (T::one() - *fx);
                        acc[off + t[3]] += gb * *fx;
                    }
                }
            }
        });
    }))
}

/// Convex upsampling by `factor`: each fine pixel is a weighted combination
/// of the 3x3 coarse neighbourhood (replicate padding), per component.
///
/// `weights[N, C*9*factor^2, h, w]` are laid out as `(component, neighbour,
/// sub-row, sub-col)` along the channel axis and must sum to one over the
/// neighbour axis.
pub fn convex_upsample<T: Real>(flow: &Var<T>, weights: &Var<T>, factor: usize) -> Result<Var<T>> {
    let (n, c, h, w) = flow.value().dims4()?;
    let f2 = factor * factor;
    let expected = [n, c * 9 * f2, h, w];
    if factor == 0 || weights.shape() != expected {
        return Err(Error::contract(format!("convex_upsample: weights {:?}, expected {expected:?}", weights.shape())));
    }
    let hw = h * w;
    {
        let wv = weights.value();
        let wd = wv.data();
        for b in 0..n {
            for ch in 0..c {
                for s in 0..f2 {
                    for i in 0..hw {
                        let total: f64 = (0..9).map(|k| wd[(((b * c + ch) * 9 + k) * f2 + s) * hw + i].f64()).sum();
                        if (total - 1.0).abs() > 1e-4 {
                            return Err(Error::contract(format!("convex_upsample: neighbour weights sum to {total}, not 1")));
                        }
                    }
                }
            }
        }
    }
    let (fh, fw) = (h * factor, w * factor);
    // neighbour k of coarse pixel i, replicate-padded
    let neighbour = move |i: usize, k: usize| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let ny = (y + k as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
        let nx = (x + k as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
        ny * w + nx
    };
    let widx = move |b: usize, ch: usize, k: usize, s: usize, i: usize| (((b * c + ch) * 9 + k) * f2 + s) * hw + i;
    let fidx = move |b: usize, ch: usize, i: usize, s: usize| {
        let (y, x) = (i / w, i % w);
        ((b * c + ch) * fh + y * factor + s / factor) * fw + x * factor + s % factor
    };
    let mut out = vec![T::zero(); n * c * fh * fw];
    {
        let (fv, wv) = (flow.value(), weights.value());
        let (fd, wd) = (fv.data(), wv.data());
        for b in 0..n {
            for ch in 0..c {
                let plane = &fd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for i in 0..hw {
                    for s in 0..f2 {
                        let mut acc = T::zero();
                        for k in 0..9 {
                            acc += wd[widx(b, ch, k, s, i)] * plane[neighbour(i, k)];
                        }
                        out[fidx(b, ch, i, s)] = acc;
                    }
                }
            }
        }
    }
    let out = Array::new(&[n, c, fh, fw], out)?;
    Ok(Var::from_op(out, vec![flow.clone(), weights.clone()], move |dy, _, p| {
        let fd = p[0].value().data().to_vec();
        let wd = p[1].value().data().to_vec();
        p[0].with_grad(|acc| {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in 0..hw {
                        for s in 0..f2 {
                            let g = dy[fidx(b, ch, i, s)];
                            for k in 0..9 {
                                acc[base + neighbour(i, k)] += g * wd[widx(b, ch, k, s, i)];
                            }
                        }
                    }
                }
            }
        });
        p[1].with_grad(|acc| {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in 0..hw {
                        for s in 0..f2 {
                            let g = dy[fidx(b, ch, i, s)];
                            for k in 0..9 {
                                acc[widx(b, ch, k, s, i)] += g * fd[base + neighbour(i, k)];
                            }
                        }
                    }
                }
            }
        });
    }))
}

/// Channel inner products `G[n, i, j] = <F[n, i], F[n, j]>` of `F[N, C, H, W]`.
pub fn gram<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = x.value().dims4()?;
    let p = h * w;
    let mut out = vec![T::zero(); n * c * c];
    {
        let xv = x.value();
        for b in 0..n {
            let f = &xv.data()[b * c * p..(b + 1) * c * p];
            crate::substrate::real::gemm(c, p, c, f, false, f, true, T::zero(), &mut out[b * c * c..(b + 1) * c * c]);
        }
    }
    let out = Array::new(&[n, c, c], out)?;
    Ok(Var::from_op(out, vec![x.clone()], move |dg, _, parents| {
        let xv = parents[0].value().data().to_vec();
        let mut dx = vec![T::zero(); n * c * p];
        for b in 0..n {
            let g = &dg[b * c * c..(b + 1) * c * c];
            let sym: Vec<T> = (0..c * c).map(|k| g[k] + g[(k % c) * c + k / c]).collect();
            crate::substrate::real::gemm(c, c, p, &sym, false, &xv[b * c * p..(b + 1) * c * p], false, T::zero(), &mut dx[b * c * p..(b + 1) * c * p]);
        }
        parents[0].accumulate(&dx);
    }))
}
