//! Convolution and dense layers lowered to GEMM.

use crate::error::{Error, Result};
use crate::substrate::real::gemm;
use crate::substrate::{Array, Real, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate read by output `o` through kernel tap `k`, if inside.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = Geometry::source(oy, ky, g.stride, g.pad, g.h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    let src = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        *v = Geometry::source(ox, kx, g.stride, g.pad, g.w).map_or(T::zero(), |ix| src[ix]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let Some(iy) = Geometry::source(oy, ky, g.stride, g.pad, g.h) else { continue };
                    let dst = &mut dx[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for ox in 0..g.wo {
                        if let Some(ix) = Geometry::source(ox, kx, g.stride, g.pad, g.w) {
                            dst[ix] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation of `x[N, Ci, H, W]` with `weight[Co, Ci, kh, kw]`.
pub fn conv2d<T: Real>(x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Result<Var<T>> {
    let (n, ci, h, w) = x.value().dims4()?;
    let (co, wci, kh, kw) = weight.value().dims4()?;
    if wci != ci {
        return Err(Error::contract(format!("conv2d: input has {ci} channels, kernel expects {wci}")));
    }
    if stride == 0 {
        return Err(Error::contract("conv2d: stride must be >= 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::contract(format!("conv2d: {kh}x{kw} kernel exceeds padded {h}x{w} input")));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::contract(format!("conv2d: bias shape {:?}, expected [{co}]", b.shape())));
        }
    }
    let g = Geometry { ci, h, w, kh, kw, stride, pad, ho: (h + 2 * pad - kh) / stride + 1, wo: (w + 2 * pad - kw) / stride + 1 };
    let (k, p) = (g.rows(), g.cols());

    let mut out = vec![T::zero(); n * co * p];
    {
        let xv = x.value();
        let wv = weight.value();
        let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for b in 0..n {
            let xn = &xv.data()[b * ci * h * w..(b + 1) * ci * h * w];
            let src: &[T] = if g.pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut cols);
                &cols
            };
            gemm(co, k, p, wv.data(), false, src, false, T::zero(), &mut out[b * co * p..(b + 1) * co * p]);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            for (i, chunk) in out.chunks_mut(p).enumerate() {
                let bias = bv.data()[i % co];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    let out = Array::new(&[n, co, g.ho, g.wo], out)?;
    let mut parents = vec![x.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Var::from_op(out, parents, move |dy, _, p| {
        let xv = p[0].value();
        let wv = p[1].value();
        let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * g.cols()] };
        let mut dw = if p[1].tracked() { vec![T::zero(); co * k] } else { Vec::new() };
        let mut dx = if p[0].tracked() { vec![T::zero(); n * ci * h * w] } else { Vec::new() };
        let mut dcols = vec![T::zero(); if g.pointwise() || dx.is_empty() { 0 } else { k * g.cols() }];
        let pp = g.cols();
        for b in 0..n {
            let dyn_ = &dy[b * co * pp..(b + 1) * co * pp];
            if !dw.is_empty() {
                let xn = &xv.data()[b * ci * h * w..(b + 1) * ci * h * w];
                let src: &[T] = if g.pointwise() {
                    xn
                } else {
                    im2col(xn, &g, &mut cols);
                    &cols
                };
                gemm(co, pp, k, dyn_, false, src, true, T::one(), &mut dw);
            }
            if !dx.is_empty() {
                let dxn = &mut dx[b * ci * h * w..(b + 1) * ci * h * w];
                if g.pointwise() {
                    gemm(k, co, pp, wv.data(), true, dyn_, false, T::one(), dxn);
                } else {
                    gemm(k, co, pp, wv.data(), true, dyn_, false, T::zero(), &mut dcols);
                    col2im(&dcols, &g, dxn);
                }
            }
        }
        drop((xv, wv));
        if !dx.is_empty() {
            p[0].accumulate(&dx);
        }
        if !dw.is_empty() {
            p[1].accumulate(&dw);
        }
        if let Some(bias) = p.get(2) {
            bias.with_grad(|acc| {
                for (i, chunk) in dy.chunks(pp).enumerate() {
                    acc[i % co] += chunk.iter().copied().sum();
                }
            });
        }
    }))
}

/// `x[N, I] * weight[O, I]^T + bias[O]`.
pub fn linear<T: Real>(x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let (n, i, o) = match (&xs[..], &ws[..]) {
        ([n, i], [o, wi]) if i == wi => (*n, *i, *o),
        _ => return Err(Error::contract(format!("linear: input {xs:?} incompatible with weight {ws:?}"))),
    };
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::contract(format!("linear: bias shape {:?}, expected [{o}]", b.shape())));
        }
    }
    let mut out = vec![T::zero(); n * o];
    gemm(n, i, o, x.value().data(), false, weight.value().data(), true, T::zero(), &mut out);
    if let Some(b) = bias {
        let bv = b.value();
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(bv.data()).for_each(|(v, &b)| *v += b);
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    parents.extend(bias.cloned());
    Ok(Var::from_op(Array::new(&[n, o], out)?, parents, move |dy, _, p| {
        if p[0].tracked() {
            let mut dx = vec![T::zero(); n * i];
            gemm(n, o, i, dy, false, p[1].value().data(), false, T::zero(), &mut dx);
            p[0].accumulate(&dx);
        }
        if p[1].tracked() {
            let mut dw = vec![T::zero(); o * i];
            gemm(o, n, i, dy, true, p[0].value().data(), false, T::zero(), &mut dw);
            p[1].accumulate(&dw);
        }
        if let Some(b) = p.get(2) {
            b.with_grad(|acc| {
                for row in dy.chunks(o) {
                    acc.iter_mut().zip(row).for_each(|(a, &d)| *a += d);
                }
            });
        }
    }))
}
