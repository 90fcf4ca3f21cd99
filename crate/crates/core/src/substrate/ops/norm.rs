use crate::error::{Error, Result};
use crate::substrate::{Array, Real, Var};

/// Group normalization over `(channels in group) x spatial`, then a per-channel affine.
pub fn group_norm<T: Real>(x: &Var<T>, groups: usize, gain: &Var<T>, shift: &Var<T>, eps: f64) -> Result<Var<T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::contract(format!("group_norm: needs rank >= 2, got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    if groups == 0 || c % groups != 0 {
        return Err(Error::contract(format!("group_norm: {c} channels not divisible into {groups} groups")));
    }
    if gain.shape() != [c] || shift.shape() != [c] {
        return Err(Error::contract("group_norm: affine parameters must have one entry per channel"));
    }
    if eps <= 0.0 {
        return Err(Error::contract("group_norm: eps must be positive"));
    }
    let cg = c / groups;
    let span = cg * inner;
    let eps = T::of(eps);
    let count = T::of(span as f64);

    let mut xhat = x.value().data().to_vec();
    let mut inv = vec![T::zero(); n * groups];
    for (gi, chunk) in xhat.chunks_mut(span).enumerate() {
        let mean = chunk.iter().copied().sum::<T>() / count;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let s = T::one() / (var + eps).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean) * s);
        inv[gi] = s;
    }
    let mut out = xhat.clone();
    {
        let (gv, sv) = (gain.value(), shift.value());
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let ch = i % c;
            let (a, b) = (gv.data()[ch], sv.data()[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * a + b);
        }
    }
    let out = Array::new(&shape, out)?;
    Ok(Var::from_op(out, vec![x.clone(), gain.clone(), shift.clone()], move |dy, _, p| {
        p[1].with_grad(|acc| {
            for (i, (d, xh)) in dy.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
                acc[i % c] += d.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            }
        });
        p[2].with_grad(|acc| {
            for (i, d) in dy.chunks(inner).enumerate() {
                acc[i % c] += d.iter().copied().sum();
            }
        });
        if p[0].tracked() {
            let gv = p[1].value().data().to_vec();
            let mut dx = vec![T::zero(); dy.len()];
            for gi in 0..n * groups {
                let base = gi * span;
                let first_channel = (gi % groups) * cg;
                let dxhat = |j: usize| dy[base + j] * gv[first_channel + j / inner];
                let (mut m1, mut m2) = (T::zero(), T::zero());
                for j in 0..span {
                    let d = dxhat(j);
                    m1 += d;
                    m2 += d * xhat[base + j];
                }
                m1 /= count;
                m2 /= count;
                for j in 0..span {
                    dx[base + j] = inv[gi] * (dxhat(j) - m1 - xhat[base + j] * m2);
                }
            }
            p[0].accumulate(&dx);
        }
    }))
}
