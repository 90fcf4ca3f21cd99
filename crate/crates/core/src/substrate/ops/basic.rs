//! Elementwise, reduction and shape operations.

use crate::error::{Error, Result};
use crate::substrate::{Array, Real, Var};

fn same_shape<T: Real>(op: &str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn binary<T: Real>(a: &Var<T>, b: &Var<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let (av, bv) = (a.value(), b.value());
    let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(av.shape(), data).expect("same shape")
}

pub fn add<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let out = binary(a, b, |x, y| x + y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], |g, _, p| {
        p[0].accumulate(g);
        p[1].accumulate(g);
    }))
}

pub fn sub<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let out = binary(a, b, |x, y| x - y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], |g, _, p| {
        p[0].accumulate(g);
        p[1].with_grad(|acc| acc.iter_mut().zip(g).for_each(|(a, &d)| *a -= d));
    }))
}

pub fn mul<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let out = binary(a, b, |x, y| x * y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], |g, _, p| {
        let (av, bv) = (p[0].value().data().to_vec(), p[1].value().data().to_vec());
        p[0].with_grad(|acc| acc.iter_mut().zip(g).zip(&bv).for_each(|((a, &d), &y)| *a += d * y));
        p[1].with_grad(|acc| acc.iter_mut().zip(g).zip(&av).for_each(|((a, &d), &x)| *a += d * x));
    }))
}

pub fn scale<T: Real>(x: &Var<T>, c: f64) -> Var<T> {
    let c = T::of(c);
    let out = x.value().map(|v| v * c);
    Var::from_op(out, vec![x.clone()], move |g, _, p| {
        p[0].with_grad(|acc| acc.iter_mut().zip(g).for_each(|(a, &d)| *a += d * c));
    })
}

pub fn add_scalar<T: Real>(x: &Var<T>, c: f64) -> Var<T> {
    let c = T::of(c);
    let out = x.value().map(|v| v + c);
    Var::from_op(out, vec![x.clone()], |g, _, p| p[0].accumulate(g))
}

/// Pointwise map whose derivative is expressed through input and output.
fn unary<T: Real>(x: &Var<T>, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
    let out = x.value().map(f);
    Var::from_op(out, vec![x.clone()], move |g, y, p| {
        let xv = p[0].value();
        let d: Vec<T> = g.iter().zip(xv.data()).zip(y.data()).map(|((&g, &x), &y)| g * df(x, y)).collect();
        drop(xv);
        p[0].accumulate(&d);
    })
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Var<T>) -> Var<T> {
    unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

pub fn silu<T: Real>(x: &Var<T>) -> Var<T> {
    unary(
        x,
        |v| v * sigmoid_scalar(v),
        |v, _| {
            let s = sigmoid_scalar(v);
            s + v * s * (T::one() - s)
        },
    )
}

pub fn abs<T: Real>(x: &Var<T>) -> Var<T> {
    unary(x, |v| v.abs(), |v, _| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() })
}

pub fn square<T: Real>(x: &Var<T>) -> Var<T> {
    unary(x, |v| v * v, |v, _| v + v)
}

/// `sign(x) * max(|x| - lambda, 0)`.
pub fn soft_shrink<T: Real>(x: &Var<T>, lambda: f64) -> Var<T> {
    let l = T::of(lambda);
    unary(
        x,
        move |v| if v > l { v - l } else if v < -l { v + l } else { T::zero() },
        move |v, _| if v.abs() > l { T::one() } else { T::zero() },
    )
}

pub fn sum<T: Real>(x: &Var<T>) -> Var<T> {
    let s = x.value().data().iter().copied().sum();
    Var::from_op(Array::scalar(s), vec![x.clone()], |g, _, p| {
        let d = g[0];
        p[0].with_grad(|acc| acc.iter_mut().for_each(|a| *a += d));
    })
}

pub fn mean<T: Real>(x: &Var<T>) -> Var<T> {
    let n = x.numel().max(1) as f64;
    scale(&sum(x), 1.0 / n)
}

/// Mean absolute difference, the L1 loss.
pub fn l1_loss<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    Ok(mean(&abs(&sub(a, b)?)))
}

pub fn reshape<T: Real>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let out = x.value().clone().reshaped(shape)?;
    Ok(Var::from_op(out, vec![x.clone()], |g, _, p| p[0].accumulate(g)))
}

/// `(outer, channels, inner)` view used by the channel-axis ops.
fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::contract(format!("channel op needs rank >= 2, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Concatenates along axis 1.
pub fn concat_channels<T: Real>(parts: &[&Var<T>]) -> Result<Var<T>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat of nothing"))?.shape();
    let (n, _, inner) = channel_view(&first)?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != first.len() || s[0] != n || s[2..] != first[2..] {
            return Err(Error::contract(format!("concat: shape {s:?} incompatible with {first:?}")));
        }
        widths.push(s[1]);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total * inner);
    for b in 0..n {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.value().data()[b * c * inner..(b + 1) * c * inner]);
        }
    }
    let mut shape = first.clone();
    shape[1] = total;
    let out = Array::new(&shape, data)?;
    let parents = parts.iter().map(|&p| p.clone()).collect();
    Ok(Var::from_op(out, parents, move |g, _, p| {
        let mut offset = 0;
        for (part, &c) in p.iter().zip(&widths) {
            part.with_grad(|acc| {
                for b in 0..n {
                    let src = &g[(b * total + offset) * inner..(b * total + offset + c) * inner];
                    acc[b * c * inner..(b + 1) * c * inner].iter_mut().zip(src).for_each(|(a, &d)| *a += d);
                }
            });
            offset += c;
        }
    }))
}

/// Channels `start..start + len` along axis 1.
pub fn slice_channels<T: Real>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let shape = x.shape();
    let (n, c, inner) = channel_view(&shape)?;
    if start + len > c || len == 0 {
        return Err(Error::contract(format!("slice {start}..{} out of {c} channels", start + len)));
    }
    let mut data = Vec::with_capacity(n * len * inner);
    {
        let v = x.value();
        for b in 0..n {
            data.extend_from_slice(&v.data()[(b * c + start) * inner..(b * c + start + len) * inner]);
        }
    }
    let mut out_shape = shape.clone();
    out_shape[1] = len;
    let out = Array::new(&out_shape, data)?;
    Ok(Var::from_op(out, vec![x.clone()], move |g, _, p| {
        p[0].with_grad(|acc| {
            for b in 0..n {
                let dst = &mut acc[(b * c + start) * inner..(b * c + start + len) * inner];
                dst.iter_mut().zip(&g[b * len * inner..(b + 1) * len * inner]).for_each(|(a, &d)| *a += d);
            }
        });
    }))
}

/// `x[n, c, ...] + bias[n, c]`, broadcasting the bias over trailing axes.
pub fn add_channel_bias<T: Real>(x: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape();
    let (n, c, inner) = channel_view(&shape)?;
    if bias.shape() != [n, c] {
        return Err(Error::contract(format!("channel bias {:?} does not fit {shape:?}", bias.shape())));
    }
    let mut out = x.value().clone();
    {
        let b = bias.value();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b.data()[i];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(Var::from_op(out, vec![x.clone(), bias.clone()], move |g, _, p| {
        p[0].accumulate(g);
        p[1].with_grad(|acc| {
            for (a, chunk) in acc.iter_mut().zip(g.chunks(inner)) {
                *a += chunk.iter().copied().sum();
            }
        });
    }))
}

/// `x[n, c, ...] * s[n, 1, ...]`, broadcasting `s` over channels.
pub fn mul_channel_broadcast<T: Real>(x: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape();
    let (n, c, inner) = channel_view(&shape)?;
    let mut expected = shape.clone();
    expected[1] = 1;
    if s.shape() != expected {
        return Err(Error::contract(format!("broadcast factor {:?} does not fit {shape:?}", s.shape())));
    }
    let mut out = x.value().clone();
    {
        let sv = s.value();
        for b in 0..n {
            let sp = &sv.data()[b * inner..(b + 1) * inner];
            for ch in 0..c {
                let o = &mut out.data_mut()[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                o.iter_mut().zip(sp).for_each(|(v, &f)| *v *= f);
            }
        }
    }
    Ok(Var::from_op(out, vec![x.clone(), s.clone()], move |g, _, p| {
        let xv = p[0].value().data().to_vec();
        let sv = p[1].value().data().to_vec();
        p[0].with_grad(|acc| {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    for i in 0..inner {
                        acc[base + i] += g[base + i] * sv[b * inner + i];
                    }
                }
            }
        });
        p[1].with_grad(|acc| {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    for i in 0..inner {
                        acc[b * inner + i] += g[base + i] * xv[base + i];
                    }
                }
            }
        });
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::parameter(Array::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = var(&[2], &[1.0, 2.0]);
        let b = var(&[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(add(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let a = var(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = var(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(slice_channels(&c, 1, 2).unwrap().to_vec(), b.to_vec());
        assert_eq!(slice_channels(&c, 0, 1).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn sigmoid_saturates_cleanly() {
        assert_eq!(sigmoid_scalar(30.0f32), 1.0);
        assert!(sigmoid_scalar(-30.0f32) < 1e-12);
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(-800.0f64).is_finite());
    }

    #[test]
    fn soft_shrink_values() {
        let x = var(&[4], &[-2.0, -0.5, 0.5, 3.0]);
        assert_eq!(soft_shrink(&x, 1.0).to_vec(), vec![-1.0, 0.0, 0.0, 2.0]);
    }
}
