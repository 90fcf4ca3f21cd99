//! Harmonic encoding of the magnification factor.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::substrate::nn::Linear;
use crate::substrate::{Array, ParameterSet, Real, Var};

/// Pre-fusion features `[n, cos(2π·2^k·n).., sin(2π·2^k·n)..]` for k = 1..=K,
/// where `n = alpha / alpha_max` clamped to `[0, 1]`.
pub fn hhme_features(alpha: f64, harmonics: usize, alpha_max: f64) -> Result<Vec<f64>> {
    if harmonics == 0 || !(alpha_max > 0.0) {
        return Err(Error::contract(format!("hhme: need K >= 1 and alpha_max > 0, got K={harmonics}, alpha_max={alpha_max}")));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite(format!("magnification factor {alpha}")));
    }
    if alpha < 0.0 || alpha > alpha_max {
        log::warn!("magnification factor {alpha} outside [0, {alpha_max}]; clamping");
    }
    let n = (alpha / alpha_max).clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(2 * harmonics + 1);
    out.push(n);
    let phase = |k: usize| TAU * (1u64 << k) as f64 * n;
    out.extend((1..=harmonics).map(|k| phase(k).cos()));
    out.extend((1..=harmonics).map(|k| phase(k).sin()));
    // Snap round-off at exact multiples of π/2 so closed-form values are exact.
    for x in &mut out[1..] {
        if x.abs() < 1e-12 {
            *x = 0.0;
        }
    }
    Ok(out)
}

/// Learned linear fusion of the harmonic features into an embedding.
pub struct Hhme<T> {
    pub harmonics: usize,
    pub alpha_max: f64,
    fuse: Linear<T>,
}

impl<T: Real> Hhme<T> {
    pub fn new(ps: &mut ParameterSet<T>, name: &str, harmonics: usize, alpha_max: f64, width: usize, rng: &mut impl Rng) -> Self {
        Self { harmonics, alpha_max, fuse: Linear::new(ps, name, 2 * harmonics + 1, width, rng) }
    }

    /// `[N, width]` embeddings for a batch of factors.
    pub fn forward(&self, alphas: &[f64]) -> Result<Var<T>> {
        let mut feats = Vec::with_capacity(alphas.len() * (2 * self.harmonics + 1));
        for &a in alphas {
            feats.extend(hhme_features(a, self.harmonics, self.alpha_max)?.into_iter().map(T::of));
        }
        let x = Var::constant(Array::new(&[alphas.len(), 2 * self.harmonics + 1], feats)?);
        self.fuse.forward(&x)
    }
}
