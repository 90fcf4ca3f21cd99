//! Log-normal noise flow, its maximum-likelihood fit and photon noise.

use std::f32::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{gaussian_blur, FlowField, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Location of ln(magnitude).
    pub mu: f64,
    /// Scale of ln(magnitude).
    pub sigma: f64,
    pub blur_sigma: f32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { mu: -4.303, sigma: 0.527, blur_sigma: 3.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !(self.blur_sigma >= 0.0) {
            return Err(Error::contract(format!("invalid noise model {self:?}")));
        }
        Ok(())
    }

    fn distribution(&self) -> Result<LogNormal<f64>> {
        self.validate()?;
        LogNormal::new(self.mu, self.sigma).map_err(|e| Error::contract(e.to_string()))
    }

    /// Raw per-pixel magnitudes before any smoothing.
    pub fn sample_magnitudes(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let dist = self.distribution()?;
        Ok((0..count).map(|_| dist.sample(rng)).collect())
    }
}

/// Independent log-normal magnitudes and uniform directions per pixel, each
/// component then Gaussian-smoothed.
pub fn generate_noise_flow(width: usize, height: usize, model: &NoiseModel, rng: &mut impl Rng) -> Result<FlowField> {
    let dist = model.distribution()?;
    let n = width * height;
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let m = dist.sample(rng) as f32;
        let a = rng.random_range(0.0..TAU);
        u.push(m * a.cos());
        v.push(m * a.sin());
    }
    let raw = FlowField::new(width, height, u, v)?;
    Ok(gaussian_blur(&raw, model.blur_sigma))
}

/// `(mean, population std)` of `ln x`.
pub fn fit_lognormal_mle(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::contract("fit_lognormal_mle: need at least two samples"));
    }
    if let Some(bad) = samples.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::contract(format!("fit_lognormal_mle: sample {bad} is not a positive finite value")));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// The additive photon-noise term: zero-mean Gaussian per value with
/// variance equal to the intensity, times `strength`.
pub fn photon_noise_field(image: &ImageBuffer, strength: f32, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if !(strength >= 0.0) {
        return Err(Error::contract(format!("photon noise strength must be >= 0, got {strength}")));
    }
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    Ok(image.data().iter().map(|&x| strength * x.sqrt() * normal.sample(rng)).collect())
}

/// `clamp(image + photon_noise_field(image, strength))`.
pub fn simulate_photon_noise(image: &ImageBuffer, strength: f32, rng: &mut impl Rng) -> Result<ImageBuffer> {
    let noise = photon_noise_field(image, strength, rng)?;
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let data = image.data().iter().zip(noise).map(|(&x, n)| x + n).collect();
    ImageBuffer::new(image.width(), image.height(), image.channels(), data)
}
