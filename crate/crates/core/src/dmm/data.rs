//! Training pairs for the magnifier: synthetic NOFA samples and "real" pairs
//! whose conditional flow is measured on rendered, sensor-noised frames.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{estimate_flow_pyrlk, FlowField};
use crate::nofa::{generate_sample, sample_seed, simulate_photon_noise, NofaConfig, Scene, SceneConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DmmExample {
    pub cond: FlowField,
    pub target: FlowField,
    pub alpha: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Real,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Synthetic => "synthetic",
            Source::Real => "real",
        }
    }
}

pub fn synthetic_example(config: &NofaConfig, seed: u64) -> Result<DmmExample> {
    let s = generate_sample(config, seed)?;
    Ok(DmmExample { cond: s.conditional, target: s.target, alpha: s.alpha })
}

/// Procedural-video pairs with estimated conditional flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealFlowConfig {
    pub width: usize,
    pub height: usize,
    pub amplitude_max: f32,
    pub alpha_max: f32,
    /// Photon-noise strength applied to both frames before estimation.
    pub photon_noise: f32,
    pub levels: usize,
    pub window: usize,
}

impl Default for RealFlowConfig {
    fn default() -> Self {
        Self { width: 32, height: 32, amplitude_max: 0.3, alpha_max: 100.0, photon_noise: 0.01, levels: 2, window: 7 }
    }
}

/// The target is the analytic sprite motion times α; the background is still,
/// so everything the estimator reports there is noise to be suppressed.
pub fn real_example(config: &RealFlowConfig, seed: u64) -> Result<DmmExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 8.0;
    let scene = Scene::new(SceneConfig {
        width: config.width,
        height: config.height,
        frames: period as usize,
        amplitude: rng.random_range(0.0..=config.amplitude_max),
        period,
        direction: rng.random_range(0.0..TAU),
        sprite_half: rng.random_range(0.1..0.3),
        seed: rng.random(),
    })?;
    let t = rng.random_range(1..period as usize);
    let a = simulate_photon_noise(&scene.render(0)?, config.photon_noise, &mut rng)?;
    let b = simulate_photon_noise(&scene.render(t)?, config.photon_noise, &mut rng)?;
    let cond = estimate_flow_pyrlk(&a, &b, config.levels, config.window)?;
    let alpha = rng.random_range(0.0..=config.alpha_max);
    Ok(DmmExample { cond, target: scene.ground_truth_flow(0, t).scaled(alpha), alpha })
}

/// Batches for step `k`, a pure function of `(self, k)` so runs resume exactly.
///
/// With a real source configured, even steps draw synthetic batches and odd
/// steps real ones. Synthetic batches come from `corpus` when it is non-empty
/// and are generated on the fly otherwise.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub corpus: Vec<DmmExample>,
    pub synthetic: NofaConfig,
    pub real: Option<RealFlowConfig>,
    pub seed: u64,
}

impl TrainingData {
    pub fn from_corpus(corpus: Vec<DmmExample>, seed: u64) -> Self {
        Self { corpus, synthetic: NofaConfig::default(), real: None, seed }
    }

    pub fn batch(&self, step: u64, size: usize) -> Result<(Vec<DmmExample>, Source)> {
        if size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        let base = sample_seed(self.seed, step);
        if let (Some(real), 1) = (&self.real, step % 2) {
            let batch = (0..size).map(|i| real_example(real, sample_seed(base, i as u64))).collect::<Result<_>>()?;
            return Ok((batch, Source::Real));
        }
        let batch = if self.corpus.is_empty() {
            (0..size).map(|i| synthetic_example(&self.synthetic, sample_seed(base, i as u64))).collect::<Result<_>>()?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            (0..size).map(|_| self.corpus[rng.random_range(0..self.corpus.len())].clone()).collect()
        };
        Ok((batch, Source::Synthetic))
    }
}
