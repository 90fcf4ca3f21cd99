//! Whole synthetic samples and on-disk datasets.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{read_flo, write_flo, FlowField};
use crate::nofa::flow::{compose_conditional_flow, make_target_flow, sample_directions};
use crate::nofa::noise::{generate_noise_flow, NoiseModel};
use crate::nofa::region::{random_shape, Mask, RegionSpec, ShapeKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NofaConfig {
    pub width: usize,
    pub height: usize,
    /// Regions per sample.
    pub regions: usize,
    /// Direction segments.
    pub segments: usize,
    pub m_min: f32,
    pub m_max: f32,
    pub alpha_min: f32,
    pub alpha_max: f32,
    pub noise: NoiseModel,
    /// Region size range as fractions of `min(width, height)`.
    pub scale_min: f32,
    pub scale_max: f32,
    /// Bound on the fractal harmonic amplitudes.
    pub smoothness: f32,
}

impl Default for NofaConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            regions: 5,
            segments: 36,
            m_min: 0.0,
            m_max: 0.3,
            alpha_min: 0.0,
            alpha_max: 100.0,
            noise: NoiseModel::default(),
            scale_min: 0.1,
            scale_max: 0.22,
            smoothness: 0.15,
        }
    }
}

impl NofaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if self.width == 0 || self.height == 0 {
            return bad(format!("dimensions must be >= 1, got {}x{}", self.width, self.height));
        }
        if self.regions == 0 || self.regions > self.segments {
            return bad(format!("need 1 <= regions <= segments, got {} and {}", self.regions, self.segments));
        }
        if !(0.0 <= self.m_min && self.m_min <= self.m_max) {
            return bad(format!("invalid magnitude range [{}, {}]", self.m_min, self.m_max));
        }
        if !(0.0 <= self.alpha_min && self.alpha_min <= self.alpha_max) {
            return bad(format!("invalid alpha range [{}, {}]", self.alpha_min, self.alpha_max));
        }
        if !(0.0 < self.scale_min && self.scale_min <= self.scale_max) {
            return bad(format!("invalid scale range [{}, {}]", self.scale_min, self.scale_max));
        }
        if !(0.0..0.2).contains(&self.smoothness) {
            return bad(format!("smoothness {} must lie in [0, 0.2) so contours stay simple", self.smoothness));
        }
        self.noise.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFlowSample {
    /// Region motion plus smoothed noise outside the regions.
    pub conditional: FlowField,
    /// `alpha * conditional` inside the regions, zero elsewhere.
    pub target: FlowField,
    pub alpha: f32,
    pub regions: Vec<RegionSpec>,
    pub union: Mask,
    pub seed: u64,
}

impl SyntheticFlowSample {
    pub fn coverage(&self) -> f64 {
        self.union.iter().filter(|&&m| m).count() as f64 / self.union.len() as f64
    }
}

/// Seed of sample `index` under `master`: the first word of the counter-indexed stream.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// One sample, a pure function of `(config, seed)`.
pub fn generate_sample(config: &NofaConfig, seed: u64) -> Result<SyntheticFlowSample> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = rng.random_range(config.alpha_min..=config.alpha_max);
    let thetas = sample_directions(config.regions, config.segments, &mut rng)?;
    let base = w.min(h) as f32;

    let mut regions: Vec<RegionSpec> = Vec::with_capacity(config.regions);
    for &theta in &thetas {
        let kind = ShapeKind::ALL[rng.random_range(0..4)];
        let scale = (rng.random_range(config.scale_min..=config.scale_max) * base).max(1.0);
        let shape = random_shape(kind, scale, config.smoothness, &mut rng);
        let mut center = (0.0, 0.0);
        for _ in 0..20 {
            center = (rng.random_range(0.0..(w - 1).max(1) as f32), rng.random_range(0.0..(h - 1).max(1) as f32));
            let far = regions.iter().all(|r| (r.center.0 - center.0).hypot(r.center.1 - center.1) >= scale / 2.0);
            if far {
                break;
            }
        }
        let magnitude = rng.random_range(config.m_min..=config.m_max);
        regions.push(RegionSpec { center, shape, theta, magnitude });
    }

    let (mut conditional, union) = compose_conditional_flow(&regions, w, h)?;
    let noise = generate_noise_flow(w, h, &config.noise, &mut rng)?;
    {
        let (u, v) = conditional.planes_mut();
        for i in (0..w * h).filter(|&i| !union[i]) {
            u[i] = noise.u()[i];
            v[i] = noise.v()[i];
        }
    }
    let target = make_target_flow(&conditional, &union, alpha)?;
    Ok(SyntheticFlowSample { conditional, target, alpha, regions, union, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub alpha: f32,
    pub conditional: String,
    pub target: String,
    pub coverage: f64,
    /// Rasterized in order; later regions win on overlap.
    pub regions: Vec<RegionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub config: NofaConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `count` samples as `.flo` pairs plus a JSON manifest into `out_dir`.
pub fn generate_dataset(count: usize, config: &NofaConfig, master_seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(Error::at(dir))?;
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let seed = sample_seed(master_seed, index as u64);
        let s = generate_sample(config, seed)?;
        let (cond_name, target_name) = (format!("cond_{index:06}.flo"), format!("target_{index:06}.flo"));
        write_flo(dir.join(&cond_name), &s.conditional)?;
        write_flo(dir.join(&target_name), &s.target)?;
        samples.push(ManifestEntry {
            index,
            seed,
            alpha: s.alpha,
            conditional: cond_name,
            target: target_name,
            coverage: s.coverage(),
            regions: s.regions,
        });
    }
    let manifest = Manifest { master_seed, config: config.clone(), samples };
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(Error::at(&path))?;
    Ok(manifest)
}

/// A `(conditional, target, alpha)` triple read back from disk.
pub type FlowPair = (FlowField, FlowField, f32);

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path: PathBuf = dir.as_ref().join(MANIFEST_NAME);
    let bytes = std::fs::read(&path).map_err(Error::at(&path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<FlowPair>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let pairs = manifest
        .samples
        .iter()
        .map(|e| Ok((read_flo(dir.join(&e.conditional))?, read_flo(dir.join(&e.target))?, e.alpha)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pairs))
}
