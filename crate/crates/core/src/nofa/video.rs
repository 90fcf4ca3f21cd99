//! Procedural test videos: a textured square sprite translating sinusoidally
//! over a textured background, with analytic ground-truth flow.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::ppm::{frame_name, write_video};
use crate::flowcore::{write_flo, FlowField, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Peak sprite displacement, pixels.
    pub amplitude: f32,
    /// Frames per oscillation cycle.
    pub period: f32,
    /// Direction of motion, radians.
    pub direction: f32,
    /// Sprite half-size as a fraction of `min(width, height)`.
    pub sprite_half: f32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, frames: 9, amplitude: 0.3, period: 8.0, direction: 0.0, sprite_half: 0.25, seed: 0 }
    }
}

/// Sum of oriented colour gratings, evaluated at continuous coordinates.
#[derive(Clone, Debug)]
pub struct Texture {
    gratings: Vec<([f32; 2], f32, [f32; 3])>,
}

impl Texture {
    pub fn random(rng: &mut impl Rng, count: usize) -> Self {
        let gratings = (0..count)
            .map(|_| {
                let freq = rng.random_range(0.15f32..0.6);
                let angle = rng.random_range(0.0..std::f32::consts::TAU);
                let amp = 0.3 / count as f32;
                let weights = [rng.random_range(0.4..1.0) * amp, rng.random_range(0.4..1.0) * amp, rng.random_range(0.4..1.0) * amp];
                ([freq * angle.cos(), freq * angle.sin()], rng.random_range(0.0..std::f32::consts::TAU), weights)
            })
            .collect();
        Self { gratings }
    }

    pub fn eval(&self, x: f32, y: f32) -> [f32; 3] {
        let mut out = [0.5f32; 3];
        for (k, phase, w) in &self.gratings {
            let s = (k[0] * x + k[1] * y + phase).sin();
            for c in 0..3 {
                out[c] += w[c] * s;
            }
        }
        out
    }
}

pub struct Scene {
    pub config: SceneConfig,
    background: Texture,
    sprite: Texture,
}

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        if config.width == 0 || config.height == 0 || config.frames == 0 || !(config.period > 0.0) || !(config.sprite_half > 0.0) {
            return Err(Error::contract(format!("invalid scene {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let background = Texture::random(&mut rng, 4);
        let sprite = Texture::random(&mut rng, 4);
        Ok(Self { config, background, sprite })
    }

    /// Sprite offset at frame `t` relative to its rest position.
    pub fn displacement(&self, t: usize) -> (f32, f32) {
        let c = &self.config;
        let s = c.amplitude as f64 * (TAU * t as f64 / c.period as f64).sin();
        ((s * (c.direction as f64).cos()) as f32, (s * (c.direction as f64).sin()) as f32)
    }

    fn centre(&self) -> (f32, f32) {
        ((self.config.width as f32 - 1.0) / 2.0, (self.config.height as f32 - 1.0) / 2.0)
    }

    fn half(&self) -> f32 {
        self.config.sprite_half * self.config.width.min(self.config.height) as f32
    }

    /// Fraction of pixel `(x, y)` covered by the sprite displaced by `d`.
    pub fn coverage(&self, x: usize, y: usize, d: (f32, f32)) -> f32 {
        let (cx, cy) = self.centre();
        let s = self.half();
        let span = |p: f32, c: f32| (s + 0.5 - (p - c).abs()).clamp(0.0, 1.0);
        span(x as f32, cx + d.0) * span(y as f32, cy + d.1)
    }

    pub fn render(&self, t: usize) -> Result<ImageBuffer> {
        let d = self.displacement(t);
        let c = &self.config;
        ImageBuffer::from_fn(c.width, c.height, 3, |x, y, ch| {
            let a = self.coverage(x, y, d);
            let bg = self.background.eval(x as f32, y as f32)[ch];
            if a == 0.0 {
                bg
            } else {
                a * self.sprite.eval(x as f32 - d.0, y as f32 - d.1)[ch] + (1.0 - a) * bg
            }
        })
    }

    /// Pixels at least half covered by the sprite at frame `t`.
    pub fn sprite_mask(&self, t: usize) -> Vec<bool> {
        let d = self.displacement(t);
        let (w, h) = (self.config.width, self.config.height);
        (0..w * h).map(|i| self.coverage(i % w, i / w, d) >= 0.5).collect()
    }

    /// Analytic flow from frame `from` to frame `to`, on the grid of `from`.
    pub fn ground_truth_flow(&self, from: usize, to: usize) -> FlowField {
        let (a, b) = (self.displacement(from), self.displacement(to));
        let step = (b.0 - a.0, b.1 - a.1);
        let mask = self.sprite_mask(from);
        let w = self.config.width;
        FlowField::from_fn(w, self.config.height, |x, y| if mask[y * w + x] { step } else { (0.0, 0.0) }).expect("finite")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub frames: Vec<ImageBuffer>,
    /// Flow from frame 0 to frame t, for every t.
    pub flows: Vec<FlowField>,
}

pub fn render_synthetic_video(config: &SceneConfig) -> Result<SyntheticVideo> {
    let scene = Scene::new(config.clone())?;
    let frames = (0..config.frames).map(|t| scene.render(t)).collect::<Result<Vec<_>>>()?;
    let flows = (0..config.frames).map(|t| scene.ground_truth_flow(0, t)).collect();
    Ok(SyntheticVideo { frames, flows })
}

/// Frames as numbered PPMs plus `flow_NNNNNN.flo` ground truth alongside.
pub fn write_synthetic_video(dir: impl AsRef<Path>, video: &SyntheticVideo) -> Result<()> {
    let dir = dir.as_ref();
    write_video(dir, &video.frames)?;
    for (i, f) in video.flows.iter().enumerate() {
        write_flo(dir.join(frame_name(i + 1).replace("frame_", "flow_").replace(".ppm", ".flo")), f)?;
    }
    Ok(())
}
