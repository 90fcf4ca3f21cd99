//! Synthesis training: L1 plus Gram texture loss, and procedural pairs.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flowcore::{FlowField, ImageBuffer};
use crate::fvs::model::{images_to_array, DecoderOverride, SynthesisModel};
use crate::fvs::style::{style_loss, StyleExtractor};
use crate::nofa::{sample_seed, Scene, SceneConfig};
use crate::substrate::{ops, AdamW, Checkpoint, Real, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FvsExample {
    pub reference: ImageBuffer,
    pub target: ImageBuffer,
    /// Reference-to-target flow.
    pub flow: FlowField,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FvsLossWeights {
    pub l1: f64,
    pub gram: f64,
}

impl Default for FvsLossWeights {
    fn default() -> Self {
        Self { l1: 1.0, gram: 40.0 }
    }
}

/// Per-level style weights `w_ℓ`.
pub const STYLE_WEIGHTS: [f64; 3] = [1.0 / 3.0; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FvsLosses {
    pub l1: f64,
    pub gram: f64,
    pub total: f64,
}

/// One AdamW step on `λ1·L1 + λG·L_G`. The losses are those before the step.
pub fn fvs_train_step<T: Real>(
    model: &mut SynthesisModel<T>,
    batch: &[FvsExample],
    weights: FvsLossWeights,
    extractor: &StyleExtractor<T>,
    optimizer: &AdamW,
    decoder: DecoderOverride,
) -> Result<FvsLosses> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    let refs: Vec<_> = batch.iter().map(|e| &e.reference).collect();
    let flows: Vec<_> = batch.iter().map(|e| &e.flow).collect();
    let targets: Vec<_> = batch.iter().map(|e| &e.target).collect();
    let target = Var::constant(images_to_array::<T>(&targets)?);

    model.params.zero_grad();
    let out = model.forward(&refs, &flows, decoder)?;
    let l1 = ops::l1_loss(&out, &target)?;
    let lg = style_loss(&out, &target, extractor, &STYLE_WEIGHTS)?;
    let total = ops::add(&ops::scale(&l1, weights.l1), &ops::scale(&lg, weights.gram))?;
    let losses = FvsLosses { l1: l1.item().f64(), gram: lg.item().f64(), total: total.item().f64() };
    if !losses.total.is_finite() {
        let peak = flows.iter().map(|f| f.max_magnitude()).fold(0f32, f32::max);
        return Err(Error::NonFinite(format!("fvs loss {losses:?} at step {}, max |flow| = {peak}", model.params.step() + 1)));
    }
    if decoder == DecoderOverride::None {
        total.backward()?;
        optimizer.step(&mut model.params)?;
    }
    Ok(losses)
}

/// A textured sprite translated by up to `max_shift` pixels over a still
/// textured background, with its analytic flow.
pub fn translating_pair(width: usize, height: usize, max_shift: f32, seed: u64) -> Result<FvsExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A quarter period puts frame 1 at the full amplitude.
    let scene = Scene::new(SceneConfig {
        width,
        height,
        frames: 2,
        amplitude: rng.random_range(0.0..=max_shift),
        period: 4.0,
        direction: rng.random_range(0.0..TAU),
        sprite_half: rng.random_range(0.15..0.35),
        seed: rng.random(),
    })?;
    Ok(FvsExample { reference: scene.render(0)?, target: scene.render(1)?, flow: scene.ground_truth_flow(0, 1) })
}

/// Runs steps `start..end` on step-indexed procedural batches.
#[allow(clippy::too_many_arguments)]
pub fn train_fvs<T: Real>(
    model: &mut SynthesisModel<T>,
    size: (usize, usize),
    max_shift: f32,
    seed: u64,
    weights: FvsLossWeights,
    optimizer: &AdamW,
    start: u64,
    end: u64,
    batch_size: usize,
    mut log: impl FnMut(u64, FvsLosses),
) -> Result<()> {
    let extractor = StyleExtractor::random(seed ^ 0x5717_u64);
    for step in start..end {
        let base = sample_seed(seed, step);
        let batch = (0..batch_size).map(|i| translating_pair(size.0, size.1, max_shift, sample_seed(base, i as u64))).collect::<Result<Vec<_>>>()?;
        let losses = fvs_train_step(model, &batch, weights, &extractor, optimizer, DecoderOverride::None)?;
        log(step, losses);
    }
    Ok(())
}

impl<T: Real> SynthesisModel<T> {
    pub fn to_checkpoint(&self, master_seed: u64) -> Checkpoint {
        let meta = serde_json::json!({ "kind": "fvs", "config": self.config });
        Checkpoint::from_params(&self.params, master_seed, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.header.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("fvs") {
            return Err(Error::Checkpoint("not a synthesis checkpoint".into()));
        }
        let config = serde_json::from_value(meta["config"].clone()).map_err(|e| Error::Checkpoint(format!("bad synthesis config: {e}")))?;
        let mut model = Self::new(config)?;
        ckpt.restore(&mut model.params)?;
        Ok(model)
    }
}
