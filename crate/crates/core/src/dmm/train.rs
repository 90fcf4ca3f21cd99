//! One optimizer step of x0-prediction training, and a step-indexed loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dmm::data::{DmmExample, Source, TrainingData};
use crate::dmm::model::{flows_to_array, MagnifierModel};
use crate::dmm::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::nofa::sample_seed;
use crate::substrate::{ops, AdamW, Array, Checkpoint, Real, Var};

/// Noises the normalized targets at uniformly drawn timesteps, predicts x0
/// and applies one AdamW step on the mean absolute error. Returns the loss.
pub fn dmm_train_step<T: Real>(
    model: &mut MagnifierModel<T>,
    batch: &[DmmExample],
    schedule: &DiffusionSchedule,
    optimizer: &AdamW,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    if schedule.f_max != model.config.f_max || schedule.steps != model.config.timesteps {
        return Err(Error::contract("schedule does not match the model configuration"));
    }
    let conds: Vec<_> = batch.iter().map(|e| &e.cond).collect();
    let targets: Vec<_> = batch.iter().map(|e| &e.target).collect();
    let cond = flows_to_array::<T>(&conds, model.config.cond_scale())?;
    let x0 = flows_to_array::<T>(&targets, schedule.f_max)?;
    let per = x0.numel() / batch.len();

    let ts: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=schedule.steps)).collect();
    let mut xt = x0.clone();
    for (b, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t)?;
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        for v in &mut xt.data_mut()[b * per..(b + 1) * per] {
            let eps: f64 = StandardNormal.sample(rng);
            *v = T::of(sa * v.f64() + sb * eps);
        }
    }
    let alphas: Vec<f64> = batch.iter().map(|e| e.alpha as f64).collect();

    model.params.zero_grad();
    let pred = model.forward(&Var::constant(xt), &Var::constant(cond.clone()), &alphas, &ts)?;
    let loss = ops::l1_loss(&pred, &Var::constant(x0.clone()))?;
    let value = loss.item().f64();
    if !value.is_finite() {
        let norm = |a: &Array<T>| a.data().iter().map(|x| x.f64().abs()).fold(0.0, f64::max);
        return Err(Error::NonFinite(format!(
            "dmm loss {value} at step {}: t = {ts:?}, max |cond| = {}, max |target| = {} (normalized)",
            model.params.step() + 1,
            norm(&cond),
            norm(&x0)
        )));
    }
    loss.backward()?;
    optimizer.step(&mut model.params)?;
    Ok(value)
}

/// Runs steps `start..end` (0-based) on step-indexed batches, calling `log`
/// after each with `(step, loss, source)`.
#[allow(clippy::too_many_arguments)]
pub fn train_dmm<T: Real>(
    model: &mut MagnifierModel<T>,
    data: &TrainingData,
    schedule: &DiffusionSchedule,
    optimizer: &AdamW,
    start: u64,
    end: u64,
    batch_size: usize,
    mut log: impl FnMut(u64, f64, Source),
) -> Result<()> {
    for step in start..end {
        let (batch, source) = data.batch(step, batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(data.seed ^ 0x5eed_d1ff, step));
        let loss = dmm_train_step(model, &batch, schedule, optimizer, &mut rng)?;
        log(step, loss, source);
    }
    Ok(())
}

impl<T: Real> MagnifierModel<T> {
    pub fn to_checkpoint(&self, master_seed: u64) -> Checkpoint {
        let meta = serde_json::json!({ "kind": "dmm", "config": self.config });
        Checkpoint::from_params(&self.params, master_seed, meta)
    }

    /// Rebuilds the model from the stored configuration and restores weights
    /// and optimizer state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.header.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("dmm") {
            return Err(Error::Checkpoint("not a magnifier checkpoint".into()));
        }
        let config = serde_json::from_value(meta["config"].clone()).map_err(|e| Error::Checkpoint(format!("bad magnifier config: {e}")))?;
        let mut model = Self::new(config)?;
        ckpt.restore(&mut model.params)?;
        Ok(model)
    }
}
