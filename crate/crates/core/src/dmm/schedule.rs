//! Forward diffusion: noise schedules and closed-form noising.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::contract(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Per-step variances indexed `1..=T`; index 0 is the clean signal (ᾱ = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// Flow magnitude, pixels, mapped to one normalized unit.
    pub f_max: f64,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn make_schedule(steps: usize, kind: ScheduleKind, f_max: f64) -> Result<DiffusionSchedule> {
    if steps == 0 || !(f_max > 0.0) {
        return Err(Error::contract(format!("make_schedule: T = {steps}, F_max = {f_max}")));
    }
    let t_max = steps as f64;
    let mut betas = vec![0.0; steps + 1];
    match kind {
        ScheduleKind::Cosine => {
            let f = |t: f64| (((t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * FRAC_PI_2).cos().powi(2);
            for t in 1..=steps {
                betas[t] = (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(0.0, MAX_BETA);
            }
        }
        ScheduleKind::Linear => {
            // The usual 1e-4..0.02 range, rescaled so shorter chains end equally noisy.
            let scale = 1000.0 / t_max;
            let (lo, hi) = (1e-4 * scale, (0.02 * scale).min(MAX_BETA));
            for t in 1..=steps {
                let frac = if steps == 1 { 1.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
                betas[t] = lo + (hi - lo) * frac;
            }
        }
    }
    let mut alpha_bars = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bars[t] = alpha_bars[t - 1] * (1.0 - betas[t]);
    }
    Ok(DiffusionSchedule { steps, betas, alpha_bars, f_max })
}

impl DiffusionSchedule {
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| Error::contract(format!("timestep {t} outside [0, {}]", self.steps)))
    }

    /// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·noise`, elementwise.
    pub fn q_sample(&self, x0: &[f32], t: usize, noise: &[f32]) -> Result<Vec<f32>> {
        if t == 0 || t > self.steps {
            return Err(Error::contract(format!("q_sample: t = {t} outside [1, {}]", self.steps)));
        }
        if x0.len() != noise.len() {
            return Err(Error::contract("q_sample: x0 and noise lengths differ"));
        }
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(noise).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
    }

    /// Descending timesteps for a strided sampler of `count` steps.
    pub fn strided_timesteps(&self, count: usize) -> Result<Vec<usize>> {
        if count == 0 || count > self.steps {
            return Err(Error::contract(format!("sampler steps {count} must be in [1, {}]", self.steps)));
        }
        let mut ts: Vec<usize> = (0..count)
            .map(|i| if count == 1 { self.steps } else { 1 + ((self.steps - 1) * i + (count - 1) / 2) / (count - 1) })
            .collect();
        ts.dedup();
        ts.reverse();
        Ok(ts)
    }
}
