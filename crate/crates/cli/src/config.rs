//! Flat `key = value` run configuration with a closed key registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use magniflow::dmm::{make_schedule, DiffusionSchedule, MagnifierConfig, RealFlowConfig, ScheduleKind};
use magniflow::fvs::{FvsLossWeights, SynthesisConfig};
use magniflow::nofa::{NofaConfig, NoiseModel};
use magniflow::substrate::AdamW;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    /// Three comma-separated positive integers.
    Widths,
    Choice(&'static [&'static str]),
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

macro_rules! key {
    ($name:literal, $default:literal, $kind:expr, $help:literal) => {
        Key { name: $name, default: $default, kind: $kind, help: $help }
    };
}

use Kind::*;

pub const KEYS: &[Key] = &[
    key!("seed", "0", Int, "master seed (MAGNIFLOW_SEED overrides)"),
    key!("deterministic", "true", Bool, "single-threaded, bit-reproducible execution"),
    key!("width", "32", Int, "synthetic flow width"),
    key!("height", "32", Int, "synthetic flow height"),
    key!("regions", "5", Int, "motion regions per synthetic sample"),
    key!("segments", "36", Int, "direction segments"),
    key!("m_min", "0", Float, "minimum region motion, px/frame"),
    key!("m_max", "0.3", Float, "maximum region motion, px/frame"),
    key!("alpha_min", "0", Float, "minimum magnification factor"),
    key!("alpha_max", "100", Float, "maximum magnification factor"),
    key!("noise_mu", "-4.303", Float, "log-normal noise location"),
    key!("noise_sigma", "0.527", Float, "log-normal noise scale"),
    key!("noise_blur", "3", Float, "noise smoothing sigma, px"),
    key!("scale_min", "0.1", Float, "region size, fraction of min(width, height)"),
    key!("scale_max", "0.22", Float, "region size, fraction of min(width, height)"),
    key!("smoothness", "0.15", Float, "fractal contour harmonic bound"),
    key!("timesteps", "1000", Int, "diffusion steps T"),
    key!("schedule", "cosine", Choice(&["cosine", "linear"]), "noise schedule"),
    key!("sample_steps", "50", Int, "DDIM sampling steps"),
    key!("f_max", "32", Float, "flow normalization, px"),
    key!("widths", "256,256,512", Widths, "magnifier U-Net stage widths"),
    key!("emb_dim", "128", Int, "magnifier embedding width"),
    key!("harmonics", "4", Int, "harmonic frequencies K"),
    key!("lr", "2e-4", Float, "AdamW peak learning rate"),
    key!("lr_schedule", "cosine", Choice(&["constant", "cosine"]), "learning-rate decay over the run"),
    key!("weight_decay", "0.01", Float, "AdamW decoupled weight decay"),
    key!("batch", "4", Int, "batch size"),
    key!("steps", "20000", Int, "training steps"),
    key!("checkpoint_every", "1000", Int, "steps between checkpoints"),
    key!("real_pairs", "true", Bool, "alternate synthetic batches with estimated-flow video pairs"),
    key!("photon_noise", "0.01", Float, "photon-noise strength for video pairs"),
    key!("lk_levels", "3", Int, "Lucas-Kanade pyramid levels"),
    key!("lk_window", "9", Int, "Lucas-Kanade window size"),
    key!("lambda_l1", "1", Float, "synthesis L1 weight"),
    key!("lambda_g", "40", Float, "synthesis Gram-loss weight"),
    key!("fvs_widths", "8,8,16", Widths, "synthesis U-Net stage widths"),
    key!("fvs_features", "8", Int, "synthesis encoder channels"),
    key!("fvs_size", "128", Int, "synthesis training frame size"),
    key!("fvs_max_shift", "4", Float, "synthesis training sprite shift, px"),
    key!("r_min", "64", Int, "coarsest synthesis resolution"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect() }
    }
}

fn check(kind: Kind, value: &str) -> bool {
    match kind {
        Int => value.parse::<u64>().is_ok(),
        Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Bool => matches!(value, "true" | "false"),
        Widths => {
            let parts: Vec<_> = value.split(',').map(|p| p.trim().parse::<usize>()).collect();
            parts.len() == 3 && parts.iter().all(|p| matches!(p, Ok(n) if *n > 0))
        }
        Choice(options) => options.contains(&value),
    }
}

impl RunConfig {
    pub fn key(name: &str) -> Option<&'static Key> {
        KEYS.iter().find(|k| k.name == name)
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<(), ConfigError> {
        let key = Self::key(name).ok_or_else(|| ConfigError(format!("unknown config key `{name}`")))?;
        let value = value.trim();
        if !check(key.kind, value) {
            return Err(ConfigError(format!("invalid value `{value}` for config key `{name}` ({:?})", key.kind)));
        }
        self.values.insert(key.name, value.to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies the `MAGNIFLOW_SEED` override, if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(seed) = std::env::var("MAGNIFLOW_SEED") {
            self.set("seed", &seed).map_err(|_| ConfigError(format!("MAGNIFLOW_SEED must be an unsigned integer, got `{seed}`")))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{} = {}\n", k.name, self.values[k.name])).collect()
    }

    fn raw(&self, name: &str) -> &str {
        self.values.get(name).unwrap_or_else(|| panic!("unregistered key {name}"))
    }

    pub fn u64(&self, name: &str) -> u64 {
        self.raw(name).parse().expect("validated on set")
    }

    pub fn usize(&self, name: &str) -> usize {
        self.u64(name) as usize
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.raw(name).parse().expect("validated on set")
    }

    pub fn f32(&self, name: &str) -> f32 {
        self.f64(name) as f32
    }

    pub fn bool(&self, name: &str) -> bool {
        self.raw(name) == "true"
    }

    pub fn str(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn widths(&self, name: &str) -> [usize; 3] {
        let v: Vec<usize> = self.raw(name).split(',').map(|p| p.trim().parse().expect("validated on set")).collect();
        [v[0], v[1], v[2]]
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn nofa(&self) -> Result<NofaConfig> {
        let cfg = NofaConfig {
            width: self.usize("width"),
            height: self.usize("height"),
            regions: self.usize("regions"),
            segments: self.usize("segments"),
            m_min: self.f32("m_min"),
            m_max: self.f32("m_max"),
            alpha_min: self.f32("alpha_min"),
            alpha_max: self.f32("alpha_max"),
            noise: NoiseModel { mu: self.f64("noise_mu"), sigma: self.f64("noise_sigma"), blur_sigma: self.f32("noise_blur") },
            scale_min: self.f32("scale_min"),
            scale_max: self.f32("scale_max"),
            smoothness: self.f32("smoothness"),
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn magnifier(&self) -> Result<MagnifierConfig> {
        let cfg = MagnifierConfig {
            widths: self.widths("widths"),
            emb_dim: self.usize("emb_dim"),
            harmonics: self.usize("harmonics"),
            alpha_max: self.f64("alpha_max"),
            f_max: self.f64("f_max"),
            timesteps: self.usize("timesteps"),
            seed: self.seed(),
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let kind: ScheduleKind = self.str("schedule").parse().map_err(|e: magniflow::Error| ConfigError(e.to_string()))?;
        Ok(make_schedule(self.usize("timesteps"), kind, self.f64("f_max")).map_err(|e| ConfigError(e.to_string()))?)
    }

    pub fn real_pairs(&self) -> RealFlowConfig {
        RealFlowConfig {
            width: self.usize("width"),
            height: self.usize("height"),
            amplitude_max: self.f32("m_max"),
            alpha_max: self.f32("alpha_max"),
            photon_noise: self.f32("photon_noise"),
            levels: self.usize("lk_levels"),
            window: self.usize("lk_window"),
        }
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            widths: self.widths("fvs_widths"),
            features: self.usize("fvs_features"),
            r_min: self.usize("r_min"),
            seed: self.seed(),
            ..SynthesisConfig::desk()
        }
    }

    pub fn loss_weights(&self) -> FvsLossWeights {
        FvsLossWeights { l1: self.f64("lambda_l1"), gram: self.f64("lambda_g") }
    }

    /// Optimizer for `step` of a `total`-step run.
    pub fn optimizer(&self, step: u64, total: u64) -> AdamW {
        let peak = self.f64("lr");
        let lr = match self.str("lr_schedule") {
            "cosine" if total > 0 => peak * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
            _ => peak,
        };
        AdamW { lr, weight_decay: self.f64("weight_decay"), ..AdamW::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.nofa()?;
        self.magnifier()?;
        self.schedule()?;
        if self.usize("batch") == 0 || self.usize("sample_steps") == 0 || self.usize("sample_steps") > self.usize("timesteps") {
            bail!(ConfigError("batch must be positive and 1 <= sample_steps <= timesteps".into()));
        }
        Ok(())
    }
}
