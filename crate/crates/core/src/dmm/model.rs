//! The conditional denoiser: shared downsampler, fusion, an α/t-conditioned
//! residual block, a latent U-Net producing a coarse flow, and a mask block
//! whose softmax weights drive convex upsampling back to full resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dmm::hhme::Hhme;
use crate::error::{Error, Result};
use crate::flowcore::FlowField;
use crate::substrate::nn::{sinusoidal_embedding, Conv2d, Linear, ResBlock, UNet};
use crate::substrate::{ops, Array, ParameterSet, Real, Var};

/// Spatial reduction between the flow and the latent grid.
pub const LATENT_FACTOR: usize = 8;
/// Mask-block output channels: 8·8 sub-pixels × 9 neighbours × 2 components.
pub const MASK_CHANNELS: usize = LATENT_FACTOR * LATENT_FACTOR * 9 * 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnifierConfig {
    pub widths: [usize; 3],
    pub emb_dim: usize,
    pub harmonics: usize,
    pub alpha_max: f64,
    /// Pixels per normalized unit of the target flow.
    pub f_max: f64,
    pub timesteps: usize,
    pub seed: u64,
}

impl MagnifierConfig {
    pub fn desk() -> Self {
        Self { widths: [32, 32, 64], emb_dim: 64, harmonics: 4, alpha_max: 100.0, f_max: 32.0, timesteps: 200, seed: 0 }
    }

    pub fn tiny() -> Self {
        Self { widths: [4, 4, 8], emb_dim: 8, ..Self::desk() }
    }

    /// Pixels per normalized unit of the conditional flow: a conditional
    /// vector magnified by `alpha_max` lands on the same scale as the target.
    pub fn cond_scale(&self) -> f64 {
        self.f_max / self.alpha_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.emb_dim == 0 || self.harmonics == 0 || self.timesteps == 0 {
            return Err(Error::contract(format!("invalid magnifier config {self:?}")));
        }
        if !(self.alpha_max > 0.0 && self.f_max > 0.0) {
            return Err(Error::contract("alpha_max and f_max must be positive"));
        }
        Ok(())
    }
}

impl Default for MagnifierConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub struct MagnifierModel<T> {
    pub config: MagnifierConfig,
    pub params: ParameterSet<T>,
    down: [Conv2d<T>; 3],
    fuse: Conv2d<T>,
    hhme: Hhme<T>,
    time: Linear<T>,
    inject: ResBlock<T>,
    latent: UNet<T>,
    context: Conv2d<T>,
    alpha_bias: Linear<T>,
    mask_hidden: Conv2d<T>,
    mask_out: Conv2d<T>,
}

impl<T: Real> MagnifierModel<T> {
    /// Fresh weights, a pure function of the config (including its seed).
    pub fn new(config: MagnifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParameterSet::new();
        let [c0, _, _] = config.widths;
        let e = config.emb_dim;
        let down = [
            Conv2d::new(&mut ps, "down.0", 2, c0, 3, 2, &mut rng),
            Conv2d::new(&mut ps, "down.1", c0, 2 * c0, 3, 2, &mut rng),
            Conv2d::new(&mut ps, "down.2", 2 * c0, 4 * c0, 3, 2, &mut rng),
        ];
        let fuse = Conv2d::new(&mut ps, "fuse", 8 * c0, c0, 1, 1, &mut rng);
        let hhme = Hhme::new(&mut ps, "hhme", config.harmonics, config.alpha_max, e, &mut rng);
        let time = Linear::new(&mut ps, "time", e, e, &mut rng);
        let inject = ResBlock::new(&mut ps, "inject", c0, c0, Some(e), &mut rng);
        let latent = UNet::new(&mut ps, "latent", c0, 2, config.widths, Some(e), &mut rng);
        let mw = 4 * c0;
        let context = Conv2d::new(&mut ps, "mask.context", c0 + 2, mw, 3, 1, &mut rng);
        let alpha_bias = Linear::new(&mut ps, "mask.alpha", e, mw, &mut rng);
        let mask_hidden = Conv2d::new(&mut ps, "mask.hidden", mw, mw, 3, 1, &mut rng);
        let mask_out = Conv2d::new(&mut ps, "mask.out", mw, MASK_CHANNELS, 1, 1, &mut rng);
        Ok(Self { config, params: ps, down, fuse, hhme, time, inject, latent, context, alpha_bias, mask_hidden, mask_out })
    }

    fn downsample(&self, x: &Var<T>) -> Result<Var<T>> {
        let h = ops::silu(&self.down[0].forward(x)?);
        let h = ops::silu(&self.down[1].forward(&h)?);
        self.down[2].forward(&h)
    }

    /// Predicts the clean normalized target flow `[N,2,H,W]` from the noisy
    /// one, the normalized conditional flow, per-sample factors and timesteps.
    pub fn forward(&self, x_t: &Var<T>, cond: &Var<T>, alphas: &[f64], ts: &[usize]) -> Result<Var<T>> {
        let (n, c, h, w) = x_t.value().dims4()?;
        if c != 2 || cond.shape() != x_t.shape() {
            return Err(Error::contract(format!("denoiser: x_t {:?} and cond {:?} must be matching [N,2,H,W]", x_t.shape(), cond.shape())));
        }
        if h % LATENT_FACTOR != 0 || w % LATENT_FACTOR != 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!("denoiser: {w}x{h} is not divisible by {LATENT_FACTOR}")));
        }
        if alphas.len() != n || ts.len() != n {
            return Err(Error::contract("denoiser: need one factor and one timestep per sample"));
        }
        let e_dim = self.config.emb_dim;
        let h_alpha = self.hhme.forward(alphas)?;
        let mut temb = Vec::with_capacity(n * e_dim);
        for &t in ts {
            temb.extend(sinusoidal_embedding(t as f64, e_dim).into_iter().map(T::of));
        }
        let t_emb = self.time.forward(&Var::constant(Array::new(&[n, e_dim], temb)?))?;
        let emb = ops::add(&h_alpha, &t_emb)?;

        let f = self.fuse.forward(&ops::concat_channels(&[&self.downsample(cond)?, &self.downsample(x_t)?])?)?;
        let (_, r_prime) = self.inject.forward_parts(&f, Some(&emb))?;
        let r = ops::add(&f, &r_prime)?;
        let coarse = self.latent.forward(&r, Some(&emb))?;

        let ctx = self.context.forward(&ops::concat_channels(&[&r_prime, &coarse])?)?;
        let ctx = ops::add_channel_bias(&ctx, &self.alpha_bias.forward(&h_alpha)?)?;
        let hidden = self.mask_hidden.forward(&ops::silu(&ctx))?;
        let logits = self.mask_out.forward(&ops::silu(&hidden))?;
        let (lh, lw) = (h / LATENT_FACTOR, w / LATENT_FACTOR);
        let sub = LATENT_FACTOR * LATENT_FACTOR;
        let grouped = ops::reshape(&logits, &[n, 2, 9, sub * lh * lw])?;
        let weights = ops::reshape(&ops::softmax(&grouped, 2)?, &[n, MASK_CHANNELS, lh, lw])?;
        ops::convex_upsample(&coarse, &weights, LATENT_FACTOR)
    }
}

/// Stacks flows into `[N,2,H,W]`, dividing by `scale` pixels per unit.
pub fn flows_to_array<T: Real>(flows: &[&FlowField], scale: f64) -> Result<Array<T>> {
    let Some(first) = flows.first() else {
        return Err(Error::contract("empty flow batch"));
    };
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(flows.len() * 2 * w * h);
    for f in flows {
        if f.dims() != (w, h) {
            return Err(Error::contract("flow batch dimensions differ"));
        }
        data.extend(f.u().iter().chain(f.v()).map(|&x| T::of(x as f64 / scale)));
    }
    Array::new(&[flows.len(), 2, h, w], data)
}

/// Inverse of [`flows_to_array`].
pub fn array_to_flows<T: Real>(array: &Array<T>, scale: f64) -> Result<Vec<FlowField>> {
    let (n, c, h, w) = array.dims4()?;
    if c != 2 {
        return Err(Error::contract(format!("expected 2 flow channels, got {c}")));
    }
    let plane = w * h;
    (0..n)
        .map(|b| {
            let px = |off: usize| array.data()[off..off + plane].iter().map(|x| (x.f64() * scale) as f32).collect();
            FlowField::new(w, h, px(2 * b * plane), px((2 * b + 1) * plane))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::substrate::gradcheck::{check_gradients, probe_loss, GradCheckOptions};

    fn inputs<T: Real>(n: usize, h: usize, w: usize, seed: u64) -> (Var<T>, Var<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Var::constant(Array::from_fn(&[n, 2, h, w], |_| T::of(rng.random_range(-1.0..1.0))));
        (draw(), draw())
    }

    #[test]
    fn output_shape_matches_input() {
        let model = MagnifierModel::<f32>::new(MagnifierConfig::tiny()).unwrap();
        for (h, w) in [(32, 32), (64, 64), (64, 96)] {
            let (x, c) = inputs::<f32>(1, h, w, 1);
            assert_eq!(model.forward(&x, &c, &[10.0], &[5]).unwrap().shape(), vec![1, 2, h, w]);
        }
    }

    #[test]
    fn desk_mask_block_width() {
        let model = MagnifierModel::<f32>::new(MagnifierConfig::desk()).unwrap();
        assert_eq!(model.params.get("mask.out.weight").unwrap().var.shape()[0], 1152);
        let (x, c) = inputs::<f32>(2, 32, 32, 3);
        assert_eq!(model.forward(&x, &c, &[1.0, 2.0], &[1, 200]).unwrap().shape(), vec![2, 2, 32, 32]);
    }

    #[test]
    fn rejects_indivisible_and_mismatched_inputs() {
        let model = MagnifierModel::<f32>::new(MagnifierConfig::tiny()).unwrap();
        let (x, c) = inputs::<f32>(1, 12, 16, 1);
        assert!(matches!(model.forward(&x, &c, &[1.0], &[1]), Err(Error::Contract(_))));
        let (x, c) = inputs::<f32>(1, 16, 16, 1);
        assert!(model.forward(&x, &c, &[1.0, 2.0], &[1]).is_err());
    }

    #[test]
    fn magnification_factor_reaches_the_output() {
        let model = MagnifierModel::<f32>::new(MagnifierConfig::desk()).unwrap();
        let (x, c) = inputs::<f32>(1, 32, 32, 4);
        let lo = model.forward(&x, &c, &[10.0], &[50]).unwrap().to_vec();
        let hi = model.forward(&x, &c, &[90.0], &[50]).unwrap().to_vec();
        let diff = lo.iter().zip(&hi).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn construction_is_deterministic() {
        let (x, c) = inputs::<f32>(1, 16, 16, 9);
        let run = || MagnifierModel::<f32>::new(MagnifierConfig::tiny()).unwrap().forward(&x, &c, &[33.0], &[7]).unwrap().to_vec();
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn flow_array_roundtrip() {
        let f = FlowField::from_fn(4, 3, |x, y| (x as f32 * 0.5, y as f32 - 1.0)).unwrap();
        let a = flows_to_array::<f32>(&[&f, &f.negated()], 2.0).unwrap();
        assert_eq!(a.shape(), &[2, 2, 3, 4]);
        let back = array_to_flows(&a, 2.0).unwrap();
        assert_eq!(back[0], f);
        assert_eq!(back[1], f.negated());
    }

    #[test]
    fn end_to_end_gradients_on_tiny_model() {
        let model = MagnifierModel::<f64>::new(MagnifierConfig::tiny()).unwrap();
        let (x, c) = inputs::<f64>(1, 8, 8, 21);
        let params: Vec<Var<f64>> = model.params.iter().map(|p| p.var.clone()).collect();
        let opts = GradCheckOptions { max_per_input: 6, ..Default::default() };
        let report = check_gradients(&params, opts, || {
            let y = model.forward(&x, &c, &[37.0], &[60])?;
            probe_loss(&y, 3)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
    }
}
