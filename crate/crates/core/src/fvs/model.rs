//! Multi-scale synthesis: per level, warp the reference and its features by
//! the (negated) flow, fuse with the upsampled previous estimate and blend a
//! learned residual with the warped image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{FlowField, ImageBuffer};
use crate::fvs::pyramid::{build_pyramid, num_scales, R_MIN};
use crate::substrate::nn::{Conv2d, UNet};
use crate::substrate::{no_grad, ops, Array, ParameterSet, Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub widths: [usize; 3],
    /// Encoder output channels, the same at every scale.
    pub features: usize,
    pub r_min: usize,
    /// Pixels per unit of the flow fed to the fusion network.
    pub flow_scale: f64,
    /// Initial blend-logit bias: training starts close to pure warping.
    pub blend_bias: f64,
    pub seed: u64,
}

impl SynthesisConfig {
    pub fn desk() -> Self {
        Self { widths: [8, 8, 16], features: 8, r_min: R_MIN, flow_scale: 8.0, blend_bias: 4.0, seed: 0 }
    }

    pub fn tiny() -> Self {
        Self { widths: [4, 4, 8], features: 4, ..Self::desk() }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Replaces the learned decoder, for exactness checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecoderOverride {
    #[default]
    None,
    /// `R = 0`, blend logits `+30`: every level passes the warped image through.
    Identity,
}

/// Logit whose logistic value is 1.0 in single precision.
pub const SATURATED_LOGIT: f64 = 30.0;

/// `x = I_warp ⊙ σ(w) + R`, with `w` broadcast over colour channels.
pub fn blend_scale<T: Real>(i_warp: &Var<T>, residual: &Var<T>, logits: &Var<T>) -> Result<Var<T>> {
    ops::add(&ops::mul_channel_broadcast(i_warp, &ops::sigmoid(logits))?, residual)
}

pub struct SynthesisModel<T> {
    pub config: SynthesisConfig,
    pub params: ParameterSet<T>,
    encoder: [Conv2d<T>; 2],
    fusion: UNet<T>,
    decoder: Conv2d<T>,
}

pub fn images_to_array<T: Real>(images: &[&ImageBuffer]) -> Result<Array<T>> {
    let Some(first) = images.first() else {
        return Err(Error::contract("empty image batch"));
    };
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.dims() != (w, h) || img.channels() != 3 {
            return Err(Error::contract("image batch must share dimensions and have 3 channels"));
        }
        for p in img.planes() {
            data.extend(p.into_iter().map(|x| T::of(x as f64)));
        }
    }
    Array::new(&[images.len(), 3, h, w], data)
}

pub fn array_to_images<T: Real>(array: &Array<T>, clamp: bool) -> Result<Vec<ImageBuffer>> {
    let (n, c, h, w) = array.dims4()?;
    let plane = w * h;
    (0..n)
        .map(|b| {
            let planes: Vec<Vec<f32>> = (0..c)
                .map(|ch| {
                    array.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                        .iter()
                        .map(|x| {
                            let v = x.f64() as f32;
                            if clamp { v.clamp(0.0, 1.0) } else { v }
                        })
                        .collect()
                })
                .collect();
            ImageBuffer::from_planes(w, h, &planes)
        })
        .collect()
}

fn flows_to_array<T: Real>(flows: &[&FlowField], factor: f64) -> Result<Array<T>> {
    crate::dmm::flows_to_array(flows, 1.0 / factor)
}

impl<T: Real> SynthesisModel<T> {
    pub fn new(config: SynthesisConfig) -> Result<Self> {
        if config.widths.contains(&0) || config.features == 0 || !(config.flow_scale > 0.0) {
            return Err(Error::contract(format!("invalid synthesis config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParameterSet::new();
        let fe = config.features;
        let c0 = config.widths[0];
        let encoder = [Conv2d::new(&mut ps, "encoder.0", 3, fe, 3, 1, &mut rng), Conv2d::new(&mut ps, "encoder.1", fe, fe, 3, 1, &mut rng)];
        let fusion = UNet::new(&mut ps, "fusion", 3 + fe + 2, c0, config.widths, None, &mut rng);
        let decoder = Conv2d::new(&mut ps, "decoder", c0, 4, 3, 1, &mut rng);
        {
            decoder.weight.value_mut().data_mut().iter_mut().for_each(|x| *x = T::zero());
            decoder.bias.value_mut().data_mut()[3] = T::of(config.blend_bias);
        }
        Ok(Self { config, params: ps, encoder, fusion, decoder })
    }

    fn encode(&self, x: &Var<T>) -> Result<Var<T>> {
        let h = ops::silu(&self.encoder[0].forward(x)?);
        self.encoder[1].forward(&h)
    }

    /// Unclamped finest-level output `[N,3,H,W]` for reference frames and
    /// reference-to-target flows (pixels).
    pub fn forward(&self, references: &[&ImageBuffer], flows: &[&FlowField], decoder: DecoderOverride) -> Result<Var<T>> {
        if references.len() != flows.len() || references.is_empty() {
            return Err(Error::contract("synthesis: need one flow per reference frame"));
        }
        let (w, h) = references[0].dims();
        let levels = num_scales(h, w, self.config.r_min);
        let pyramids = references.iter().zip(flows).map(|(i, f)| build_pyramid(i, f, levels)).collect::<Result<Vec<_>>>()?;

        let mut prev: Option<Var<T>> = None;
        for k in 0..levels {
            let imgs: Vec<_> = pyramids.iter().map(|p| &p[k].image).collect();
            let taus: Vec<_> = pyramids.iter().map(|p| &p[k].flow).collect();
            let image = Var::constant(images_to_array::<T>(&imgs)?);
            let tau = flows_to_array::<T>(&taus, 1.0)?;
            let pull = tau.map(|x| -x);
            let i_warp = ops::warp(&image, &pull)?;
            let (residual, logits) = match decoder {
                DecoderOverride::Identity => {
                    let (n, _, lh, lw) = tau.dims4()?;
                    (Var::constant(Array::zeros(&[n, 3, lh, lw])), Var::constant(Array::filled(&[n, 1, lh, lw], T::of(SATURATED_LOGIT))))
                }
                DecoderOverride::None => {
                    let f_warp = ops::warp(&self.encode(&image)?, &pull)?;
                    let y = match &prev {
                        None => i_warp.clone(),
                        Some(x) => {
                            let (_, _, lh, lw) = tau.dims4()?;
                            ops::resize_bilinear(x, lh, lw)?
                        }
                    };
                    let tau_in = Var::constant(tau.map(|x| x / T::of(self.config.flow_scale)));
                    let hidden = self.fusion.forward(&ops::concat_channels(&[&y, &f_warp, &tau_in])?, None)?;
                    let out = self.decoder.forward(&ops::silu(&hidden))?;
                    (ops::slice_channels(&out, 0, 3)?, ops::slice_channels(&out, 3, 1)?)
                }
            };
            prev = Some(blend_scale(&i_warp, &residual, &logits)?);
        }
        Ok(prev.expect("at least one level"))
    }

    /// Magnified frame: the reference re-rendered under `flow`, clamped to [0, 1].
    pub fn synthesize_frame(&self, reference: &ImageBuffer, flow: &FlowField, decoder: DecoderOverride) -> Result<ImageBuffer> {
        let out = no_grad(|| self.forward(&[reference], &[flow], decoder))?;
        let arr = out.value().clone();
        Ok(array_to_images(&arr, true)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nofa::video::Texture;
    use rand::Rng;

    fn textured(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let tex = Texture::random(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        ImageBuffer::from_fn(w, h, 3, |x, y, c| tex.eval(x as f32, y as f32)[c]).unwrap()
    }

    #[test]
    fn blend_formula_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut draw = |c| Var::constant(Array::from_fn(&[2, c, 3, 3], |_| rng.random_range(-3.0f64..3.0)));
        let (iw, r, w) = (draw(3), draw(3), draw(1));
        let x = blend_scale(&iw, &r, &w).unwrap().to_vec();
        let (iw, r, w) = (iw.to_vec(), r.to_vec(), w.to_vec());
        for b in 0..2 {
            for c in 0..3 {
                for p in 0..9 {
                    let i = (b * 3 + c) * 9 + p;
                    let s = 1.0 / (1.0 + (-w[b * 9 + p]).exp());
                    assert!((x[i] - (iw[i] * s + r[i])).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn blend_limits() {
        let iw = Var::constant(Array::filled(&[1, 3, 2, 2], 0.8f32));
        let r = Var::constant(Array::filled(&[1, 3, 2, 2], 0.1f32));
        let logit = |v: f32| Var::constant(Array::filled(&[1, 1, 2, 2], v));
        let zero_r = Var::constant(Array::zeros(&[1, 3, 2, 2]));
        assert!(blend_scale(&iw, &zero_r, &logit(30.0)).unwrap().to_vec().iter().all(|&x| x == 0.8));
        assert!(blend_scale(&iw, &r, &logit(-30.0)).unwrap().to_vec().iter().all(|&x| (x - 0.1).abs() < 1e-6));
        assert!(blend_scale(&iw, &r, &logit(0.0)).unwrap().to_vec().iter().all(|&x| (x - 0.5).abs() < 1e-6));
    }

    #[test]
    fn identity_override_with_zero_flow_is_exact_at_any_scale_count() {
        let model = SynthesisModel::<f32>::new(SynthesisConfig::tiny()).unwrap();
        for (w, h) in [(32, 32), (64, 64), (96, 130), (256, 256)] {
            let img = textured(w, h, 1);
            let out = model.synthesize_frame(&img, &FlowField::zeros(w, h), DecoderOverride::Identity).unwrap();
            let err = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
            assert!(err <= 1e-6, "{w}x{h}: {err}");
        }
    }

    #[test]
    fn identity_override_translates_exactly() {
        let model = SynthesisModel::<f32>::new(SynthesisConfig::tiny()).unwrap();
        let (w, h) = (64, 64);
        let img = textured(w, h, 3);
        let out = model.synthesize_frame(&img, &FlowField::constant(w, h, 3.0, -2.0), DecoderOverride::Identity).unwrap();
        for y in 0..h {
            for x in 0..w {
                let sx = (x as isize - 3).clamp(0, w as isize - 1) as usize;
                let sy = (y as isize + 2).clamp(0, h as isize - 1) as usize;
                for c in 0..3 {
                    assert_eq!(out.get(x, y, c), img.get(sx, sy, c), "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn learned_decoder_output_shape() {
        let model = SynthesisModel::<f32>::new(SynthesisConfig::tiny()).unwrap();
        let img = textured(130, 96, 4);
        let out = model.forward(&[&img], &[&FlowField::constant(130, 96, 1.0, 0.5)], DecoderOverride::None).unwrap();
        assert_eq!(out.shape(), vec![1, 3, 96, 130]);
    }
}
