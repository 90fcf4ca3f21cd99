//! Parameterized layers built from the primitives.

use rand::Rng;

use crate::error::Result;
use crate::substrate::{ops, Array, ParameterSet, Real, Var};

/// Kaiming-uniform (fan-in) weights.
pub fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Array<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Array::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

pub struct Conv2d<T> {
    pub weight: Var<T>,
    pub bias: Var<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    /// Square `k x k` convolution with "same" padding for odd `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(ps: &mut ParameterSet<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.register(format!("{name}.weight"), kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng));
        let bias = ps.register(format!("{name}.bias"), Array::zeros(&[cout]));
        Self { weight, bias, stride, pad: k / 2 }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        ops::conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
    }
}

pub struct Linear<T> {
    pub weight: Var<T>,
    pub bias: Var<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(ps: &mut ParameterSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.register(format!("{name}.weight"), kaiming_uniform(&[outputs, inputs], inputs, rng));
        let bias = ps.register(format!("{name}.bias"), Array::zeros(&[outputs]));
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        ops::linear(x, &self.weight, Some(&self.bias))
    }
}

pub struct GroupNorm<T> {
    pub gain: Var<T>,
    pub shift: Var<T>,
    pub groups: usize,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(ps: &mut ParameterSet<T>, name: &str, channels: usize) -> Self {
        let gain = ps.register(format!("{name}.gain"), Array::filled(&[channels], T::one()));
        let shift = ps.register(format!("{name}.shift"), Array::zeros(&[channels]));
        Self { gain, shift, groups: default_groups(channels) }
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        ops::group_norm(x, self.groups, &self.gain, &self.shift, 1e-5)
    }
}

/// Largest of {8, 4, 2, 1} dividing `channels`.
pub fn default_groups(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

/// Sinusoidal embedding of a scalar position (e.g. a diffusion timestep).
pub fn sinusoidal_embedding(position: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

/// Pre-activation residual block with an optional per-channel embedding bias.
pub struct ResBlock<T> {
    norm1: GroupNorm<T>,
    conv1: Conv2d<T>,
    emb: Option<Linear<T>>,
    norm2: GroupNorm<T>,
    conv2: Conv2d<T>,
    skip: Option<Conv2d<T>>,
}

impl<T: Real> ResBlock<T> {
    pub fn new(ps: &mut ParameterSet<T>, name: &str, cin: usize, cout: usize, emb_dim: Option<usize>, rng: &mut impl Rng) -> Self {
        Self {
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), cin),
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, 1, rng),
            emb: emb_dim.map(|e| Linear::new(ps, &format!("{name}.emb"), e, cout, rng)),
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), cout),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(ps, &format!("{name}.skip"), cin, cout, 1, 1, rng)),
        }
    }

    /// `(shortcut, residual branch)`; the block output is their sum.
    pub fn forward_parts(&self, x: &Var<T>, emb: Option<&Var<T>>) -> Result<(Var<T>, Var<T>)> {
        let mut h = self.conv1.forward(&ops::silu(&self.norm1.forward(x)?))?;
        if let (Some(proj), Some(e)) = (&self.emb, emb) {
            h = ops::add_channel_bias(&h, &proj.forward(&ops::silu(e))?)?;
        }
        let h = self.conv2.forward(&ops::silu(&self.norm2.forward(&h)?))?;
        let shortcut = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((shortcut, h))
    }

    pub fn forward(&self, x: &Var<T>, emb: Option<&Var<T>>) -> Result<Var<T>> {
        let (s, h) = self.forward_parts(x, emb)?;
        ops::add(&s, &h)
    }
}

/// Halves both extents by average pooling when both are even and above one;
/// otherwise passes the input through, so tiny latents still work.
pub fn maybe_down<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let (_, _, h, w) = x.value().dims4()?;
    if h > 1 && w > 1 && h % 2 == 0 && w % 2 == 0 {
        ops::avg_pool2(x)
    } else {
        Ok(x.clone())
    }
}

/// Bilinear resize of `x` to the spatial size of `like` (a no-op when equal).
pub fn resize_like<T: Real>(x: &Var<T>, like: &Var<T>) -> Result<Var<T>> {
    let (_, _, h, w) = x.value().dims4()?;
    let (_, _, th, tw) = like.value().dims4()?;
    if (h, w) == (th, tw) {
        Ok(x.clone())
    } else {
        ops::resize_bilinear(x, th, tw)
    }
}

/// Three-stage U-Net with stage widths `(c0, c1, c2)`.
pub struct UNet<T> {
    enc0: ResBlock<T>,
    enc1: ResBlock<T>,
    mid1: ResBlock<T>,
    mid2: ResBlock<T>,
    dec1: ResBlock<T>,
    dec0: ResBlock<T>,
    out_conv: Conv2d<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(ps: &mut ParameterSet<T>, name: &str, cin: usize, cout: usize, widths: [usize; 3], emb_dim: Option<usize>, rng: &mut impl Rng) -> Self {
        let [c0, c1, c2] = widths;
        Self {
            enc0: ResBlock::new(ps, &format!("{name}.enc0"), cin, c0, emb_dim, rng),
            enc1: ResBlock::new(ps, &format!("{name}.enc1"), c0, c1, emb_dim, rng),
            mid1: ResBlock::new(ps, &format!("{name}.mid1"), c1, c2, emb_dim, rng),
            mid2: ResBlock::new(ps, &format!("{name}.mid2"), c2, c2, emb_dim, rng),
            dec1: ResBlock::new(ps, &format!("{name}.dec1"), c2 + c1, c1, emb_dim, rng),
            dec0: ResBlock::new(ps, &format!("{name}.dec0"), c1 + c0, c0, emb_dim, rng),
            out_conv: Conv2d::new(ps, &format!("{name}.out"), c0, cout, 3, 1, rng),
        }
    }

    pub fn forward(&self, x: &Var<T>, emb: Option<&Var<T>>) -> Result<Var<T>> {
        let e0 = self.enc0.forward(x, emb)?;
        let e1 = self.enc1.forward(&maybe_down(&e0)?, emb)?;
        let m = self.mid1.forward(&maybe_down(&e1)?, emb)?;
        let m = self.mid2.forward(&m, emb)?;
        let d1 = self.dec1.forward(&ops::concat_channels(&[&resize_like(&m, &e1)?, &e1])?, emb)?;
        let d0 = self.dec0.forward(&ops::concat_channels(&[&resize_like(&d1, &e0)?, &e0])?, emb)?;
        // No normalization in the head: outputs must keep the input's absolute scale.
        self.out_conv.forward(&ops::silu(&d0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layers_register_named_parameters() {
        let mut ps = ParameterSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new(&mut ps, "c", 2, 3, 3, 2, &mut rng);
        Linear::new(&mut ps, "l", 4, 5, &mut rng);
        GroupNorm::new(&mut ps, "n", 6);
        assert_eq!(ps.len(), 6);
        assert_eq!(ps.get("c.weight").unwrap().var.shape(), vec![3, 2, 3, 3]);
        let bound = (6.0f32 / 18.0).sqrt();
        assert!(conv.weight.to_vec().iter().all(|w| w.abs() <= bound));
        let y = conv.forward(&Var::constant(Array::zeros(&[1, 2, 8, 8]))).unwrap();
        assert_eq!(y.shape(), vec![1, 3, 4, 4]);
    }

    #[test]
    fn unet_keeps_spatial_size_for_odd_and_tiny_inputs() {
        let mut ps = ParameterSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::new(&mut ps, "u", 3, 2, [4, 4, 8], Some(6), &mut rng);
        let emb = Var::constant(Array::zeros(&[2, 6]));
        for (h, w) in [(1, 1), (4, 4), (5, 6), (8, 12)] {
            let y = net.forward(&Var::constant(Array::filled(&[2, 3, h, w], 0.5)), Some(&emb)).unwrap();
            assert_eq!(y.shape(), vec![2, 2, h, w]);
        }
    }

    #[test]
    fn group_counts() {
        assert_eq!(default_groups(32), 8);
        assert_eq!(default_groups(4), 4);
        assert_eq!(default_groups(6), 2);
        assert_eq!(default_groups(3), 1);
    }

    #[test]
    fn embedding_at_zero() {
        let e = sinusoidal_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
