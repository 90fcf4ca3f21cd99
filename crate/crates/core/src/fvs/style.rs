//! Gram-matrix texture loss over a frozen random convolution pyramid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::substrate::nn::Conv2d;
use crate::substrate::{ops, ParameterSet, Real, Var};

/// Three conv stages with fixed seeded weights; never trained.
pub struct StyleExtractor<T> {
    stages: Vec<Conv2d<T>>,
    _params: ParameterSet<T>,
}

impl<T: Real> StyleExtractor<T> {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let stages = vec![
            Conv2d::new(&mut ps, "style.0", 3, 8, 3, 1, &mut rng),
            Conv2d::new(&mut ps, "style.1", 8, 16, 3, 2, &mut rng),
            Conv2d::new(&mut ps, "style.2", 16, 16, 3, 2, &mut rng),
        ];
        Self { stages, _params: ps }
    }

    pub fn levels(&self) -> usize {
        self.stages.len()
    }

    pub fn features(&self, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for conv in &self.stages {
            h = ops::silu(&conv.forward(&h)?);
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// `Σ_ℓ w_ℓ / (4 H² W² N²) · Σ_ij (G_ij − A_ij)²` per image, averaged over the
/// batch, with `G` and `A` the Gram matrices of the two feature stacks.
pub fn style_loss_from_features<T: Real>(ours: &[Var<T>], theirs: &[Var<T>], weights: &[f64]) -> Result<Var<T>> {
    if ours.len() != theirs.len() || ours.len() != weights.len() || ours.is_empty() {
        return Err(Error::contract("style loss: feature levels and weights must match"));
    }
    let mut total: Option<Var<T>> = None;
    for ((f, a), &w) in ours.iter().zip(theirs).zip(weights) {
        let (n, c, h, wd) = f.value().dims4()?;
        if a.shape() != f.shape() {
            return Err(Error::contract("style loss: feature shapes differ"));
        }
        let norm = 4.0 * ((h * wd) as f64).powi(2) * (c as f64).powi(2) * n as f64;
        let diff = ops::sub(&ops::gram(f)?, &ops::gram(a)?)?;
        let term = ops::scale(&ops::sum(&ops::square(&diff)), w / norm);
        total = Some(match total {
            None => term,
            Some(t) => ops::add(&t, &term)?,
        });
    }
    Ok(total.expect("non-empty"))
}

pub fn style_loss<T: Real>(ours: &Var<T>, theirs: &Var<T>, extractor: &StyleExtractor<T>, weights: &[f64]) -> Result<Var<T>> {
    style_loss_from_features(&extractor.features(ours)?, &extractor.features(theirs)?, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::Array;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Var<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Var::constant(Array::from_fn(shape, |_| rng.random_range(0.0..1.0)))
    }

    #[test]
    fn gram_matches_double_loop() {
        let f = random(&[1, 3, 4, 4], 1);
        let g = ops::gram(&f).unwrap().to_vec();
        let d = f.to_vec();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..16).map(|p| d[i * 16 + p] * d[j * 16 + p]).sum();
                assert!((g[i * 3 + j] - dot).abs() <= 1e-5);
                assert_eq!(g[i * 3 + j], g[j * 3 + i]);
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        for seed in 0..20 {
            let g = ops::gram(&random(&[1, 4, 3, 3], seed)).unwrap().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..50 {
                let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q: f64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| v[i] * g[i * 4 + j] * v[j]).sum();
                assert!(q >= -1e-5);
            }
        }
    }

    #[test]
    fn identical_images_have_zero_loss_and_arguments_commute() {
        let ex = StyleExtractor::<f64>::random(3);
        let (a, b) = (random(&[1, 3, 8, 8], 4), random(&[1, 3, 8, 8], 5));
        let w = [1.0 / 3.0; 3];
        assert_eq!(style_loss(&a, &a, &ex, &w).unwrap().item(), 0.0);
        let ab = style_loss(&a, &b, &ex, &w).unwrap().item();
        let ba = style_loss(&b, &a, &ex, &w).unwrap().item();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() <= 1e-12 * ab);
    }

    #[test]
    fn hand_computed_two_level_value() {
        // Level 1: the image itself (1 channel, 4x4); level 2: two fixed
        // channels on a 2x2 grid. Weights 0.25 and 0.75.
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 16.0).collect();
        let l1 = |v: &[f64]| Var::constant(Array::new(&[1, 1, 4, 4], v.to_vec()).unwrap());
        let l2 = |v: &[f64]| {
            let a: Vec<f64> = (0..4).map(|q| v[q * 4] + v[q * 4 + 1]).collect();
            let b: Vec<f64> = (0..4).map(|q| v[q * 4 + 2] - v[q * 4 + 3]).collect();
            Var::constant(Array::new(&[1, 2, 2, 2], [a, b].concat()).unwrap())
        };
        let got = style_loss_from_features(&[l1(&x), l2(&x)], &[l1(&y), l2(&y)], &[0.25, 0.75]).unwrap().item();

        let g1 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let t1 = 0.25 / (4.0 * 256.0) * (g1(&x) - g1(&y)).powi(2);
        let ch = |v: &[f64]| -> [Vec<f64>; 2] {
            [(0..4).map(|q| v[q * 4] + v[q * 4 + 1]).collect(), (0..4).map(|q| v[q * 4 + 2] - v[q * 4 + 3]).collect()]
        };
        let (cx, cy) = (ch(&x), ch(&y));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut s2 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s2 += (dot(&cx[i], &cx[j]) - dot(&cy[i], &cy[j])).powi(2);
            }
        }
        let t2 = 0.75 / (4.0 * 16.0 * 4.0) * s2;
        assert!((got - (t1 + t2)).abs() <= 1e-6, "{got} vs {}", t1 + t2);
    }

    #[test]
    fn single_pixel_features_ignore_arrangement() {
        // With 1x1 spatial features the Gram matrix is the outer product, so
        // the loss depends only on per-channel co-activation.
        let a = Var::constant(Array::new(&[1, 2, 1, 1], vec![0.3, -0.7]).unwrap());
        let b = Var::constant(Array::new(&[1, 2, 1, 1], vec![-0.3, 0.7]).unwrap());
        assert_eq!(style_loss_from_features(&[a], &[b], &[1.0]).unwrap().item(), 0.0);
    }
}
