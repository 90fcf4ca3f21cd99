//! Endpoint error, PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flowcore::{FlowField, ImageBuffer};

/// PSNR reported for bit-identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe_mean: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub epe_per_frame: Vec<f64>,
    pub psnr_per_frame: Vec<f64>,
    pub ssim_per_frame: Vec<f64>,
}

impl MetricReport {
    pub fn push_flow(&mut self, epe: f64) {
        self.epe_per_frame.push(epe);
        self.epe_mean = Some(mean(&self.epe_per_frame));
    }

    pub fn push_image(&mut self, psnr: f64, ssim: f64) {
        self.psnr_per_frame.push(psnr);
        self.ssim_per_frame.push(ssim);
        self.psnr = Some(mean(&self.psnr_per_frame));
        self.ssim = Some(mean(&self.ssim_per_frame));
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Per-pixel endpoint error map.
pub fn endpoint_errors(candidate: &FlowField, reference: &FlowField) -> Result<Vec<f64>> {
    candidate.same_dims(reference, "endpoint_errors")?;
    Ok(candidate
        .u()
        .iter()
        .zip(candidate.v())
        .zip(reference.u().iter().zip(reference.v()))
        .map(|((&cu, &cv), (&ru, &rv))| (cu as f64 - ru as f64).hypot(cv as f64 - rv as f64))
        .collect())
}

/// Mean endpoint error (the motion error) in pixels.
pub fn flow_metrics(candidate: &FlowField, reference: &FlowField) -> Result<f64> {
    Ok(mean(&endpoint_errors(candidate, reference)?))
}

pub fn psnr(candidate: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    candidate.same_dims(reference, "psnr")?;
    let mse = candidate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / candidate.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

fn ssim_window_taps(size: usize) -> Vec<f64> {
    let r = (size / 2) as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(p: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Window side used for an image: 11, or the largest odd size that fits.
pub fn ssim_window_size(width: usize, height: usize) -> usize {
    let m = width.min(height).min(SSIM_WINDOW);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
    .max(1)
}

/// Mean SSIM on Rec. 601 luminance with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(candidate: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    candidate.same_dims(reference, "ssim")?;
    let (w, h) = candidate.dims();
    let a: Vec<f64> = candidate.luminance().iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = reference.luminance().iter().map(|&x| x as f64).collect();
    let k = ssim_window_taps(ssim_window_size(w, h));
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter_valid(&a, w, h, &k);
    let (mu_b, ..) = filter_valid(&b, w, h, &k);
    let (e_aa, ..) = filter_valid(&prod(&a, &a), w, h, &k);
    let (e_bb, ..) = filter_valid(&prod(&b, &b), w, h, &k);
    let (e_ab, ..) = filter_valid(&prod(&a, &b), w, h, &k);
    let mut total = 0f64;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok((total / (ow * oh) as f64).min(1.0))
}

/// `(psnr_db, ssim)` for a candidate against a reference.
pub fn image_metrics(candidate: &ImageBuffer, reference: &ImageBuffer) -> Result<(f64, f64)> {
    if candidate == reference {
        candidate.same_dims(reference, "image_metrics")?;
        return Ok((PSNR_CAP_DB, 1.0));
    }
    Ok((psnr(candidate, reference)?, ssim(candidate, reference)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_flow(rng: &mut ChaCha8Rng, n: usize) -> FlowField {
        FlowField::from_fn(n, n, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).unwrap()
    }

    #[test]
    fn epe_closed_forms() {
        let zero = FlowField::zeros(4, 4);
        assert_eq!(flow_metrics(&zero, &zero).unwrap(), 0.0);
        let c = FlowField::constant(4, 4, 3.0, 4.0);
        assert!((flow_metrics(&c, &zero).unwrap() - 5.0).abs() < 1e-12);
        assert!(flow_metrics(&c, &FlowField::zeros(3, 4)).is_err());
    }

    #[test]
    fn epe_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_flow(&mut rng, 8);
        let b = random_flow(&mut rng, 8);
        let mut sum = 0f64;
        for y in 0..8 {
            for x in 0..8 {
                let (au, av) = a.get(x, y);
                let (bu, bv) = b.get(x, y);
                sum += (((au - bu) as f64).powi(2) + ((av - bv) as f64).powi(2)).sqrt();
            }
        }
        assert!((flow_metrics(&a, &b).unwrap() - sum / 64.0).abs() < 1e-6);
    }

    #[test]
    fn epe_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (a, b, c) = (random_flow(&mut rng, 6), random_flow(&mut rng, 6), random_flow(&mut rng, 6));
            let ab = endpoint_errors(&a, &b).unwrap();
            let ba = endpoint_errors(&b, &a).unwrap();
            let bc = endpoint_errors(&b, &c).unwrap();
            let ac = endpoint_errors(&a, &c).unwrap();
            for i in 0..ab.len() {
                assert_eq!(ab[i], ba[i]);
                assert!(ac[i] <= ab[i] + bc[i] + 1e-9);
            }
        }
    }

    #[test]
    fn identical_images() {
        let img = ImageBuffer::from_fn(16, 16, 3, |x, y, c| ((x + y + c) % 5) as f32 / 4.0).unwrap();
        assert_eq!(image_metrics(&img, &img).unwrap(), (99.0, 1.0));
    }

    #[test]
    fn uniform_offset_psnr() {
        let a = ImageBuffer::filled(12, 12, 3, 0.0).unwrap();
        let b = ImageBuffer::filled(12, 12, 3, 0.5).unwrap();
        let (p, _) = image_metrics(&a, &b).unwrap();
        assert!((p - 6.0206).abs() < 1e-4, "{p}");
    }

    #[test]
    fn ssim_matches_windowed_statistics_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 20;
        let a = ImageBuffer::from_fn(n, n, 3, |_, _, _| rng.random()).unwrap();
        let b = ImageBuffer::from_fn(n, n, 3, |x, y, c| a.get(x, y, c) * 0.7 + rng.random::<f32>() * 0.3).unwrap();
        let got = ssim(&a, &b).unwrap();

        let la = a.luminance();
        let lb = b.luminance();
        let g: Vec<f64> = (-5i32..=5).map(|i| (-(i * i) as f64 / 4.5).exp()).collect();
        let gs: f64 = g.iter().sum();
        let mut total = 0f64;
        let mut count = 0;
        for y0 in 0..=n - 11 {
            for x0 in 0..=n - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0f64, 0f64, 0f64, 0f64, 0f64);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[i] * g[j] / (gs * gs);
                        let p = la[(y0 + j) * n + x0 + i] as f64;
                        let q = lb[(y0 + j) * n + x0 + i] as f64;
                        ma += wgt * p;
                        mb += wgt * q;
                        saa += wgt * p * p;
                        sbb += wgt * q * q;
                        sab += wgt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + 1e-4) * (2.0 * cov + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                count += 1;
            }
        }
        let want = total / count as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn report_accumulates_means() {
        let mut r = MetricReport::default();
        r.push_flow(1.0);
        r.push_flow(3.0);
        r.push_image(30.0, 0.5);
        assert_eq!(r.epe_mean, Some(2.0));
        assert_eq!(r.psnr, Some(30.0));
    }
}
