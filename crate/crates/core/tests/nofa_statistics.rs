use magniflow::nofa::{fit_lognormal_mle, generate_noise_flow, generate_sample, sample_seed, NofaConfig, NoiseModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic Kolmogorov survival function P(K > x).
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k as f64 * x).powi(2)).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_uniform_p(values: &mut [f64], lo: f64, hi: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    let d = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = (v - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    kolmogorov_sf((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d)
}

#[test]
fn pre_blur_magnitudes_refit_to_model() {
    let model = NoiseModel::default();
    let draws = model.sample_magnitudes(100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (mu, sigma) = fit_lognormal_mle(&draws).unwrap();
    assert!((mu + 4.303).abs() <= 0.02, "mu {mu}");
    assert!((sigma - 0.527).abs() <= 0.02, "sigma {sigma}");
}

#[test]
fn noise_directions_are_uniform() {
    let model = NoiseModel { blur_sigma: 0.0, ..NoiseModel::default() };
    let flow = generate_noise_flow(320, 320, &model, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut bins = [0f64; 36];
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        let a = (v as f64).atan2(u as f64).rem_euclid(std::f64::consts::TAU);
        bins[((a / std::f64::consts::TAU * 36.0) as usize).min(35)] += 1.0;
    }
    let expected = flow.len() as f64 / 36.0;
    let chi2: f64 = bins.iter().map(|o| (o - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(35.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn alphas_are_uniform_over_range() {
    let cfg = NofaConfig { width: 8, height: 8, ..NofaConfig::default() };
    let mut alphas: Vec<f64> = (0..10_000).map(|i| generate_sample(&cfg, sample_seed(3, i)).unwrap().alpha as f64).collect();
    let p = ks_uniform_p(&mut alphas, 0.0, 100.0);
    assert!(p > 0.01, "KS p {p}");
}

#[test]
fn ks_helper_rejects_skewed_data() {
    let mut skewed: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(2) * 100.0).collect();
    assert!(ks_uniform_p(&mut skewed, 0.0, 100.0) < 1e-6);
}

#[test]
fn coverage_stays_in_bounds_over_many_samples() {
    let cfg = NofaConfig::default();
    for i in 0..2000 {
        let c = generate_sample(&cfg, sample_seed(4, i)).unwrap().coverage();
        assert!(c > 0.0 && c <= 0.5, "sample {i}: coverage {c}");
    }
}
