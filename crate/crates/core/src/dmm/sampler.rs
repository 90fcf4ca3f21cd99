//! Deterministic strided reverse diffusion (DDIM, η = 0).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dmm::model::{array_to_flows, flows_to_array, MagnifierModel};
use crate::dmm::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::flowcore::FlowField;
use crate::substrate::{no_grad, Array, Real, Var};

/// Anything that predicts the clean sample from a noisy one at timestep `t`.
pub trait X0Predictor<T: Real> {
    fn predict_x0(&self, x_t: &Array<T>, t: usize) -> Result<Array<T>>;
}

/// The magnifier bound to a batch of conditional flows and factors.
pub struct ConditionedMagnifier<'a, T> {
    pub model: &'a MagnifierModel<T>,
    pub cond: Var<T>,
    pub alphas: Vec<f64>,
}

impl<'a, T: Real> ConditionedMagnifier<'a, T> {
    pub fn new(model: &'a MagnifierModel<T>, conds: &[&FlowField], alphas: &[f64]) -> Result<Self> {
        let cond = Var::constant(flows_to_array(conds, model.config.cond_scale())?);
        Ok(Self { model, cond, alphas: alphas.to_vec() })
    }
}

impl<T: Real> X0Predictor<T> for ConditionedMagnifier<'_, T> {
    fn predict_x0(&self, x_t: &Array<T>, t: usize) -> Result<Array<T>> {
        let ts = vec![t; self.alphas.len()];
        no_grad(|| {
            let y = self.model.forward(&Var::constant(x_t.clone()), &self.cond, &self.alphas, &ts)?;
            let out = y.value().clone();
            Ok(out)
        })
    }
}

/// Runs `steps` strided DDIM updates from seeded standard-normal noise and
/// returns the final clean prediction in normalized units.
pub fn ddim_sample<T: Real>(predictor: &impl X0Predictor<T>, shape: &[usize], schedule: &DiffusionSchedule, steps: usize, seed: u64) -> Result<Array<T>> {
    let ts = schedule.strided_timesteps(steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array::from_fn(shape, |_| T::of(StandardNormal.sample(&mut rng)));
    for (i, &t) in ts.iter().enumerate() {
        let x0 = predictor.predict_x0(&x, t)?;
        if x0.shape() != shape {
            return Err(Error::contract(format!("predictor returned {:?}, expected {shape:?}", x0.shape())));
        }
        let next = ts.get(i + 1).copied().unwrap_or(0);
        if next == 0 {
            return Ok(x0);
        }
        let (ab, ab_next) = (schedule.alpha_bar(t)?, schedule.alpha_bar(next)?);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        for (xi, &p) in x.data_mut().iter_mut().zip(x0.data()) {
            let eps = (xi.f64() - sa * p.f64()) / sb;
            *xi = T::of(na * p.f64() + nb * eps);
        }
    }
    unreachable!("strided timesteps end at t = 1")
}

/// Magnified flows (pixels) for a batch of conditional flows.
pub fn sample_magnified_flows<T: Real>(
    model: &MagnifierModel<T>,
    conds: &[&FlowField],
    alphas: &[f64],
    schedule: &DiffusionSchedule,
    steps: usize,
    seed: u64,
) -> Result<Vec<FlowField>> {
    let predictor = ConditionedMagnifier::new(model, conds, alphas)?;
    let shape = predictor.cond.shape();
    let out = ddim_sample(&predictor, &shape, schedule, steps, seed)?;
    array_to_flows(&out, schedule.f_max)
}

pub fn sample_magnified_flow<T: Real>(
    model: &MagnifierModel<T>,
    cond: &FlowField,
    alpha: f64,
    schedule: &DiffusionSchedule,
    steps: usize,
    seed: u64,
) -> Result<FlowField> {
    Ok(sample_magnified_flows(model, &[cond], &[alpha], schedule, steps, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmm::model::MagnifierConfig;
    use crate::dmm::schedule::{make_schedule, ScheduleKind};
    use rand::Rng;

    struct Fixed(Array<f32>);

    impl X0Predictor<f32> for Fixed {
        fn predict_x0(&self, _: &Array<f32>, _: usize) -> Result<Array<f32>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn oracle_denoiser_is_a_fixed_point() {
        let schedule = make_schedule(200, ScheduleKind::Cosine, 32.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = Array::from_fn(&[2, 2, 8, 8], |_| rng.random_range(-1.0f32..1.0));
        for seed in 0..10 {
            let out = ddim_sample(&Fixed(target.clone()), &[2, 2, 8, 8], &schedule, 50, seed).unwrap();
            let err = out.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = MagnifierModel::<f32>::new(MagnifierConfig::tiny()).unwrap();
        let schedule = make_schedule(200, ScheduleKind::Cosine, 32.0).unwrap();
        let cond = FlowField::from_fn(16, 16, |x, y| (x as f32 * 0.01, -(y as f32) * 0.01)).unwrap();
        let a = sample_magnified_flow(&model, &cond, 20.0, &schedule, 10, 4).unwrap();
        let b = sample_magnified_flow(&model, &cond, 20.0, &schedule, 10, 4).unwrap();
        assert!(a.u().iter().chain(a.v()).zip(b.u().iter().chain(b.v())).all(|(p, q)| p.to_bits() == q.to_bits()));
        let c = sample_magnified_flow(&model, &cond, 20.0, &schedule, 10, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_too_many_steps() {
        let schedule = make_schedule(20, ScheduleKind::Cosine, 32.0).unwrap();
        let target = Array::<f32>::zeros(&[1, 2, 8, 8]);
        assert!(ddim_sample(&Fixed(target), &[1, 2, 8, 8], &schedule, 21, 0).is_err());
    }
}
