use crate::error::{Error, Result};
use crate::substrate::{Array, Real, Var};

pub struct Param<T> {
    pub name: String,
    pub var: Var<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
}

/// Named trainable tensors with their AdamW moments.
pub struct ParameterSet<T> {
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), step: 0 }
    }

    /// Adds a parameter; names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Array<T>) -> Var<T> {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate parameter name {name}");
        let n = value.numel();
        let var = Var::parameter(value);
        self.params.push(Param { name, var: var.clone(), m: vec![T::zero(); n], v: vec![T::zero(); n] });
        var
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.var.numel()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.var.zero_grad());
    }

    /// Copies of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| p.var.to_vec()).collect()
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One update of every parameter. Fails before touching anything if a
    /// parameter has no gradient.
    pub fn step<T: Real>(&self, params: &mut ParameterSet<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.var.grad().is_none()) {
            return Err(Error::contract(format!("adamw: parameter {} has no gradient", p.name)));
        }
        let t = params.step() + 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t.min(i32::MAX as u64) as i32));
        let c2 = T::of(1.0 - self.beta2.powi(t.min(i32::MAX as u64) as i32));
        let lr = T::of(self.lr);
        let decay = T::one() - T::of(self.lr * self.weight_decay);
        let eps = T::of(self.eps);
        for p in params.params_mut() {
            let g = p.var.grad().expect("checked above");
            let mut value = p.var.value_mut();
            for (i, x) in value.data_mut().iter_mut().enumerate() {
                *x *= decay;
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g[i];
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        params.set_step(t);
        Ok(())
    }
}
