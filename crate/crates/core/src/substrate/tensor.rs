//! Dense arrays and the dynamic reverse-mode graph built on top of them.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::substrate::Real;

/// Row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Array<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!("array of shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::contract(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(n, c, h, w)` of a rank-4 array.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::contract(format!("expected an NCHW array, got shape {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::of(x.f64())).collect() }
    }
}

type BackwardFn<T> = Box<dyn Fn(&[T], &Array<T>, &[Var<T>])>;

struct Node<T> {
    value: RefCell<Array<T>>,
    grad: RefCell<Option<Vec<T>>>,
    tracked: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A node of the computation graph. Cloning shares the node.
pub struct Var<T>(Rc<Node<T>>);

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var{:?}", self.shape())
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording operations; results are untracked constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl<T: Real> Var<T> {
    fn leaf(value: Array<T>, tracked: bool) -> Self {
        Var(Rc::new(Node { value: RefCell::new(value), grad: RefCell::new(None), tracked, parents: Vec::new(), backward: None }))
    }

    /// A leaf that receives gradients.
    pub fn parameter(value: Array<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn constant(value: Array<T>) -> Self {
        Self::leaf(value, false)
    }

    /// Records an operation. `backward(grad_out, out_value, parents)` pushes
    /// gradients into whichever parents are tracked.
    pub(crate) fn from_op(
        value: Array<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&[T], &Array<T>, &[Var<T>]) + 'static,
    ) -> Self {
        if !grad_enabled() || !parents.iter().any(Var::tracked) {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            tracked: true,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn tracked(&self) -> bool {
        self.0.tracked
    }

    pub fn value(&self) -> Ref<'_, Array<T>> {
        self.0.value.borrow()
    }

    /// Mutable access for optimizers and initializers; never call while a
    /// graph that read this value is still to be differentiated.
    pub fn value_mut(&self) -> RefMut<'_, Array<T>> {
        self.0.value.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.borrow().numel()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.value.borrow().data().to_vec()
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> T {
        self.0.value.borrow().data()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn same_node(&self, other: &Var<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Adds into the gradient buffer through `f`, allocating zeros on first use.
    pub(crate) fn with_grad(&self, f: impl FnOnce(&mut [T])) {
        if !self.0.tracked {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        let n = self.numel();
        let g = slot.get_or_insert_with(|| vec![T::zero(); n]);
        f(g);
    }

    pub(crate) fn accumulate(&self, delta: &[T]) {
        self.with_grad(|g| {
            for (a, &d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        });
    }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
    /// calls; intermediate buffers are released as the sweep passes them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar root, got shape {:?}", self.shape())));
        }
        if !self.tracked() {
            return Ok(());
        }
        let order = self.topological_order();
        self.accumulate(&[T::one()]);
        for node in order.iter().rev() {
            let Some(backward) = &node.0.backward else { continue };
            let Some(grad) = node.0.grad.borrow_mut().take() else { continue };
            backward(&grad, &node.0.value.borrow(), &node.0.parents);
        }
        Ok(())
    }

    /// Post-order over tracked nodes (parents before children).
    fn topological_order(&self) -> Vec<Var<T>> {
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&node.0) as usize;
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().filter(|p| p.tracked()) {
                if !seen.contains(&(Rc::as_ptr(&p.0) as usize)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::ops;

    #[test]
    fn array_validates_length() {
        assert!(Array::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Array::<f32>::zeros(&[2, 3]).numel(), 6);
    }

    #[test]
    fn linear_gradient_is_input() {
        let w = Var::parameter(Array::new(&[1, 3], vec![0.5f64, -1.0, 2.0]).unwrap());
        let x = Var::constant(Array::new(&[1, 3], vec![3.0, 4.0, 5.0]).unwrap());
        let y = ops::sum(&ops::mul(&w, &x).unwrap());
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 4.0, 5.0]);
        // a second sweep over the same graph accumulates
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0, 8.0, 10.0]);
    }

    #[test]
    fn independent_parameter_gets_zero() {
        let p = Var::parameter(Array::<f64>::filled(&[2], 1.0));
        let q = Var::parameter(Array::<f64>::filled(&[2], 1.0));
        ops::sum(&q).backward().unwrap();
        assert_eq!(p.grad_or_zeros(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let p = Var::parameter(Array::<f64>::filled(&[2], 1.0));
        assert!(matches!(p.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_sums_both_paths() {
        let p = Var::parameter(Array::<f64>::filled(&[1], 3.0));
        let sq = ops::mul(&p, &p).unwrap();
        let y = ops::sum(&ops::add(&sq, &p).unwrap());
        y.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let p = Var::parameter(Array::<f64>::filled(&[1], 3.0));
        let y = no_grad(|| ops::sum(&p));
        assert!(!y.tracked());
        assert!(grad_enabled());
    }
}
