//! Tape storage, gradient accumulation, and the backward sweep.

use ndarray::{ArrayD, IxDyn};

use crate::num::{Cplx, Real};

/// A tensor held by the tape: real or complex, any rank.
#[derive(Debug, Clone)]
pub enum Value<T: Real> {
    Real(ArrayD<T>),
    Cplx(ArrayD<Cplx<T>>),
}

impl<T: Real> Value<T> {
    pub fn real(&self) -> &ArrayD<T> {
        match self {
            Value::Real(a) => a,
            Value::Cplx(_) => panic!("expected real tensor, found complex"),
        }
    }

    pub fn cplx(&self) -> &ArrayD<Cplx<T>> {
        match self {
            Value::Cplx(a) => a,
            Value::Real(_) => panic!("expected complex tensor, found real"),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(a) => a.shape(),
            Value::Cplx(a) => a.shape(),
        }
    }

    fn accumulate(&mut self, other: Value<T>) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => {
                debug_assert_eq!(a.shape(), b.shape());
                match (a.as_slice_mut(), b.as_slice()) {
                    (Some(x), Some(y)) => super::par::update(x, y, |x, y| x + y),
                    _ => a.zip_mut_with(&b, |x, &y| *x = *x + y),
                }
            }
            (Value::Cplx(a), Value::Cplx(b)) => {
                debug_assert_eq!(a.shape(), b.shape());
                match (a.as_slice_mut(), b.as_slice()) {
                    (Some(x), Some(y)) => super::par::update(x, y, |x, y| x + y),
                    _ => a.zip_mut_with(&b, |x, &y| *x = *x + y),
                }
            }
            _ => panic!("gradient kind mismatch"),
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Value<T>,
    pub(crate) needs_grad: bool,
    pub(crate) back: Option<BackwardFn<T>>,
}

pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Value<T>, &[Node<T>], &mut GradSink<'_, T>) + Send + Sync>;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Accumulator the backward closures write parent gradients into.
pub struct GradSink<'a, T: Real> {
    slots: &'a mut Vec<Option<Value<T>>>,
}

impl<'a, T: Real> GradSink<'a, T> {
    pub(crate) fn add(&mut self, v: Var, g: Value<T>) {
        match &mut self.slots[v.0] {
            Some(existing) => existing.accumulate(g),
            slot @ None => *slot = Some(g),
        }
    }

    pub(crate) fn add_real(&mut self, v: Var, g: ArrayD<T>) {
        self.add(v, Value::Real(g));
    }

    pub(crate) fn add_cplx(&mut self, v: Var, g: ArrayD<Cplx<T>>) {
        self.add(v, Value::Cplx(g));
    }
}

/// Gradients of the leaves after a backward sweep.
pub struct GradStore<T: Real> {
    slots: Vec<Option<Value<T>>>,
}

impl<T: Real> GradStore<T> {
    pub fn get(&self, v: Var) -> Option<&Value<T>> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Value<T>> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

/// The tape itself. Build a fresh one per optimization step.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: Value<T>,
        needs_grad: bool,
        back: Option<BackwardFn<T>>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant (no gradient) real tensor.
    pub fn constant_real(&mut self, a: ArrayD<T>) -> Var {
        self.push(Value::Real(a), false, None)
    }

    /// Constant (no gradient) complex tensor.
    pub fn constant_cplx(&mut self, a: ArrayD<Cplx<T>>) -> Var {
        self.push(Value::Cplx(a), false, None)
    }

    /// Real leaf; participates in gradients when `trainable`.
    pub fn leaf_real(&mut self, a: ArrayD<T>, trainable: bool) -> Var {
        self.push(Value::Real(a), trainable, None)
    }

    /// Complex leaf; participates in gradients when `trainable`.
    pub fn leaf_cplx(&mut self, a: ArrayD<Cplx<T>>, trainable: bool) -> Var {
        self.push(Value::Cplx(a), trainable, None)
    }

    pub fn value(&self, v: Var) -> &Value<T> {
        &self.nodes[v.0].value
    }

    pub fn real(&self, v: Var) -> &ArrayD<T> {
        self.nodes[v.0].value.real()
    }

    pub fn cplx(&self, v: Var) -> &ArrayD<Cplx<T>> {
        self.nodes[v.0].value.cplx()
    }

    /// Value of a 0-d real node.
    pub fn scalar(&self, v: Var) -> T {
        let a = self.real(v);
        assert_eq!(a.ndim(), 0, "scalar() on non-scalar node");
        a[IxDyn(&[])]
    }

    /// Backward sweep from a scalar real root. Returns gradients of every
    /// grad-requiring leaf. Deterministic: nodes are processed in strictly
    /// decreasing id order.
    pub fn backward(&self, root: Var) -> GradStore<T> {
        let root_val = self.real(root);
        assert_eq!(root_val.ndim(), 0, "backward root must be a real scalar");
        let mut slots: Vec<Option<Value<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[root.0] = Some(Value::Real(ArrayD::from_elem(IxDyn(&[]), T::one())));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                slots[id] = None;
                continue;
            }
            let Some(g) = slots[id].take() else { continue };
            match &self.nodes[id].back {
                Some(back) => {
                    let mut sink = GradSink { slots: &mut slots };
                    back(&g, &self.nodes, &mut sink);
                }
                // Grad-requiring leaf: keep its gradient.
                None => slots[id] = Some(g),
            }
        }
        GradStore { slots }
    }
}
