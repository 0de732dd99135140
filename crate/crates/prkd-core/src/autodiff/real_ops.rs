//! Elementwise, reduction, and shape ops on real tensors.

use ndarray::{ArrayD, Axis, CowArray, IxDyn};

use super::par;
use super::tape::{BackwardFn, GradSink, Tape, Value, Var};
use crate::num::Real;

fn rsl<'a, 'b, T: Real>(a: &'a CowArray<'b, T, IxDyn>) -> &'a [T] {
    a.as_slice().expect("standard layout")
}

impl<T: Real> Tape<T> {
    /// Elementwise sum of two equally shaped real tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (av, bv) = (self.real(a), self.real(b));
            assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
            let (av, bv) = (av.as_standard_layout(), bv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::zip_into(rsl(&av), rsl(&bv), out.as_slice_mut().unwrap(), |x, y| x + y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                if nodes[a.0].needs_grad {
                    sink.add_real(a, g.clone());
                }
                if nodes[b.0].needs_grad {
                    sink.add_real(b, g.clone());
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (av, bv) = (self.real(a), self.real(b));
            assert_eq!(av.shape(), bv.shape(), "sub: shape mismatch");
            let (av, bv) = (av.as_standard_layout(), bv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::zip_into(rsl(&av), rsl(&bv), out.as_slice_mut().unwrap(), |x, y| x - y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                if nodes[a.0].needs_grad {
                    sink.add_real(a, g.clone());
                }
                if nodes[b.0].needs_grad {
                    let gv = g.as_standard_layout();
                    let mut gb = ArrayD::zeros(IxDyn(gv.shape()));
                    par::map_into(rsl(&gv), gb.as_slice_mut().unwrap(), |x| -x);
                    sink.add_real(b, gb);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Multiply by a compile-time-known real constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = {
            let av = self.real(a).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::map_into(rsl(&av), out.as_slice_mut().unwrap(), |x| x * c);
            out
        };
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.real().as_standard_layout();
                let mut ga = ArrayD::zeros(IxDyn(gv.shape()));
                par::map_into(rsl(&gv), ga.as_slice_mut().unwrap(), |x| x * c);
                sink.add_real(a, ga);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// max(x, 0). Used both as the network nonlinearity and as the
    /// intensity clamp after additive noise.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = {
            let av = self.real(a).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::map_into(rsl(&av), out.as_slice_mut().unwrap(), |x| {
                if x > T::zero() { x } else { T::zero() }
            });
            out
        };
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let xv = nodes[a.0].value.real().as_standard_layout();
                let gv = g.real().as_standard_layout();
                let mut gx = ArrayD::zeros(IxDyn(gv.shape()));
                par::zip_into(rsl(&gv), rsl(&xv), gx.as_slice_mut().unwrap(), |gi, xi| {
                    if xi > T::zero() { gi } else { T::zero() }
                });
                sink.add_real(a, gx);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Sum of squares of all entries, as a 0-d scalar node.
    pub fn sumsq(&mut self, a: Var) -> Var {
        let val: T = self.real(a).iter().map(|&x| x * x).sum();
        let out = ArrayD::from_elem(IxDyn(&[]), val);
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let s = g.real()[IxDyn(&[])];
                let c = T::of(2.0) * s;
                let xv = nodes[a.0].value.real().as_standard_layout();
                let mut gx = ArrayD::zeros(IxDyn(xv.shape()));
                par::map_into(rsl(&xv), gx.as_slice_mut().unwrap(), |x| c * x);
                sink.add_real(a, gx);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Elementwise 1/sqrt(x); inputs must be positive.
    pub fn rsqrt(&mut self, a: Var) -> Var {
        let out = self.real(a).mapv(|x| T::one() / x.sqrt());
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let x = nodes[a.0].value.real();
                let half = T::of(-0.5);
                let mut gx = g.real().clone();
                gx.zip_mut_with(x, |gi, &xi| {
                    *gi = *gi * half / (xi * xi.sqrt());
                });
                sink.add_real(a, gx);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Mean over the snapshot axis: [B, L, H, W] -> [B, H, W].
    pub fn mean_snapshots(&mut self, a: Var) -> Var {
        let av = self.real(a);
        assert_eq!(av.ndim(), 4, "mean_snapshots expects [B, L, H, W]");
        let l = av.shape()[1];
        let out = av.mean_axis(Axis(1)).expect("L >= 1");
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let shape = nodes[a.0].value.shape().to_vec();
                let g = g.real();
                let inv = T::of(1.0 / l as f64);
                let mut ga = ArrayD::zeros(IxDyn(&shape));
                for mut lane in ga.axis_iter_mut(Axis(1)) {
                    lane.zip_mut_with(g, |x, &gi| *x = gi * inv);
                }
                sink.add_real(a, ga);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out.into_dyn()), ng, back)
    }

    /// Reinterpret a real tensor with a new shape (same element count).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = self.real(a);
        assert_eq!(
            av.len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let out = av
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape");
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let orig = nodes[a.0].value.shape().to_vec();
                let gr = g
                    .real()
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&orig))
                    .expect("reshape back");
                sink.add_real(a, gr);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Select index `i` along axis 0: [D, rest..] -> [rest..].
    pub fn slice0(&mut self, a: Var, i: usize) -> Var {
        let av = self.real(a);
        assert!(i < av.shape()[0], "slice0: index out of range");
        let out = av.index_axis(Axis(0), i).to_owned();
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let shape = nodes[a.0].value.shape().to_vec();
                let mut ga = ArrayD::zeros(IxDyn(&shape));
                ga.index_axis_mut(Axis(0), i).assign(g.real());
                sink.add_real(a, ga);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Select index `l` along axis 1: [B, L, rest..] -> [B, rest..].
    pub fn slice1(&mut self, a: Var, l: usize) -> Var {
        let av = self.real(a);
        assert!(l < av.shape()[1], "slice1: index out of range");
        let out = av.index_axis(Axis(1), l).to_owned();
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let shape = nodes[a.0].value.shape().to_vec();
                let mut ga = ArrayD::zeros(IxDyn(&shape));
                ga.index_axis_mut(Axis(1), l).assign(g.real());
                sink.add_real(a, ga);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Stack per-snapshot tensors [B, rest..] into [B, L, rest..] along a new
    /// axis 1.
    pub fn stack_snapshots(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.real(p).view()).collect();
        let out = ndarray::stack(Axis(1), &views).expect("stack_snapshots");
        drop(views);
        let parts_owned: Vec<Var> = parts.to_vec();
        let ng = parts.iter().any(|&p| self.needs(p));
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                for (l, &p) in parts_owned.iter().enumerate() {
                    if nodes[p.0].needs_grad {
                        sink.add_real(p, g.index_axis(Axis(1), l).to_owned());
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out.into_dyn()), ng, back)
    }

    /// Penalty pushing phases toward the P equispaced levels {2*pi*p/P}:
    /// the mean over entries of the squared wrapped offset to the nearest
    /// level. Bounded by (pi/P)^2; zero exactly on-level.
    pub fn level_quantization_penalty(&mut self, phases: Var, levels: usize) -> Var {
        assert!(levels >= 1, "levels must be >= 1");
        let step = T::of(2.0 * std::f64::consts::PI / levels as f64);
        let half = step * T::of(0.5);
        let signed_offset = move |x: T| {
            let mut t = x % step;
            if t < T::zero() {
                t = t + step;
            }
            if t <= half {
                t
            } else {
                t - step
            }
        };
        let a = self.real(phases);
        let n = T::of(a.len() as f64);
        let val: T = a.iter().map(|&x| {
            let s = signed_offset(x);
            s * s
        }).sum::<T>() / n;
        let out = ArrayD::from_elem(IxDyn(&[]), val);
        let ng = self.needs(phases);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gs = g.real()[IxDyn(&[])];
                let x = nodes[phases.0].value.real();
                let n = T::of(x.len() as f64);
                let c = T::of(2.0) * gs / n;
                sink.add_real(phases, x.mapv(|xi| c * signed_offset(xi)));
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }
}
