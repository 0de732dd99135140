//! Complex-tensor ops. Gradients use the directional convention
//! g = dL/d(Re z) + i * dL/d(Im z); see the module docs.
//!
//! Hot elementwise paths run on standard-layout slices through the chunked
//! parallel helpers; all writes are disjoint, so results stay deterministic.

use ndarray::{ArrayD, Axis, CowArray, IxDyn};
use rayon::prelude::*;

use super::par;
use super::tape::{BackwardFn, GradSink, Tape, Value, Var};
use crate::fft::fft2_unitary;
use crate::num::{Cplx, Real};

fn row_len(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

fn csl<'a, 'b, T: Real>(a: &'a CowArray<'b, Cplx<T>, IxDyn>) -> &'a [Cplx<T>] {
    a.as_slice().expect("standard layout")
}

fn rsl<'a, 'b, T: Real>(a: &'a CowArray<'b, T, IxDyn>) -> &'a [T] {
    a.as_slice().expect("standard layout")
}

/// Apply `f(row_index, src_row, dst_row)` to every batch row; parallel only
/// when the tensor is large enough to pay for it.
fn per_row<S: Copy + Send + Sync, U: Send>(
    src: &[S],
    dst: &mut [U],
    rlen: usize,
    f: impl Fn(usize, &[S], &mut [U]) + Send + Sync,
) {
    if src.len() < par::PAR_MIN {
        for (i, (d, s)) in dst.chunks_mut(rlen).zip(src.chunks(rlen)).enumerate() {
            f(i, s, d);
        }
    } else {
        dst.par_chunks_mut(rlen)
            .zip(src.par_chunks(rlen))
            .with_min_len(4)
            .enumerate()
            .for_each(|(i, (d, s))| f(i, s, d));
    }
}

impl<T: Real> Tape<T> {
    /// Unimodular mask entries e^{-i*phi} from real phases.
    pub fn modulate(&mut self, phases: Var) -> Var {
        let out = {
            let pv = self.real(phases).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(pv.shape()));
            par::map_into(rsl(&pv), out.as_slice_mut().unwrap(), |p| {
                Cplx::new(p.cos(), -p.sin())
            });
            out
        };
        let ng = self.needs(phases);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let pv = nodes[phases.0].value.real().as_standard_layout();
                let mut gp = ArrayD::zeros(IxDyn(pv.shape()));
                // d(e^{-i p})/dp = -i e^{-i p}; directional grad is
                // Re(conj(g) * (-i e^{-i p})) = Im(conj(g) * e^{-i p}).
                par::zip_into(csl(&gv), rsl(&pv), gp.as_slice_mut().unwrap(), |gi, pi| {
                    (gi.conj() * Cplx::new(pi.cos(), -pi.sin())).im
                });
                sink.add_real(phases, gp);
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Elementwise complex conjugate.
    pub fn conj(&mut self, a: Var) -> Var {
        let out = {
            let av = self.cplx(a).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::map_into(csl(&av), out.as_slice_mut().unwrap(), |z| z.conj());
            out
        };
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                par::map_into(csl(&gv), gz.as_slice_mut().unwrap(), |z| z.conj());
                sink.add_cplx(a, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Elementwise complex product of equally shaped tensors.
    pub fn cmul(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (av, bv) = (self.cplx(a), self.cplx(b));
            assert_eq!(av.shape(), bv.shape(), "cmul: shape mismatch");
            let (av, bv) = (av.as_standard_layout(), bv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::zip_into(csl(&av), csl(&bv), out.as_slice_mut().unwrap(), |x, y| x * y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                for (dst, src) in [(a, b), (b, a)] {
                    if nodes[dst.0].needs_grad {
                        let sv = nodes[src.0].value.cplx().as_standard_layout();
                        let mut gd = ArrayD::zeros(IxDyn(gv.shape()));
                        par::zip_into(csl(&gv), csl(&sv), gd.as_slice_mut().unwrap(), |g, s| {
                            g * s.conj()
                        });
                        sink.add_cplx(dst, gd);
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Multiply a batched field [B, rest..] by a shared mask [rest..].
    pub fn cmul_bcast(&mut self, z: Var, mask: Var) -> Var {
        let out = {
            let (zv, mv) = (self.cplx(z), self.cplx(mask));
            assert_eq!(&zv.shape()[1..], mv.shape(), "cmul_bcast: shape mismatch");
            let rlen = row_len(zv.shape());
            let (zv, mv) = (zv.as_standard_layout(), mv.as_standard_layout());
            let ms = csl(&mv);
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            per_row(csl(&zv), out.as_slice_mut().unwrap(), rlen, |_, s, d| {
                for ((o, &x), &m) in d.iter_mut().zip(s).zip(ms) {
                    *o = x * m;
                }
            });
            out
        };
        let ng = self.needs(z) || self.needs(mask);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let rlen = row_len(gv.shape());
                if nodes[z.0].needs_grad {
                    let mv = nodes[mask.0].value.cplx().as_standard_layout();
                    let ms = csl(&mv);
                    let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                    per_row(csl(&gv), gz.as_slice_mut().unwrap(), rlen, |_, s, d| {
                        for ((o, &x), &m) in d.iter_mut().zip(s).zip(ms) {
                            *o = x * m.conj();
                        }
                    });
                    sink.add_cplx(z, gz);
                }
                if nodes[mask.0].needs_grad {
                    let zv = nodes[z.0].value.cplx().as_standard_layout();
                    let zs = csl(&zv);
                    let gs = csl(&gv);
                    // fixed-order reduction over the batch
                    let mut gm = vec![Cplx::new(T::zero(), T::zero()); rlen];
                    for b in 0..gv.shape()[0] {
                        let (grow, zrow) = (&gs[b * rlen..][..rlen], &zs[b * rlen..][..rlen]);
                        for ((o, &g), &z) in gm.iter_mut().zip(grow).zip(zrow) {
                            *o += g * z.conj();
                        }
                    }
                    let shape = nodes[mask.0].value.shape().to_vec();
                    sink.add_cplx(mask, ArrayD::from_shape_vec(IxDyn(&shape), gm).unwrap());
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Unitary 2-D DFT over the trailing two axes.
    pub fn dft2(&mut self, z: Var) -> Var {
        let out = fft2_unitary(self.cplx(z), false);
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                // Adjoint of a unitary transform is its inverse.
                sink.add_cplx(z, fft2_unitary(g.cplx(), true));
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Unitary inverse 2-D DFT over the trailing two axes.
    pub fn idft2(&mut self, z: Var) -> Var {
        let out = fft2_unitary(self.cplx(z), true);
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                sink.add_cplx(z, fft2_unitary(g.cplx(), false));
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Elementwise product of a complex tensor with an equally shaped real one.
    pub fn mul_real(&mut self, z: Var, r: Var) -> Var {
        let out = {
            let (zv, rv) = (self.cplx(z), self.real(r));
            assert_eq!(zv.shape(), rv.shape(), "mul_real: shape mismatch");
            let (zv, rv) = (zv.as_standard_layout(), rv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            par::zip_into(csl(&zv), rsl(&rv), out.as_slice_mut().unwrap(), |x, c| x * c);
            out
        };
        let ng = self.needs(z) || self.needs(r);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                if nodes[z.0].needs_grad {
                    let rv = nodes[r.0].value.real().as_standard_layout();
                    let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                    par::zip_into(csl(&gv), rsl(&rv), gz.as_slice_mut().unwrap(), |g, c| g * c);
                    sink.add_cplx(z, gz);
                }
                if nodes[r.0].needs_grad {
                    let zv = nodes[z.0].value.cplx().as_standard_layout();
                    let mut gr = ArrayD::zeros(IxDyn(gv.shape()));
                    par::zip_into(csl(&gv), csl(&zv), gr.as_slice_mut().unwrap(), |g, z| {
                        (g.conj() * z).re
                    });
                    sink.add_real(r, gr);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Squared modulus |z|^2 as a real tensor.
    pub fn abs2(&mut self, z: Var) -> Var {
        let out = {
            let zv = self.cplx(z).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            par::map_into(csl(&zv), out.as_slice_mut().unwrap(), |c| c.norm_sqr());
            out
        };
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.real().as_standard_layout();
                let zv = nodes[z.0].value.cplx().as_standard_layout();
                let two = T::of(2.0);
                let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                par::zip_into(csl(&zv), rsl(&gv), gz.as_slice_mut().unwrap(), |z, c| {
                    z * (two * c)
                });
                sink.add_cplx(z, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Real part as a real tensor.
    pub fn re(&mut self, z: Var) -> Var {
        let out = {
            let zv = self.cplx(z).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            par::map_into(csl(&zv), out.as_slice_mut().unwrap(), |c| c.re);
            out
        };
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.real().as_standard_layout();
                let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                par::map_into(rsl(&gv), gz.as_slice_mut().unwrap(), |x| Cplx::new(x, T::zero()));
                sink.add_cplx(z, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Imaginary part as a real tensor.
    pub fn im(&mut self, z: Var) -> Var {
        let out = {
            let zv = self.cplx(z).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            par::map_into(csl(&zv), out.as_slice_mut().unwrap(), |c| c.im);
            out
        };
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.real().as_standard_layout();
                let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                par::map_into(rsl(&gv), gz.as_slice_mut().unwrap(), |x| Cplx::new(T::zero(), x));
                sink.add_cplx(z, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Assemble a complex tensor from real and imaginary parts.
    pub fn combine_ri(&mut self, re: Var, im: Var) -> Var {
        let out = {
            let (rv, iv) = (self.real(re), self.real(im));
            assert_eq!(rv.shape(), iv.shape(), "combine_ri: shape mismatch");
            let (rv, iv) = (rv.as_standard_layout(), iv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(rv.shape()));
            par::zip_into(rsl(&rv), rsl(&iv), out.as_slice_mut().unwrap(), |r, i| Cplx::new(r, i));
            out
        };
        let ng = self.needs(re) || self.needs(im);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                if nodes[re.0].needs_grad {
                    let mut gr = ArrayD::zeros(IxDyn(gv.shape()));
                    par::map_into(csl(&gv), gr.as_slice_mut().unwrap(), |c| c.re);
                    sink.add_real(re, gr);
                }
                if nodes[im.0].needs_grad {
                    let mut gi = ArrayD::zeros(IxDyn(gv.shape()));
                    par::map_into(csl(&gv), gi.as_slice_mut().unwrap(), |c| c.im);
                    sink.add_real(im, gi);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Elementwise sum of two complex tensors.
    pub fn cadd(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (av, bv) = (self.cplx(a), self.cplx(b));
            assert_eq!(av.shape(), bv.shape(), "cadd: shape mismatch");
            let (av, bv) = (av.as_standard_layout(), bv.as_standard_layout());
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::zip_into(csl(&av), csl(&bv), out.as_slice_mut().unwrap(), |x, y| x + y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.cplx();
                if nodes[a.0].needs_grad {
                    sink.add_cplx(a, g.clone());
                }
                if nodes[b.0].needs_grad {
                    sink.add_cplx(b, g.clone());
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Multiply a complex tensor by a real constant.
    pub fn cscale(&mut self, a: Var, c: T) -> Var {
        let out = {
            let av = self.cplx(a).as_standard_layout();
            let mut out = ArrayD::zeros(IxDyn(av.shape()));
            par::map_into(csl(&av), out.as_slice_mut().unwrap(), |z| z * c);
            out
        };
        let ng = self.needs(a);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, _: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                par::map_into(csl(&gv), gz.as_slice_mut().unwrap(), |z| z * c);
                sink.add_cplx(a, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Scale each batch row of [B, rest..] by its own real factor from [B].
    pub fn scale_rows_real(&mut self, z: Var, s: Var) -> Var {
        let out = {
            let (zv, sv) = (self.cplx(z), self.real(s));
            assert_eq!(sv.ndim(), 1, "scale_rows_real: factors must be [B]");
            assert_eq!(zv.shape()[0], sv.len(), "scale_rows_real: batch mismatch");
            let rlen = row_len(zv.shape());
            let zv = zv.as_standard_layout();
            let factors: Vec<T> = sv.iter().copied().collect();
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            per_row(csl(&zv), out.as_slice_mut().unwrap(), rlen, |i, s, d| {
                let c = factors[i];
                for (o, &x) in d.iter_mut().zip(s) {
                    *o = x * c;
                }
            });
            out
        };
        let ng = self.needs(z) || self.needs(s);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let rlen = row_len(gv.shape());
                let factors: Vec<T> = nodes[s.0].value.real().iter().copied().collect();
                if nodes[z.0].needs_grad {
                    let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                    per_row(csl(&gv), gz.as_slice_mut().unwrap(), rlen, |i, s, d| {
                        let c = factors[i];
                        for (o, &x) in d.iter_mut().zip(s) {
                            *o = x * c;
                        }
                    });
                    sink.add_cplx(z, gz);
                }
                if nodes[s.0].needs_grad {
                    let zv = nodes[z.0].value.cplx().as_standard_layout();
                    let (zs, gs) = (csl(&zv), csl(&gv));
                    let b = gv.shape()[0];
                    let mut gsv = ArrayD::<T>::zeros(IxDyn(&[b]));
                    for i in 0..b {
                        let mut acc = T::zero();
                        for (&g, &z) in gs[i * rlen..][..rlen].iter().zip(&zs[i * rlen..][..rlen]) {
                            acc = acc + (g.conj() * z).re;
                        }
                        gsv[i] = acc;
                    }
                    sink.add_real(s, gsv);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Multiply each batch row of [B, rest..] by its own complex factor [B].
    pub fn cmul_rows(&mut self, z: Var, c: Var) -> Var {
        let out = {
            let (zv, cv) = (self.cplx(z), self.cplx(c));
            assert_eq!(cv.ndim(), 1, "cmul_rows: factors must be [B]");
            assert_eq!(zv.shape()[0], cv.len(), "cmul_rows: batch mismatch");
            let rlen = row_len(zv.shape());
            let zv = zv.as_standard_layout();
            let factors: Vec<Cplx<T>> = cv.iter().copied().collect();
            let mut out = ArrayD::zeros(IxDyn(zv.shape()));
            per_row(csl(&zv), out.as_slice_mut().unwrap(), rlen, |i, s, d| {
                let f = factors[i];
                for (o, &x) in d.iter_mut().zip(s) {
                    *o = x * f;
                }
            });
            out
        };
        let ng = self.needs(z) || self.needs(c);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let rlen = row_len(gv.shape());
                let factors: Vec<Cplx<T>> = nodes[c.0].value.cplx().iter().copied().collect();
                if nodes[z.0].needs_grad {
                    let mut gz = ArrayD::zeros(IxDyn(gv.shape()));
                    per_row(csl(&gv), gz.as_slice_mut().unwrap(), rlen, |i, s, d| {
                        let f = factors[i].conj();
                        for (o, &x) in d.iter_mut().zip(s) {
                            *o = x * f;
                        }
                    });
                    sink.add_cplx(z, gz);
                }
                if nodes[c.0].needs_grad {
                    let zv = nodes[z.0].value.cplx().as_standard_layout();
                    let (zs, gs) = (csl(&zv), csl(&gv));
                    let b = gv.shape()[0];
                    let mut gc = ArrayD::<Cplx<T>>::zeros(IxDyn(&[b]));
                    for i in 0..b {
                        let mut acc = Cplx::new(T::zero(), T::zero());
                        for (&g, &z) in gs[i * rlen..][..rlen].iter().zip(&zs[i * rlen..][..rlen]) {
                            acc += g * z.conj();
                        }
                        gc[i] = acc;
                    }
                    sink.add_cplx(c, gc);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Per-row squared norm: [B, rest..] -> real [B].
    pub fn sumabs2_rows(&mut self, z: Var) -> Var {
        let out = {
            let zv = self.cplx(z).as_standard_layout();
            let b = zv.shape()[0];
            let rlen = row_len(zv.shape());
            let zs = csl(&zv);
            let mut out = ArrayD::<T>::zeros(IxDyn(&[b]));
            for i in 0..b {
                out[i] = zs[i * rlen..][..rlen].iter().map(|c| c.norm_sqr()).sum();
            }
            out
        };
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                let factors: Vec<T> = g.iter().copied().collect();
                let zv = nodes[z.0].value.cplx().as_standard_layout();
                let rlen = row_len(zv.shape());
                let two = T::of(2.0);
                let mut gz = ArrayD::zeros(IxDyn(zv.shape()));
                per_row(csl(&zv), gz.as_slice_mut().unwrap(), rlen, |i, s, d| {
                    let c = two * factors[i];
                    for (o, &x) in d.iter_mut().zip(s) {
                        *o = x * c;
                    }
                });
                sink.add_cplx(z, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Pick one entry per batch row by flat index within the row:
    /// [B, rest..] -> [B]. Indices are treated as constants.
    pub fn gather_rows(&mut self, z: Var, idx: Vec<usize>) -> Var {
        let out = {
            let zv = self.cplx(z);
            let b = zv.shape()[0];
            let rlen = row_len(zv.shape());
            assert_eq!(idx.len(), b, "gather_rows: one index per row");
            let zsl = zv.as_standard_layout();
            let zs = zsl.as_slice().expect("standard layout");
            let mut out = ArrayD::<Cplx<T>>::zeros(IxDyn(&[b]));
            for (i, &k) in idx.iter().enumerate() {
                assert!(k < rlen, "gather_rows: index out of range");
                out[i] = zs[i * rlen + k];
            }
            out
        };
        let ng = self.needs(z);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.cplx();
                let shape = nodes[z.0].value.shape().to_vec();
                let rlen = row_len(&shape);
                let mut gz = ArrayD::<Cplx<T>>::zeros(IxDyn(&shape));
                {
                    let gs = gz.as_slice_mut().expect("standard layout");
                    for (i, &k) in idx.iter().enumerate() {
                        gs[i * rlen + k] = g[i];
                    }
                }
                sink.add_cplx(z, gz);
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }

    /// Stack per-snapshot complex tensors [B, rest..] into [B, L, rest..].
    pub fn stack_snapshots_cplx(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.cplx(p).view()).collect();
        let out = ndarray::stack(Axis(1), &views).expect("stack_snapshots_cplx");
        drop(views);
        let parts_owned: Vec<Var> = parts.to_vec();
        let ng = parts.iter().any(|&p| self.needs(p));
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.cplx();
                for (l, &p) in parts_owned.iter().enumerate() {
                    if nodes[p.0].needs_grad {
                        sink.add_cplx(p, g.index_axis(Axis(1), l).to_owned());
                    }
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out.into_dyn()), ng, back)
    }
}
