//! Fused action of the spectral-initialization operator
//!
//!   Gamma z = (1/(n L)) * sum_l conj(m_l) . F^H( y_l . F( m_l . z ) ),
//!   m_l = e^{-i phi_l},
//!
//! as a single tape node. The power iteration applies this 25 times per
//! step, so the fused form matters: it stores no intermediates (backward
//! recomputes the two spectra it needs) and walks each array once per stage.
//! Gradients reach z, the phases, and the measurements; every rule below is
//! checked against finite differences and against the op-by-op composition
//! in the tests.

use ndarray::{ArrayD, IxDyn};

use super::tape::{BackwardFn, GradSink, Tape, Value, Var};
use crate::fft::fft2_unitary_inplace;
use crate::num::{Cplx, Real};

struct Geometry {
    b: usize,
    h: usize,
    w: usize,
    l: usize,
}

fn geometry<T: Real>(tape: &Tape<T>, z: Var, y_snapshots: &[Var], phases: Var) -> Geometry {
    let zs = tape.cplx(z).shape().to_vec();
    assert_eq!(zs.len(), 3, "gamma: z must be [B, H, W]");
    let ps = tape.real(phases).shape();
    assert_eq!(ps.len(), 3, "gamma: phases must be [L, H, W]");
    assert_eq!(&ps[1..], &zs[1..], "gamma: phases and z disagree on H x W");
    assert_eq!(ps[0], y_snapshots.len(), "gamma: snapshot count mismatch");
    for &y in y_snapshots {
        assert_eq!(tape.real(y).shape(), zs.as_slice(), "gamma: y shape mismatch");
    }
    Geometry {
        b: zs[0],
        h: zs[1],
        w: zs[2],
        l: ps[0],
    }
}

fn modulate_into<T: Real>(phases: &[T], mask: &mut [Cplx<T>]) {
    for (m, &p) in mask.iter_mut().zip(phases) {
        *m = Cplx::new(p.cos(), -p.sin());
    }
}

/// tmp[b] = src[b] . mask (mask conjugated when `conj` is set).
fn mul_mask<T: Real>(src: &[Cplx<T>], mask: &[Cplx<T>], conj: bool, dst: &mut [Cplx<T>]) {
    let rlen = mask.len();
    for (drow, srow) in dst.chunks_mut(rlen).zip(src.chunks(rlen)) {
        if conj {
            for ((d, &s), &m) in drow.iter_mut().zip(srow).zip(mask) {
                *d = s * m.conj();
            }
        } else {
            for ((d, &s), &m) in drow.iter_mut().zip(srow).zip(mask) {
                *d = s * m;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// One application of Gamma; `y_snapshots` are per-snapshot intensities
    /// [B, H, W] and `phases` is the [L, H, W] mask bank.
    pub fn gamma_apply(&mut self, z: Var, y_snapshots: &[Var], phases: Var) -> Var {
        let geo = geometry(self, z, y_snapshots, phases);
        let (b, h, w, l) = (geo.b, geo.h, geo.w, geo.l);
        let n = h * w;
        let scale = T::of(1.0 / (n as f64 * l as f64));

        let out = {
            let zv = self.cplx(z).as_standard_layout();
            let zs = zv.as_slice().expect("standard layout");
            let pv = self.real(phases).as_standard_layout();
            let ps = pv.as_slice().expect("standard layout");
            let mut acc = vec![Cplx::new(T::zero(), T::zero()); b * n];
            let mut mask = vec![Cplx::new(T::zero(), T::zero()); n];
            let mut tmp = ArrayD::<Cplx<T>>::zeros(IxDyn(&[b, h, w]));
            for s in 0..l {
                modulate_into(&ps[s * n..][..n], &mut mask);
                let ts = tmp.as_slice_mut().unwrap();
                mul_mask(zs, &mask, false, ts);
                fft2_unitary_inplace(&mut tmp, false);
                {
                    let yv = self.real(y_snapshots[s]).as_standard_layout();
                    let ys = yv.as_slice().expect("standard layout");
                    let ts = tmp.as_slice_mut().unwrap();
                    for (t, &yy) in ts.iter_mut().zip(ys) {
                        *t = *t * yy;
                    }
                }
                fft2_unitary_inplace(&mut tmp, true);
                let ts = tmp.as_slice().unwrap();
                let rlen = n;
                for (arow, trow) in acc.chunks_mut(rlen).zip(ts.chunks(rlen)) {
                    for ((a, &t), &m) in arow.iter_mut().zip(trow).zip(mask.iter()) {
                        *a += t * m.conj();
                    }
                }
            }
            for a in acc.iter_mut() {
                *a = *a * scale;
            }
            ArrayD::from_shape_vec(IxDyn(&[b, h, w]), acc).unwrap()
        };

        let y_owned: Vec<Var> = y_snapshots.to_vec();
        let ng = self.needs(z)
            || self.needs(phases)
            || y_snapshots.iter().any(|&y| self.needs(y));
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.cplx().as_standard_layout();
                let gs = gv.as_slice().expect("standard layout");
                let zv = nodes[z.0].value.cplx().as_standard_layout();
                let zs = zv.as_slice().expect("standard layout");
                let pv = nodes[phases.0].value.real().as_standard_layout();
                let ps = pv.as_slice().expect("standard layout");

                let need_z = nodes[z.0].needs_grad;
                let need_p = nodes[phases.0].needs_grad;

                let mut mask = vec![Cplx::new(T::zero(), T::zero()); n];
                let mut gz = need_z.then(|| vec![Cplx::new(T::zero(), T::zero()); b * n]);
                let mut gp = need_p.then(|| vec![T::zero(); l * n]);
                let mut u = ArrayD::<Cplx<T>>::zeros(IxDyn(&[b, h, w]));
                let mut a = ArrayD::<Cplx<T>>::zeros(IxDyn(&[b, h, w]));

                for s in 0..l {
                    modulate_into(&ps[s * n..][..n], &mut mask);
                    let need_y = nodes[y_owned[s].0].needs_grad;
                    let yv = nodes[y_owned[s].0].value.real().as_standard_layout();
                    let ys = yv.as_slice().expect("standard layout");

                    // U = F(m . z), recomputed from the saved inputs
                    mul_mask(zs, &mask, false, u.as_slice_mut().unwrap());
                    fft2_unitary_inplace(&mut u, false);

                    // A = F(g' . m) where g' = g / (nL)
                    {
                        let asl = a.as_slice_mut().unwrap();
                        mul_mask(gs, &mask, false, asl);
                        for v in asl.iter_mut() {
                            *v = *v * scale;
                        }
                    }
                    fft2_unitary_inplace(&mut a, false);

                    if need_y {
                        let asl = a.as_slice().unwrap();
                        let usl = u.as_slice().unwrap();
                        let mut gy = ArrayD::<T>::zeros(IxDyn(&[b, h, w]));
                        {
                            let gysl = gy.as_slice_mut().unwrap();
                            for ((o, &av), &uv) in gysl.iter_mut().zip(asl).zip(usl) {
                                *o = (av.conj() * uv).re;
                            }
                        }
                        sink.add_real(y_owned[s], gy);
                    }

                    if need_p {
                        // v = F^H(y . U): the field the conjugate mask multiplies
                        let mut v = u.clone();
                        {
                            let vs = v.as_slice_mut().unwrap();
                            for (t, &yy) in vs.iter_mut().zip(ys) {
                                *t = *t * yy;
                            }
                        }
                        fft2_unitary_inplace(&mut v, true);
                        let vs = v.as_slice().unwrap();
                        // mask gradient collects both uses of m:
                        //   u = z . m        -> gm += sum_b (b_l . conj(z))
                        //   out += v . conj(m) -> gm += conj(sum_b g' . conj(v))
                        let gp = gp.as_mut().unwrap();
                        let gprow = &mut gp[s * n..][..n];
                        // second use first (needs only g and v)
                        let mut gm = vec![Cplx::new(T::zero(), T::zero()); n];
                        for (grow, vrow) in gs.chunks(n).zip(vs.chunks(n)) {
                            for ((o, &g1), &v1) in gm.iter_mut().zip(grow).zip(vrow) {
                                *o += (g1 * scale) * v1.conj();
                            }
                        }
                        for o in gm.iter_mut() {
                            *o = o.conj();
                        }
                        // B = F^H(y . A); first-use contribution and gz
                        {
                            let asl = a.as_slice_mut().unwrap();
                            for (t, &yy) in asl.iter_mut().zip(ys) {
                                *t = *t * yy;
                            }
                        }
                        fft2_unitary_inplace(&mut a, true);
                        let bsl = a.as_slice().unwrap();
                        for (brow, zrow) in bsl.chunks(n).zip(zs.chunks(n)) {
                            for ((o, &b1), &z1) in gm.iter_mut().zip(brow).zip(zrow) {
                                *o += b1 * z1.conj();
                            }
                        }
                        if let Some(gz) = gz.as_mut() {
                            for (gzr, brow) in gz.chunks_mut(n).zip(bsl.chunks(n)) {
                                for ((o, &b1), &m1) in gzr.iter_mut().zip(brow).zip(mask.iter()) {
                                    *o += b1 * m1.conj();
                                }
                            }
                        }
                        // d(e^{-i p})/dp chain: gphi = Im(conj(gm) . m)
                        for ((o, gm1), &m1) in gprow.iter_mut().zip(gm.iter()).zip(mask.iter()) {
                            *o = *o + (gm1.conj() * m1).im;
                        }
                    } else {
                        // B = F^H(y . A) feeds only gz on this branch
                        {
                            let asl = a.as_slice_mut().unwrap();
                            for (t, &yy) in asl.iter_mut().zip(ys) {
                                *t = *t * yy;
                            }
                        }
                        fft2_unitary_inplace(&mut a, true);
                        if let Some(gz) = gz.as_mut() {
                            let bsl = a.as_slice().unwrap();
                            for (gzr, brow) in gz.chunks_mut(n).zip(bsl.chunks(n)) {
                                for ((o, &b1), &m1) in gzr.iter_mut().zip(brow).zip(mask.iter()) {
                                    *o += b1 * m1.conj();
                                }
                            }
                        }
                    }
                }

                if let Some(gz) = gz {
                    sink.add_cplx(z, ArrayD::from_shape_vec(IxDyn(&[b, h, w]), gz).unwrap());
                }
                if let Some(gp) = gp {
                    sink.add_real(
                        phases,
                        ArrayD::from_shape_vec(IxDyn(&[l, h, w]), gp).unwrap(),
                    );
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Cplx(out), ng, back)
    }
}
