//! Network layers: convolution, bias, pooling, upsampling, concatenation.
//!
//! Convolutions follow the usual correlation orientation (no kernel flip) and
//! run as one GEMM per image via im2col. Batches are processed in parallel;
//! weight gradients are accumulated per fixed-size chunk and reduced in index
//! order so results do not depend on thread scheduling.

use ndarray::{ArrayD, Axis, IxDyn};
use rayon::prelude::*;

use super::tape::{BackwardFn, GradSink, Tape, Value, Var};
use crate::interp::linear_map;
use crate::num::Real;

/// Images per weight-gradient accumulation chunk (fixed so reductions are
/// deterministic regardless of the rayon pool size).
const GRAD_CHUNK: usize = 4;

struct ConvDims {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }
    fn n(&self) -> usize {
        self.oh * self.ow
    }
}

/// Scatter image x (ci*h*w) into the im2col matrix col (k x n), zero padding.
fn im2col<T: Real>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let n = d.n();
    col.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..d.ci {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let r = (c * d.kh + u) * d.kw + v;
                // valid output rows: 0 <= oi + u - pad < h
                let oi_lo = d.pad.saturating_sub(u);
                let oi_hi = (d.h + d.pad - u).min(d.oh);
                let oj_lo = d.pad.saturating_sub(v);
                let oj_hi = (d.w + d.pad - v).min(d.ow);
                if oj_lo >= oj_hi {
                    continue;
                }
                for oi in oi_lo..oi_hi {
                    let si = oi + u - d.pad;
                    let sj = oj_lo + v - d.pad;
                    let src = &x[(c * d.h + si) * d.w + sj..][..oj_hi - oj_lo];
                    let dst = &mut col[r * n + oi * d.ow + oj_lo..][..oj_hi - oj_lo];
                    dst.copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of im2col: accumulate col (k x n) back into image gx (ci*h*w).
fn col2im_acc<T: Real>(col: &[T], d: &ConvDims, gx: &mut [T]) {
    let n = d.n();
    for c in 0..d.ci {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let r = (c * d.kh + u) * d.kw + v;
                let oi_lo = d.pad.saturating_sub(u);
                let oi_hi = (d.h + d.pad - u).min(d.oh);
                let oj_lo = d.pad.saturating_sub(v);
                let oj_hi = (d.w + d.pad - v).min(d.ow);
                if oj_lo >= oj_hi {
                    continue;
                }
                for oi in oi_lo..oi_hi {
                    let si = oi + u - d.pad;
                    let sj = oj_lo + v - d.pad;
                    let src = &col[r * n + oi * d.ow + oj_lo..][..oj_hi - oj_lo];
                    let dst = &mut gx[(c * d.h + si) * d.w + sj..][..oj_hi - oj_lo];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o = *o + s;
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Real>(x: &ArrayD<T>, w: &ArrayD<T>, pad: usize) -> ConvDims {
    assert_eq!(x.ndim(), 4, "conv2d input must be [B, C, H, W]");
    assert_eq!(w.ndim(), 4, "conv2d weight must be [Co, Ci, kh, kw]");
    let (ci, h, wd) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    assert_eq!(w.shape()[1], ci, "conv2d: channel mismatch");
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than input");
    ConvDims {
        ci,
        h,
        w: wd,
        co,
        kh,
        kw,
        pad,
        oh: h + 2 * pad - kh + 1,
        ow: wd + 2 * pad - kw + 1,
    }
}

impl<T: Real> Tape<T> {
    /// 2-D correlation of [B, Ci, H, W] with [Co, Ci, kh, kw], stride 1.
    /// One GEMM per image, images in parallel.
    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Var {
        let out = {
            let (xv, wv) = (self.real(x), self.real(w));
            let d = conv_dims(xv, wv, pad);
            let b = xv.shape()[0];
            let (k, n) = (d.k(), d.n());
            let xsl = xv.as_standard_layout();
            let xs = xsl.as_slice().expect("standard layout");
            let wsl = wv.as_standard_layout();
            let ws = wsl.as_slice().expect("standard layout");
            let mut out = ArrayD::<T>::zeros(IxDyn(&[b, d.co, d.oh, d.ow]));
            {
                let os = out.as_slice_mut().expect("standard layout");
                os.par_chunks_exact_mut(d.co * n)
                    .zip(xs.par_chunks_exact(d.ci * d.h * d.w))
                    .for_each(|(oi, xi)| {
                        let mut col = vec![T::zero(); k * n];
                        im2col(xi, &d, &mut col);
                        T::gemm_acc(d.co, k, n, ws, false, &col, false, oi);
                    });
            }
            out
        };
        let ng = self.needs(x) || self.needs(w);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let gv = g.real();
                let xv = nodes[x.0].value.real();
                let wv = nodes[w.0].value.real();
                let d = conv_dims(xv, wv, pad);
                let b = xv.shape()[0];
                let (k, n) = (d.k(), d.n());
                let gsl = gv.as_standard_layout();
                let gs = gsl.as_slice().expect("standard layout");
                let xsl = xv.as_standard_layout();
                let xs = xsl.as_slice().expect("standard layout");
                let wsl = wv.as_standard_layout();
                let ws = wsl.as_slice().expect("standard layout");

                if nodes[x.0].needs_grad {
                    let mut gx = ArrayD::<T>::zeros(xv.raw_dim());
                    let gxs = gx.as_slice_mut().expect("standard layout");
                    gxs.par_chunks_exact_mut(d.ci * d.h * d.w)
                        .zip(gs.par_chunks_exact(d.co * n))
                        .for_each(|(gxi, gi)| {
                            let mut colg = vec![T::zero(); k * n];
                            T::gemm_acc(k, d.co, n, ws, true, gi, false, &mut colg);
                            col2im_acc(&colg, &d, gxi);
                        });
                    sink.add_real(x, gx);
                }
                if nodes[w.0].needs_grad {
                    let wlen = d.co * k;
                    let chunks: Vec<Vec<T>> = (0..b)
                        .collect::<Vec<_>>()
                        .par_chunks(GRAD_CHUNK)
                        .map(|imgs| {
                            let mut gw = vec![T::zero(); wlen];
                            let mut col = vec![T::zero(); k * n];
                            for &i in imgs {
                                im2col(&xs[i * d.ci * d.h * d.w..][..d.ci * d.h * d.w], &d, &mut col);
                                T::gemm_acc(
                                    d.co, n, k,
                                    &gs[i * d.co * n..][..d.co * n], false,
                                    &col, true,
                                    &mut gw,
                                );
                            }
                            gw
                        })
                        .collect();
                    let mut gw = vec![T::zero(); wlen];
                    for c in &chunks {
                        for (o, &v) in gw.iter_mut().zip(c) {
                            *o = *o + v;
                        }
                    }
                    sink.add_real(
                        w,
                        ArrayD::from_shape_vec(wv.raw_dim(), gw).expect("gw shape"),
                    );
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Add a per-channel bias [C] to [B, C, H, W].
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Var {
        let out = {
            let (xv, bv) = (self.real(x), self.real(bias));
            assert_eq!(bv.ndim(), 1, "bias must be [C]");
            assert_eq!(xv.shape()[1], bv.len(), "bias_add: channel mismatch");
            let hw: usize = xv.shape()[2] * xv.shape()[3];
            let c = bv.len();
            let biases: Vec<T> = bv.iter().copied().collect();
            let xsl = xv.as_standard_layout();
            let xs = xsl.as_slice().expect("standard layout");
            let mut out = ArrayD::zeros(xv.raw_dim());
            out.as_slice_mut()
                .unwrap()
                .par_chunks_mut(hw)
                .zip(xs.par_chunks(hw))
                .with_min_len(4)
                .enumerate()
                .for_each(|(p, (d, s))| {
                    let bias = biases[p % c];
                    for (o, &x) in d.iter_mut().zip(s) {
                        *o = x + bias;
                    }
                });
            out
        };
        let ng = self.needs(x) || self.needs(bias);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                if nodes[x.0].needs_grad {
                    sink.add_real(x, g.clone());
                }
                if nodes[bias.0].needs_grad {
                    let c = g.shape()[1];
                    let mut gb = ArrayD::<T>::zeros(IxDyn(&[c]));
                    for img in g.outer_iter() {
                        for (i, plane) in img.outer_iter().enumerate() {
                            gb[i] = gb[i] + plane.iter().copied().sum::<T>();
                        }
                    }
                    sink.add_real(bias, gb);
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// 2x2 max pooling with stride 2; ties take the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Var {
        let (out, arg) = {
            let xv = self.real(x);
            assert_eq!(xv.ndim(), 4, "maxpool2 input must be [B, C, H, W]");
            let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
            assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
            let (oh, ow) = (h / 2, w / 2);
            let xsl = xv.as_standard_layout();
            let xs = xsl.as_slice().expect("standard layout");
            let mut out = ArrayD::<T>::zeros(IxDyn(&[b, c, oh, ow]));
            let mut arg = vec![0u8; b * c * oh * ow];
            {
                let os = out.as_slice_mut().expect("standard layout");
                os.par_chunks_exact_mut(oh * ow)
                    .zip(arg.par_chunks_exact_mut(oh * ow))
                    .zip(xs.par_chunks_exact(h * w))
                    .with_min_len(8)
                    .for_each(|((oplane, aplane), plane)| {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let base = (2 * oi) * w + 2 * oj;
                                let cand = [plane[base], plane[base + 1], plane[base + w], plane[base + w + 1]];
                                let mut best = 0usize;
                                for t in 1..4 {
                                    if cand[t] > cand[best] {
                                        best = t;
                                    }
                                }
                                oplane[oi * ow + oj] = cand[best];
                                aplane[oi * ow + oj] = best as u8;
                            }
                        }
                    });
            }
            (out, arg)
        };
        let ng = self.needs(x);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                let shape = nodes[x.0].value.shape().to_vec();
                let (h, w) = (shape[2], shape[3]);
                let (oh, ow) = (h / 2, w / 2);
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().expect("standard layout");
                let mut gx = ArrayD::<T>::zeros(IxDyn(&shape));
                {
                    let gxs = gx.as_slice_mut().expect("standard layout");
                    gxs.par_chunks_exact_mut(h * w)
                        .zip(gs.par_chunks_exact(oh * ow).zip(arg.par_chunks_exact(oh * ow)))
                        .with_min_len(8)
                        .for_each(|(xplane, (gplane, aplane))| {
                            for oi in 0..oh {
                                for oj in 0..ow {
                                    let o = oi * ow + oj;
                                    let a = aplane[o] as usize;
                                    let (du, dv) = (a / 2, a % 2);
                                    xplane[(2 * oi + du) * w + 2 * oj + dv] = gplane[o];
                                }
                            }
                        });
                }
                sink.add_real(x, gx);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Bilinear x2 upsampling of [B, C, H, W] to [B, C, 2H, 2W].
    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = {
            let xv = self.real(x);
            assert_eq!(xv.ndim(), 4, "upsample2 input must be [B, C, H, W]");
            let (b, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
            let rmap: Vec<(usize, usize, T)> = linear_map(h, 2 * h)
                .into_iter()
                .map(|(a, bb, w1)| (a, bb, T::of(w1)))
                .collect();
            let cmap: Vec<(usize, usize, T)> = linear_map(w, 2 * w)
                .into_iter()
                .map(|(a, bb, w1)| (a, bb, T::of(w1)))
                .collect();
            let xsl = xv.as_standard_layout();
            let xs = xsl.as_slice().expect("standard layout");
            let mut out = ArrayD::<T>::zeros(IxDyn(&[b, c, 2 * h, 2 * w]));
            {
                let os = out.as_slice_mut().expect("standard layout");
                os.par_chunks_exact_mut(4 * h * w)
                    .zip(xs.par_chunks_exact(h * w))
                    .with_min_len(8)
                    .for_each(|(oplane, plane)| {
                        for (oi, &(i0, i1, wi)) in rmap.iter().enumerate() {
                            let r0 = &plane[i0 * w..][..w];
                            let r1 = &plane[i1 * w..][..w];
                            let orow = &mut oplane[oi * 2 * w..][..2 * w];
                            for (oj, &(j0, j1, wj)) in cmap.iter().enumerate() {
                                let one = T::one();
                                let top = r0[j0] * (one - wj) + r0[j1] * wj;
                                let bot = r1[j0] * (one - wj) + r1[j1] * wj;
                                orow[oj] = top * (one - wi) + bot * wi;
                            }
                        }
                    });
            }
            out
        };
        let ng = self.needs(x);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                let shape = nodes[x.0].value.shape().to_vec();
                let (h, w) = (shape[2], shape[3]);
                let rmap: Vec<(usize, usize, T)> = linear_map(h, 2 * h)
                    .into_iter()
                    .map(|(a, bb, w1)| (a, bb, T::of(w1)))
                    .collect();
                let cmap: Vec<(usize, usize, T)> = linear_map(w, 2 * w)
                    .into_iter()
                    .map(|(a, bb, w1)| (a, bb, T::of(w1)))
                    .collect();
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().expect("standard layout");
                let mut gx = ArrayD::<T>::zeros(IxDyn(&shape));
                {
                    let gxs = gx.as_slice_mut().expect("standard layout");
                    gxs.par_chunks_exact_mut(h * w)
                        .zip(gs.par_chunks_exact(4 * h * w))
                        .with_min_len(8)
                        .for_each(|(xplane, gplane)| {
                            for (oi, &(i0, i1, wi)) in rmap.iter().enumerate() {
                                let grow = &gplane[oi * 2 * w..][..2 * w];
                                for (oj, &(j0, j1, wj)) in cmap.iter().enumerate() {
                                    let one = T::one();
                                    let gv = grow[oj];
                                    xplane[i0 * w + j0] += gv * (one - wi) * (one - wj);
                                    xplane[i0 * w + j1] += gv * (one - wi) * wj;
                                    xplane[i1 * w + j0] += gv * wi * (one - wj);
                                    xplane[i1 * w + j1] += gv * wi * wj;
                                }
                            }
                        });
                }
                sink.add_real(x, gx);
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Concatenate along the channel axis: [B, C1, H, W] + [B, C2, H, W].
    pub fn concat_ch(&mut self, a: Var, b: Var) -> Var {
        let out = {
            let (av, bv) = (self.real(a), self.real(b));
            assert_eq!(av.ndim(), 4);
            assert_eq!(bv.ndim(), 4);
            ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).expect("concat_ch")
        };
        let c1 = self.real(a).shape()[1];
        let ng = self.needs(a) || self.needs(b);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                if nodes[a.0].needs_grad {
                    sink.add_real(a, g.slice_axis(Axis(1), ndarray::Slice::from(..c1)).to_owned());
                }
                if nodes[b.0].needs_grad {
                    sink.add_real(b, g.slice_axis(Axis(1), ndarray::Slice::from(c1..)).to_owned());
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out), ng, back)
    }

    /// Stack two [B, H, W] tensors into [B, 2, H, W] (network input from the
    /// real and imaginary channels of a field).
    pub fn stack_ri(&mut self, re: Var, im: Var) -> Var {
        let out = {
            let (rv, iv) = (self.real(re), self.real(im));
            assert_eq!(rv.shape(), iv.shape(), "stack_ri: shape mismatch");
            assert_eq!(rv.ndim(), 3, "stack_ri input must be [B, H, W]");
            ndarray::stack(Axis(1), &[rv.view(), iv.view()]).expect("stack_ri")
        };
        let ng = self.needs(re) || self.needs(im);
        let back: Option<BackwardFn<T>> = ng.then(|| {
            Box::new(move |g: &Value<T>, nodes: &[super::tape::Node<T>], sink: &mut GradSink<T>| {
                let g = g.real();
                if nodes[re.0].needs_grad {
                    sink.add_real(re, g.index_axis(Axis(1), 0).to_owned());
                }
                if nodes[im.0].needs_grad {
                    sink.add_real(im, g.index_axis(Axis(1), 1).to_owned());
                }
            }) as BackwardFn<T>
        });
        self.push(Value::Real(out.into_dyn()), ng, back)
    }
}
