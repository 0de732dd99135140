//! Brute-force reference implementations used as independent test oracles.
//!
//! Everything here is written the slow, obvious way (explicit double sums,
//! dense matrices, per-entry loops) and stays independent of the production
//! code paths it is used to check. All oracles are f64.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Unitary 2-D DFT by direct O(n^2) summation.
pub fn dft2_naive(x: &Array2<C64>, inverse: bool) -> Array2<C64> {
    let (h, w) = x.dim();
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Array2::<C64>::zeros((h, w));
    for k in 0..h {
        for l in 0..w {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..h {
                for n in 0..w {
                    let ang = 2.0 * std::f64::consts::PI
                        * (k as f64 * m as f64 / h as f64 + l as f64 * n as f64 / w as f64);
                    acc += x[[m, n]] * C64::new(ang.cos(), sign * ang.sin());
                }
            }
            out[[k, l]] = acc * norm;
        }
    }
    out
}

/// Elementwise x * (cos(phi) - j sin(phi)), evaluated scalar by scalar.
pub fn apply_mask_naive(x: &Array2<C64>, phases: &Array2<f64>) -> Array2<C64> {
    let (h, w) = x.dim();
    let mut out = Array2::<C64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let p = phases[[i, j]];
            out[[i, j]] = x[[i, j]] * C64::new(p.cos(), -p.sin());
        }
    }
    out
}

/// Noiseless forward model by composition of the naive pieces:
/// y_l = |dft2(x * e^{-j phi_l})|^2.
pub fn sense_naive(x: &Array2<C64>, phases: &Array3<f64>) -> Array3<f64> {
    let (l, h, w) = phases.dim();
    let mut out = Array3::<f64>::zeros((l, h, w));
    for s in 0..l {
        let masked = apply_mask_naive(x, &phases.index_axis(ndarray::Axis(0), s).to_owned());
        let spec = dft2_naive(&masked, false);
        for i in 0..h {
            for j in 0..w {
                out[[s, i, j]] = spec[[i, j]].norm_sqr();
            }
        }
    }
    out
}

/// Dense n x n matrix of the unitary 2-D DFT (row-major pixel ordering).
pub fn dft2_matrix(h: usize, w: usize, inverse: bool) -> DMatrix<C64> {
    let n = h * w;
    let mut f = DMatrix::<C64>::zeros(n, n);
    for r in 0..n {
        let mut basis = Array2::<C64>::zeros((h, w));
        basis[[r / w, r % w]] = C64::new(1.0, 0.0);
        let col = dft2_naive(&basis, inverse);
        for i in 0..h {
            for j in 0..w {
                f[(i * w + j, r)] = col[[i, j]];
            }
        }
    }
    f
}

/// Dense spectral-initialization operator
/// Gamma = (1/(n L)) * sum_l A_l^H F^H diag(y_l) F A_l
/// with A_l = diag(e^{-j phi_l}).
pub fn gamma_dense(y: &Array3<f64>, phases: &Array3<f64>) -> DMatrix<C64> {
    let (l, h, w) = phases.dim();
    assert_eq!(y.dim(), (l, h, w));
    let n = h * w;
    let f = dft2_matrix(h, w, false);
    let fh = f.adjoint();
    let mut gamma = DMatrix::<C64>::zeros(n, n);
    for s in 0..l {
        let mut a = DMatrix::<C64>::zeros(n, n);
        let mut d = DMatrix::<C64>::zeros(n, n);
        for i in 0..h {
            for j in 0..w {
                let p = phases[[s, i, j]];
                a[(i * w + j, i * w + j)] = C64::new(p.cos(), -p.sin());
                d[(i * w + j, i * w + j)] = C64::new(y[[s, i, j]], 0.0);
            }
        }
        gamma += a.adjoint() * &fh * d * &f * a;
    }
    gamma / C64::new((n * l) as f64, 0.0)
}

/// Eigendecomposition of a Hermitian matrix via its real symmetric embedding
/// [[X, -Y], [Y, X]]. Returns eigenvalues ascending with complex eigenvectors.
/// The embedding doubles each eigenvalue, so all 2n pairs are returned;
/// callers take the min or max as needed.
pub fn hermitian_eig(m: &DMatrix<C64>) -> (Vec<f64>, Vec<Vec<C64>>) {
    let n = m.nrows();
    assert_eq!(m.ncols(), n);
    let mut emb = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            emb[(i, j)] = v.re;
            emb[(i, j + n)] = -v.im;
            emb[(i + n, j)] = v.im;
            emb[(i + n, j + n)] = v.re;
        }
    }
    let eig = SymmetricEigen::new(emb);
    let mut pairs: Vec<(f64, Vec<C64>)> = (0..2 * n)
        .map(|k| {
            let col = eig.eigenvectors.column(k);
            let mut v: Vec<C64> = (0..n).map(|i| C64::new(col[i], col[i + n])).collect();
            let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for c in v.iter_mut() {
                    *c /= norm;
                }
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let vals = pairs.iter().map(|p| p.0).collect();
    let vecs = pairs.into_iter().map(|p| p.1).collect();
    (vals, vecs)
}

/// Same-size correlation with a k x k kernel, zero padding, direct loops:
/// out[i][j] = sum_{u,v} psi[u][v] * z[i+u-c][j+v-c].
pub fn kernel_filter_naive(z: &Array2<C64>, psi: &Array2<f64>) -> Array2<C64> {
    let (h, w) = z.dim();
    let (kh, kw) = psi.dim();
    assert_eq!(kh % 2, 1);
    assert_eq!(kw % 2, 1);
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Array2::<C64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = C64::new(0.0, 0.0);
            for u in 0..kh {
                for v in 0..kw {
                    let si = i as isize + u as isize - ch as isize;
                    let sj = j as isize + v as isize - cw as isize;
                    if si >= 0 && (si as usize) < h && sj >= 0 && (sj as usize) < w {
                        acc += z[[si as usize, sj as usize]] * psi[[u, v]];
                    }
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Mean over the batch of per-scene squared error sums, by explicit loops.
pub fn task_loss_naive(xhat: &Array4<f64>, x: &Array4<f64>) -> f64 {
    assert_eq!(xhat.dim(), x.dim());
    let (q, c, h, w) = x.dim();
    let mut total = 0.0;
    for s in 0..q {
        let mut acc = 0.0;
        for cc in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let d = xhat[[s, cc, i, j]] - x[[s, cc, i, j]];
                    acc += d * d;
                }
            }
        }
        total += acc;
    }
    total / q as f64
}

/// Distillation CDP loss by explicit loops: mean over scenes of the squared
/// norm of (snapshot-averaged teacher y) - (snapshot-averaged student y).
pub fn cdp_loss_naive(yt: &Array4<f64>, ys: &Array4<f64>) -> f64 {
    let (q, lt, h, w) = yt.dim();
    let (qs, ls, hs, ws) = ys.dim();
    assert_eq!((q, h, w), (qs, hs, ws));
    let mut total = 0.0;
    for s in 0..q {
        let mut acc = 0.0;
        for i in 0..h {
            for j in 0..w {
                let mut mt = 0.0;
                for l in 0..lt {
                    mt += yt[[s, l, i, j]];
                }
                mt /= lt as f64;
                let mut ms = 0.0;
                for l in 0..ls {
                    ms += ys[[s, l, i, j]];
                }
                ms /= ls as f64;
                let d = mt - ms;
                acc += d * d;
            }
        }
        total += acc;
    }
    total / q as f64
}

/// Feature-alignment loss: mean over scenes of summed squared differences.
pub fn feat_loss_naive(ft: &Array4<f64>, fs: &Array4<f64>) -> f64 {
    assert_eq!(ft.dim(), fs.dim());
    task_loss_naive(ft, fs)
}

/// Phase-mask regularizer: per entry, loop over the P levels {2 pi p / P},
/// take the smallest wrapped distance, square, average over all entries.
pub fn mask_reg_naive(phases: &Array3<f64>, levels: usize) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let wrapped_abs = |x: f64| {
        let t = x.rem_euclid(two_pi);
        t.min(two_pi - t)
    };
    let mut total = 0.0;
    for &p in phases.iter() {
        let mut best = f64::INFINITY;
        for q in 0..levels {
            let level = two_pi * q as f64 / levels as f64;
            best = best.min(wrapped_abs(p - level));
        }
        total += best * best;
    }
    total / phases.len() as f64
}

/// Bilinear resize by direct evaluation of the sampling formula
/// src = (dst + 0.5) * in/out - 0.5 with edge clamping.
pub fn bilinear_resize_naive(img: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut out = Array2::<f64>::zeros((oh, ow));
    let sample = |i: isize, j: isize| {
        let ii = i.clamp(0, h as isize - 1) as usize;
        let jj = j.clamp(0, w as isize - 1) as usize;
        img[[ii, jj]]
    };
    for oi in 0..oh {
        for oj in 0..ow {
            let sy = (oi as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
            let sx = (oj as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let dy = (sy - y0).clamp(0.0, 1.0);
            let dx = (sx - x0).clamp(0.0, 1.0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            out[[oi, oj]] = sample(y0, x0) * (1.0 - dy) * (1.0 - dx)
                + sample(y0, x0 + 1) * (1.0 - dy) * dx
                + sample(y0 + 1, x0) * dy * (1.0 - dx)
                + sample(y0 + 1, x0 + 1) * dy * dx;
        }
    }
    out
}

/// PSNR by the direct MSE formula.
pub fn psnr_naive(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mse: f64 =
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1.0, computed per valid window position with explicit
/// loops and averaged.
pub fn ssim_naive(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let (h, w) = a.dim();
    let win = 11usize;
    assert!(h >= win && w >= win, "image smaller than SSIM window");
    let sigma = 1.5f64;
    let mut weights = vec![0.0; win * win];
    let c = (win / 2) as f64;
    let mut wsum = 0.0;
    for u in 0..win {
        for v in 0..win {
            let d2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            let g = (-d2 / (2.0 * sigma * sigma)).exp();
            weights[u * win + v] = g;
            wsum += g;
        }
    }
    for wv in weights.iter_mut() {
        *wv /= wsum;
    }
    let (k1, k2, range) = (0.01f64, 0.03f64, 1.0f64);
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..win {
                for v in 0..win {
                    let wt = weights[u * win + v];
                    ma += wt * a[[i + u, j + v]];
                    mb += wt * b[[i + u, j + v]];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..win {
                for v in 0..win {
                    let wt = weights[u * win + v];
                    let da = a[[i + u, j + v]] - ma;
                    let db = b[[i + u, j + v]] - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}
