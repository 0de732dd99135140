//! Filtered spectral initialization.
//!
//! The scene estimate is the leading eigenvector of the data-weighted
//! backprojection operator
//!
//!   Gamma z = (1/(n L)) * sum_l A_l^H F^H diag(y_l) F A_l z,
//!
//! found by power iteration with a trainable low-pass filter applied to the
//! iterate each step. The iteration is unrolled on the tape, so gradients
//! reach both the filter coefficients and the mask phases.

use ndarray::{Array2, ArrayD, IxDyn};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::num::{Cplx, Real};
use crate::optics::{MeasurementSet, PhaseMaskBank};
use crate::rng;

/// Norm threshold below which the power iteration is declared degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Real k x k filter kernel, k odd so the correlation is centered.
#[derive(Debug, Clone)]
pub struct FilterKernel<T: Real> {
    coefficients: Array2<T>,
}

impl<T: Real> FilterKernel<T> {
    pub fn new(coefficients: Array2<T>) -> Result<Self> {
        let (kh, kw) = coefficients.dim();
        if kh % 2 == 0 || kw % 2 == 0 || kh != kw {
            return Err(Error::Config(format!(
                "filter kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("filter coefficients must be finite".into()));
        }
        Ok(FilterKernel { coefficients })
    }

    /// Centered delta: filtering is the identity.
    pub fn identity(k: usize) -> Result<Self> {
        let mut c = Array2::zeros((k, k));
        if k % 2 == 1 {
            c[[k / 2, k / 2]] = T::one();
        }
        Self::new(c)
    }

    /// Normalized box filter (all 1/k^2), the trainable starting point.
    pub fn box_filter(k: usize) -> Result<Self> {
        let c = Array2::from_elem((k, k), T::one() / T::of((k * k) as f64));
        Self::new(c)
    }

    pub fn size(&self) -> usize {
        self.coefficients.dim().0
    }

    pub fn coefficients(&self) -> &Array2<T> {
        &self.coefficients
    }
}

/// Result of spectral initialization: unit-norm field estimate.
#[derive(Debug, Clone)]
pub struct InitEstimate<T: Real> {
    pub z: Array2<Cplx<T>>,
    pub iterations_run: usize,
}

/// One application of Gamma on a batch: z is [B, H, W], `y_snapshots` holds
/// per-snapshot intensities [B, H, W], `phases` is [L, H, W].
pub fn gamma_graph<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    y_snapshots: &[Var],
    phases: Var,
) -> Var {
    tape.gamma_apply(z, y_snapshots, phases)
}

/// Filtering step: correlate real and imaginary parts with the kernel,
/// same-size output, zero padding. `psi4` is the kernel reshaped [1, 1, k, k].
pub fn filter_graph<T: Real>(tape: &mut Tape<T>, z: Var, psi4: Var) -> Var {
    let (b, h, w) = {
        let s = tape.cplx(z).shape();
        (s[0], s[1], s[2])
    };
    let k = tape.real(psi4).shape()[3];
    let pad = k / 2;
    let re = tape.re(z);
    let re4 = tape.reshape(re, &[b, 1, h, w]);
    let re_f = tape.conv2d(re4, psi4, pad);
    let re_out = tape.reshape(re_f, &[b, h, w]);
    let im = tape.im(z);
    let im4 = tape.reshape(im, &[b, 1, h, w]);
    let im_f = tape.conv2d(im4, psi4, pad);
    let im_out = tape.reshape(im_f, &[b, h, w]);
    tape.combine_ri(re_out, im_out)
}

/// Unrolled power iteration: repeat T times { z <- G_psi(Gamma z); z <- z /
/// ||z|| } per batch row. Fails with the 1-based iteration index if an
/// iterate collapses below [`DEGENERATE_NORM`].
pub fn spectral_init_graph<T: Real>(
    tape: &mut Tape<T>,
    z0: Var,
    y_snapshots: &[Var],
    phases: Var,
    psi: Var,
    iterations: usize,
) -> Result<Var> {
    if iterations == 0 {
        return Err(Error::Config("spectral initialization needs T >= 1".into()));
    }
    let k = tape.real(psi).shape()[0];
    let psi4 = tape.reshape(psi, &[1, 1, k, k]);
    let mut z = z0;
    for t in 0..iterations {
        let g = gamma_graph(tape, z, y_snapshots, phases);
        let f = filter_graph(tape, g, psi4);
        let n2 = tape.sumabs2_rows(f);
        let threshold = T::of(DEGENERATE_NORM * DEGENERATE_NORM);
        if tape.real(n2).iter().any(|&v| v < threshold) {
            return Err(Error::DegenerateInit {
                iteration: t + 1,
                threshold: DEGENERATE_NORM,
            });
        }
        let inv = tape.rsqrt(n2);
        z = tape.scale_rows_real(f, inv);
    }
    Ok(z)
}

/// Rotate each batch row by the phase of its largest-modulus entry (ties:
/// first in row-major order), making that entry real-nonnegative. Removes the
/// global-phase ambiguity at the recovery network's input.
pub fn canonicalize_graph<T: Real>(tape: &mut Tape<T>, z: Var) -> Result<Var> {
    let idx = {
        let zv = tape.cplx(z);
        let b = zv.shape()[0];
        let rlen: usize = zv.shape()[1..].iter().product();
        let zs = zv.as_standard_layout().into_owned();
        let zs = zs.as_slice().expect("standard layout").to_vec();
        let mut idx = Vec::with_capacity(b);
        for i in 0..b {
            let row = &zs[i * rlen..][..rlen];
            let mut best = 0usize;
            let mut best_val = T::neg_infinity();
            for (j, c) in row.iter().enumerate() {
                let m = c.norm_sqr();
                if m > best_val {
                    best_val = m;
                    best = j;
                }
            }
            if best_val <= T::zero() {
                return Err(Error::Degenerate(format!(
                    "canonicalize_phase: row {i} is identically zero"
                )));
            }
            idx.push(best);
        }
        idx
    };
    let u = tape.gather_rows(z, idx);
    let u2 = tape.abs2(u);
    let inv = tape.rsqrt(u2);
    let uc = tape.conj(u);
    let factor = tape.mul_real(uc, inv);
    Ok(tape.cmul_rows(z, factor))
}

fn field_to_batch<T: Real>(z: &Array2<Cplx<T>>) -> ArrayD<Cplx<T>> {
    let (h, w) = z.dim();
    z.to_owned()
        .into_shape_with_order(IxDyn(&[1, h, w]))
        .expect("batch of one")
}

fn batch_to_field<T: Real>(z: ArrayD<Cplx<T>>) -> Array2<Cplx<T>> {
    let (h, w) = (z.shape()[1], z.shape()[2]);
    z.into_shape_with_order(IxDyn(&[h, w]))
        .expect("drop batch axis")
        .into_dimensionality()
        .expect("rank 2")
}

fn check_dims<T: Real>(
    z: &Array2<Cplx<T>>,
    y: &MeasurementSet<T>,
    masks: &PhaseMaskBank<T>,
) -> Result<()> {
    let (l, h, w) = y.intensities.dim();
    if masks.phases.dim() != (l, h, w) || z.dim() != (h, w) {
        return Err(Error::Dim(format!(
            "gamma_apply: z {:?}, y {:?}, masks {:?}",
            z.dim(),
            y.intensities.dim(),
            masks.phases.dim()
        )));
    }
    Ok(())
}

/// Matrix-free action of Gamma on a single field.
pub fn gamma_apply<T: Real>(
    z: &Array2<Cplx<T>>,
    y: &MeasurementSet<T>,
    masks: &PhaseMaskBank<T>,
) -> Result<Array2<Cplx<T>>> {
    check_dims(z, y, masks)?;
    if y.intensities.iter().any(|&v| v < T::zero()) {
        return Err(Error::Config("measurements must be nonnegative".into()));
    }
    let mut tape = Tape::<T>::new();
    let zv = tape.constant_cplx(field_to_batch(z));
    let phases = tape.constant_real(masks.phases.to_owned().into_dyn());
    let y_snapshots: Vec<Var> = (0..masks.num_snapshots())
        .map(|l| {
            let (h, w) = masks.dims();
            let yl = y
                .intensities
                .index_axis(ndarray::Axis(0), l)
                .to_owned()
                .into_shape_with_order(IxDyn(&[1, h, w]))
                .expect("batch of one");
            tape.constant_real(yl)
        })
        .collect();
    let out = gamma_graph(&mut tape, zv, &y_snapshots, phases);
    Ok(batch_to_field(tape.cplx(out).clone()))
}

/// Correlate the real and imaginary parts of z with the kernel (same-size,
/// zero padded).
pub fn apply_filter<T: Real>(z: &Array2<Cplx<T>>, psi: &FilterKernel<T>) -> Result<Array2<Cplx<T>>> {
    let mut tape = Tape::<T>::new();
    let zv = tape.constant_cplx(field_to_batch(z));
    let k = psi.size();
    let pv = tape.constant_real(psi.coefficients().to_owned().into_dyn());
    let psi4 = tape.reshape(pv, &[1, 1, k, k]);
    let out = filter_graph(&mut tape, zv, psi4);
    Ok(batch_to_field(tape.cplx(out).clone()))
}

/// Filtered spectral initialization for one scene's measurements. The start
/// vector has i.i.d. standard-normal real and imaginary parts (seeded) and is
/// normalized by the first iteration.
pub fn spectral_initialize<T: Real>(
    y: &MeasurementSet<T>,
    masks: &PhaseMaskBank<T>,
    psi: &FilterKernel<T>,
    iterations: usize,
    rng_seed: u64,
) -> Result<InitEstimate<T>> {
    let (h, w) = masks.dims();
    check_dims(&Array2::zeros((h, w)), y, masks)?;
    let mut tape = Tape::<T>::new();
    let z0 = rng::complex_normal_array::<T>(&mut rng::stream(rng_seed, "init-z0", &[]), &[1, h, w]);
    let z0 = tape.constant_cplx(z0);
    let phases = tape.constant_real(masks.phases.to_owned().into_dyn());
    let y_snapshots: Vec<Var> = (0..masks.num_snapshots())
        .map(|l| {
            let yl = y
                .intensities
                .index_axis(ndarray::Axis(0), l)
                .to_owned()
                .into_shape_with_order(IxDyn(&[1, h, w]))
                .expect("batch of one");
            tape.constant_real(yl)
        })
        .collect();
    let psi_v = tape.constant_real(psi.coefficients().to_owned().into_dyn());
    let z = spectral_init_graph(&mut tape, z0, &y_snapshots, phases, psi_v, iterations)?;
    Ok(InitEstimate {
        z: batch_to_field(tape.cplx(z).clone()),
        iterations_run: iterations,
    })
}

/// Quotient out the global phase of a single nonzero field.
pub fn canonicalize_phase<T: Real>(z: &Array2<Cplx<T>>) -> Result<Array2<Cplx<T>>> {
    let mut tape = Tape::<T>::new();
    let zv = tape.constant_cplx(field_to_batch(z));
    let out = canonicalize_graph(&mut tape, zv)?;
    Ok(batch_to_field(tape.cplx(out).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{init_masks, MaskInitScheme, NoiseModel, Scene, SceneEncoding};
    use ndarray::{Array2, Array3};
    use prkd_oracle as oracle;

    fn random_field(h: usize, w: usize, seed: u64) -> Array2<Cplx<f64>> {
        rng::complex_normal_array::<f64>(&mut rng::stream(seed, "test-field", &[]), &[h, w])
            .into_dimensionality()
            .unwrap()
    }

    fn to_oracle(a: &Array2<Cplx<f64>>) -> Array2<oracle::C64> {
        a.mapv(|c| oracle::C64::new(c.re, c.im))
    }

    fn measured(seed: u64, l: usize, h: usize, w: usize) -> (MeasurementSet<f64>, PhaseMaskBank<f64>) {
        let x = random_field(h, w, seed);
        let masks = init_masks::<f64>(l, h, w, MaskInitScheme::UniformRandom, seed + 1).unwrap();
        let scene = Scene {
            field: x,
            encoding: SceneEncoding::AmplitudeObject,
            source_image: Array2::zeros((h, w)),
        };
        let y = crate::optics::sense(&scene, &masks, &NoiseModel::None, 0).unwrap();
        (y, masks)
    }

    #[test]
    fn gamma_flat_measurements_is_scaled_identity() {
        let masks = init_masks::<f64>(1, 4, 4, MaskInitScheme::Zeros, 0).unwrap();
        let y = MeasurementSet {
            intensities: Array3::from_elem((1, 4, 4), 1.0),
            noise_applied: NoiseModel::None,
        };
        let z = random_field(4, 4, 3);
        let out = gamma_apply(&z, &y, &masks).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!((a - b / 16.0).norm() < 1e-12);
        }
    }

    #[test]
    fn gamma_zero_measurements_gives_zero() {
        let masks = init_masks::<f64>(2, 4, 4, MaskInitScheme::UniformRandom, 5).unwrap();
        let y = MeasurementSet {
            intensities: Array3::zeros((2, 4, 4)),
            noise_applied: NoiseModel::None,
        };
        let z = random_field(4, 4, 6);
        let out = gamma_apply(&z, &y, &masks).unwrap();
        assert!(out.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn gamma_matches_dense_oracle_and_is_hermitian_psd() {
        let (y, masks) = measured(10, 2, 4, 4);
        let z = random_field(4, 4, 11);
        let out = gamma_apply(&z, &y, &masks).unwrap();

        let dense = oracle::gamma_dense(&y.intensities, &masks.phases);
        // dense * vec(z)
        let mut expect = vec![oracle::C64::new(0.0, 0.0); 16];
        for r in 0..16 {
            for c in 0..16 {
                let zc = z[[c / 4, c % 4]];
                expect[r] += dense[(r, c)] * oracle::C64::new(zc.re, zc.im);
            }
        }
        let scale: f64 = expect.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (r, a) in out.iter().enumerate() {
            let e = expect[r];
            assert!(((a.re - e.re).powi(2) + (a.im - e.im).powi(2)).sqrt() <= 1e-8 * scale);
        }

        // Hermitian + PSD of the dense operator
        let herm_err: f64 = (0..16)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .map(|(i, j)| (dense[(i, j)] - dense[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        assert!(herm_err <= 1e-10);
        let (vals, _) = oracle::hermitian_eig(&dense);
        assert!(vals[0] >= -1e-10);
    }

    #[test]
    fn gamma_is_linear() {
        let (y, masks) = measured(20, 2, 4, 4);
        let z1 = random_field(4, 4, 21);
        let z2 = random_field(4, 4, 22);
        let (a, b) = (Cplx::new(0.3, -1.1), Cplx::new(-0.8, 0.2));
        let combo = ndarray::Zip::from(&z1).and(&z2).map_collect(|&p, &q| a * p + b * q);
        let lhs = gamma_apply(&combo, &y, &masks).unwrap();
        let g1 = gamma_apply(&z1, &y, &masks).unwrap();
        let g2 = gamma_apply(&z2, &y, &masks).unwrap();
        for ((l, p), q) in lhs.iter().zip(g1.iter()).zip(g2.iter()) {
            assert!((l - (a * p + b * q)).norm() < 1e-10);
        }
    }

    #[test]
    fn rayleigh_quotient_is_real_nonnegative_and_nondecreasing() {
        let (y, masks) = measured(30, 3, 4, 4);
        let z = random_field(4, 4, 31);
        let gz = gamma_apply(&z, &y, &masks).unwrap();
        let quad: Cplx<f64> = z.iter().zip(gz.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!(quad.im.abs() < 1e-10);
        assert!(quad.re >= -1e-10);

        // power iteration with identity filter: Rayleigh quotient non-decreasing
        let psi = FilterKernel::<f64>::identity(3).unwrap();
        let mut zt = z.clone();
        let norm: f64 = zt.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        zt.mapv_inplace(|c| c / norm);
        let mut last = -f64::INFINITY;
        for _ in 0..20 {
            let gz = gamma_apply(&zt, &y, &masks).unwrap();
            let rq: Cplx<f64> = zt.iter().zip(gz.iter()).map(|(a, b)| a.conj() * b).sum();
            assert!(rq.re >= last - 1e-9, "rq {} < last {}", rq.re, last);
            last = rq.re;
            let f = apply_filter(&gz, &psi).unwrap();
            let n: f64 = f.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            zt = f.mapv(|c| c / n);
        }
    }

    #[test]
    fn filter_identity_and_box() {
        let z = random_field(5, 5, 40);
        let psi = FilterKernel::<f64>::identity(3).unwrap();
        let out = apply_filter(&z, &psi).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!((a - b).norm() < 1e-14);
        }

        let c = Cplx::new(0.7, -0.2);
        let constant = Array2::from_elem((5, 5), c);
        let psi = FilterKernel::<f64>::box_filter(3).unwrap();
        let out = apply_filter(&constant, &psi).unwrap();
        for i in 1..4 {
            for j in 1..4 {
                assert!((out[[i, j]] - c).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn filter_matches_naive_convolution_oracle() {
        let z = random_field(6, 6, 50);
        let coeffs = rng::normal_array::<f64>(&mut rng::stream(51, "psi", &[]), &[3, 3]);
        let psi = FilterKernel::new(coeffs.clone().into_dimensionality().unwrap()).unwrap();
        let out = apply_filter(&z, &psi).unwrap();
        let expect = oracle::kernel_filter_naive(
            &to_oracle(&z),
            &coeffs.into_dimensionality().unwrap(),
        );
        let scale: f64 = expect.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!(((a.re - b.re).powi(2) + (a.im - b.im).powi(2)).sqrt() <= 1e-10 * scale);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(
            FilterKernel::<f64>::new(Array2::zeros((2, 2))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spectral_initialize_finds_leading_eigenvector() {
        for seed in [60u64, 61, 62] {
            let (y, masks) = measured(seed, 2, 4, 4);
            let psi = FilterKernel::<f64>::identity(3).unwrap();
            let est = spectral_initialize(&y, &masks, &psi, 200, seed).unwrap();
            let norm: f64 = est.z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);

            let dense = oracle::gamma_dense(&y.intensities, &masks.phases);
            let (_, vecs) = oracle::hermitian_eig(&dense);
            let v1 = vecs.last().unwrap();
            let inner: oracle::C64 = est
                .z
                .iter()
                .enumerate()
                .map(|(i, c)| oracle::C64::new(c.re, c.im).conj() * v1[i])
                .sum();
            assert!(inner.norm() >= 0.999, "|<z, v1>| = {}", inner.norm());
        }
    }

    #[test]
    fn zero_measurements_degenerate_at_iteration_one() {
        let masks = init_masks::<f64>(1, 4, 4, MaskInitScheme::UniformRandom, 70).unwrap();
        let y = MeasurementSet {
            intensities: Array3::zeros((1, 4, 4)),
            noise_applied: NoiseModel::None,
        };
        let psi = FilterKernel::<f64>::box_filter(3).unwrap();
        match spectral_initialize(&y, &masks, &psi, 5, 0) {
            Err(Error::DegenerateInit { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("expected degenerate init, got {other:?}"),
        }
    }

    #[test]
    fn flat_measurements_fix_the_normalized_start() {
        let masks = init_masks::<f64>(1, 4, 4, MaskInitScheme::Zeros, 0).unwrap();
        let y = MeasurementSet {
            intensities: Array3::from_elem((1, 4, 4), 1.0),
            noise_applied: NoiseModel::None,
        };
        let psi = FilterKernel::<f64>::identity(3).unwrap();
        let seed = 123;
        let est = spectral_initialize(&y, &masks, &psi, 7, seed).unwrap();
        let mut z0 = rng::complex_normal_array::<f64>(&mut rng::stream(seed, "init-z0", &[]), &[1, 4, 4]);
        let n: f64 = z0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        z0.mapv_inplace(|c| c / n);
        for (a, b) in est.z.iter().zip(z0.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn determinism_same_seed_same_estimate() {
        let (y, masks) = measured(80, 2, 4, 4);
        let psi = FilterKernel::<f64>::box_filter(3).unwrap();
        let a = spectral_initialize(&y, &masks, &psi, 25, 9).unwrap();
        let b = spectral_initialize(&y, &masks, &psi, 25, 9).unwrap();
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn canonicalize_contract() {
        // already canonical
        let z = Array2::from_shape_fn((3, 3), |(i, j)| Cplx::new(1.0 + i as f64 + j as f64, 0.0));
        let out = canonicalize_phase(&z).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!((a - b).norm() < 1e-12);
        }

        // quotient by global phase, invariance, idempotence, norm preserved
        let z = random_field(4, 4, 90);
        let theta = 1.234f64;
        let rot = z.mapv(|c| c * Cplx::new(theta.cos(), theta.sin()));
        let c1 = canonicalize_phase(&z).unwrap();
        let c2 = canonicalize_phase(&rot).unwrap();
        for (a, b) in c1.iter().zip(c2.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
        let c3 = canonicalize_phase(&c1).unwrap();
        for (a, b) in c3.iter().zip(c1.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let n_in: f64 = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let n_out: f64 = c1.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((n_in - n_out).abs() < 1e-12 * n_in);

        // the anchor entry is real-nonnegative
        let (mut bi, mut bv) = (0, -1.0);
        for (i, c) in c1.iter().enumerate() {
            if c.norm_sqr() > bv {
                bv = c.norm_sqr();
                bi = i;
            }
        }
        let anchor = c1.as_slice().unwrap()[bi];
        assert!(anchor.im.abs() < 1e-12 && anchor.re >= 0.0);

        let zero = Array2::<Cplx<f64>>::zeros((2, 2));
        assert!(matches!(canonicalize_phase(&zero), Err(Error::Degenerate(_))));
    }
}
