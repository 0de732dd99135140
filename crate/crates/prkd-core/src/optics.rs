//! Differentiable forward sensing model: coded phase masks, far-field
//! propagation, intensity detection.
//!
//! One snapshot measures y_l = |F A_l x|^2 + omega_l with A_l = diag(e^{-j
//! phi_l}) and F the unitary 2-D DFT. The graph builders operate on batched
//! tensors; the per-scene functions wrap them with a throwaway tape so tests,
//! evaluation, and training all run the exact same numerics.

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fft::fft2_unitary;
use crate::num::{Cplx, Real};
use crate::rng;

/// How a grayscale source image is encoded into the complex optical field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneEncoding {
    /// field = image, a real amplitude in [0, 1].
    AmplitudeObject,
    /// field = exp(j * pi * image), unit modulus everywhere.
    PhaseObject,
}

/// Ground-truth complex optical field plus the grayscale image it came from.
#[derive(Debug, Clone)]
pub struct Scene<T: Real> {
    pub field: Array2<Cplx<T>>,
    pub encoding: SceneEncoding,
    pub source_image: Array2<T>,
}

impl<T: Real> Scene<T> {
    /// Build a scene from an image with entries in [0, 1].
    pub fn from_image(image: Array2<T>, encoding: SceneEncoding) -> Result<Self> {
        if image.is_empty() {
            return Err(Error::Config("scene image must be non-empty".into()));
        }
        if image.iter().any(|&v| !(T::zero()..=T::one()).contains(&v) || !v.is_finite()) {
            return Err(Error::Config("scene image entries must lie in [0, 1]".into()));
        }
        let field = match encoding {
            SceneEncoding::AmplitudeObject => image.mapv(|v| Cplx::new(v, T::zero())),
            SceneEncoding::PhaseObject => {
                let pi = T::of(std::f64::consts::PI);
                image.mapv(|v| {
                    let a = pi * v;
                    Cplx::new(a.cos(), a.sin())
                })
            }
        };
        Ok(Scene {
            field,
            encoding,
            source_image: image,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dim()
    }
}

/// Trainable phase parameters phi (radians) for L snapshots.
///
/// Training values are unconstrained reals; wrapping to [0, 2 pi) happens
/// only at export time.
#[derive(Debug, Clone)]
pub struct PhaseMaskBank<T: Real> {
    pub phases: Array3<T>,
}

impl<T: Real> PhaseMaskBank<T> {
    pub fn new(phases: Array3<T>) -> Result<Self> {
        if phases.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("phase mask entries must be finite".into()));
        }
        Ok(PhaseMaskBank { phases })
    }

    pub fn num_snapshots(&self) -> usize {
        self.phases.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, h, w) = self.phases.dim();
        (h, w)
    }

    /// Phases wrapped to [0, 2 pi), the representation used for export.
    pub fn wrapped(&self) -> Array3<T> {
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        self.phases.mapv(|p| {
            let mut t = p % two_pi;
            if t < T::zero() {
                t = t + two_pi;
            }
            t
        })
    }
}

/// Detector noise description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "parameter")]
pub enum NoiseModel {
    None,
    /// Additive Gaussian noise on intensities with the given standard
    /// deviation; negative results are clamped to zero.
    Gaussian(f64),
    /// Poisson shot noise: y = Poisson(scale * y) / scale.
    Poisson(f64),
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian(p) | NoiseModel::Poisson(p) => {
                if *p < 0.0 || !p.is_finite() {
                    Err(Error::Config(format!("noise parameter must be >= 0, got {p}")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// CDP intensities for L snapshots of one scene.
#[derive(Debug, Clone)]
pub struct MeasurementSet<T: Real> {
    pub intensities: Array3<T>,
    pub noise_applied: NoiseModel,
}

/// Sliced per-snapshot views of a batched sensing graph.
pub struct SenseVars {
    /// Stacked intensities [B, L, H, W].
    pub y: Var,
    /// Per-snapshot intensities [B, H, W], before noise.
    pub y_snapshots: Vec<Var>,
}

/// Build the noiseless sensing graph for a batch of fields [B, H, W] and a
/// mask bank variable [L, H, W]. Gradients flow to both the fields and the
/// phases.
pub fn sense_graph<T: Real>(tape: &mut Tape<T>, fields: Var, phases: Var) -> SenseVars {
    let l = tape.real(phases).shape()[0];
    assert_eq!(
        tape.cplx(fields).shape()[1..],
        tape.real(phases).shape()[1..],
        "scene and masks must share H x W"
    );
    let mut y_snapshots = Vec::with_capacity(l);
    for s in 0..l {
        let phi = tape.slice0(phases, s);
        let mask = tape.modulate(phi);
        let modulated = tape.cmul_bcast(fields, mask);
        let spectrum = tape.dft2(modulated);
        y_snapshots.push(tape.abs2(spectrum));
    }
    let y = tape.stack_snapshots(&y_snapshots);
    SenseVars { y, y_snapshots }
}

/// Add a constant noise sample to stacked intensities and clamp at zero.
pub fn add_noise_graph<T: Real>(tape: &mut Tape<T>, y: Var, omega: Var) -> Var {
    let noisy = tape.add(y, omega);
    tape.relu(noisy)
}

/// Draw the additive noise realization for given clean intensities.
/// Returns `None` for the noiseless model. The sample is a constant with
/// respect to differentiation.
pub fn draw_noise<T: Real>(
    noise: &NoiseModel,
    clean: &ArrayD<T>,
    seed: u64,
    tag: &[u64],
) -> Result<Option<ArrayD<T>>> {
    noise.validate()?;
    match noise {
        NoiseModel::None => Ok(None),
        NoiseModel::Gaussian(sigma) => {
            let mut r = rng::stream(seed, "sense-gaussian", tag);
            let sample = rng::normal_array::<T>(&mut r, clean.shape());
            Ok(Some(sample.mapv(|v| v * T::of(*sigma))))
        }
        NoiseModel::Poisson(scale) => {
            if *scale <= 0.0 {
                return Err(Error::Config(
                    "poisson noise requires a positive photon scale".into(),
                ));
            }
            let mut r = rng::stream(seed, "sense-poisson", tag);
            let mut omega = ArrayD::<T>::zeros(clean.raw_dim());
            ndarray::Zip::from(&mut omega).and(clean).for_each(|o, &c| {
                let lambda = scale * c.to_f64x();
                let sampled = if lambda > 0.0 {
                    Poisson::new(lambda).expect("lambda > 0").sample(&mut r) / scale
                } else {
                    0.0
                };
                *o = T::of(sampled) - c;
            });
            Ok(Some(omega))
        }
    }
}

/// Elementwise multiplication by the mask A = diag(e^{-j phi}):
/// out = x * e^{-j phi}. Preserves moduli.
pub fn apply_mask<T: Real>(x: &Array2<Cplx<T>>, phases: &Array2<T>) -> Result<Array2<Cplx<T>>> {
    if x.dim() != phases.dim() {
        return Err(Error::Dim(format!(
            "apply_mask: field {:?} vs phases {:?}",
            x.dim(),
            phases.dim()
        )));
    }
    let mut out = x.clone();
    out.zip_mut_with(phases, |v, &p| {
        *v = *v * Cplx::new(p.cos(), -p.sin());
    });
    Ok(out)
}

/// Unitary 2-D DFT of a single field.
pub fn dft2<T: Real>(x: &Array2<Cplx<T>>) -> Array2<Cplx<T>> {
    let out = fft2_unitary(&x.to_owned().into_dyn(), false);
    out.into_dimensionality().expect("rank 2")
}

/// Unitary inverse 2-D DFT of a single field.
pub fn idft2<T: Real>(x: &Array2<Cplx<T>>) -> Array2<Cplx<T>> {
    let out = fft2_unitary(&x.to_owned().into_dyn(), true);
    out.into_dimensionality().expect("rank 2")
}

/// Full forward model for one scene: y_l = |F A_l x|^2 + omega_l, clamped at
/// zero from below when noise is applied.
pub fn sense<T: Real>(
    scene: &Scene<T>,
    masks: &PhaseMaskBank<T>,
    noise: &NoiseModel,
    rng_seed: u64,
) -> Result<MeasurementSet<T>> {
    if scene.dims() != masks.dims() {
        return Err(Error::Dim(format!(
            "sense: scene {:?} vs masks {:?}",
            scene.dims(),
            masks.dims()
        )));
    }
    noise.validate()?;
    let (h, w) = scene.dims();
    let l = masks.num_snapshots();

    let mut tape = Tape::<T>::new();
    let field = scene
        .field
        .to_owned()
        .into_shape_with_order(IxDyn(&[1, h, w]))
        .expect("batch of one");
    let fields = tape.constant_cplx(field);
    let phases = tape.constant_real(masks.phases.to_owned().into_dyn());
    let sv = sense_graph(&mut tape, fields, phases);
    let clean = tape.real(sv.y).clone();

    let intensities = match draw_noise(noise, &clean, rng_seed, &[])? {
        None => clean,
        Some(omega) => {
            let om = tape.constant_real(omega);
            let noisy = add_noise_graph(&mut tape, sv.y, om);
            tape.real(noisy).clone()
        }
    };
    let intensities = intensities
        .into_shape_with_order(IxDyn(&[l, h, w]))
        .expect("drop batch axis")
        .into_dimensionality()
        .expect("rank 3");
    Ok(MeasurementSet {
        intensities,
        noise_applied: *noise,
    })
}

/// Mask initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskInitScheme {
    UniformRandom,
    Zeros,
}

/// Create a phase mask bank: i.i.d. uniform phases in [0, 2 pi) or zeros.
/// The same seed always produces the same bank.
pub fn init_masks<T: Real>(
    l: usize,
    h: usize,
    w: usize,
    scheme: MaskInitScheme,
    rng_seed: u64,
) -> Result<PhaseMaskBank<T>> {
    if l == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "mask bank dimensions must be positive, got {l}x{h}x{w}"
        )));
    }
    let phases = match scheme {
        MaskInitScheme::Zeros => ArrayD::zeros(IxDyn(&[l, h, w])),
        MaskInitScheme::UniformRandom => {
            let mut r = rng::stream(rng_seed, "mask-init", &[]);
            rng::uniform_array::<T>(&mut r, &[l, h, w], 0.0, 2.0 * std::f64::consts::PI)
        }
    };
    PhaseMaskBank::new(phases.into_dimensionality().expect("rank 3"))
}

/// Write a mask bank as a flat little-endian f32 binary (row-major, L then H
/// then W, phases wrapped to [0, 2 pi)) plus a JSON sidecar describing it.
pub fn export_mask_bank<T: Real>(
    bank: &PhaseMaskBank<T>,
    bin_path: &std::path::Path,
    json_path: &std::path::Path,
) -> Result<()> {
    let (l, h, w) = bank.phases.dim();
    let wrapped = bank.wrapped();
    let mut bytes = Vec::with_capacity(wrapped.len() * 4);
    for &v in wrapped.as_standard_layout().iter() {
        bytes.extend_from_slice(&(v.to_f64x() as f32).to_le_bytes());
    }
    std::fs::write(bin_path, bytes)?;
    let sidecar = serde_json::json!({"L": l, "H": h, "W": w, "wrap": "0..2pi"});
    std::fs::write(json_path, serde_json::to_string_pretty(&sidecar).unwrap())?;
    Ok(())
}

/// Read back a mask bank exported by [`export_mask_bank`].
pub fn import_mask_bank(
    bin_path: &std::path::Path,
    json_path: &std::path::Path,
) -> Result<PhaseMaskBank<f32>> {
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path)?)
        .map_err(|e| Error::Format(format!("mask sidecar: {e}")))?;
    let get = |k: &str| -> Result<usize> {
        sidecar[k]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("mask sidecar missing {k}")))
    };
    let (l, h, w) = (get("L")?, get("H")?, get("W")?);
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() != l * h * w * 4 {
        return Err(Error::Truncated {
            offset: bytes.len() as u64,
            what: format!("mask binary: expected {} bytes", l * h * w * 4),
        });
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    PhaseMaskBank::new(Array3::from_shape_vec((l, h, w), vals).expect("shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};
    use prkd_oracle as oracle;

    fn random_field(h: usize, w: usize, seed: u64) -> Array2<Cplx<f64>> {
        let arr = rng::complex_normal_array::<f64>(&mut rng::stream(seed, "test-field", &[]), &[h, w]);
        arr.into_dimensionality().unwrap()
    }

    fn random_phases(l: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        init_masks::<f64>(l, h, w, MaskInitScheme::UniformRandom, seed)
            .unwrap()
            .phases
    }

    fn to_oracle(a: &Array2<Cplx<f64>>) -> Array2<oracle::C64> {
        a.mapv(|c| oracle::C64::new(c.re, c.im))
    }

    #[test]
    fn apply_mask_identity_and_pi() {
        let x = random_field(3, 3, 1);
        let zero = Array2::<f64>::zeros((3, 3));
        let out = apply_mask(&x, &zero).unwrap();
        assert_eq!(out, x);

        let ones = Array2::from_elem((3, 3), Cplx::new(1.0, 0.0));
        let pi = Array2::from_elem((3, 3), std::f64::consts::PI);
        let out = apply_mask(&ones, &pi).unwrap();
        for v in out.iter() {
            assert!((v.re + 1.0).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn apply_mask_matches_scalar_oracle_and_preserves_modulus() {
        let x = random_field(4, 4, 2);
        let phi = random_phases(1, 4, 4, 3).index_axis_move(Axis(0), 0);
        let out = apply_mask(&x, &phi).unwrap();
        let expect = oracle::apply_mask_naive(&to_oracle(&x), &phi);
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a.re - b.re).abs() < 1e-12 && (a.im - b.im).abs() < 1e-12);
        }
        for (a, b) in out.iter().zip(x.iter()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_mask_shape_mismatch_errors() {
        let x = random_field(4, 4, 4);
        let phi = Array2::<f64>::zeros((3, 4));
        assert!(matches!(apply_mask(&x, &phi), Err(Error::Dim(_))));
    }

    #[test]
    fn dft2_delta_and_constant() {
        let mut delta = Array2::<Cplx<f64>>::zeros((4, 4));
        delta[[0, 0]] = Cplx::new(1.0, 0.0);
        let f = dft2(&delta);
        for v in f.iter() {
            assert!((v.re - 0.25).abs() < 1e-12 && v.im.abs() < 1e-12);
        }

        let c = Cplx::new(0.3, -0.7);
        let constant = Array2::from_elem((4, 4), c);
        let f = dft2(&constant);
        assert!((f[[0, 0]] - c * 4.0).norm() < 1e-12);
        for (ix, v) in f.indexed_iter() {
            if ix != (0, 0) {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dft2_matches_naive_oracle_and_inverts() {
        let x = random_field(4, 4, 5);
        let f = dft2(&x);
        let expect = oracle::dft2_naive(&to_oracle(&x), false);
        let norm: f64 = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for (a, b) in f.iter().zip(expect.iter()) {
            assert!(((a.re - b.re).powi(2) + (a.im - b.im).powi(2)).sqrt() < 1e-10 * norm);
        }
        let back = idft2(&f);
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).norm() < 1e-10 * norm);
        }
        let fnorm: f64 = f.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((fnorm - norm).abs() < 1e-10 * norm);
    }

    #[test]
    fn sense_zero_field_and_delta() {
        let img = Array2::<f64>::zeros((4, 4));
        let scene = Scene::from_image(img, SceneEncoding::AmplitudeObject).unwrap();
        let masks = init_masks::<f64>(3, 4, 4, MaskInitScheme::UniformRandom, 7).unwrap();
        let y = sense(&scene, &masks, &NoiseModel::None, 0).unwrap();
        assert!(y.intensities.iter().all(|&v| v == 0.0));

        let mut img = Array2::<f64>::zeros((4, 4));
        img[[0, 0]] = 1.0;
        let scene = Scene::from_image(img, SceneEncoding::AmplitudeObject).unwrap();
        let masks = init_masks::<f64>(1, 4, 4, MaskInitScheme::Zeros, 0).unwrap();
        let y = sense(&scene, &masks, &NoiseModel::None, 0).unwrap();
        let mut sum = 0.0;
        for &v in y.intensities.iter() {
            assert!((v - 1.0 / 16.0).abs() < 1e-12);
            sum += v;
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sense_matches_bruteforce_oracle() {
        for seed in 0..3u64 {
            let x = random_field(4, 4, 100 + seed);
            let phases = random_phases(3, 4, 4, 200 + seed);
            let scene = Scene {
                field: x.clone(),
                encoding: SceneEncoding::AmplitudeObject,
                source_image: Array2::zeros((4, 4)),
            };
            let masks = PhaseMaskBank::new(phases.clone()).unwrap();
            let y = sense(&scene, &masks, &NoiseModel::None, 0).unwrap();
            let expect = oracle::sense_naive(&to_oracle(&x), &phases);
            let scale: f64 = expect.iter().cloned().fold(0.0, f64::max).max(1e-300);
            for (a, b) in y.intensities.iter().zip(expect.iter()) {
                assert!((a - b).abs() <= 1e-10 * scale, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn parseval_invariant() {
        for seed in 0..25u64 {
            let x = random_field(5, 3, 300 + seed);
            let phases = random_phases(2, 5, 3, 400 + seed);
            let scene = Scene {
                field: x.clone(),
                encoding: SceneEncoding::AmplitudeObject,
                source_image: Array2::zeros((5, 3)),
            };
            let masks = PhaseMaskBank::new(phases).unwrap();
            let y = sense(&scene, &masks, &NoiseModel::None, 0).unwrap();
            let energy: f64 = x.iter().map(|c| c.norm_sqr()).sum();
            for l in 0..2 {
                let s: f64 = y.intensities.index_axis(Axis(0), l).sum();
                assert!((s - energy).abs() <= 1e-6 * energy);
            }
        }
    }

    #[test]
    fn global_phase_invariance() {
        let x = random_field(4, 4, 11);
        let theta = 1.234f64;
        let rot = x.mapv(|c| c * Cplx::new(theta.cos(), theta.sin()));
        let phases = random_phases(2, 4, 4, 12);
        let masks = PhaseMaskBank::new(phases).unwrap();
        let mk = |f: Array2<Cplx<f64>>| Scene {
            field: f,
            encoding: SceneEncoding::AmplitudeObject,
            source_image: Array2::zeros((4, 4)),
        };
        let y1 = sense(&mk(x), &masks, &NoiseModel::None, 0).unwrap();
        let y2 = sense(&mk(rot), &masks, &NoiseModel::None, 0).unwrap();
        for (a, b) in y1.intensities.iter().zip(y2.intensities.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn noise_keeps_intensities_nonnegative_and_is_seeded() {
        let img = Array2::<f64>::from_elem((4, 4), 0.01);
        let scene = Scene::from_image(img, SceneEncoding::AmplitudeObject).unwrap();
        let masks = init_masks::<f64>(2, 4, 4, MaskInitScheme::UniformRandom, 1).unwrap();
        let noise = NoiseModel::Gaussian(0.5);
        let y1 = sense(&scene, &masks, &noise, 42).unwrap();
        let y2 = sense(&scene, &masks, &noise, 42).unwrap();
        assert_eq!(y1.intensities, y2.intensities);
        assert!(y1.intensities.iter().all(|&v| v >= 0.0));
        // clamp must have engaged somewhere for this sigma
        assert!(y1.intensities.iter().any(|&v| v == 0.0));

        let yp = sense(&scene, &masks, &NoiseModel::Poisson(50.0), 7).unwrap();
        assert!(yp.intensities.iter().all(|&v| v >= 0.0));
        assert!(matches!(
            sense(&scene, &masks, &NoiseModel::Gaussian(-1.0), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mask_unimodularity() {
        let phases = random_phases(1, 6, 6, 77).index_axis_move(Axis(0), 0);
        let ones = Array2::from_elem((6, 6), Cplx::new(1.0, 0.0));
        let masked = apply_mask(&ones, &phases).unwrap();
        for v in masked.iter() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_masks_contract() {
        let z = init_masks::<f64>(2, 4, 4, MaskInitScheme::Zeros, 9).unwrap();
        assert!(z.phases.iter().all(|&v| v == 0.0));
        assert_eq!(z.phases.dim(), (2, 4, 4));

        let a = init_masks::<f64>(1, 8, 8, MaskInitScheme::UniformRandom, 7).unwrap();
        let b = init_masks::<f64>(1, 8, 8, MaskInitScheme::UniformRandom, 7).unwrap();
        assert_eq!(a.phases, b.phases);

        let big = init_masks::<f64>(1, 64, 64, MaskInitScheme::UniformRandom, 5).unwrap();
        let mean = big.phases.mean().unwrap();
        let se = (2.0 * std::f64::consts::PI / 12f64.sqrt()) / (64.0f64 * 64.0).sqrt();
        assert!((mean - std::f64::consts::PI).abs() < 3.0 * se);

        assert!(matches!(
            init_masks::<f64>(0, 4, 4, MaskInitScheme::Zeros, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sense_gradient_wrt_phases_matches_finite_differences() {
        // scalar functional g = sum(y^2); 4x4, L=2, double precision
        let x = random_field(4, 4, 21);
        let phases = random_phases(2, 4, 4, 22);

        let eval = |ph: &Array3<f64>| -> f64 {
            let mut tape = Tape::<f64>::new();
            let f = tape.constant_cplx(
                x.to_owned()
                    .into_shape_with_order(IxDyn(&[1, 4, 4]))
                    .unwrap(),
            );
            let p = tape.leaf_real(ph.to_owned().into_dyn(), true);
            let sv = sense_graph(&mut tape, f, p);
            let root = tape.sumsq(sv.y);
            tape.scalar(root)
        };

        let mut tape = Tape::<f64>::new();
        let f = tape.constant_cplx(
            x.to_owned()
                .into_shape_with_order(IxDyn(&[1, 4, 4]))
                .unwrap(),
        );
        let p = tape.leaf_real(phases.to_owned().into_dyn(), true);
        let sv = sense_graph(&mut tape, f, p);
        let root = tape.sumsq(sv.y);
        let grads = tape.backward(root);
        let g = grads.get(p).unwrap().real().clone();

        let h = 1e-4;
        for flat in 0..phases.len() {
            let mut plus = phases.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let mut minus = phases.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ad = g.as_slice().unwrap()[flat];
            assert!(
                (ad - fd).abs() <= 1e-4 * fd.abs().max(1e-6),
                "entry {flat}: ad={ad} fd={fd}"
            );
        }
    }

    #[test]
    fn mask_export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bank = PhaseMaskBank::new(Array3::from_shape_fn((2, 3, 3), |(l, i, j)| {
            (l as f64) * 5.0 - 3.0 + (i as f64) * 0.7 + (j as f64) * 0.1
        }))
        .unwrap();
        let bin = dir.path().join("masks.bin");
        let json = dir.path().join("masks.json");
        export_mask_bank(&bank, &bin, &json).unwrap();
        let back = import_mask_bank(&bin, &json).unwrap();
        assert_eq!(back.phases.dim(), (2, 3, 3));
        let two_pi = 2.0 * std::f64::consts::PI;
        for (a, b) in back.phases.iter().zip(bank.phases.iter()) {
            let wrapped = b.rem_euclid(two_pi);
            assert!((*a as f64 - wrapped).abs() < 1e-6);
            assert!(*a >= 0.0 && (*a as f64) < two_pi);
        }
    }
}
