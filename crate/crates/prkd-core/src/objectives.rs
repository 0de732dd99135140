//! Loss functions: reconstruction task loss, phase-level regularizer, the
//! two distillation losses, and the combined objectives.
//!
//! Norms are plain sums of squares over all entries of one scene, averaged
//! over the batch only. The weights form an affine combination: sigma is
//! always derived as 1 - alpha - beta and can never be set directly.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::optics::PhaseMaskBank;

/// Default number of allowed phase levels for the regularizer.
pub const DEFAULT_REG_LEVELS: usize = 4;

/// Weights of the combined objective. `sigma` is derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossWeightsRaw", into = "LossWeightsRaw")]
pub struct LossWeights {
    alpha: f64,
    beta: f64,
    rho: f64,
    reg_levels: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossWeightsRaw {
    alpha: f64,
    beta: f64,
    rho: f64,
    reg_levels: usize,
}

impl TryFrom<LossWeightsRaw> for LossWeights {
    type Error = Error;
    fn try_from(raw: LossWeightsRaw) -> Result<Self> {
        LossWeights::new(raw.alpha, raw.beta, raw.rho, raw.reg_levels)
    }
}

impl From<LossWeights> for LossWeightsRaw {
    fn from(w: LossWeights) -> Self {
        LossWeightsRaw {
            alpha: w.alpha,
            beta: w.beta,
            rho: w.rho,
            reg_levels: w.reg_levels,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, rho: f64, reg_levels: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::Weights(format!(
                "alpha and beta must lie in [0, 1], got alpha={alpha}, beta={beta}"
            )));
        }
        if alpha + beta > 1.0 {
            return Err(Error::Weights(format!(
                "alpha + beta must not exceed 1 (sigma = 1 - alpha - beta), got {}",
                alpha + beta
            )));
        }
        if rho < 0.0 || !rho.is_finite() {
            return Err(Error::Weights(format!("rho must be >= 0, got {rho}")));
        }
        if reg_levels < 1 {
            return Err(Error::Weights("reg_levels must be >= 1".into()));
        }
        Ok(LossWeights {
            alpha,
            beta,
            rho,
            reg_levels,
        })
    }

    /// Paper-style defaults for distillation: alpha 0.6, beta 0.3 (so sigma
    /// 0.1), rho 0.01, four phase levels.
    pub fn kd_default() -> Self {
        LossWeights::new(0.6, 0.3, 0.01, DEFAULT_REG_LEVELS).unwrap()
    }

    /// End-to-end training without distillation terms: alpha 1.
    pub fn e2e_default() -> Self {
        LossWeights::new(1.0, 0.0, 0.01, DEFAULT_REG_LEVELS).unwrap()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// Derived: sigma = 1 - alpha - beta.
    pub fn sigma(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn reg_levels(&self) -> usize {
        self.reg_levels
    }
}

fn batch_size<T: Real>(a: &ArrayD<T>) -> Result<usize> {
    let q = a.shape().first().copied().unwrap_or(0);
    if q == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    Ok(q)
}

/// Graph: (1/Q) * sum_q ||xhat_q - x_q||^2 over batched tensors.
pub fn task_loss_graph<T: Real>(tape: &mut Tape<T>, xhat: Var, x: Var) -> Var {
    let q = tape.real(xhat).shape()[0];
    let d = tape.sub(xhat, x);
    let s = tape.sumsq(d);
    tape.scale(s, T::of(1.0 / q as f64))
}

/// Graph: mean squared wrapped offset of phases to the nearest allowed level.
pub fn mask_regularizer_graph<T: Real>(tape: &mut Tape<T>, phases: Var, levels: usize) -> Var {
    tape.level_quantization_penalty(phases, levels)
}

/// Graph: (1/Q) * sum_q || mean_l y_t[q,l] - mean_l y_s[q,l] ||^2.
pub fn cdp_loss_graph<T: Real>(tape: &mut Tape<T>, y_teacher: Var, y_student: Var) -> Var {
    let q = tape.real(y_teacher).shape()[0];
    let mt = tape.mean_snapshots(y_teacher);
    let ms = tape.mean_snapshots(y_student);
    let d = tape.sub(mt, ms);
    let s = tape.sumsq(d);
    tape.scale(s, T::of(1.0 / q as f64))
}

/// Graph: (1/Q) * sum_q ||f_t[q] - f_s[q]||^2.
pub fn feat_loss_graph<T: Real>(tape: &mut Tape<T>, f_teacher: Var, f_student: Var) -> Var {
    let q = tape.real(f_teacher).shape()[0];
    let d = tape.sub(f_teacher, f_student);
    let s = tape.sumsq(d);
    tape.scale(s, T::of(1.0 / q as f64))
}

/// Graph combination alpha * task + rho * reg + beta * cdp + sigma * feat.
///
/// The summation order is fixed as ((alpha*task + rho*reg) + beta*cdp) +
/// sigma*feat so that beta = sigma = 0 reproduces the end-to-end objective
/// bit for bit.
pub fn kd_objective_graph<T: Real>(
    tape: &mut Tape<T>,
    weights: &LossWeights,
    task: Var,
    reg: Var,
    cdp: Option<Var>,
    feat: Option<Var>,
) -> Var {
    let t = tape.scale(task, T::of(weights.alpha()));
    let r = tape.scale(reg, T::of(weights.rho()));
    let mut total = tape.add(t, r);
    if let Some(c) = cdp {
        let c = tape.scale(c, T::of(weights.beta()));
        total = tape.add(total, c);
    }
    if let Some(f) = feat {
        let f = tape.scale(f, T::of(weights.sigma()));
        total = tape.add(total, f);
    }
    total
}

/// Mean over the batch of per-scene squared reconstruction error.
pub fn task_loss<T: Real>(xhat: &ArrayD<T>, x: &ArrayD<T>) -> Result<T> {
    if xhat.shape() != x.shape() {
        return Err(Error::Dim(format!(
            "task_loss: {:?} vs {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    let q = batch_size(x)?;
    let mut tape = Tape::<T>::new();
    let a = tape.constant_real(xhat.clone());
    let b = tape.constant_real(x.clone());
    let _ = q;
    let root = task_loss_graph(&mut tape, a, b);
    Ok(tape.scalar(root))
}

/// Regularizer pulling phases toward P equispaced levels; zero exactly
/// on-level, bounded by (pi/P)^2.
pub fn mask_regularizer<T: Real>(masks: &PhaseMaskBank<T>, levels: usize) -> Result<T> {
    if levels < 1 {
        return Err(Error::Config("regularizer needs levels >= 1".into()));
    }
    let mut tape = Tape::<T>::new();
    let p = tape.constant_real(masks.phases.to_owned().into_dyn());
    let root = mask_regularizer_graph(&mut tape, p, levels);
    Ok(tape.scalar(root))
}

/// Distillation loss between snapshot-averaged measurement batches
/// [Q, L_t, H, W] and [Q, L_s, H, W]; snapshot counts may differ.
pub fn cdp_loss<T: Real>(y_teacher: &ArrayD<T>, y_student: &ArrayD<T>) -> Result<T> {
    if y_teacher.ndim() != 4 || y_student.ndim() != 4 {
        return Err(Error::Dim("cdp_loss expects [Q, L, H, W] batches".into()));
    }
    let (qt, qs) = (y_teacher.shape()[0], y_student.shape()[0]);
    if qt != qs || y_teacher.shape()[2..] != y_student.shape()[2..] {
        return Err(Error::Dim(format!(
            "cdp_loss: teacher {:?} vs student {:?}",
            y_teacher.shape(),
            y_student.shape()
        )));
    }
    batch_size(y_teacher)?;
    let mut tape = Tape::<T>::new();
    let a = tape.constant_real(y_teacher.clone());
    let b = tape.constant_real(y_student.clone());
    let root = cdp_loss_graph(&mut tape, a, b);
    Ok(tape.scalar(root))
}

/// Feature-alignment loss between equally shaped feature batches. A shape
/// mismatch signals diverging teacher/student architectures.
pub fn feat_loss<T: Real>(f_teacher: &ArrayD<T>, f_student: &ArrayD<T>) -> Result<T> {
    if f_teacher.shape() != f_student.shape() {
        return Err(Error::ArchMismatch(format!(
            "feature shapes differ: teacher {:?} vs student {:?}",
            f_teacher.shape(),
            f_student.shape()
        )));
    }
    batch_size(f_teacher)?;
    let mut tape = Tape::<T>::new();
    let a = tape.constant_real(f_teacher.clone());
    let b = tape.constant_real(f_student.clone());
    let root = feat_loss_graph(&mut tape, a, b);
    Ok(tape.scalar(root))
}

/// alpha * task + rho * reg.
pub fn e2e_objective(weights: &LossWeights, task: f64, reg: f64) -> f64 {
    weights.alpha() * task + weights.rho() * reg
}

/// alpha * task + rho * reg + beta * cdp + sigma * feat, summed in the same
/// order as the graph version.
pub fn kd_objective(weights: &LossWeights, task: f64, reg: f64, cdp: f64, feat: f64) -> f64 {
    ((weights.alpha() * task + weights.rho() * reg) + weights.beta() * cdp)
        + weights.sigma() * feat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{Array3, Array4, IxDyn};
    use prkd_oracle as oracle;

    fn rand4(shape: [usize; 4], seed: u64) -> Array4<f64> {
        rng::uniform_array::<f64>(&mut rng::stream(seed, "loss-test", &[]), &shape, -1.0, 1.0)
            .into_dimensionality()
            .unwrap()
    }

    #[test]
    fn weights_constraints() {
        let w = LossWeights::new(0.6, 0.3, 0.01, 4).unwrap();
        assert!((w.alpha() + w.beta() + w.sigma() - 1.0).abs() < 1e-15);
        assert!((w.sigma() - 0.1).abs() < 1e-12);
        assert!(LossWeights::new(0.8, 0.3, 0.0, 4).is_err());
        assert!(LossWeights::new(-0.1, 0.0, 0.0, 4).is_err());
        assert!(LossWeights::new(0.5, 0.0, -1.0, 4).is_err());
        assert!(LossWeights::new(0.5, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn weights_serde_rejects_explicit_sigma() {
        let ok: LossWeights =
            serde_json::from_str(r#"{"alpha":0.6,"beta":0.3,"rho":0.01,"reg_levels":4}"#).unwrap();
        assert!((ok.sigma() - 0.1).abs() < 1e-12);
        let bad = serde_json::from_str::<LossWeights>(
            r#"{"alpha":0.6,"beta":0.3,"rho":0.01,"reg_levels":4,"sigma":0.2}"#,
        );
        assert!(bad.is_err());
        // invalid affine combination also rejected at the serde boundary
        let bad =
            serde_json::from_str::<LossWeights>(r#"{"alpha":0.9,"beta":0.3,"rho":0.0,"reg_levels":4}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn task_loss_examples_and_oracle() {
        let x = rand4([1, 1, 4, 4], 1).into_dyn();
        assert_eq!(task_loss(&x, &x).unwrap(), 0.0);

        let xhat = &x + 0.5;
        assert!((task_loss(&xhat, &x).unwrap() - 4.0).abs() < 1e-12);

        let a = rand4([3, 1, 5, 4], 2);
        let b = rand4([3, 1, 5, 4], 3);
        let got = task_loss(&a.clone().into_dyn(), &b.clone().into_dyn()).unwrap();
        let expect = oracle::task_loss_naive(&a, &b);
        assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1e-300));

        let empty = ArrayD::<f64>::zeros(IxDyn(&[0, 1, 2, 2]));
        assert!(matches!(task_loss(&empty, &empty), Err(Error::Config(_))));
        let wrong = rand4([3, 1, 4, 5], 4).into_dyn();
        assert!(matches!(task_loss(&a.into_dyn(), &wrong), Err(Error::Dim(_))));
    }

    #[test]
    fn mask_regularizer_examples_and_oracle() {
        let zeros = PhaseMaskBank::new(Array3::<f64>::zeros((2, 3, 3))).unwrap();
        assert_eq!(mask_regularizer(&zeros, 7).unwrap(), 0.0);

        for p in [1usize, 2, 4] {
            let worst = std::f64::consts::PI / p as f64;
            let bank = PhaseMaskBank::new(Array3::from_elem((1, 1, 1), worst)).unwrap();
            let got = mask_regularizer(&bank, p).unwrap();
            assert!((got - worst * worst).abs() < 1e-12);
        }

        let phases: Array3<f64> = rng::uniform_array::<f64>(
            &mut rng::stream(9, "reg", &[]),
            &[2, 4, 4],
            -10.0,
            10.0,
        )
        .into_dimensionality()
        .unwrap();
        let bank = PhaseMaskBank::new(phases.clone()).unwrap();
        let got = mask_regularizer(&bank, 4).unwrap();
        let expect = oracle::mask_reg_naive(&phases, 4);
        assert!((got - expect).abs() <= 1e-10 * expect);
        // bounded by (pi/P)^2
        assert!(got <= (std::f64::consts::PI / 4.0).powi(2) + 1e-15);

        assert!(matches!(mask_regularizer(&bank, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cdp_loss_examples_and_oracle() {
        let yt = rand4([2, 3, 4, 4], 10).mapv(f64::abs);
        // student with equal snapshot averages: copy the teacher average L_s times
        let avg = yt.mean_axis(ndarray::Axis(1)).unwrap();
        let mut ys = Array4::<f64>::zeros((2, 1, 4, 4));
        ys.index_axis_mut(ndarray::Axis(1), 0).assign(&avg);
        assert!(cdp_loss(&yt.clone().into_dyn(), &ys.clone().into_dyn()).unwrap() < 1e-18);

        let offset = ys.mapv(|v| v + 0.5);
        let single_t = ys.clone();
        let got = cdp_loss(&single_t.into_dyn(), &offset.into_dyn()).unwrap();
        assert!((got - 16.0 * 0.25 / 2.0 * 2.0).abs() < 1e-10); // Q=2 scenes, each 4.0

        let yt = rand4([2, 3, 4, 4], 11).mapv(f64::abs);
        let ys = rand4([2, 1, 4, 4], 12).mapv(f64::abs);
        let got = cdp_loss(&yt.clone().into_dyn(), &ys.clone().into_dyn()).unwrap();
        let expect = oracle::cdp_loss_naive(&yt, &ys);
        assert!((got - expect).abs() <= 1e-10 * expect);

        let bad = rand4([3, 1, 4, 4], 13).into_dyn();
        assert!(matches!(
            cdp_loss(&yt.into_dyn(), &bad),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn cdp_loss_snapshot_permutation_invariance() {
        let yt = rand4([2, 4, 3, 3], 20).mapv(f64::abs);
        let mut perm = yt.clone();
        // swap snapshots 0 and 3, 1 and 2
        for q in 0..2 {
            for (a, b) in [(0usize, 3usize), (1, 2)] {
                let ya = yt.index_axis(ndarray::Axis(0), q).index_axis(ndarray::Axis(0), a).to_owned();
                let yb = yt.index_axis(ndarray::Axis(0), q).index_axis(ndarray::Axis(0), b).to_owned();
                perm.index_axis_mut(ndarray::Axis(0), q)
                    .index_axis_mut(ndarray::Axis(0), a)
                    .assign(&yb);
                perm.index_axis_mut(ndarray::Axis(0), q)
                    .index_axis_mut(ndarray::Axis(0), b)
                    .assign(&ya);
            }
        }
        let ys = rand4([2, 2, 3, 3], 21).mapv(f64::abs);
        let a = cdp_loss(&yt.into_dyn(), &ys.clone().into_dyn()).unwrap();
        let b = cdp_loss(&perm.into_dyn(), &ys.into_dyn()).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1e-300));
    }

    #[test]
    fn feat_loss_examples_and_oracle() {
        let f = rand4([1, 2, 2, 2], 30);
        assert_eq!(
            feat_loss(&f.clone().into_dyn(), &f.clone().into_dyn()).unwrap(),
            0.0
        );

        let g = f.mapv(|v| v + 1.0);
        assert!((feat_loss(&f.clone().into_dyn(), &g.into_dyn()).unwrap() - 8.0).abs() < 1e-12);

        let a = rand4([2, 3, 2, 2], 31);
        let b = rand4([2, 3, 2, 2], 32);
        let got = feat_loss(&a.clone().into_dyn(), &b.clone().into_dyn()).unwrap();
        let expect = oracle::feat_loss_naive(&a, &b);
        assert!((got - expect).abs() <= 1e-10 * expect);

        let wrong = rand4([2, 4, 2, 2], 33).into_dyn();
        assert!(matches!(
            feat_loss(&a.into_dyn(), &wrong),
            Err(Error::ArchMismatch(_))
        ));
    }

    #[test]
    fn objective_arithmetic_and_reduction() {
        let w = LossWeights::new(1.0, 0.0, 0.0, 4).unwrap();
        assert_eq!(e2e_objective(&w, 2.5, 123.0), 2.5);

        let w = LossWeights::new(1.0, 0.0, 0.1, 4).unwrap();
        assert!((e2e_objective(&w, 2.0, 3.0) - 2.3).abs() < 1e-15);

        let w = LossWeights::new(0.6, 0.3, 0.0, 4).unwrap();
        assert!((kd_objective(&w, 1.0, 0.0, 2.0, 3.0) - 1.5).abs() < 1e-12);

        // beta = 0 (sigma = 0) reduces KD to E2E exactly, for random values
        let w = LossWeights::new(1.0, 0.0, 0.07, 4).unwrap();
        for seed in 0..10u64 {
            let vals: Vec<f64> = (0..4)
                .map(|i| {
                    rng::uniform_array::<f64>(&mut rng::stream(seed, "obj", &[i]), &[1], 0.0, 5.0)
                        [IxDyn(&[0])]
                })
                .collect();
            let kd = kd_objective(&w, vals[0], vals[1], vals[2], vals[3]);
            let e2e = e2e_objective(&w, vals[0], vals[1]);
            assert_eq!(kd, e2e);
        }

        // degenerate KD with alpha=1, beta=0, rho=0 equals the task loss
        let w = LossWeights::new(1.0, 0.0, 0.0, 4).unwrap();
        assert_eq!(kd_objective(&w, 3.25, 7.0, 11.0, 13.0), 3.25);

        // random weighted-sum check against an independent evaluation
        let w = LossWeights::new(0.5, 0.2, 0.03, 4).unwrap();
        let (t, r, c, f) = (1.3, 0.4, 2.2, 0.9);
        let direct = 0.5 * t + 0.03 * r + 0.2 * c + (1.0 - 0.5 - 0.2) * f;
        assert!((kd_objective(&w, t, r, c, f) - direct).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let phases: ArrayD<f64> = rng::uniform_array::<f64>(
            &mut rng::stream(40, "reg-grad", &[]),
            &[1, 3, 3],
            -5.0,
            5.0,
        );
        let levels = 4;
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf_real(phases.clone(), true);
        let root = mask_regularizer_graph(&mut tape, p, levels);
        let grads = tape.backward(root);
        let g = grads.get(p).unwrap().real().clone();

        let eval = |ph: &ArrayD<f64>| {
            let bank = PhaseMaskBank::new(ph.clone().into_dimensionality().unwrap()).unwrap();
            mask_regularizer(&bank, levels).unwrap()
        };
        let h = 1e-6;
        for flat in 0..phases.len() {
            let mut plus = phases.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let mut minus = phases.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ad = g.as_slice().unwrap()[flat];
            assert!((ad - fd).abs() <= 1e-6 * fd.abs().max(1.0), "ad={ad} fd={fd}");
        }
    }
}
