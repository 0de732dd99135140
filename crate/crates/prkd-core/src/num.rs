//! Scalar abstraction so the whole pipeline runs in either f32 or f64.
//!
//! Training uses f32 (checkpoints store 32-bit floats); the test oracles and
//! finite-difference gradient checks instantiate the same code with f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::Arc;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::{Fft, FftNum, FftPlanner};

pub use num_complex::Complex;

/// Floating-point scalar the tensors are made of.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + LinalgScalar
    + FftNum
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64 (the one place literals enter generic code).
    fn of(x: f64) -> Self;

    /// Conversion to f64 for reporting and hashing.
    fn to_f64x(self) -> f64;

    /// FFT plan for this scalar type, cached per thread and length.
    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>>;

    /// `c += A * B` on row-major matrices; logical A is m*k and B is k*n.
    /// A `*_trans` flag says the buffer holds the operand's transpose.
    fn gemm_acc(
        m: usize, k: usize, n: usize,
        a: &[Self], a_trans: bool,
        b: &[Self], b_trans: bool,
        c: &mut [Self],
    );
}

macro_rules! impl_real {
    ($t:ty, $planner:ident, $gemm:path) => {
        thread_local! {
            static $planner: std::cell::RefCell<FftPlanner<$t>> =
                std::cell::RefCell::new(FftPlanner::new());
        }

        impl Real for $t {
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64x(self) -> f64 {
                self as f64
            }

            fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
                $planner.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(len)
                    } else {
                        p.plan_fft_forward(len)
                    }
                })
            }

            #[inline]
            fn gemm_acc(
                m: usize, k: usize, n: usize,
                a: &[Self], a_trans: bool,
                b: &[Self], b_trans: bool,
                c: &mut [Self],
            ) {
                $gemm(m, k, n, a, a_trans, b, b_trans, c)
            }
        }
    };
}

impl_real!(f32, PLANNER_F32, crate::gemm::sgemm_acc);
impl_real!(f64, PLANNER_F64, crate::gemm::dgemm_acc);

/// Complex scalar built on [`Real`].
pub type Cplx<T> = Complex<T>;
