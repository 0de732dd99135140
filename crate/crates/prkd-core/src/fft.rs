//! Unitary 2-D discrete Fourier transforms over the last two axes.
//!
//! Both directions carry a 1/sqrt(H*W) factor so the transform pair is
//! unitary: norms are preserved and the adjoint equals the inverse. That is
//! also what makes the Parseval identity on measurements an exact equality.

use ndarray::ArrayD;
use rayon::prelude::*;

use crate::num::{Cplx, Real};

/// In-place unitary DFT (or inverse DFT) over the trailing two axes of `a`.
/// Leading axes are treated as a batch. `a` must be in standard (row-major)
/// layout.
pub fn fft2_unitary_inplace<T: Real>(a: &mut ArrayD<Cplx<T>>, inverse: bool) {
    let ndim = a.ndim();
    assert!(ndim >= 2, "fft2 needs at least two axes");
    let h = a.shape()[ndim - 2];
    let w = a.shape()[ndim - 1];
    let batch: usize = a.shape()[..ndim - 2].iter().product();
    let data = a
        .as_slice_mut()
        .expect("fft2 requires standard-layout arrays");

    let row_plan = T::fft_plan(w, inverse);
    let col_plan = T::fft_plan(h, inverse);
    let scale = T::of(1.0 / ((h as f64) * (w as f64)).sqrt());

    data.par_chunks_exact_mut(h * w).for_each(|block| {
        let mut col_buf = vec![Cplx::new(T::zero(), T::zero()); h];
        for row in block.chunks_exact_mut(w) {
            row_plan.process(row);
        }
        for j in 0..w {
            for i in 0..h {
                col_buf[i] = block[i * w + j];
            }
            col_plan.process(&mut col_buf);
            for i in 0..h {
                block[i * w + j] = col_buf[i] * scale;
            }
        }
    });
    let _ = batch;
}

/// Out-of-place unitary 2-D DFT.
pub fn fft2_unitary<T: Real>(a: &ArrayD<Cplx<T>>, inverse: bool) -> ArrayD<Cplx<T>> {
    let mut out = a.as_standard_layout().into_owned();
    fft2_unitary_inplace(&mut out, inverse);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn roundtrip_and_norm() {
        let h = 5;
        let w = 7;
        let a = ArrayD::from_shape_fn(IxDyn(&[2, h, w]), |ix| {
            Cplx::new(
                ((ix[0] * 31 + ix[1] * 7 + ix[2]) as f64).sin(),
                ((ix[0] * 13 + ix[1] * 3 + ix[2] * 5) as f64).cos(),
            )
        });
        let f = fft2_unitary(&a, false);
        let back = fft2_unitary(&f, true);

        let norm = |x: &ArrayD<Cplx<f64>>| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm(&a) - norm(&f)).abs() < 1e-12 * norm(&a));
        let diff: f64 = a
            .iter()
            .zip(back.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-12 * norm(&a));
    }
}
