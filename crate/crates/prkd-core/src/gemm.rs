//! Row-major GEMM used by the convolution layers, via `matrixmultiply`.
//!
//! `a_trans`/`b_trans` say that the buffer holds the transpose of the logical
//! operand (stored row-major). Single-threaded per call; batch-level
//! parallelism lives in the callers, which keeps results reproducible.

macro_rules! gemm_impl {
    ($name:ident, $t:ty, $f:ident) => {
        /// `c += A * B` with logical A: m*k and B: k*n, C: m*n row-major.
        pub fn $name(
            m: usize, k: usize, n: usize,
            a: &[$t], a_trans: bool,
            b: &[$t], b_trans: bool,
            c: &mut [$t],
        ) {
            debug_assert_eq!(a.len(), m * k);
            debug_assert_eq!(b.len(), k * n);
            debug_assert_eq!(c.len(), m * n);
            let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
            unsafe {
                matrixmultiply::$f(
                    m, k, n, 1.0,
                    a.as_ptr(), rsa, csa,
                    b.as_ptr(), rsb, csb,
                    1.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

gemm_impl!(sgemm_acc, f32, sgemm);
gemm_impl!(dgemm_acc, f64, dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
    }

    #[test]
    fn gemm_matches_naive_all_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.25 + 1.0).collect();
        let mut expect = vec![0.5; m * n];
        naive(m, k, n, &a, &b, &mut expect);

        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }

        for (a_trans, b_trans) in [(false, false), (true, false), (false, true), (true, true)] {
            let ab: &[f64] = if a_trans { &at } else { &a };
            let bb: &[f64] = if b_trans { &bt } else { &b };
            let mut c = vec![0.5; m * n];
            dgemm_acc(m, k, n, ab, a_trans, bb, b_trans, &mut c);
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12, "case ({a_trans},{b_trans})");
            }
            let abf: Vec<f32> = ab.iter().map(|&x| x as f32).collect();
            let bbf: Vec<f32> = bb.iter().map(|&x| x as f32).collect();
            let mut cf = vec![0.5f32; m * n];
            sgemm_acc(m, k, n, &abf, a_trans, &bbf, b_trans, &mut cf);
            for (x, y) in cf.iter().zip(&expect) {
                assert!((*x as f64 - y).abs() < 1e-4);
            }
        }
    }
}
