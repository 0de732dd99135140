// scratch benchmark: matrixmultiply with warmup, median of repeats
use prkd_core as _;

fn mm(m: usize, k: usize, n: usize) -> f64 {
    let a = vec![1.0f32; m * k];
    let b = vec![1.0f32; k * n];
    let mut c = vec![0.0f32; m * n];
    // warm up
    for _ in 0..5 {
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1, 1.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
    let mut times: Vec<f64> = (0..30)
        .map(|_| {
            let t0 = std::time::Instant::now();
            unsafe {
                matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1,
                    b.as_ptr(), n as isize, 1, 1.0, c.as_mut_ptr(), n as isize, 1);
            }
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    2.0 * (m * k * n) as f64 / times[times.len() / 2] / 1e9
}

fn main() {
    for (m, k, n) in [
        (32usize, 18usize, 1024usize),
        (32, 288, 1024),
        (64, 288, 256),
        (64, 576, 256),
        (128, 576, 64),
        (128, 1152, 64),
        (256, 1152, 16),
        (256, 2304, 16),
        (128, 3456, 64),
        (64, 1728, 256),
        (32, 864, 1024),
        (1, 1024, 32),
        (288, 32, 1024),   // dX at layer 1 (k=Co small)
        (32, 1024, 288),   // dW at layer 1
    ] {
        println!("mm ({m:4},{k:5},{n:5}): {:6.1} GFLOPS", mm(m, k, n));
    }
}
