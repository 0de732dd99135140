//! Separable bilinear interpolation maps.
//!
//! One convention is used everywhere (dataset resizing and the decoder's x2
//! upsampling): output sample i reads source coordinate
//! (i + 0.5) * in/out - 0.5, clamped to the valid range. Downstream code gets
//! the map as (left index, right index, right weight) triples, so forward
//! application and its adjoint share the same table.

/// For each output index: (i0, i1, w1) with value = (1-w1)*src[i0] + w1*src[i1].
pub(crate) fn linear_map(in_size: usize, out_size: usize) -> Vec<(usize, usize, f64)> {
    assert!(in_size >= 1 && out_size >= 1);
    let scale = in_size as f64 / out_size as f64;
    (0..out_size)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let x = src.max(0.0);
            let mut i0 = x.floor() as usize;
            if i0 > in_size - 1 {
                i0 = in_size - 1;
            }
            let i1 = (i0 + 1).min(in_size - 1);
            let w1 = (x - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, w1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_is_exact() {
        for n in [1, 3, 8] {
            for (i, &(i0, i1, w1)) in linear_map(n, n).iter().enumerate() {
                assert_eq!(i0, i);
                assert!(w1 == 0.0 || i1 == i0);
            }
        }
    }

    #[test]
    fn weights_are_convex() {
        for &(i0, i1, w1) in &linear_map(4, 9) {
            assert!(i0 <= i1 && i1 < 4);
            assert!((0.0..=1.0).contains(&w1));
        }
    }
}
