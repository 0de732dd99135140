//! Chunked parallel elementwise helpers. Writes are disjoint, so results do
//! not depend on scheduling; small arrays stay sequential.

use rayon::prelude::*;

/// Minimum element count before fanning out to the pool.
pub(crate) const PAR_MIN: usize = 262144;
const CHUNK: usize = 16384;

pub(crate) fn map_into<A: Copy + Send + Sync, B: Send>(
    src: &[A],
    dst: &mut [B],
    f: impl Fn(A) -> B + Send + Sync,
) {
    debug_assert_eq!(src.len(), dst.len());
    if src.len() < PAR_MIN {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f(s);
        }
    } else {
        dst.par_chunks_mut(CHUNK)
            .zip(src.par_chunks(CHUNK))
            .for_each(|(d, s)| {
                for (d, &s) in d.iter_mut().zip(s) {
                    *d = f(s);
                }
            });
    }
}

pub(crate) fn zip_into<A: Copy + Send + Sync, B: Copy + Send + Sync, C: Send>(
    a: &[A],
    b: &[B],
    dst: &mut [C],
    f: impl Fn(A, B) -> C + Send + Sync,
) {
    debug_assert_eq!(a.len(), dst.len());
    debug_assert_eq!(b.len(), dst.len());
    if a.len() < PAR_MIN {
        for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
            *d = f(x, y);
        }
    } else {
        dst.par_chunks_mut(CHUNK)
            .zip(a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)))
            .for_each(|(d, (xa, xb))| {
                for ((d, &x), &y) in d.iter_mut().zip(xa).zip(xb) {
                    *d = f(x, y);
                }
            });
    }
}

pub(crate) fn update<A: Copy + Send + Sync, B: Send + Sync + Copy>(
    dst: &mut [B],
    src: &[A],
    f: impl Fn(B, A) -> B + Send + Sync,
) {
    debug_assert_eq!(src.len(), dst.len());
    if src.len() < PAR_MIN {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f(*d, s);
        }
    } else {
        dst.par_chunks_mut(CHUNK)
            .zip(src.par_chunks(CHUNK))
            .for_each(|(d, s)| {
                for (d, &s) in d.iter_mut().zip(s) {
                    *d = f(*d, s);
                }
            });
    }
}
