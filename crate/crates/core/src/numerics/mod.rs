//! Numerical foundations shared by every other module.

pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod special;
pub mod tape;

pub use gradcheck::{grad_check, GradReport};
pub use linalg::{ComplexMat, ComplexVec, C64};
pub use rng::{derive_substream, RngStream, Sampler};
pub use special::{bessel_j0, q_func, q_inv};
pub use tape::{Gradients, Tape, Tensor, Var};

use rayon::prelude::*;

/// Sum `f(0..n)` element-wise in parallel with a fixed reduction order, so
/// the result does not depend on the thread count.
pub fn ordered_par_sum<F>(n: usize, width: usize, f: F) -> crate::Result<Vec<f64>>
where
    F: Fn(usize) -> crate::Result<Vec<f64>> + Sync,
{
    const CHUNK: usize = 64;
    let chunks: Vec<crate::Result<Vec<f64>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for t in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(t)?;
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += x;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; width];
    for c in chunks {
        for (a, x) in total.iter_mut().zip(&c?) {
            *a += x;
        }
    }
    Ok(total)
}
