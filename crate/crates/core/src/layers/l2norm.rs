//! Row-wise L2 normalization — the descriptor head.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm guard: rows with `‖x‖ ≤ NORM_GUARD` are scaled by `1/NORM_GUARD`
/// instead of their own norm, and receive zero gradient.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct L2NormCache<S = f32> {
    output: Tensor<S>,
    norms: Vec<S>,
}

/// `y[b] = x[b] / max(‖x[b]‖₂, δ)`, so `‖y[b]‖₂ = 1` whenever the input
/// norm exceeds the guard.
pub fn l2norm_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, L2NormCache<S>)> {
    let (b, d) = match x.shape() {
        [b, d] => (*b, *d),
        s => return Err(Error::Dim(format!("l2norm input must be B×D, got {s:?}"))),
    };
    let guard = S::from_f64(NORM_GUARD);
    let mut y = Tensor::zeros(&[b, d]);
    let mut norms = vec![S::ZERO; b];
    for row in 0..b {
        let src = &x.data()[row * d..(row + 1) * d];
        let mut ss = S::ZERO;
        for &v in src {
            ss += v * v;
        }
        let norm = ss.sqrt();
        norms[row] = norm;
        let scale = S::ONE / norm.maxv(guard);
        for (dst, &v) in y.data_mut()[row * d..(row + 1) * d].iter_mut().zip(src) {
            *dst = v * scale;
        }
    }
    let cache = L2NormCache {
        output: y.clone(),
        norms,
    };
    Ok((y, cache))
}

/// Exact Jacobian for rows above the guard: the component of `dy` parallel
/// to `y` is projected out and the remainder scaled by `1/‖x‖`.
pub fn l2norm_backward<S: Scalar>(dy: &Tensor<S>, cache: &L2NormCache<S>) -> Result<Tensor<S>> {
    let y = &cache.output;
    if dy.shape() != y.shape() {
        return Err(Error::Dim(format!(
            "l2norm backward shape mismatch: dy {:?} vs cache {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    let (b, d) = (y.shape()[0], y.shape()[1]);
    let guard = S::from_f64(NORM_GUARD);
    let mut dx = Tensor::zeros(dy.shape());
    for row in 0..b {
        let norm = cache.norms[row];
        if norm <= guard {
            continue;
        }
        let yr = &y.data()[row * d..(row + 1) * d];
        let dyr = &dy.data()[row * d..(row + 1) * d];
        let mut dot = S::ZERO;
        for (&a, &g) in yr.iter().zip(dyr) {
            dot += a * g;
        }
        for ((dst, &g), &a) in dx.data_mut()[row * d..(row + 1) * d]
            .iter_mut()
            .zip(dyr)
            .zip(yr)
        {
            *dst = (g - a * dot) / norm;
        }
    }
    Ok(dx)
}
