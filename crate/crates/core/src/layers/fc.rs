//! Fully-connected layer: `y = x·W + b`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

#[derive(Debug, Clone)]
pub struct FcCache<S = f32> {
    input: Tensor<S>,
}

/// `x[B×D] · weights[D×M] + bias[M]`.
pub fn fc_forward<S: Scalar>(
    x: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(Tensor<S>, FcCache<S>)> {
    fc_forward_owned(x.clone(), weights, bias)
}

/// Ownership-taking variant; the input moves into the cache.
pub(crate) fn fc_forward_owned<S: Scalar>(
    x: Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<(Tensor<S>, FcCache<S>)> {
    let (b, d) = match x.shape() {
        [b, d] => (*b, *d),
        s => return Err(Error::Dim(format!("fc input must be B×D, got {s:?}"))),
    };
    let (dw, m) = (weights.shape()[0], weights.shape()[1]);
    if d != dw || bias.shape() != [m] {
        return Err(Error::Dim(format!(
            "fc mismatch: input {:?}, weights {:?}, bias {:?}",
            x.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut y = Tensor::zeros(&[b, m]);
    gemm_into(false, false, S::ONE, &x, weights, S::ZERO, &mut y);
    for row in 0..b {
        for (j, v) in y.data_mut()[row * m..(row + 1) * m].iter_mut().enumerate() {
            *v += bias.data()[j];
        }
    }
    Ok((y, FcCache { input: x }))
}

/// `(dx, dweights, dbias)` — exact gradients of [`fc_forward`].
pub fn fc_backward<S: Scalar>(
    dy: &Tensor<S>,
    cache: &FcCache<S>,
    weights: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let x = &cache.input;
    let (b, d) = (x.shape()[0], x.shape()[1]);
    let m = weights.shape()[1];
    if dy.shape() != [b, m] {
        return Err(Error::Dim(format!(
            "fc backward expects dy {:?}, got {:?}",
            [b, m],
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[b, d]);
    gemm_into(false, true, S::ONE, dy, weights, S::ZERO, &mut dx);
    let mut dw = Tensor::zeros(&[d, m]);
    gemm_into(true, false, S::ONE, x, dy, S::ZERO, &mut dw);
    let mut db = Tensor::zeros(&[m]);
    for row in 0..b {
        for j in 0..m {
            db.data_mut()[j] += dy.data()[row * m + j];
        }
    }
    Ok((dx, dw, db))
}
