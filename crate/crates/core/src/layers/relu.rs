//! Rectified linear activation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ReluCache {
    /// 1 where x > 0. The gradient at exactly 0 is defined as 0.
    mask: Vec<u8>,
}

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, ReluCache) {
    relu_forward_owned(x.clone())
}

/// In-place variant for the training hot path.
pub(crate) fn relu_forward_owned<S: Scalar>(mut y: Tensor<S>) -> (Tensor<S>, ReluCache) {
    let mut mask = vec![0u8; y.len()];
    for (v, m) in y.data_mut().iter_mut().zip(mask.iter_mut()) {
        if *v > S::ZERO {
            *m = 1;
        } else {
            *v = S::ZERO;
        }
    }
    (y, ReluCache { mask })
}

pub fn relu_backward<S: Scalar>(dy: &Tensor<S>, cache: &ReluCache) -> Tensor<S> {
    debug_assert_eq!(dy.len(), cache.mask.len());
    let mut dx = dy.clone();
    for (v, &m) in dx.data_mut().iter_mut().zip(cache.mask.iter()) {
        if m == 0 {
            *v = S::ZERO;
        }
    }
    dx
}
