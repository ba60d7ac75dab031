//! Batch normalization over `B×C×H×W` with per-channel statistics.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Debug, Clone)]
pub struct BatchNormParams<S = f32> {
    /// `C`
    pub gamma: Tensor<S>,
    /// `C`
    pub beta: Tensor<S>,
    /// `C`, updated during train-mode forward
    pub running_mean: Tensor<S>,
    /// `C`, updated during train-mode forward
    pub running_var: Tensor<S>,
    pub momentum: S,
    pub epsilon: S,
}

impl<S: Scalar> BatchNormParams<S> {
    /// Fresh parameters: gamma 1, beta 0, running stats (0, 1).
    pub fn new(channels: usize, momentum: S, epsilon: S) -> Self {
        BatchNormParams {
            gamma: Tensor::filled(&[channels], S::ONE),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::ONE),
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<S = f32> {
    /// Normalized input, same shape as x.
    xhat: Tensor<S>,
    /// Per-channel 1/sqrt(var+eps).
    inv_std: Vec<S>,
    train: bool,
}

fn dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        s => Err(Error::Dim(format!(
            "batchnorm input must be B×C×H×W, got {s:?}"
        ))),
    }
}

/// Train mode: normalize with batch statistics over `B·H·W` per channel and
/// update running stats as `running ← momentum·running + (1−momentum)·batch`.
/// Eval mode: normalize with the running statistics.
pub fn batchnorm_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &mut BatchNormParams<S>,
    mode: Mode,
) -> Result<(Tensor<S>, BatchNormCache<S>)> {
    batchnorm_forward_owned(x.clone(), p, mode)
}

/// In-place variant for the training hot path: the input buffer becomes the
/// output; statistics accumulate in f64 in a single pass.
pub(crate) fn batchnorm_forward_owned<S: Scalar>(
    mut x: Tensor<S>,
    p: &mut BatchNormParams<S>,
    mode: Mode,
) -> Result<(Tensor<S>, BatchNormCache<S>)> {
    let (b, c, h, w) = dims(&x)?;
    if c != p.channels() {
        return Err(Error::Dim(format!(
            "batchnorm channel mismatch: input has {c}, params have {}",
            p.channels()
        )));
    }
    let m = b * h * w;
    let plane = h * w;
    if mode == Mode::Train && m < 2 {
        return Err(Error::Arg(format!(
            "degenerate batch: batchnorm train mode needs B·H·W ≥ 2, got {m}"
        )));
    }
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![S::ZERO; c];
    for ci in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                let mut sum_sq = 0.0f64;
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    for &v in &x.data()[base..base + plane] {
                        let v = v.to_f64();
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let mean = sum / m as f64;
                let var = (sum_sq / m as f64 - mean * mean).max(0.0);
                let mom = p.momentum;
                let rm = &mut p.running_mean.data_mut()[ci];
                *rm = mom * *rm + (S::ONE - mom) * S::from_f64(mean);
                let rv = &mut p.running_var.data_mut()[ci];
                *rv = mom * *rv + (S::ONE - mom) * S::from_f64(var);
                (S::from_f64(mean), S::from_f64(var))
            }
            Mode::Eval => (p.running_mean.data()[ci], p.running_var.data()[ci]),
        };
        let istd = S::ONE / (var + p.epsilon).sqrt();
        inv_std[ci] = istd;
        let (g, bt) = (p.gamma.data()[ci], p.beta.data()[ci]);
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            let xs = &mut x.data_mut()[base..base + plane];
            let hs = &mut xhat.data_mut()[base..base + plane];
            for (v, hv) in xs.iter_mut().zip(hs.iter_mut()) {
                let xh = (*v - mean) * istd;
                *hv = xh;
                *v = g * xh + bt;
            }
        }
    }
    Ok((
        x,
        BatchNormCache {
            xhat,
            inv_std,
            train: mode == Mode::Train,
        },
    ))
}

/// Exact gradients through the batch statistics:
/// `dx = inv_std/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat⊙xhat))` per channel.
pub fn batchnorm_backward<S: Scalar>(
    dy: &Tensor<S>,
    cache: &BatchNormCache<S>,
    p: &BatchNormParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    if !cache.train {
        return Err(Error::Arg(
            "invalid cache: batchnorm backward requires a train-mode cache".into(),
        ));
    }
    let (b, c, h, w) = dims(dy)?;
    if dy.shape() != cache.xhat.shape() {
        return Err(Error::Dim(format!(
            "batchnorm backward shape mismatch: dy {:?} vs cache {:?}",
            dy.shape(),
            cache.xhat.shape()
        )));
    }
    let m = b * h * w;
    let m_s = S::from_f64(m as f64);
    let plane = h * w;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut sum_dy = S::ZERO;
        let mut sum_dy_xhat = S::ZERO;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                sum_dy += dy.data()[i];
                sum_dy_xhat += dy.data()[i] * cache.xhat.data()[i];
            }
        }
        dbeta.data_mut()[ci] = sum_dy;
        dgamma.data_mut()[ci] = sum_dy_xhat;
        let g = p.gamma.data()[ci];
        let istd = cache.inv_std[ci];
        // dxhat = dy·γ; the sums above already fold γ out of them.
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                let dxhat = dy.data()[i] * g;
                dx.data_mut()[i] = istd / m_s
                    * (m_s * dxhat - g * sum_dy - cache.xhat.data()[i] * g * sum_dy_xhat);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}
