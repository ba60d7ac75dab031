//! 2-d convolution (cross-correlation) via im2col + matrix multiply.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{col2im_into, conv_out_extent, gemm_into, im2col_into, Tensor};

/// Learnable state of one convolution: `N` filters of size `C×k×k`.
#[derive(Debug, Clone)]
pub struct ConvParams<S = f32> {
    /// `N×C×k×k`
    pub weights: Tensor<S>,
    /// `N`
    pub bias: Tensor<S>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> ConvParams<S> {
    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache<S = f32> {
    input: Tensor<S>,
    out_hw: (usize, usize),
}

/// `y[b,n] = bias[n] + Σ_c weights[n,c] ⋆ x[b,c]` with
/// `H' = ⌊(H+2p−k)/s⌋+1`.
pub fn conv_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &ConvParams<S>,
) -> Result<(Tensor<S>, ConvCache<S>)> {
    conv_forward_owned(x.clone(), p)
}

/// Like [`conv_forward`] but takes ownership of the input, which moves into
/// the cache without a copy — the training hot path.
pub(crate) fn conv_forward_owned<S: Scalar>(
    x: Tensor<S>,
    p: &ConvParams<S>,
) -> Result<(Tensor<S>, ConvCache<S>)> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::Dim(format!("conv input must be B×C×H×W, got {s:?}"))),
    };
    if c != p.in_channels() {
        return Err(Error::Dim(format!(
            "conv channel mismatch: input has {c} channels, weights expect {}",
            p.in_channels()
        )));
    }
    let n = p.filters();
    let k = p.kernel();
    let oh = conv_out_extent(h, k, p.stride, p.padding)?;
    let ow = conv_out_extent(w, k, p.stride, p.padding)?;

    let w_mat = p.weights.clone().reshape(&[n, c * k * k])?;
    let mut y = Tensor::zeros(&[b, n, oh, ow]);
    let mut cols = Tensor::zeros(&[c * k * k, oh * ow]);
    for bi in 0..b {
        im2col_into(
            &x.data()[bi * c * h * w..(bi + 1) * c * h * w],
            c,
            h,
            w,
            k,
            p.stride,
            p.padding,
            oh,
            ow,
            cols.data_mut(),
        );
        let mut y_b = Tensor::zeros(&[n, oh * ow]);
        gemm_into(false, false, S::ONE, &w_mat, &cols, S::ZERO, &mut y_b);
        let dst = &mut y.data_mut()[bi * n * oh * ow..(bi + 1) * n * oh * ow];
        dst.copy_from_slice(y_b.data());
        for ni in 0..n {
            let bias = p.bias.data()[ni];
            for v in &mut dst[ni * oh * ow..(ni + 1) * oh * ow] {
                *v += bias;
            }
        }
    }
    let cache = ConvCache {
        input: x,
        out_hw: (oh, ow),
    };
    Ok((y, cache))
}

/// Exact gradients of [`conv_forward`]:
/// `(dx, dweights, dbias)` with `dbias[n] = Σ_{b,i,j} dy[b,n,i,j]`.
pub fn conv_backward<S: Scalar>(
    dy: &Tensor<S>,
    cache: &ConvCache<S>,
    p: &ConvParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let x = &cache.input;
    let (b, c, h, w) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
    );
    let n = p.filters();
    let k = p.kernel();
    let (oh, ow) = cache.out_hw;
    if dy.shape() != [b, n, oh, ow] {
        return Err(Error::Dim(format!(
            "conv backward expects dy {:?}, got {:?}",
            [b, n, oh, ow],
            dy.shape()
        )));
    }

    let w_mat = p.weights.clone().reshape(&[n, c * k * k])?;
    let mut dw = Tensor::zeros(&[n, c * k * k]);
    let mut db = Tensor::zeros(&[n]);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let mut cols = Tensor::zeros(&[c * k * k, oh * ow]);
    let mut dcols = Tensor::zeros(&[c * k * k, oh * ow]);
    for bi in 0..b {
        let dy_b =
            Tensor::from_vec(&[n, oh * ow], dy.data()[bi * n * oh * ow..(bi + 1) * n * oh * ow].to_vec())?;
        // dW accumulates dy_b · cols_bᵀ; the columns are recomputed rather
        // than cached (caching them would cost k² times the activations).
        im2col_into(
            &x.data()[bi * c * h * w..(bi + 1) * c * h * w],
            c,
            h,
            w,
            k,
            p.stride,
            p.padding,
            oh,
            ow,
            cols.data_mut(),
        );
        gemm_into(false, true, S::ONE, &dy_b, &cols, S::ONE, &mut dw);
        gemm_into(true, false, S::ONE, &w_mat, &dy_b, S::ZERO, &mut dcols);
        col2im_into(
            dcols.data(),
            c,
            h,
            w,
            k,
            p.stride,
            p.padding,
            oh,
            ow,
            &mut dx.data_mut()[bi * c * h * w..(bi + 1) * c * h * w],
        );
        for ni in 0..n {
            let mut s = S::ZERO;
            for &v in &dy_b.data()[ni * oh * ow..(ni + 1) * oh * ow] {
                s += v;
            }
            db.data_mut()[ni] += s;
        }
    }
    Ok((dx, dw.reshape(&[n, c, k, k])?, db))
}
