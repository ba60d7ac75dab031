//! Max pooling and global average pooling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Flat input offset of the window max, one per output element.
    argmax: Vec<u32>,
}

/// Window max with floor rounding: `H' = ⌊(H−k)/s⌋+1`. Remainder pixels are
/// discarded. Ties go to the first window element in row-major order.
pub fn maxpool_forward<S: Scalar>(
    x: &Tensor<S>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<S>, MaxPoolCache)> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => {
            return Err(Error::Dim(format!(
                "maxpool input must be B×C×H×W, got {s:?}"
            )))
        }
    };
    if k > h || k > w {
        return Err(Error::Dim(format!(
            "maxpool window {k} exceeds input extent {h}×{w}"
        )));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let mut oi = 0;
    for bc in 0..b * c {
        let plane = &x.data()[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let mut best = plane[y0 * w + x0];
                let mut best_at = y0 * w + x0;
                for ky in 0..k {
                    for kx in 0..k {
                        let off = (y0 + ky) * w + (x0 + kx);
                        if plane[off] > best {
                            best = plane[off];
                            best_at = off;
                        }
                    }
                }
                y.data_mut()[oi] = best;
                argmax[oi] = (bc * h * w + best_at) as u32;
                oi += 1;
            }
        }
    }
    Ok((
        y,
        MaxPoolCache {
            in_shape: [b, c, h, w],
            out_hw: (oh, ow),
            argmax,
        },
    ))
}

/// Routes each `dy` element to the argmax position of its window.
pub fn maxpool_backward<S: Scalar>(dy: &Tensor<S>, cache: &MaxPoolCache) -> Result<Tensor<S>> {
    let [b, c, _, _] = cache.in_shape;
    let (oh, ow) = cache.out_hw;
    if dy.shape() != [b, c, oh, ow] {
        return Err(Error::Dim(format!(
            "maxpool backward expects dy {:?}, got {:?}",
            [b, c, oh, ow],
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&cache.in_shape);
    for (i, &src) in cache.argmax.iter().enumerate() {
        dx.data_mut()[src as usize] += dy.data()[i];
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct GapCache {
    in_shape: [usize; 4],
}

/// Mean over spatial positions per channel: `B×C×H×W → B×C`.
pub fn global_avgpool_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, GapCache)> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => {
            return Err(Error::Dim(format!(
                "global average pool input must be B×C×H×W, got {s:?}"
            )))
        }
    };
    let plane = h * w;
    let inv = S::ONE / S::from_f64(plane as f64);
    let mut y = Tensor::zeros(&[b, c]);
    for bc in 0..b * c {
        let mut s = S::ZERO;
        for &v in &x.data()[bc * plane..(bc + 1) * plane] {
            s += v;
        }
        y.data_mut()[bc] = s * inv;
    }
    Ok((
        y,
        GapCache {
            in_shape: [b, c, h, w],
        },
    ))
}

/// Spreads `dy/(H·W)` uniformly over each channel plane.
pub fn global_avgpool_backward<S: Scalar>(dy: &Tensor<S>, cache: &GapCache) -> Result<Tensor<S>> {
    let [b, c, h, w] = cache.in_shape;
    if dy.shape() != [b, c] {
        return Err(Error::Dim(format!(
            "global average pool backward expects dy {:?}, got {:?}",
            [b, c],
            dy.shape()
        )));
    }
    let plane = h * w;
    let inv = S::ONE / S::from_f64(plane as f64);
    let mut dx = Tensor::zeros(&cache.in_shape);
    for bc in 0..b * c {
        let g = dy.data()[bc] * inv;
        dx.data_mut()[bc * plane..(bc + 1) * plane].fill(g);
    }
    Ok(dx)
}
