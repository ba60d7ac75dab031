//! Dense n-dimensional arrays and the numeric kernels layers build on.
//!
//! Data is contiguous and row-major (last axis varies fastest). The kernel
//! set is deliberately minimal: elementwise access, matrix multiply, and the
//! im2col/col2im pair that turns convolution into a matrix product. No
//! broadcasting, no views, no GPU.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Flat offset of a multi-index, last axis fastest.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &x) in idx.iter().enumerate() {
            debug_assert!(x < self.shape[i]);
            off = off * self.shape[i] + x;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> S {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: S) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// Reinterprets the buffer under a new shape of equal size.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({})",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, a: S) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// Elementwise `self += a·other`.
    pub fn axpy(&mut self, a: S, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (x, &y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    /// Lossy element cast through f64 (used to move between precisions).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

fn dims2(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dim(format!("{what} must be 2-d, got {s:?}"))),
    }
}

/// `a[M×K] · b[K×N]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, ka) = dims2(a, "matmul lhs")?;
    let (kb, n) = dims2(b, "matmul rhs")?;
    if ka != kb {
        return Err(Error::Dim(format!(
            "matmul inner extents disagree: {:?} × {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm_into(false, false, S::ONE, a, b, S::ZERO, &mut c);
    Ok(c)
}

/// `c = alpha·op(a)·op(b) + beta·c` where `op` optionally transposes.
/// Shapes must already agree; this is the workhorse behind conv and fc.
pub(crate) fn gemm_into<S: Scalar>(
    ta: bool,
    tb: bool,
    alpha: S,
    a: &Tensor<S>,
    b: &Tensor<S>,
    beta: S,
    c: &mut Tensor<S>,
) {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(ka, kb, "gemm_into inner extents");
    assert_eq!(c.shape(), &[m, n], "gemm_into output shape");
    // op(A)[i,j] reads the stored buffer at j·ac + i when transposed, so the
    // column stride is the stored row length.
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    unsafe {
        S::gemm(
            m,
            ka,
            n,
            alpha,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            beta,
            c.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial extent of a windowed op under floor rounding.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Dim(format!(
            "window {k} exceeds padded extent {padded} (input {input}, pad {pad})"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Unfolds `x[C×H×W]` into a `(C·k·k) × (H_out·W_out)` matrix whose column
/// `j` is the receptive field of output position `j`; out-of-bounds reads
/// are zero.
pub fn im2col<S: Scalar>(x: &Tensor<S>, k: usize, stride: usize, pad: usize) -> Result<Tensor<S>> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Dim(format!("im2col input must be C×H×W, got {s:?}"))),
    };
    let oh = conv_out_extent(h, k, stride, pad)?;
    let ow = conv_out_extent(w, k, stride, pad)?;
    let mut out = Tensor::zeros(&[c * k * k, oh * ow]);
    im2col_into(x.data(), c, h, w, k, stride, pad, oh, ow, out.data_mut());
    Ok(out)
}

/// Low-level im2col used by the conv layer to reuse scratch buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [S],
) {
    debug_assert_eq!(out.len(), c * k * k * oh * ow);
    let pad = pad as isize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ki as isize - pad;
                    let dst = &mut out[dst_base + oy * ow..dst_base + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(S::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // Contiguous shifted copy with zero fill at the ends.
                        let off = kj as isize - pad; // ix = ox + off
                        let lo = (-off).max(0) as usize; // first valid ox
                        let hi = ((w as isize - off).max(0) as usize).min(ow); // one past last
                        dst[..lo.min(ow)].fill(S::ZERO);
                        if lo < hi {
                            dst[lo..hi].copy_from_slice(
                                &src_row[(lo as isize + off) as usize
                                    ..(lo as isize + off) as usize + (hi - lo)],
                            );
                        }
                        if hi < ow {
                            dst[hi..].fill(S::ZERO);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + kj as isize - pad;
                            *d = if ix < 0 || ix >= w as isize {
                                S::ZERO
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`]: overlapping contributions sum.
pub fn col2im<S: Scalar>(
    cols: &Tensor<S>,
    shape: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let (c, h, w) = shape;
    let oh = conv_out_extent(h, k, stride, pad)?;
    let ow = conv_out_extent(w, k, stride, pad)?;
    if cols.shape() != [c * k * k, oh * ow] {
        return Err(Error::Dim(format!(
            "col2im geometry mismatch: cols {:?} but C×H×W {:?} with k={k}, s={stride}, p={pad} \
             implies {:?}",
            cols.shape(),
            shape,
            [c * k * k, oh * ow]
        )));
    }
    let mut x = Tensor::zeros(&[c, h, w]);
    col2im_into(cols.data(), c, h, w, k, stride, pad, oh, ow, x.data_mut());
    Ok(x)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_into<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [S],
) {
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    debug_assert_eq!(x.len(), c * h * w);
    let pad = pad as isize;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src_base = row * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ki as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[src_base + oy * ow..src_base + (oy + 1) * ow];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride) as isize + kj as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
