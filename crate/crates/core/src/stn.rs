//! Spatial transformer layer: a 4-parameter affine transform (rotation,
//! isotropic scale, 2-d translation) predicted per input by a localisation
//! network, realized by a grid generator and a differentiable bilinear
//! sampler. Input and output have the same spatial size.
//!
//! Coordinate convention: normalized coordinates put (−1,−1) at the
//! top-left pixel center and (1,1) at the bottom-right pixel center. The
//! sampling grid itself stores *pixel-space* source coordinates — computed
//! so that identity parameters hit pixel centers exactly (bit-exact
//! identity sampling), which a normalized round-trip through `(x+1)·(W−1)/2`
//! does not guarantee in floating point.

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::model::{
    build_stack, stack_backward, stack_forward_eval, stack_forward_train, stack_param_count,
    Layer, LayerCache, StackShape,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clamp range for the predicted scale, for numerical stability.
pub const SCALE_MIN: f64 = 0.25;
pub const SCALE_MAX: f64 = 4.0;

/// Rotation + isotropic scale + translation, in normalized coordinates.
///
/// Expands to the 2×3 matrix
/// `[[s·cosθ, −s·sinθ, tx], [s·sinθ, s·cosθ, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams4<S = f32> {
    pub theta: S,
    pub scale: S,
    pub tx: S,
    pub ty: S,
}

impl<S: Scalar> AffineParams4<S> {
    pub fn identity() -> Self {
        AffineParams4 {
            theta: S::ZERO,
            scale: S::ONE,
            tx: S::ZERO,
            ty: S::ZERO,
        }
    }

    /// Row-major 2×3 matrix `[a, b, tx, c, d, ty]`.
    pub fn matrix(&self) -> [S; 6] {
        let (sin, cos) = (self.theta.sin(), self.theta.cos());
        let s = self.scale;
        [s * cos, -(s * sin), self.tx, s * sin, s * cos, self.ty]
    }
}

/// Maps the raw `fc[4]` outputs to transform parameters:
/// `theta = raw₀`, `scale = clamp(1 + raw₁)`, `tx = raw₂`, `ty = raw₃`.
/// Returns the parameters and whether the scale clamp is inactive (so its
/// gradient passes through). Zero raw outputs give the identity transform.
pub fn raw_to_params<S: Scalar>(raw: &[S]) -> (AffineParams4<S>, bool) {
    debug_assert_eq!(raw.len(), 4);
    let pre = S::ONE + raw[1];
    let lo = S::from_f64(SCALE_MIN);
    let hi = S::from_f64(SCALE_MAX);
    let scale = pre.clampv(lo, hi);
    let active = pre > lo && pre < hi;
    (
        AffineParams4 {
            theta: raw[0],
            scale,
            tx: raw[2],
            ty: raw[3],
        },
        active,
    )
}

/// Per-target-pixel source locations, in source pixel coordinates.
///
/// `source_normalized` exposes the equivalent normalized coordinates for
/// inspection; identity parameters reproduce the canonical target lattice.
#[derive(Debug, Clone)]
pub struct SamplingGrid<S = f32> {
    h: usize,
    w: usize,
    /// Source x pixel coordinate per target pixel, row-major.
    px: Vec<S>,
    /// Source y pixel coordinate per target pixel, row-major.
    py: Vec<S>,
}

impl<S: Scalar> SamplingGrid<S> {
    /// Grid from explicit pixel-space source coordinates, row-major over
    /// the target.
    pub fn from_pixel_coords(h: usize, w: usize, px: Vec<S>, py: Vec<S>) -> Self {
        assert_eq!(px.len(), h * w);
        assert_eq!(py.len(), h * w);
        SamplingGrid { h, w, px, py }
    }

    pub fn target_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn source_pixel(&self, ty: usize, tx: usize) -> (S, S) {
        let i = ty * self.w + tx;
        (self.px[i], self.py[i])
    }

    /// Source location in normalized coordinates.
    pub fn source_normalized(&self, ty: usize, tx: usize) -> (S, S) {
        let (cx, cy) = centers::<S>(self.h, self.w);
        let (px, py) = self.source_pixel(ty, tx);
        ((px - cx) / cx, (py - cy) / cy)
    }

    pub fn is_finite(&self) -> bool {
        self.px.iter().chain(self.py.iter()).all(|v| v.is_finite())
    }
}

fn centers<S: Scalar>(h: usize, w: usize) -> (S, S) {
    (
        S::from_f64((w as f64 - 1.0) / 2.0),
        S::from_f64((h as f64 - 1.0) / 2.0),
    )
}

/// For each target pixel with normalized coordinates `(xt, yt)`, the source
/// location is `A·(xt, yt, 1)ᵀ`.
pub fn grid_generator<S: Scalar>(p: &AffineParams4<S>, h: usize, w: usize) -> SamplingGrid<S> {
    debug_assert!(h >= 2 && w >= 2);
    let [a, b, tx, c, d, ty] = p.matrix();
    let (cx, cy) = centers::<S>(h, w);
    let rx = cx / cy; // aspect correction: b scales y offsets into x pixels
    let ry = cy / cx;
    let mut px = Vec::with_capacity(h * w);
    let mut py = Vec::with_capacity(h * w);
    let off_x = tx * cx + cx;
    let off_y = ty * cy + cy;
    for jy in 0..h {
        let dy = S::from_f64(jy as f64) - cy;
        for jx in 0..w {
            let dx = S::from_f64(jx as f64) - cx;
            px.push(a * dx + b * dy * rx + off_x);
            py.push(c * dx * ry + d * dy + off_y);
        }
    }
    SamplingGrid { h, w, px, py }
}

/// Gradients of a sampled output w.r.t. one grid, in pixel coordinates.
#[derive(Debug, Clone)]
pub struct GridGrad<S = f32> {
    pub dpx: Vec<S>,
    pub dpy: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct SampleCache<S = f32> {
    input: Tensor<S>,
    grids: Vec<SamplingGrid<S>>,
}

/// Bilinear interpolation of `x` at each grid location, one grid per batch
/// item; locations outside the image read as zero.
pub fn bilinear_sample_forward<S: Scalar>(
    x: &Tensor<S>,
    grids: &[SamplingGrid<S>],
) -> Result<(Tensor<S>, SampleCache<S>)> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => {
            return Err(Error::Dim(format!(
                "sampler input must be B×C×H×W, got {s:?}"
            )))
        }
    };
    if grids.len() != b {
        return Err(Error::Dim(format!(
            "expected {b} grids for batch of {b}, got {}",
            grids.len()
        )));
    }
    for (i, g) in grids.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Arg(format!(
                "invalid grid: non-finite source coordinate in grid {i}"
            )));
        }
    }
    let (th, tw) = grids[0].target_size();
    let mut y = Tensor::zeros(&[b, c, th, tw]);
    for bi in 0..b {
        let grid = &grids[bi];
        for ci in 0..c {
            let plane = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let out =
                &mut y.data_mut()[(bi * c + ci) * th * tw..(bi * c + ci + 1) * th * tw];
            for (pos, o) in out.iter_mut().enumerate() {
                let sx = grid.px[pos];
                let sy = grid.py[pos];
                let x0 = sx.floor();
                let y0 = sy.floor();
                let wx = sx - x0;
                let wy = sy - y0;
                let x0i = x0.to_f64() as isize;
                let y0i = y0.to_f64() as isize;
                let read = |yy: isize, xx: isize| -> S {
                    if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        S::ZERO
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let one = S::ONE;
                *o = (one - wy) * ((one - wx) * read(y0i, x0i) + wx * read(y0i, x0i + 1))
                    + wy * ((one - wx) * read(y0i + 1, x0i) + wx * read(y0i + 1, x0i + 1));
            }
        }
    }
    let cache = SampleCache {
        input: x.clone(),
        grids: grids.to_vec(),
    };
    Ok((y, cache))
}

/// Gradients w.r.t. both the input image and the grid coordinates.
pub fn bilinear_sample_backward<S: Scalar>(
    dy: &Tensor<S>,
    cache: &SampleCache<S>,
) -> Result<(Tensor<S>, Vec<GridGrad<S>>)> {
    let x = &cache.input;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (th, tw) = cache.grids[0].target_size();
    if dy.shape() != [b, c, th, tw] {
        return Err(Error::Dim(format!(
            "sampler backward expects dy {:?}, got {:?}",
            [b, c, th, tw],
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dgrids = Vec::with_capacity(b);
    for bi in 0..b {
        let grid = &cache.grids[bi];
        let mut gg = GridGrad {
            dpx: vec![S::ZERO; th * tw],
            dpy: vec![S::ZERO; th * tw],
        };
        for ci in 0..c {
            let plane = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let dplane_base = (bi * c + ci) * h * w;
            let g_out = &dy.data()[(bi * c + ci) * th * tw..(bi * c + ci + 1) * th * tw];
            for (pos, &g) in g_out.iter().enumerate() {
                let sx = grid.px[pos];
                let sy = grid.py[pos];
                let x0 = sx.floor();
                let y0 = sy.floor();
                let wx = sx - x0;
                let wy = sy - y0;
                let x0i = x0.to_f64() as isize;
                let y0i = y0.to_f64() as isize;
                let one = S::ONE;
                let corners = [
                    (y0i, x0i, (one - wy) * (one - wx)),
                    (y0i, x0i + 1, (one - wy) * wx),
                    (y0i + 1, x0i, wy * (one - wx)),
                    (y0i + 1, x0i + 1, wy * wx),
                ];
                for (yy, xx, wgt) in corners {
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        dx.data_mut()[dplane_base + yy as usize * w + xx as usize] += g * wgt;
                    }
                }
                let read = |yy: isize, xx: isize| -> S {
                    if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        S::ZERO
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let i00 = read(y0i, x0i);
                let i01 = read(y0i, x0i + 1);
                let i10 = read(y0i + 1, x0i);
                let i11 = read(y0i + 1, x0i + 1);
                gg.dpx[pos] += g * ((one - wy) * (i01 - i00) + wy * (i11 - i10));
                gg.dpy[pos] += g * ((one - wx) * (i10 - i00) + wx * (i11 - i01));
            }
        }
        dgrids.push(gg);
    }
    Ok((dx, dgrids))
}

/// The spatial transformer as a network layer: localisation stack →
/// parameter mapping → grid → sampler.
#[derive(Debug, Clone)]
pub struct StnLayer<S = f32> {
    pub(crate) loc: Vec<Layer<S>>,
    input_chw: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct StnCache<S = f32> {
    loc_caches: Vec<LayerCache<S>>,
    raw: Tensor<S>,
    scale_active: Vec<bool>,
    sample: SampleCache<S>,
}

impl<S: Scalar> StnLayer<S> {
    /// Builds the localisation network for a `C×H×W` input. The final
    /// `fc[4]` is zero-initialized so training starts from the identity
    /// transform.
    pub fn build(input_chw: (usize, usize, usize), rng: &mut Rng) -> Result<Self> {
        let (_, h, w) = input_chw;
        if h < 2 || w < 2 {
            return Err(Error::Dim(format!(
                "spatial transformer needs at least 2×2 input, got {h}×{w}"
            )));
        }
        let spec = ArchSpec::parse(crate::arch::STN_LOCALISATION).expect("built-in string parses");
        let (mut loc, out_shape) = build_stack(spec.tokens(), input_chw, rng)?;
        debug_assert_eq!(out_shape, StackShape::Flat { d: 4 });
        if let Some(Layer::Fc(fc)) = loc.last_mut() {
            fc.weights.fill(S::ZERO);
            fc.bias.fill(S::ZERO);
        }
        Ok(StnLayer { loc, input_chw })
    }

    pub fn param_count(&self) -> usize {
        stack_param_count(&self.loc)
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
        let (c, h, w) = self.input_chw;
        match x.shape() {
            [_, xc, xh, xw] if *xc == c && *xh == h && *xw == w => Ok((c, h, w)),
            s => Err(Error::Dim(format!(
                "spatial transformer built for ×{c}×{h}×{w} input, got {s:?}"
            ))),
        }
    }

    /// Predicted transform parameters for each batch item (eval path).
    pub fn localise(&self, x: &Tensor<S>) -> Result<Vec<AffineParams4<S>>> {
        self.check_input(x)?;
        let raw = stack_forward_eval(&self.loc, x.clone())?;
        Ok(raw
            .data()
            .chunks_exact(4)
            .map(|r| raw_to_params(r).0)
            .collect())
    }

    pub fn forward_eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, h, w) = self.check_input(x)?;
        let raw = stack_forward_eval(&self.loc, x.clone())?;
        let grids: Vec<SamplingGrid<S>> = raw
            .data()
            .chunks_exact(4)
            .map(|r| grid_generator(&raw_to_params(r).0, h, w))
            .collect();
        let (y, _) = bilinear_sample_forward(x, &grids)?;
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, StnCache<S>)> {
        let (_, h, w) = self.check_input(x)?;
        let (raw, loc_caches) = stack_forward_train(&mut self.loc, x.clone())?;
        let mut grids = Vec::with_capacity(raw.shape()[0]);
        let mut scale_active = Vec::with_capacity(raw.shape()[0]);
        for r in raw.data().chunks_exact(4) {
            let (p, active) = raw_to_params(r);
            grids.push(grid_generator(&p, h, w));
            scale_active.push(active);
        }
        let (y, sample) = bilinear_sample_forward(x, &grids)?;
        Ok((
            y,
            StnCache {
                loc_caches,
                raw,
                scale_active,
                sample,
            },
        ))
    }

    /// Chains gradients through sampler, grid generator, parameter mapping
    /// and the localisation stack. Returns `dx` (sampler path plus
    /// localisation path) and the localisation parameter gradients in
    /// traversal order.
    pub fn backward(&self, dy: &Tensor<S>, cache: &StnCache<S>) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
        let (dx_sample, dgrids) = bilinear_sample_backward(dy, &cache.sample)?;
        let b = dgrids.len();
        let (_, h, w) = self.input_chw;
        let (cx, cy) = centers::<S>(h, w);
        let rx = cx / cy;
        let ry = cy / cx;
        let mut draw = Tensor::zeros(&[b, 4]);
        for bi in 0..b {
            let gg = &dgrids[bi];
            let raw = &cache.raw.data()[bi * 4..(bi + 1) * 4];
            let (p, _) = raw_to_params(raw);
            let (sin, cos) = (p.theta.sin(), p.theta.cos());
            let s = p.scale;
            let a = s * cos;
            let bm = -(s * sin);
            // Accumulate dL/da, dL/db, dL/dtx, dL/dty over the grid; py uses
            // (−b, a) so its contributions fold into the same two slots.
            let mut dla = S::ZERO;
            let mut dlb = S::ZERO;
            let mut dltx = S::ZERO;
            let mut dlty = S::ZERO;
            for jy in 0..h {
                let dyc = S::from_f64(jy as f64) - cy;
                for jx in 0..w {
                    let dxc = S::from_f64(jx as f64) - cx;
                    let i = jy * w + jx;
                    let gx = gg.dpx[i];
                    let gy = gg.dpy[i];
                    // px = a·dx + b·dy·rx + tx·cx + cx
                    // py = −b·dx·ry + a·dy + ty·cy + cy
                    dla += gx * dxc + gy * dyc;
                    dlb += gx * dyc * rx - gy * dxc * ry;
                    dltx += gx;
                    dlty += gy;
                }
            }
            // a = s·cosθ, b = −s·sinθ:
            //   ∂a/∂θ = −s·sinθ = b   ∂a/∂s = cosθ
            //   ∂b/∂θ = −s·cosθ = −a  ∂b/∂s = −sinθ
            let dtheta = dla * bm - dlb * a;
            let dscale = dla * cos - dlb * sin;
            draw.data_mut()[bi * 4] = dtheta;
            draw.data_mut()[bi * 4 + 1] = if cache.scale_active[bi] {
                dscale
            } else {
                S::ZERO
            };
            draw.data_mut()[bi * 4 + 2] = dltx * cx;
            draw.data_mut()[bi * 4 + 3] = dlty * cy;
        }
        let (dx_loc, grads) = stack_backward(&self.loc, &cache.loc_caches, draw)?;
        let mut dx = dx_sample;
        dx.axpy(S::ONE, &dx_loc);
        Ok((dx, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_equals_target_lattice() {
        let p = AffineParams4::<f64>::identity();
        let g = grid_generator(&p, 5, 7);
        for ty in 0..5 {
            for tx in 0..7 {
                let (px, py) = g.source_pixel(ty, tx);
                assert_eq!(px, tx as f64);
                assert_eq!(py, ty as f64);
                let (xn, yn) = g.source_normalized(ty, tx);
                assert_eq!(xn, (tx as f64 - 3.0) / 3.0);
                assert_eq!(yn, (ty as f64 - 2.0) / 2.0);
            }
        }
    }

    #[test]
    fn scale_two_maps_corner_out() {
        let p = AffineParams4 {
            theta: 0.0f64,
            scale: 2.0,
            tx: 0.0,
            ty: 0.0,
        };
        let g = grid_generator(&p, 4, 4);
        let (xn, yn) = g.source_normalized(3, 3);
        assert!((xn - 2.0).abs() < 1e-12);
        assert!((yn - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_rotates_unit_vector() {
        let p = AffineParams4 {
            theta: std::f64::consts::FRAC_PI_2,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
        };
        let g = grid_generator(&p, 5, 5);
        // Target (1, 0) in normalized coords is pixel (ty=2, tx=4).
        let (xn, yn) = g.source_normalized(2, 4);
        assert!(xn.abs() < 1e-12);
        assert!((yn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_sampling_is_bit_exact() {
        let mut rng = crate::rng::Rng::new(5);
        let x = Tensor::<f32>::from_fn(&[2, 3, 16, 16], |_| rng.uniform(-4.0, 4.0) as f32);
        let grids: Vec<SamplingGrid<f32>> = (0..2)
            .map(|_| grid_generator(&AffineParams4::identity(), 16, 16))
            .collect();
        let (y, _) = bilinear_sample_forward(&x, &grids).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn midpoint_interpolation() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        x.set(&[0, 0, 0, 1], 10.0);
        // Source point midway between pixels (0,0)=0 and (0,1)=10.
        let g = SamplingGrid {
            h: 1,
            w: 1,
            px: vec![0.5],
            py: vec![0.0],
        };
        let (y, _) = bilinear_sample_forward(&x, &[g]).unwrap();
        assert_eq!(y.data()[0], 5.0);
    }

    #[test]
    fn nan_grid_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let g = SamplingGrid {
            h: 4,
            w: 4,
            px: vec![f64::NAN; 16],
            py: vec![0.0; 16],
        };
        assert!(matches!(
            bilinear_sample_forward(&x, &[g]),
            Err(Error::Arg(_))
        ));
    }

    #[test]
    fn sampler_linear_in_input() {
        let mut rng = crate::rng::Rng::new(33);
        let x1 = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |_| rng.uniform(-1.0, 1.0));
        let x2 = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |_| rng.uniform(-1.0, 1.0));
        let p = AffineParams4 {
            theta: 0.3f64,
            scale: 1.2,
            tx: 0.1,
            ty: -0.2,
        };
        let g = grid_generator(&p, 6, 6);
        let (alpha, beta) = (0.7, -1.3);
        let mut mix = x1.clone();
        mix.scale(alpha);
        mix.axpy(beta, &x2);
        let (y_mix, _) = bilinear_sample_forward(&mix, &[g.clone()]).unwrap();
        let (y1, _) = bilinear_sample_forward(&x1, &[g.clone()]).unwrap();
        let (y2, _) = bilinear_sample_forward(&x2, &[g]).unwrap();
        for i in 0..y_mix.len() {
            let want = alpha * y1.data()[i] + beta * y2.data()[i];
            assert!((y_mix.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_sampling_undoes_rotated_input() {
        use crate::preprocess::{augment_patch, AugmentTag, Flip, Rotation};
        // Rotate a patch by 90° (an exact pixel permutation), then sample
        // it with a fixed θ = −π/2 transform: the composition recovers the
        // original up to interpolation round-off, since a quarter turn
        // maps pixel centers to pixel centers.
        let side = 8;
        let mut rng = crate::rng::Rng::new(71);
        let bytes: Vec<u8> = (0..side * side).map(|_| rng.below(256) as u8).collect();
        let rotated = augment_patch(
            &bytes,
            side,
            AugmentTag {
                rotation: Rotation::R90,
                flip: Flip::None,
            },
        );
        let as_tensor = |p: &[u8]| {
            Tensor::<f64>::from_vec(
                &[1, 1, side, side],
                p.iter().map(|&v| v as f64).collect(),
            )
            .unwrap()
        };
        let x = as_tensor(&rotated);
        let p = AffineParams4 {
            theta: -std::f64::consts::FRAC_PI_2,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
        };
        let g = grid_generator(&p, side, side);
        let (y, _) = bilinear_sample_forward(&x, &[g]).unwrap();
        let orig = as_tensor(&bytes);
        for (a, b) in y.data().iter().zip(orig.data()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_raw_outputs_give_identity() {
        let (p, active) = raw_to_params(&[0.0f64, 0.0, 0.0, 0.0]);
        assert_eq!(p, AffineParams4::identity());
        assert!(active);
    }

    #[test]
    fn scale_clamp() {
        let (p, active) = raw_to_params(&[0.0f64, 10.0, 0.0, 0.0]);
        assert_eq!(p.scale, SCALE_MAX);
        assert!(!active);
        let (p, active) = raw_to_params(&[0.0f64, -10.0, 0.0, 0.0]);
        assert_eq!(p.scale, SCALE_MIN);
        assert!(!active);
    }
}
