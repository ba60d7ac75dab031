//! Patch intensity pipeline: histogram equalization, dataset-global
//! mean/std normalization, and the rotation/flip augmentation group.
//!
//! Pipeline order is fixed: equalize (when enabled) → normalize, with
//! augmentation applied at training time. Rotations and flips are pixel
//! permutations, so they commute exactly with both pointwise steps; the
//! implementation augments on raw bytes for speed, which yields identical
//! results.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Patch side length used throughout the pipeline.
pub const PATCH_SIZE: usize = 64;
/// Pixels per patch.
pub const PATCH_PIXELS: usize = PATCH_SIZE * PATCH_SIZE;

/// Dataset-global intensity statistics (0–255 domain), computed over the
/// training split only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Histogram equalization of an 8-bit grayscale patch:
/// `v ↦ round((cdf(v) − cdf_min)/(N − cdf_min) · 255)` with `cdf_min` the
/// smallest nonzero cdf value. Constant patches are returned unchanged.
/// The mapping is monotone non-decreasing.
pub fn hist_equalize(p: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; p.len()];
    hist_equalize_into(p, &mut out);
    out
}

pub fn hist_equalize_into(p: &[u8], out: &mut [u8]) {
    debug_assert_eq!(p.len(), out.len());
    let n = p.len();
    let mut hist = [0usize; 256];
    for &v in p {
        hist[v as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, &h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if cdf_min == n {
        // Constant patch: the formula degenerates to 0/0.
        out.copy_from_slice(p);
        return;
    }
    let denom = (n - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (v, l) in lut.iter_mut().enumerate() {
        *l = (((cdf[v].saturating_sub(cdf_min)) as f64 / denom) * 255.0).round() as u8;
    }
    for (o, &v) in out.iter_mut().zip(p) {
        *o = lut[v as usize];
    }
}

/// Streaming population mean/std over all pixels of all training patches.
/// Accumulation is in f64, so the result is order-independent far below the
/// 1e-6 contract.
pub fn compute_norm_stats<'a>(patches: impl IntoIterator<Item = &'a [u8]>) -> Result<NormStats> {
    let mut count = 0u64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for p in patches {
        for &v in p {
            let x = v as f64;
            sum += x;
            sum_sq += x * x;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Arg("normalization stats need at least one patch".into()));
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    if var == 0.0 {
        return Err(Error::Arg(
            "zero variance: all training pixels share one intensity".into(),
        ));
    }
    Ok(NormStats {
        mean,
        std: var.sqrt(),
    })
}

/// `(x − mean)/std` into a `1×64×64` tensor.
pub fn normalize<S: Scalar>(p: &[u8], stats: NormStats) -> Tensor<S> {
    debug_assert_eq!(p.len(), PATCH_PIXELS);
    let mut out = Tensor::zeros(&[1, PATCH_SIZE, PATCH_SIZE]);
    normalize_into(p, stats, out.data_mut());
    out
}

pub fn normalize_into<S: Scalar>(p: &[u8], stats: NormStats, out: &mut [S]) {
    debug_assert_eq!(p.len(), out.len());
    let inv = 1.0 / stats.std;
    for (o, &v) in out.iter_mut().zip(p) {
        *o = S::from_f64((v as f64 - stats.mean) * inv);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    None,
    Horizontal,
    Vertical,
}

/// One element of the augmentation group; applied identically to both
/// patches of a pair. Rotation acts first, then the flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentTag {
    pub rotation: Rotation,
    pub flip: Flip,
}

impl AugmentTag {
    pub const IDENTITY: AugmentTag = AugmentTag {
        rotation: Rotation::R0,
        flip: Flip::None,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// All 12 rotation × flip combinations; the identity comes first.
pub const ALL_TAGS: [AugmentTag; 12] = {
    let rotations = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];
    let flips = [Flip::None, Flip::Horizontal, Flip::Vertical];
    let mut tags = [AugmentTag::IDENTITY; 12];
    let mut i = 0;
    while i < 12 {
        tags[i] = AugmentTag {
            rotation: rotations[i % 4],
            flip: flips[i / 4],
        };
        i += 1;
    }
    tags
};

/// Source coordinates of target pixel `(r, c)` in a `side×side` patch.
fn source_coord(tag: AugmentTag, side: usize, r: usize, c: usize) -> (usize, usize) {
    let m = side - 1;
    // Invert the flip (self-inverse), then invert the rotation.
    let (r, c) = match tag.flip {
        Flip::None => (r, c),
        Flip::Horizontal => (r, m - c),
        Flip::Vertical => (m - r, c),
    };
    match tag.rotation {
        Rotation::R0 => (r, c),
        // Counter-clockwise rotations: target (r,c) reads source (c, m−r)
        // for 90°, and composition for the rest.
        Rotation::R90 => (c, m - r),
        Rotation::R180 => (m - r, m - c),
        Rotation::R270 => (m - c, r),
    }
}

/// Applies a rotation/flip to a square patch.
pub fn augment_patch(p: &[u8], side: usize, tag: AugmentTag) -> Vec<u8> {
    debug_assert_eq!(p.len(), side * side);
    if tag.is_identity() {
        return p.to_vec();
    }
    let mut out = vec![0u8; p.len()];
    for r in 0..side {
        for c in 0..side {
            let (sr, sc) = source_coord(tag, side, r, c);
            out[r * side + c] = p[sr * side + sc];
        }
    }
    out
}

/// Applies the same tag to both members of a pair; the label is untouched.
pub fn augment_pair(p1: &[u8], p2: &[u8], side: usize, tag: AugmentTag) -> (Vec<u8>, Vec<u8>) {
    (augment_patch(p1, side, tag), augment_patch(p2, side, tag))
}

/// Expands a pair list into an augmented training stream: every pair under
/// every tag, the original (identity tag) first per pair. With the default
/// tag set the output holds 12× the input.
pub fn expand_training_set(
    pairs: &[crate::data::PatchPair],
    tags: &[AugmentTag],
) -> Vec<crate::data::TaggedPair> {
    let mut out = Vec::with_capacity(pairs.len() * tags.len());
    for &pair in pairs {
        for &tag in tags {
            out.push(crate::data::TaggedPair { pair, tag });
        }
    }
    out
}

/// The full preprocessing applied to a raw patch before it enters the
/// network. `stats` must have been computed under the same `hist_eq`
/// setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessPipeline {
    pub hist_eq: bool,
    pub stats: NormStats,
}

impl PreprocessPipeline {
    pub fn apply_into<S: Scalar>(&self, patch: &[u8], tag: AugmentTag, out: &mut [S]) {
        let side = (patch.len() as f64).sqrt() as usize;
        debug_assert_eq!(side * side, patch.len());
        if self.hist_eq {
            let mut eq = vec![0u8; patch.len()];
            hist_equalize_into(patch, &mut eq);
            let aug = augment_patch(&eq, side, tag);
            normalize_into(&aug, self.stats, out);
        } else {
            let aug = augment_patch(patch, side, tag);
            normalize_into(&aug, self.stats, out);
        }
    }

    pub fn apply<S: Scalar>(&self, patch: &[u8], tag: AugmentTag) -> Tensor<S> {
        let mut out = Tensor::zeros(&[1, PATCH_SIZE, PATCH_SIZE]);
        self.apply_into(patch, tag, out.data_mut());
        out
    }
}
