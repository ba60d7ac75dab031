//! Margin-based contrastive loss over descriptor pairs and the data-driven
//! margin heuristic.
//!
//! For a pair with binary label `l` (1 = matching) and descriptor distance
//! `D`, the loss is `½·l·D² + ½·(1−l)·max(0, m−D)²`: quadratic attraction
//! for positives, quadratic hinge repulsion up to the margin `m` for
//! negatives. Negative pairs further apart than `m` contribute nothing.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Guard for the gradient direction `(f1−f2)/D` at coincident descriptors.
pub const DISTANCE_GUARD: f64 = 1e-12;

/// Euclidean distance between two descriptors of equal length.
/// For unit-norm inputs the result lies in `[0, 2]`.
pub fn pair_distance<S: Scalar>(f1: &[S], f2: &[S]) -> Result<S> {
    if f1.len() != f2.len() {
        return Err(Error::Dim(format!(
            "descriptor lengths disagree: {} vs {}",
            f1.len(),
            f2.len()
        )));
    }
    let mut ss = S::ZERO;
    for (&a, &b) in f1.iter().zip(f2) {
        let d = a - b;
        ss += d * d;
    }
    Ok(ss.sqrt())
}

/// `½·l·D² + ½·(1−l)·max(0, m−D)²`.
pub fn contrastive_loss<S: Scalar>(d: S, label: u8, margin: S) -> Result<S> {
    if d < S::ZERO {
        return Err(Error::Arg(format!("distance must be nonnegative, got {d}")));
    }
    if margin <= S::ZERO {
        return Err(Error::Arg(format!("margin must be positive, got {margin}")));
    }
    let half = S::from_f64(0.5);
    Ok(if label == 1 {
        half * d * d
    } else {
        let hinge = (margin - d).maxv(S::ZERO);
        half * hinge * hinge
    })
}

/// Gradients of the loss w.r.t. both descriptors:
/// `dL/dD = l·D − (1−l)·max(0, m−D)`, `df1 = (dL/dD)·(f1−f2)/max(D, δ)`,
/// `df2 = −df1`.
pub fn contrastive_loss_backward<S: Scalar>(
    f1: &[S],
    f2: &[S],
    label: u8,
    margin: S,
) -> Result<(Vec<S>, Vec<S>)> {
    let d = pair_distance(f1, f2)?;
    let dloss_dd = if label == 1 {
        d
    } else {
        -(margin - d).maxv(S::ZERO)
    };
    let scale = dloss_dd / d.maxv(S::from_f64(DISTANCE_GUARD));
    let df1: Vec<S> = f1.iter().zip(f2).map(|(&a, &b)| scale * (a - b)).collect();
    let df2: Vec<S> = df1.iter().map(|&v| -v).collect();
    Ok((df1, df2))
}

/// Margin heuristic: twice the average descriptor distance over a sample of
/// training pairs, measured on the untrained model. Positives and negatives
/// are pooled.
///
/// `batches` are preprocessed `(first, second)` patch batches, each of shape
/// `B×1×H×W` with matching `B`.
pub fn estimate_margin<S: Scalar>(
    model: &Model<S>,
    batches: &[(Tensor<S>, Tensor<S>)],
) -> Result<S> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (x1, x2) in batches {
        let d1 = model.describe(x1)?;
        let d2 = model.describe(x2)?;
        let (b, dim) = (d1.shape()[0], d1.shape()[1]);
        for row in 0..b {
            let dist = pair_distance(
                &d1.data()[row * dim..(row + 1) * dim],
                &d2.data()[row * dim..(row + 1) * dim],
            )?;
            sum += dist.to_f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Arg("margin estimation needs a non-empty sample".into()));
    }
    let margin = 2.0 * sum / count as f64;
    if margin <= 0.0 {
        return Err(Error::Arg(
            "degenerate margin: all sampled descriptor pairs coincide".into(),
        ));
    }
    Ok(S::from_f64(margin))
}

/// Same heuristic over raw distances; used where descriptors are already at
/// hand.
pub fn margin_from_distances(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Arg("margin estimation needs a non-empty sample".into()));
    }
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let margin = 2.0 * mean;
    if margin <= 0.0 {
        return Err(Error::Arg(
            "degenerate margin: all sampled descriptor pairs coincide".into(),
        ));
    }
    Ok(margin)
}
