//! Independent reference implementations used as test oracles. Everything
//! here is deliberately naive — plain loops and textbook formulas — and
//! shares no code with the library paths it checks.
//!
//! Shared by several test targets; not every target uses every helper.
#![allow(dead_code)]

pub mod checks;

use patchdesc::scalar::Scalar;
use patchdesc::tensor::Tensor;

/// Naive triple-loop matrix multiply.
pub fn matmul_reference<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(k, b.shape()[0]);
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = S::ZERO;
            for l in 0..k {
                acc += a.at(&[i, l]) * b.at(&[l, j]);
            }
            c.set(&[i, j], acc);
        }
    }
    c
}

/// Direct 6-nested-loop batched cross-correlation with zero padding.
pub fn conv_reference<S: Scalar>(
    x: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (n, _, k, _) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(&[b, n, oh, ow]);
    for bi in 0..b {
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.at(&[ni]);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += x.at(&[bi, ci, iy as usize, ix as usize])
                                        * weights.at(&[ni, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    y.set(&[bi, ni, oy, ox], acc);
                }
            }
        }
    }
    y
}

/// Brute-force window scan max pooling (floor rule).
pub fn maxpool_reference<S: Scalar>(x: &Tensor<S>, k: usize, stride: usize) -> Tensor<S> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.at(&[bi, ci, oy * stride, ox * stride]);
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = x.at(&[bi, ci, oy * stride + ky, ox * stride + kx]);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    y.set(&[bi, ci, oy, ox], best);
                }
            }
        }
    }
    y
}

/// Independently written ADADELTA trajectory (update equations verbatim).
pub struct AdadeltaReference {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub eg2: Vec<f64>,
    pub edx2: Vec<f64>,
}

impl AdadeltaReference {
    pub fn new(n: usize, rho: f64, eps: f64, lr: f64, weight_decay: f64) -> Self {
        AdadeltaReference {
            rho,
            eps,
            lr,
            weight_decay,
            eg2: vec![0.0; n],
            edx2: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.eg2[i] = self.rho * self.eg2[i] + (1.0 - self.rho) * g * g;
            let dx = -((self.edx2[i] + self.eps).sqrt() / (self.eg2[i] + self.eps).sqrt()) * g;
            self.edx2[i] = self.rho * self.edx2[i] + (1.0 - self.rho) * dx * dx;
            params[i] += self.lr * dx;
        }
    }
}

/// Exhaustive threshold sweep: for every candidate threshold (every
/// observed distance), classify `d ≤ t` as positive and tabulate.
pub struct SweepPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

pub fn brute_force_sweep(distances: &[f64], labels: &[u8]) -> Vec<SweepPoint> {
    let mut thresholds: Vec<f64> = distances.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let mut tp = 0;
            let mut fp = 0;
            for (&d, &l) in distances.iter().zip(labels) {
                if d <= t {
                    if l == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            SweepPoint {
                threshold: t,
                tp,
                fp,
            }
        })
        .collect()
}

pub fn brute_force_fpr_at_recall(distances: &[f64], labels: &[u8], target: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    for p in brute_force_sweep(distances, labels) {
        if p.tp as f64 / pos as f64 >= target {
            return p.fp as f64 / neg as f64;
        }
    }
    panic!("recall target unreachable");
}

pub fn brute_force_pr_auc(distances: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let mut points = vec![(0.0f64, 1.0f64)]; // (recall, precision) sentinel
    for p in brute_force_sweep(distances, labels) {
        if p.tp + p.fp > 0 {
            points.push((
                p.tp as f64 / pos as f64,
                p.tp as f64 / (p.tp + p.fp) as f64,
            ));
        }
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    auc
}

/// Central finite differences of a scalar loss over one parameter buffer,
/// compared against analytic gradients at sampled coordinates. The loss
/// closure receives the whole working buffer so the caller can rebuild
/// whatever structure it perturbs.
///
/// Returns the worst relative error
/// `|fd − analytic| / max(|fd|, |analytic|, floor)`.
pub fn fd_check_sampled(
    mut loss: impl FnMut(&[f64]) -> f64,
    base: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    floor: f64,
) -> f64 {
    assert_eq!(base.len(), analytic.len());
    let mut work = base.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        work[i] = base[i] + step;
        let up = loss(&work);
        work[i] = base[i] - step;
        let down = loss(&work);
        work[i] = base[i];
        let fd = (up - down) / (2.0 * step);
        let denom = fd.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}

/// Like [`fd_check_sampled`], but detects coordinates whose finite
/// difference straddles a non-smooth point (ReLU/maxpool/bilinear kinks):
/// at a kink the forward and backward one-sided differences disagree by
/// O(slope jump), while on smooth stretches they agree to O(step·f'').
/// Such coordinates are excluded from the comparison.
///
/// Returns `(worst relative error, checked count, excluded count)`.
pub struct FdOutcome {
    pub worst: f64,
    pub checked: usize,
    pub excluded: usize,
}

pub fn fd_check_excluding_kinks(
    mut loss: impl FnMut(&[f64]) -> f64,
    base: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    floor: f64,
) -> FdOutcome {
    assert_eq!(base.len(), analytic.len());
    let mid = loss(base);
    let mut work = base.to_vec();
    let mut out = FdOutcome {
        worst: 0.0,
        checked: 0,
        excluded: 0,
    };
    for &i in coords {
        work[i] = base[i] + step;
        let up = loss(&work);
        work[i] = base[i] - step;
        let down = loss(&work);
        work[i] = base[i];
        let fwd = (up - mid) / step;
        let bwd = (mid - down) / step;
        let disagreement = (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(floor);
        if disagreement > 0.005 {
            out.excluded += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * step);
        let denom = fd.abs().max(analytic[i].abs()).max(floor);
        out.worst = out.worst.max((fd - analytic[i]).abs() / denom);
        out.checked += 1;
    }
    out
}

/// Deterministic coordinate sample: up to `n` spread evenly, always
/// including the first and last.
pub fn sample_coords(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..n).map(|i| i * (len - 1) / (n - 1)).collect();
    out.dedup();
    out
}
