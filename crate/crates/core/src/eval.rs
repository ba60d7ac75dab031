//! The evaluation protocol: pair distances, ROC with the false positive
//! rate at 95% recall, precision-recall curves with trapezoidal AUC,
//! distance histograms, and the six-cell aggregate means.
//!
//! Classification convention: a pair is predicted matching iff its
//! descriptor distance is ≤ the threshold (low distance = similar).
//! Thresholds sweep the distinct observed distances plus sentinels, so
//! every metric is an exact step function rather than an interpolation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{PatchStore, PairList};
use crate::error::{Error, Result};
use crate::loss::pair_distance;
use crate::model::Model;
use crate::preprocess::{AugmentTag, PreprocessPipeline, PATCH_PIXELS, PATCH_SIZE};
use crate::tensor::Tensor;

/// Distances and labels of a scored pair list.
#[derive(Debug, Clone)]
pub struct ScoredPairs {
    pub distances: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredPairs {
    pub fn new(distances: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if distances.len() != labels.len() {
            return Err(Error::Dim(format!(
                "{} distances but {} labels",
                distances.len(),
                labels.len()
            )));
        }
        Ok(ScoredPairs { distances, labels })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Arg(
                "threshold metrics need at least one positive and one negative pair".into(),
            ));
        }
        Ok((pos, neg))
    }
}

/// Distance per pair via descriptor extraction; deterministic, and
/// batch-size invariant because descriptors are computed on the eval path.
pub fn score_pairs(
    model: &Model<f32>,
    pairs: &PairList,
    store: &PatchStore,
    pipeline: &PreprocessPipeline,
) -> Result<ScoredPairs> {
    // Describe each distinct patch once, in deterministic chunks.
    let unique: Vec<u32> = pairs
        .pairs
        .iter()
        .flat_map(|p| [p.idx1, p.idx2])
        .collect::<BTreeSet<u32>>()
        .into_iter()
        .collect();
    let mut descriptors: std::collections::HashMap<u32, Vec<f32>> =
        std::collections::HashMap::with_capacity(unique.len());
    let chunk = 128;
    for ids in unique.chunks(chunk) {
        let mut x = Tensor::<f32>::zeros(&[ids.len(), 1, PATCH_SIZE, PATCH_SIZE]);
        for (slot, &id) in ids.iter().enumerate() {
            pipeline.apply_into(
                store.patch(id as usize),
                AugmentTag::IDENTITY,
                &mut x.data_mut()[slot * PATCH_PIXELS..(slot + 1) * PATCH_PIXELS],
            );
        }
        let d = model.describe(&x)?;
        let dim = d.shape()[1];
        for (slot, &id) in ids.iter().enumerate() {
            descriptors.insert(id, d.data()[slot * dim..(slot + 1) * dim].to_vec());
        }
    }
    let mut distances = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for p in &pairs.pairs {
        let f1 = &descriptors[&p.idx1];
        let f2 = &descriptors[&p.idx2];
        distances.push(pair_distance(f1, f2)? as f64);
        labels.push(p.label);
    }
    ScoredPairs::new(distances, labels)
}

/// Ascending distinct distances with cumulative (tp, fp) counts at
/// `distance ≤ threshold`.
fn threshold_sweep(s: &ScoredPairs) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.distances[a].total_cmp(&s.distances[b]));
    let mut out = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let d = s.distances[order[i]];
        // Consume the whole tie group before emitting the step.
        while i < order.len() && s.distances[order[i]] == d {
            if s.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((d, tp, fp));
    }
    out
}

/// Smallest threshold with recall ≥ `recall_target`, then the false
/// positive rate at that threshold.
pub fn fpr_at_recall(s: &ScoredPairs, recall_target: f64) -> Result<f64> {
    if !(recall_target > 0.0 && recall_target <= 1.0) {
        return Err(Error::Arg(format!(
            "recall target must lie in (0, 1], got {recall_target}"
        )));
    }
    let (pos, neg) = s.class_counts()?;
    for (_, tp, fp) in threshold_sweep(s) {
        if tp as f64 / pos as f64 >= recall_target {
            return Ok(fp as f64 / neg as f64);
        }
    }
    unreachable!("the largest threshold reaches recall 1")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points over the distinct thresholds, with a below-all sentinel at
/// (0, 0). The final point is always (1, 1).
pub fn roc_curve(s: &ScoredPairs) -> Result<Vec<RocPoint>> {
    let (pos, neg) = s.class_counts()?;
    let mut out = vec![RocPoint {
        threshold: -1.0,
        tpr: 0.0,
        fpr: 0.0,
    }];
    for (d, tp, fp) in threshold_sweep(s) {
        out.push(RocPoint {
            threshold: d,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall points (leading sentinel at recall 0, precision 1) and
/// the area under the curve by trapezoidal integration over recall.
pub fn pr_curve(s: &ScoredPairs) -> Result<(Vec<PrPoint>, f64)> {
    let (pos, _) = s.class_counts()?;
    let mut out = vec![PrPoint {
        threshold: -1.0,
        precision: 1.0,
        recall: 0.0,
    }];
    for (d, tp, fp) in threshold_sweep(s) {
        if tp + fp == 0 {
            continue;
        }
        out.push(PrPoint {
            threshold: d,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
    }
    let mut auc = 0.0;
    for w in out.windows(2) {
        auc += (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0;
    }
    Ok((out, auc))
}

/// Per-class distance histograms over `[0, max distance]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(low, high)` per bin.
    pub edges: Vec<(f64, f64)>,
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
}

pub fn distance_histograms(s: &ScoredPairs, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Arg("histogram needs at least one bin".into()));
    }
    let max = s.distances.iter().copied().fold(0.0f64, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut pos = vec![0u64; bins];
    let mut neg = vec![0u64; bins];
    for (d, &l) in s.distances.iter().zip(&s.labels) {
        let bin = ((d / width) as usize).min(bins - 1);
        if l == 1 {
            pos[bin] += 1;
        } else {
            neg[bin] += 1;
        }
    }
    let edges = (0..bins)
        .map(|i| (i as f64 * width, (i + 1) as f64 * width))
        .collect();
    Ok(Histogram { edges, pos, neg })
}

/// Means over the six train/test cells in the frozen column order
/// Yos→Lib, Yos→ND, ND→Lib, ND→Yos, Lib→ND, Lib→Yos; `mean_1_4` averages
/// the first four (models trained on Yosemite and Notredame).
pub fn aggregate_means(cells: &[f64; 6]) -> (f64, f64) {
    let mean = cells.iter().sum::<f64>() / 6.0;
    let mean_1_4 = cells[..4].iter().sum::<f64>() / 4.0;
    (mean, mean_1_4)
}

/// Top-ranked confusions: negative pairs with the smallest distances
/// ("false positives") and positive pairs with the largest ("false
/// negatives"), as `(pair row, distance)`.
pub fn top_errors(s: &ScoredPairs, n: usize) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let mut neg: Vec<(usize, f64)> = s
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 0)
        .map(|(i, _)| (i, s.distances[i]))
        .collect();
    neg.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    neg.truncate(n);
    let mut pos: Vec<(usize, f64)> = s
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| (i, s.distances[i]))
        .collect();
    pos.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pos.truncate(n);
    (neg, pos)
}

/// Everything the evaluation protocol produces for one model/pair-list
/// combination.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub fpr_at_95: f64,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub pr_auc: f64,
    pub histogram: Histogram,
    pub metadata: String,
}

pub const DEFAULT_RECALL_TARGET: f64 = 0.95;
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

pub fn evaluate(s: &ScoredPairs, bins: usize, metadata: &str) -> Result<EvalReport> {
    let fpr_at_95 = fpr_at_recall(s, DEFAULT_RECALL_TARGET)?;
    let roc = roc_curve(s)?;
    let (pr, pr_auc) = pr_curve(s)?;
    let histogram = distance_histograms(s, bins)?;
    Ok(EvalReport {
        fpr_at_95,
        roc,
        pr,
        pr_auc,
        histogram,
        metadata: metadata.to_string(),
    })
}

fn with_header(metadata: &str, columns: &str) -> String {
    let mut out = String::new();
    for line in metadata.lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{columns}");
    out
}

impl EvalReport {
    /// Writes `roc.csv`, `pr.csv`, `hist.csv` and `summary.csv` into `dir`.
    pub fn write_csv_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut roc = with_header(&self.metadata, "threshold,tpr,fpr");
        for p in &self.roc {
            let _ = writeln!(roc, "{},{},{}", p.threshold, p.tpr, p.fpr);
        }
        std::fs::write(dir.join("roc.csv"), roc)?;

        let mut pr = with_header(&self.metadata, "threshold,precision,recall");
        for p in &self.pr {
            let _ = writeln!(pr, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        std::fs::write(dir.join("pr.csv"), pr)?;

        let mut hist = with_header(&self.metadata, "bin_low,bin_high,pos_count,neg_count");
        for (i, (lo, hi)) in self.histogram.edges.iter().enumerate() {
            let _ = writeln!(
                hist,
                "{},{},{},{}",
                lo, hi, self.histogram.pos[i], self.histogram.neg[i]
            );
        }
        std::fs::write(dir.join("hist.csv"), hist)?;

        let mut summary = with_header(&self.metadata, "metric,value");
        let _ = writeln!(summary, "fpr_at_95,{}", self.fpr_at_95);
        let _ = writeln!(summary, "pr_auc,{}", self.pr_auc);
        std::fs::write(dir.join("summary.csv"), summary)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(d: &[f64], l: &[u8]) -> ScoredPairs {
        ScoredPairs::new(d.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn fpr_hand_case_with_ties() {
        // Positives all at 0.1; negatives ten at 0.05 and ten at 0.5.
        let mut d = vec![0.1; 10];
        let mut l = vec![1u8; 10];
        d.extend(vec![0.05; 10]);
        l.extend(vec![0u8; 10]);
        d.extend(vec![0.5; 10]);
        l.extend(vec![0u8; 10]);
        let s = scored(&d, &l);
        assert_eq!(fpr_at_recall(&s, 0.95).unwrap(), 0.5);
    }

    #[test]
    fn fpr_separated_and_inverted() {
        let s = scored(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]);
        assert_eq!(fpr_at_recall(&s, 0.95).unwrap(), 0.0);
        let s = scored(&[0.8, 0.9, 0.1, 0.2], &[1, 1, 0, 0]);
        assert_eq!(fpr_at_recall(&s, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn fpr_rejects_bad_targets_and_single_class() {
        let s = scored(&[0.1, 0.9], &[1, 0]);
        assert!(fpr_at_recall(&s, 0.0).is_err());
        assert!(fpr_at_recall(&s, 1.1).is_err());
        let s = scored(&[0.1, 0.9], &[1, 1]);
        assert!(fpr_at_recall(&s, 0.95).is_err());
    }

    #[test]
    fn perfect_separation_gives_unit_auc() {
        let s = scored(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]);
        let (_, auc) = pr_curve(&s).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn toy_pr_table() {
        // Six pairs, distances ascending; labels 1,1,0,1,0,0.
        // Sweep: t=0.1 → P=1/1, R=1/3; t=0.2 → 2/2, 2/3; t=0.3 → 2/3, 2/3;
        //        t=0.4 → 3/4, 1; t=0.5 → 3/5, 1; t=0.6 → 3/6, 1.
        let s = scored(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[1, 1, 0, 1, 0, 0]);
        let (points, auc) = pr_curve(&s).unwrap();
        let expect = [
            (1.0, 0.0),
            (1.0, 1.0 / 3.0),
            (1.0, 2.0 / 3.0),
            (2.0 / 3.0, 2.0 / 3.0),
            (0.75, 1.0),
            (0.6, 1.0),
            (0.5, 1.0),
        ];
        assert_eq!(points.len(), expect.len());
        for (p, (prec, rec)) in points.iter().zip(expect) {
            assert!((p.precision - prec).abs() < 1e-12, "{p:?}");
            assert!((p.recall - rec).abs() < 1e-12);
        }
        // Trapezoid: 2/3·1 + 0·(1+2/3)/2… computed by hand: segments
        // (0→1/3)·1 + (1/3→2/3)·1 + flat + (2/3→1)·(2/3+0.75)/2.
        let hand = 1.0 / 3.0 + 1.0 / 3.0 + (1.0 / 3.0) * ((2.0 / 3.0 + 0.75) / 2.0);
        assert!((auc - hand).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_preserved() {
        let s = scored(&[0.5, 0.5, 0.5, 0.5], &[1, 1, 0, 1]);
        let h = distance_histograms(&s, 4).unwrap();
        assert_eq!(h.pos.iter().sum::<u64>(), 3);
        assert_eq!(h.neg.iter().sum::<u64>(), 1);
        // All distances equal → exactly one nonzero bin per class.
        assert_eq!(h.pos.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.neg.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn two_bin_median_split_matches_direct_count() {
        let d = [0.1, 0.2, 0.3, 0.4, 0.6, 0.9];
        let l = [1u8, 1, 0, 1, 0, 0];
        let s = scored(&d, &l);
        let h = distance_histograms(&s, 2).unwrap();
        // Direct partition at 0.45 (= max/2).
        let pos_low = d
            .iter()
            .zip(&l)
            .filter(|(&x, &y)| y == 1 && x < 0.45)
            .count() as u64;
        assert_eq!(h.pos[0], pos_low);
        assert_eq!(h.pos[1], 3 - pos_low);
    }

    #[test]
    fn paper_row_means() {
        let row = [15.19, 8.36, 12.20, 14.72, 6.93, 15.86];
        let (mean, mean_1_4) = aggregate_means(&row);
        assert!((mean - 12.21).abs() < 0.005);
        // The caption formula (average of the first four columns) gives
        // 12.62 for this row.
        assert!((mean_1_4 - 12.6175).abs() < 1e-9);
    }

    #[test]
    fn means_invariants() {
        let all_c = [3.0; 6];
        assert_eq!(aggregate_means(&all_c), (3.0, 3.0));
        let mut row = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (m1, m14a) = aggregate_means(&row);
        row.swap(4, 5);
        let (m2, m14b) = aggregate_means(&row);
        assert_eq!(m1, m2);
        assert_eq!(m14a, m14b);
    }

    #[test]
    fn top_errors_ranked() {
        let s = scored(&[0.9, 0.2, 0.1, 0.8], &[1, 0, 0, 1]);
        let (fps, fns) = top_errors(&s, 1);
        assert_eq!(fps, vec![(2, 0.1)]);
        assert_eq!(fns, vec![(0, 0.9)]);
    }

    #[test]
    fn roc_and_pr_recall_axes_coincide() {
        let s = scored(&[0.1, 0.4, 0.4, 0.7, 0.9], &[1, 0, 1, 1, 0]);
        let roc = roc_curve(&s).unwrap();
        let (pr, _) = pr_curve(&s).unwrap();
        // Skip each curve's sentinel; recall == tpr at every threshold.
        for (r, p) in roc[1..].iter().zip(&pr[1..]) {
            assert_eq!(r.threshold, p.threshold);
            assert!((r.tpr - p.recall).abs() < 1e-15);
        }
    }
}
