//! Dataset-level evaluation: one global one-to-one matching of predicted
//! labels to ground-truth actions, then mean-over-frames accuracy and a
//! segment-level F1 at 50% overlap.

use std::fmt::Write as _;

use crate::clustering::runs;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Ground-truth frame labels for every video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: Vec<Vec<usize>>,
    /// Label id marking background frames, if any. Background is never a
    /// matching target and is left out of every score.
    pub background: Option<usize>,
}

impl GroundTruth {
    pub fn new(labels: Vec<Vec<usize>>) -> Self {
        GroundTruth {
            labels,
            background: None,
        }
    }

    pub fn with_background(labels: Vec<Vec<usize>>, background: usize) -> Self {
        GroundTruth {
            labels,
            background: Some(background),
        }
    }

    /// One more than the largest label.
    pub fn n_labels(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    fn is_background(&self, g: usize) -> bool {
        self.background == Some(g)
    }
}

/// Predicted label → ground-truth label; `None` means background.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub mapping: Vec<Option<usize>>,
    pub total_overlap: f64,
}

impl MatchResult {
    pub fn map(&self, predicted: usize) -> Option<usize> {
        self.mapping.get(predicted).copied().flatten()
    }

    pub fn n_matched(&self) -> usize {
        self.mapping.iter().flatten().count()
    }
}

/// `P × G` frame counts: entry `(p, g)` is the number of frames predicted
/// `p` whose ground truth is `g`.
pub fn overlap_matrix(predictions: &[Vec<usize>], truth: &[Vec<usize>], n_pred: usize, n_gt: usize) -> Result<Matrix> {
    check_lengths(predictions, truth)?;
    let mut m = Matrix::zeros(n_pred, n_gt);
    for (p, g) in predictions.iter().zip(truth) {
        for (&a, &b) in p.iter().zip(g) {
            if a >= n_pred || b >= n_gt {
                return Err(Error::InvalidArgument(format!(
                    "label pair ({a}, {b}) outside {n_pred} x {n_gt}"
                )));
            }
            m.set(a, b, m.get(a, b) + 1.0);
        }
    }
    Ok(m)
}

fn check_lengths(predictions: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<()> {
    if predictions.len() != truth.len() {
        return Err(Error::dim("videos with ground truth", predictions.len(), truth.len()));
    }
    for (i, (p, g)) in predictions.iter().zip(truth).enumerate() {
        if p.len() != g.len() {
            return Err(Error::dim(format!("frames of video {i}"), g.len(), p.len()));
        }
    }
    Ok(())
}

/// One-to-one assignment maximising the summed overlap.
///
/// The matrix is padded to square with zero rows or columns; a predicted
/// label assigned to a padding column, or matched with zero overlap, is left
/// unmatched.
pub fn hungarian_match(overlap: &Matrix) -> Result<MatchResult> {
    let (p, g) = (overlap.rows(), overlap.cols());
    if p == 0 || g == 0 {
        return Err(Error::InvalidArgument("empty overlap matrix".into()));
    }
    if overlap.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("overlaps must be finite and non-negative".into()));
    }
    let n = p.max(g);
    let top = overlap.data().iter().copied().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        if i < p && j < g {
            top - overlap.get(i, j)
        } else {
            top
        }
    };

    // shortest augmenting path with potentials, rows and columns 1-based
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut mapping = vec![None; p];
    let mut total = 0.0;
    for j in 1..=n {
        let i = owner[j] - 1;
        if i < p && j - 1 < g {
            let o = overlap.get(i, j - 1);
            total += o;
            if o > 0.0 {
                mapping[i] = Some(j - 1);
            }
        }
    }
    Ok(MatchResult {
        mapping,
        total_overlap: total,
    })
}

/// Matching that never targets the background label.
pub fn match_labels(predictions: &[Vec<usize>], truth: &GroundTruth, n_pred: usize) -> Result<MatchResult> {
    let n_gt = truth.n_labels().max(1);
    let mut overlap = overlap_matrix(predictions, &truth.labels, n_pred, n_gt)?;
    if let Some(b) = truth.background {
        if b < n_gt {
            for p in 0..n_pred {
                overlap.set(p, b, 0.0);
            }
        }
    }
    hungarian_match(&overlap)
}

/// Fraction of frames whose matched prediction equals the ground truth.
/// Background frames are excluded from the count when a background label is
/// set.
pub fn mof(predictions: &[Vec<usize>], truth: &GroundTruth, matching: &MatchResult) -> Result<f64> {
    check_lengths(predictions, &truth.labels)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in predictions.iter().zip(&truth.labels) {
        for (&a, &b) in p.iter().zip(g) {
            if truth.is_background(b) {
                continue;
            }
            total += 1;
            if matching.map(a) == Some(b) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no foreground frames to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Segment-level detection score.
///
/// A predicted segment is a true positive when its matched label equals a
/// ground-truth segment's label and they share more than half of the
/// ground-truth segment's frames. Candidates are claimed greedily by
/// decreasing shared frames, each side at most once. Predicted segments of
/// unmatched labels and ground-truth background segments are not counted.
pub fn f1_at_50(predictions: &[Vec<usize>], truth: &GroundTruth, matching: &MatchResult) -> Result<F1Score> {
    check_lengths(predictions, &truth.labels)?;
    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gt = 0usize;
    for (p, g) in predictions.iter().zip(&truth.labels) {
        let pred: Vec<(Option<usize>, usize, usize)> = spans(p)
            .into_iter()
            .map(|(a, s, l)| (matching.map(a), s, l))
            .filter(|(m, _, _)| m.is_some())
            .collect();
        let gt: Vec<(usize, usize, usize)> = spans(g).into_iter().filter(|&(b, _, _)| !truth.is_background(b)).collect();
        n_pred += pred.len();
        n_gt += gt.len();

        let mut candidates = Vec::new();
        for (i, &(a, ps, pl)) in pred.iter().enumerate() {
            for (j, &(b, gs, gl)) in gt.iter().enumerate() {
                if a != Some(b) {
                    continue;
                }
                let shared = (ps + pl).min(gs + gl).saturating_sub(ps.max(gs));
                if 2 * shared > gl {
                    candidates.push((shared, i, j));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut pred_used = vec![false; pred.len()];
        let mut gt_used = vec![false; gt.len()];
        for (_, i, j) in candidates {
            if !pred_used[i] && !gt_used[j] {
                pred_used[i] = true;
                gt_used[j] = true;
                tp += 1;
            }
        }
    }
    let precision = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Score { precision, recall, f1 })
}

/// Maximal constant runs as `(label, start, len)`.
fn spans(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut start = 0;
    runs(labels)
        .into_iter()
        .map(|(a, l)| {
            let s = start;
            start += l;
            (a, s, l)
        })
        .collect()
}

/// Every score for one set of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mof: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub frames: usize,
    pub matching: MatchResult,
    /// `(gt label, fraction of its frames predicted correctly)`.
    pub per_action_accuracy: Vec<(usize, f64)>,
}

impl Metrics {
    /// `key=value` lines, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mof={:.6}", self.mof);
        let _ = writeln!(out, "precision={:.6}", self.precision);
        let _ = writeln!(out, "recall={:.6}", self.recall);
        let _ = writeln!(out, "f1={:.6}", self.f1);
        let _ = writeln!(out, "frames={}", self.frames);
        for (g, acc) in &self.per_action_accuracy {
            let _ = writeln!(out, "accuracy.{g}={acc:.6}");
        }
        for (p, m) in self.matching.mapping.iter().enumerate() {
            match m {
                Some(g) => {
                    let _ = writeln!(out, "match.{p}={g}");
                }
                None => {
                    let _ = writeln!(out, "match.{p}=background");
                }
            }
        }
        out
    }
}

/// Matches predictions to ground truth globally and computes all scores.
pub fn evaluate(predictions: &[Vec<usize>], truth: &GroundTruth, n_pred: usize) -> Result<Metrics> {
    let matching = match_labels(predictions, truth, n_pred)?;
    let mof = mof(predictions, truth, &matching)?;
    let f1 = f1_at_50(predictions, truth, &matching)?;
    let n_gt = truth.n_labels();
    let mut hits = vec![0usize; n_gt];
    let mut counts = vec![0usize; n_gt];
    for (p, g) in predictions.iter().zip(&truth.labels) {
        for (&a, &b) in p.iter().zip(g) {
            counts[b] += 1;
            if matching.map(a) == Some(b) {
                hits[b] += 1;
            }
        }
    }
    let per_action_accuracy = (0..n_gt)
        .filter(|&g| counts[g] > 0 && !truth.is_background(g))
        .map(|g| (g, hits[g] as f64 / counts[g] as f64))
        .collect();
    let frames = truth
        .labels
        .iter()
        .flatten()
        .filter(|&&b| !truth.is_background(b))
        .count();
    Ok(Metrics {
        mof,
        precision: f1.precision,
        recall: f1.recall,
        f1: f1.f1,
        frames,
        matching,
        per_action_accuracy,
    })
}
