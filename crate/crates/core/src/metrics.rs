//! Classification measures: accuracy, macro precision/recall/F1 and macro
//! one-vs-rest ROC AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no samples")]
    Empty,
    #[error("no class has both positive and negative samples, AUC undefined")]
    NoDefinedAuc,
    #[error("score matrix shape {0:?} is not [N, K]")]
    Shape(Vec<usize>),
    #[error("no folds to aggregate")]
    NoFolds,
}

/// `counts[i * k + j]` is the number of samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), classes * classes, "confusion matrix must be K x K");
        Self { classes, counts }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`] of an `[N, K]` score matrix.
pub fn predictions<T: Real>(scores: &Tensor<T>) -> Result<Vec<usize>, MetricsError> {
    let (_, k) = scores
        .dims2("predictions")
        .map_err(|_| MetricsError::Shape(scores.shape().to_vec()))?;
    Ok(scores.data().chunks_exact(k).map(argmax).collect())
}

fn check_lengths(truth: &[usize], predicted: &[usize]) -> Result<(), MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= classes {
                return Err(MetricsError::LabelOutOfRange { label, classes });
            }
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64, MetricsError> {
    check_lengths(truth, predicted)?;
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Unweighted class means of precision, recall and F1. Undefined ratios
/// (0/0) count as 0.
pub fn macro_prf(cm: &ConfusionMatrix) -> Prf {
    let k = cm.classes;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let predicted: u64 = (0..k).map(|i| cm.get(i, c)).sum();
        let actual: u64 = (0..k).map(|j| cm.get(c, j)).sum();
        let p = ratio(tp, predicted as f64);
        let r = ratio(tp, actual as f64);
        p_sum += p;
        r_sum += r;
        f_sum += ratio(2.0 * p * r, p + r);
    }
    let k = k.max(1) as f64;
    Prf {
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
    }
}

/// Binary ROC AUC by the rank-sum statistic, ties counting one half.
/// `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Mean over classes of the one-vs-rest AUC of each score column. Classes
/// that are absent, or that are every sample, are left out.
pub fn macro_auc_ovr<T: Real>(scores: &Tensor<T>, truth: &[usize]) -> Result<f64, MetricsError> {
    let (n, k) = scores
        .dims2("macro_auc_ovr")
        .map_err(|_| MetricsError::Shape(scores.shape().to_vec()))?;
    if n != truth.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: n,
        });
    }
    if let Some(&label) = truth.iter().find(|&&t| t >= k) {
        return Err(MetricsError::LabelOutOfRange { label, classes: k });
    }
    let mut total = 0.0;
    let mut defined = 0usize;
    let mut column = vec![0.0; n];
    let mut positive = vec![false; n];
    for c in 0..k {
        for i in 0..n {
            column[i] = scores.data()[i * k + c].to_f64();
            positive[i] = truth[i] == c;
        }
        if let Some(auc) = binary_auc(&column, &positive) {
            total += auc;
            defined += 1;
        }
    }
    if defined == 0 {
        return Err(MetricsError::NoDefinedAuc);
    }
    Ok(total / defined as f64)
}

/// All measures for one validation fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

impl FoldMetrics {
    fn fields(&self) -> [f64; 5] {
        [
            self.accuracy,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.macro_auc,
        ]
    }
}

/// Scores `[N, K]` class probabilities against true labels.
pub fn evaluate<T: Real>(probs: &Tensor<T>, truth: &[usize]) -> Result<FoldMetrics, MetricsError> {
    let (_, k) = probs
        .dims2("evaluate")
        .map_err(|_| MetricsError::Shape(probs.shape().to_vec()))?;
    let predicted = predictions(probs)?;
    let cm = confusion(truth, &predicted, k)?;
    let prf = macro_prf(&cm);
    Ok(FoldMetrics {
        accuracy: accuracy(truth, &predicted)?,
        macro_precision: prf.precision,
        macro_recall: prf.recall,
        macro_f1: prf.f1,
        macro_auc: macro_auc_ovr(probs, truth)?,
    })
}

/// Per-fold measures and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean: FoldMetrics,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self, MetricsError> {
        if folds.is_empty() {
            return Err(MetricsError::NoFolds);
        }
        let mut sums = [0.0; 5];
        for f in &folds {
            for (s, v) in sums.iter_mut().zip(f.fields()) {
                *s += v;
            }
        }
        let n = folds.len() as f64;
        let mean = FoldMetrics {
            accuracy: sums[0] / n,
            macro_precision: sums[1] / n,
            macro_recall: sums[2] / n,
            macro_f1: sums[3] / n,
            macro_auc: sums[4] / n,
        };
        Ok(Self { folds, mean })
    }
}
