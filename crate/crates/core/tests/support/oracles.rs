//! Slow reference implementations used as test oracles.
#![allow(dead_code)]

use pltanh_core::activations::solve_crossover;

/// Per-class precision, recall and F1 counted straight from the label lists,
/// then averaged. 0/0 counts as 0.
pub fn macro_prf(truth: &[usize], predicted: &[usize], classes: usize) -> (f64, f64, f64) {
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let k = classes as f64;
    (p_sum / k, r_sum / k, f_sum / k)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Macro one-vs-rest AUC over the classes where it is defined. `scores` is
/// row-major `[n, classes]`.
pub fn macro_auc(scores: &[f64], truth: &[usize], classes: usize) -> Option<f64> {
    let n = truth.len();
    let aucs: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let column: Vec<f64> = (0..n).map(|i| scores[i * classes + c]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            pairwise_auc(&column, &positive)
        })
        .collect();
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// The three-piece form: `-alpha*x` left of zero, `tanh` up to the crossover,
/// `alpha*x` beyond it.
pub fn pltanh_piecewise(x: f64, alpha: f64) -> f64 {
    let x_star = if alpha >= 1.0 {
        0.0
    } else {
        solve_crossover(alpha).map_or(f64::INFINITY, |c| c.x_star)
    };
    piecewise_with(x, alpha, x_star)
}

pub fn piecewise_with(x: f64, alpha: f64, x_star: f64) -> f64 {
    if x < 0.0 {
        -alpha * x
    } else if x <= x_star {
        x.tanh()
    } else {
        alpha * x
    }
}
