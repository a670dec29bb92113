use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the truth contains a single class.
    pub auc: Option<f64>,
}

/// Rank-sum AUC with mid-ranks for tied scores.
pub fn auc(y_true: &[u8], scores: &[f64]) -> Option<f64> {
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| y_true[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn compute_metrics(y_true: &[u8], y_pred: &[u8], y_score: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() || y_true.len() != y_score.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len(), y_score.len()],
        });
    }
    if y_true.is_empty() {
        return Err(Error::Numeric("metrics of an empty set".into()));
    }
    if y_score.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut correct = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        correct += usize::from(t == p);
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    // 2PR / (P + R) in count form, so the result is one correctly rounded
    // division; zero when there are no true positives.
    let f1 = if tp > 0 {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy: correct as f64 / y_true.len() as f64,
        f1,
        auc: auc(y_true, y_score),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}
