//! L2-regularised logistic regression and linear SVM on dense features.

use serde::{Deserialize, Serialize};

use super::{check_inputs, dot};
use crate::error::Result;
use crate::numcore::sigmoid;

/// Weights, bias and the logistic link applied to the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// `p = sigmoid(link[0] * score + link[1])`.
    pub link: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.link[0] * self.score(x) + self.link[1])
    }
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `mean NLL + |w|^2 / (2 C n)` and its gradient `[dw.., db]`.
pub fn logistic_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[u8], c: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = w.len();
    let reg = 1.0 / (c * n);
    let mut f = 0.0;
    let mut g = vec![0.0; d + 1];
    for (xi, &yi) in x.iter().zip(y) {
        let z = dot(w, xi) + b;
        let t = f64::from(yi);
        f += log1p_exp(z) - t * z;
        let r = sigmoid(z) - t;
        for (gj, xj) in g.iter_mut().zip(xi) {
            *gj += r * xj;
        }
        g[d] += r;
    }
    f /= n;
    g.iter_mut().for_each(|v| *v /= n);
    f += 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>();
    for j in 0..d {
        g[j] += reg * w[j];
    }
    (f, g)
}

/// `|w|^2 / (2 C n) + mean hinge` with labels mapped to -1/+1, and a
/// subgradient (margins exactly at 1 count as inactive).
pub fn svm_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[u8], c: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = w.len();
    let reg = 1.0 / (c * n);
    let mut f = 0.0;
    let mut g = vec![0.0; d + 1];
    for (xi, &yi) in x.iter().zip(y) {
        let s = if yi == 1 { 1.0 } else { -1.0 };
        let m = s * (dot(w, xi) + b);
        if m < 1.0 {
            f += 1.0 - m;
            for (gj, xj) in g.iter_mut().zip(xi) {
                *gj -= s * xj;
            }
            g[d] -= s;
        }
    }
    f /= n;
    g.iter_mut().for_each(|v| *v /= n);
    f += 0.5 * reg * w.iter().map(|v| v * v).sum::<f64>();
    for j in 0..d {
        g[j] += reg * w[j];
    }
    (f, g)
}

pub const GRAD_TOL: f64 = 1e-6;
const ARMIJO_C: f64 = 1e-4;

/// Full-batch gradient descent with Armijo backtracking; the trial step is
/// the Barzilai-Borwein estimate from the previous iterate.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], c: f64, max_iter: usize) -> Result<LinearModel> {
    let d = check_inputs(x, y, c)?;
    let mut theta = vec![0.0; d + 1];
    let obj = |t: &[f64]| logistic_objective(&t[..d], t[d], x, y, c);
    let (mut f, mut g) = obj(&theta);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2.sqrt() <= GRAD_TOL {
            converged = true;
            break;
        }
        let mut t = step;
        let (next, fn_, gn) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let (fc, gc) = obj(&cand);
            if fc <= f - ARMIJO_C * t * gn2 || t < 1e-20 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { t * 2.0 };
        theta = next;
        f = fn_;
        g = gn;
        iterations += 1;
    }
    if !converged {
        log::warn!("logistic probe stopped after {max_iter} iterations without reaching the gradient tolerance");
    }
    Ok(LinearModel {
        weights: theta[..d].to_vec(),
        bias: theta[d],
        link: [1.0, 0.0],
        iterations,
        converged,
    })
}

/// Deterministic full-batch subgradient descent with step `1 / (lambda (t + t0))`.
/// Returns the lower-objective of the suffix-averaged iterate and the best
/// iterate seen.
pub fn fit_linear_svm(x: &[Vec<f64>], y: &[u8], c: f64, epochs: usize) -> Result<LinearModel> {
    let d = check_inputs(x, y, c)?;
    let lambda = 1.0 / (c * x.len() as f64);
    let max_sq = x.iter().map(|r| dot(r, r)).fold(1.0, f64::max);
    let t0 = max_sq / lambda;
    let obj = |t: &[f64]| svm_objective(&t[..d], t[d], x, y, c);
    let mut theta = vec![0.0; d + 1];
    let mut avg = vec![0.0; d + 1];
    let mut n_avg = 0.0;
    let (mut best_f, _) = obj(&theta);
    let mut best = theta.clone();
    let burn_in = epochs / 2;
    for t in 0..epochs {
        let (f, g) = obj(&theta);
        if f < best_f {
            best_f = f;
            best.clone_from(&theta);
        }
        let eta = 1.0 / (lambda * (t as f64 + t0));
        theta.iter_mut().zip(&g).for_each(|(a, b)| *a -= eta * b);
        if t >= burn_in {
            n_avg += 1.0;
            avg.iter_mut().zip(&theta).for_each(|(a, b)| *a += (b - *a) / n_avg);
        }
    }
    for cand in [&theta, &avg] {
        let (f, _) = obj(cand);
        if f < best_f {
            best_f = f;
            best.clone_from(cand);
        }
    }
    Ok(LinearModel {
        weights: best[..d].to_vec(),
        bias: best[d],
        link: [1.0, 0.0],
        iterations: epochs,
        converged: true,
    })
}
