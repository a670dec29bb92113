use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update in place. Fails without touching any parameter if a
    /// gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len(), self.first.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::Training {
                    step: self.step + 1,
                    message: format!("non-finite gradient for parameter {i}"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub eta_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr0: f64, eta_min: f64, total_steps: u64) -> Result<Self> {
        if total_steps < 1 || eta_min > lr0 || !lr0.is_finite() {
            return Err(Error::config(format!(
                "invalid cosine schedule: lr0={lr0}, eta_min={eta_min}, T={total_steps}"
            )));
        }
        Ok(Self {
            lr0,
            eta_min,
            total_steps,
        })
    }

    /// Learning rate at step `t`; steps past `total_steps` clamp to `eta_min`.
    pub fn lr(&self, t: u64) -> f64 {
        if t >= self.total_steps {
            return self.eta_min;
        }
        let frac = t as f64 / self.total_steps as f64;
        self.eta_min + 0.5 * (self.lr0 - self.eta_min) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without strict improvement of
/// the validation loss. Epochs are numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best_loss: f64,
    best_epoch: usize,
    epoch: usize,
    since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Whether the most recent update set a new best.
    pub fn improved(&self) -> bool {
        self.epoch > 0 && self.best_epoch == self.epoch
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}
