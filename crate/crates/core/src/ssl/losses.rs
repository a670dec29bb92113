//! Pretraining objectives as tape expressions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Added to self-similarities so they vanish from the softmax denominator.
const SELF_MASK: f64 = -1e12;

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_sim",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// NT-Xent over `z: [2N, D]` where rows `2k` and `2k + 1` are positives.
/// Mean over all `2N` anchors.
pub fn nt_xent_loss(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 || shape[0] < 4 || !shape[0].is_multiple_of(2) {
        return Err(Error::Shape {
            op: "nt_xent",
            lhs: shape,
            rhs: vec![],
        });
    }
    let n2 = shape[0];
    let zn = tape.l2_normalize(z)?;
    let zt = tape.transpose(zn)?;
    let sim = tape.matmul(zn, zt)?;
    let sim = tape.scale(sim, 1.0 / temperature);
    let mut mask = Tensor::zeros(&[n2, n2]);
    let mut pick = Tensor::zeros(&[n2, n2]);
    for i in 0..n2 {
        mask.data_mut()[i * n2 + i] = SELF_MASK;
        pick.data_mut()[i * n2 + (i ^ 1)] = 1.0;
    }
    let mask = tape.constant(mask);
    let logits = tape.add(sim, mask)?;
    let logp = tape.log_softmax(logits)?;
    let pick = tape.constant(pick);
    let picked = tape.mul(logp, pick)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n2 as f64))
}

/// Interleave `a` and `b` (both `[N, D]`) into `[2N, D]` as `a0, b0, a1, b1, ...`.
pub fn interleave_pairs(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 2 || tape.shape(b) != shape.as_slice() {
        return Err(Error::Shape {
            op: "interleave",
            lhs: shape,
            rhs: tape.shape(b).to_vec(),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    let a3 = tape.reshape(a, &[n, 1, d])?;
    let b3 = tape.reshape(b, &[n, 1, d])?;
    let ab = tape.concat(&[a3, b3], 1)?;
    tape.reshape(ab, &[2 * n, d])
}

/// Each source strip is contrasted with the mixed strip built from it:
/// `0.5 * (NT-Xent(z1, zmix) + NT-Xent(z2, zmix))`.
pub fn mixup_contrastive_loss(tape: &mut Tape, z1: Var, z2: Var, zmix: Var, temperature: f64) -> Result<Var> {
    let a = interleave_pairs(tape, z1, zmix)?;
    let la = nt_xent_loss(tape, a, temperature)?;
    let b = interleave_pairs(tape, z2, zmix)?;
    let lb = nt_xent_loss(tape, b, temperature)?;
    let s = tape.add(la, lb)?;
    Ok(tape.scale(s, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeapsWeights {
    pub variance: f64,
    pub covariance: f64,
    pub dynamics: f64,
    pub margin: f64,
    /// Added to the per-dimension variance before the square root.
    pub variance_eps: f64,
}

impl Default for DeapsWeights {
    fn default() -> Self {
        Self {
            variance: 1.0,
            covariance: 1.0 / 64.0,
            dynamics: 1.0,
            margin: 1.0,
            variance_eps: 1e-6,
        }
    }
}

const DIST_EPS: f64 = 1e-12;

/// Centered batch `[n, D]` and its per-dimension unbiased variance `[1, D]`.
fn centered(tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(z).to_vec();
    let n = shape[0];
    let mean = tape.mean_axis(z, 0)?;
    let mean = tape.reshape(mean, &[1, shape[1]])?;
    let mean = tape.broadcast_to(mean, &shape)?;
    let c = tape.sub(z, mean)?;
    let sq = tape.mul(c, c)?;
    let var = tape.sum_axis(sq, 0)?;
    let var = tape.scale(var, 1.0 / (n - 1) as f64);
    Ok((c, var))
}

/// Invariance, variance, covariance and temporal-dynamics terms over
/// triplet embeddings, each `[B, D]`.
pub fn deaps_loss(tape: &mut Tape, anchor: Var, near: Var, far: Var, w: &DeapsWeights) -> Result<Var> {
    let shape = tape.shape(anchor).to_vec();
    if shape.len() != 2 || tape.shape(near) != shape.as_slice() || tape.shape(far) != shape.as_slice() {
        return Err(Error::Shape {
            op: "deaps",
            lhs: shape,
            rhs: tape.shape(near).to_vec(),
        });
    }
    let (b, d) = (shape[0], shape[1]);
    if b < 4 {
        return Err(Error::config(format!("triplet batch needs at least 4 triplets, got {b}")));
    }

    let diff = tape.sub(anchor, near)?;
    let sq = tape.mul(diff, diff)?;
    let inv = tape.sum(sq);
    let inv = tape.scale(inv, 1.0 / b as f64);

    let z = tape.concat(&[anchor, near], 0)?;
    let (c, var) = centered(tape, z)?;
    let var = tape.affine(var, 1.0, w.variance_eps);
    let std = tape.sqrt(var);
    let hinge = tape.affine(std, -1.0, 1.0);
    let hinge = tape.relu(hinge);
    let l_var = tape.sum(hinge);

    let ct = tape.transpose(c)?;
    let cov = tape.matmul(ct, c)?;
    let cov = tape.scale(cov, 1.0 / (2 * b - 1) as f64);
    let mut off = Tensor::filled(&[d, d], 1.0);
    for i in 0..d {
        off.data_mut()[i * d + i] = 0.0;
    }
    let off = tape.constant(off);
    let cov_off = tape.mul(cov, off)?;
    let cov_sq = tape.mul(cov_off, cov_off)?;
    let l_cov = tape.sum(cov_sq);

    let fd = tape.sub(anchor, far)?;
    let fsq = tape.mul(fd, fd)?;
    let dist2 = tape.sum_axis(fsq, 1)?;
    let dist2 = tape.affine(dist2, 1.0, DIST_EPS);
    let dist = tape.sqrt(dist2);
    let dyn_hinge = tape.affine(dist, -1.0, w.margin);
    let dyn_hinge = tape.relu(dyn_hinge);
    let l_dyn = tape.mean(dyn_hinge);

    let l_var = tape.scale(l_var, w.variance);
    let l_cov = tape.scale(l_cov, w.covariance);
    let l_dyn = tape.scale(l_dyn, w.dynamics);
    let s = tape.add(inv, l_var)?;
    let s = tape.add(s, l_cov)?;
    tape.add(s, l_dyn)
}

/// Mean squared error over positions where `mask` is 1.
pub fn mtae_loss(tape: &mut Tape, prediction: Var, target: Var, mask: &Tensor) -> Result<Var> {
    if tape.shape(prediction) != mask.shape() {
        return Err(Error::Shape {
            op: "mtae_loss",
            lhs: tape.shape(prediction).to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    let count: f64 = mask.data().iter().sum();
    if count <= 0.0 {
        return Err(Error::config("reconstruction loss needs at least one masked sample"));
    }
    let diff = tape.sub(prediction, target)?;
    let m = tape.constant(mask.clone());
    let dm = tape.mul(diff, m)?;
    let sq = tape.mul(dm, dm)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / count))
}

/// Mean over the batch of the squared distance between rows of `za` and
/// `zb`. Callers detach `zb` for the stop-gradient branch.
pub fn alignment_loss(tape: &mut Tape, za: Var, zb: Var) -> Result<Var> {
    let b = tape.shape(za).first().copied().unwrap_or(1).max(1);
    let d = tape.sub(za, zb)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// Reconstruction of view A on its masked samples plus stop-gradient
/// alignment of the projected embeddings of both views.
pub fn nerula_loss(
    tape: &mut Tape,
    reconstruction: Var,
    target: Var,
    mask_a: &Tensor,
    za: Var,
    zb: Var,
    lambda_d: f64,
) -> Result<Var> {
    let recon = mtae_loss(tape, reconstruction, target, mask_a)?;
    let zb = tape.detach(zb);
    let disc = alignment_loss(tape, za, zb)?;
    let disc = tape.scale(disc, lambda_d);
    tape.add(recon, disc)
}
