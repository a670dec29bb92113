//! View construction: stochastic augmentations, mix-up and patch masking.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Each field set to `None` disables that augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Standard deviation of additive Gaussian noise.
    pub jitter_sigma: Option<f64>,
    /// Range of the multiplicative amplitude factor.
    pub scale_range: Option<[f64; 2]>,
    /// Smallest kept fraction for crop-and-resize.
    pub crop_min_fraction: Option<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: Some(0.05),
            scale_range: Some([0.8, 1.25]),
            crop_min_fraction: Some(0.9),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            jitter_sigma: None,
            scale_range: None,
            crop_min_fraction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.jitter_sigma {
            if !(s >= 0.0) {
                return Err(Error::config("jitter sigma must be non-negative"));
            }
        }
        if let Some([lo, hi]) = self.scale_range {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::config("scale range must be positive and ordered"));
            }
        }
        if let Some(f) = self.crop_min_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("crop fraction must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Linear-interpolation resize of `x` to `len` samples, endpoints aligned.
fn resize(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() == len {
        return x.to_vec();
    }
    if x.len() == 1 || len == 1 {
        return vec![x[0]; len];
    }
    let step = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = (pos.floor() as usize).min(x.len() - 2);
            let f = pos - j as f64;
            x[j] * (1.0 - f) + x[j + 1] * f
        })
        .collect()
}

pub fn augment(x: &[f64], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    if let Some(min_frac) = cfg.crop_min_fraction {
        if min_frac < 1.0 && x.len() > 1 {
            let frac = rng.gen_range(min_frac..=1.0);
            let keep = ((x.len() as f64 * frac).round() as usize).clamp(2, x.len());
            let start = rng.gen_range(0..=x.len() - keep);
            out = resize(&x[start..start + keep], x.len());
        }
    }
    if let Some([lo, hi]) = cfg.scale_range {
        let s = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        out.iter_mut().for_each(|v| *v *= s);
    }
    if let Some(sigma) = cfg.jitter_sigma {
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("validated sigma");
            out.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
    }
    out
}

/// Two augmented views per segment, returned in pair order
/// `[s0_a, s0_b, s1_a, s1_b, ...]`.
pub fn sample_simclr_pairs<S: AsRef<[f64]>>(segments: &[S], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * segments.len());
    for s in segments {
        out.push(augment(s.as_ref(), cfg, rng));
        out.push(augment(s.as_ref(), cfg, rng));
    }
    out
}

pub fn sample_mix_weight(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::config(format!("invalid mix-up Beta parameter {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda * x1 + (1 - lambda) * x2`.
pub fn mix(x1: &[f64], x2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::Shape {
            op: "mix",
            lhs: vec![x1.len()],
            rhs: vec![x2.len()],
        });
    }
    Ok(x1.iter().zip(x2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect())
}

/// Draw `lambda ~ Beta(alpha, alpha)` and mix the two strips.
pub fn mixup_views(x1: &[f64], x2: &[f64], alpha: f64, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
    let lambda = sample_mix_weight(alpha, rng)?;
    Ok((mix(x1, x2, lambda)?, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub patch_len: usize,
    pub ratio: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            patch_len: 50,
            ratio: 0.5,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::config(format!("masking ratio must be in [0, 1], got {}", self.ratio)));
        }
        if self.patch_len == 0 {
            return Err(Error::config("mask patch length must be positive"));
        }
        Ok(())
    }
}

/// Patch-level mask over a signal of `len` samples; the last patch may be
/// shorter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub patches: Vec<bool>,
    pub patch_len: usize,
    pub len: usize,
}

impl PatchMask {
    pub fn sample(spec: &MaskSpec, len: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let n = len.div_ceil(spec.patch_len);
        let k = (spec.ratio * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut patches = vec![false; n];
        for &i in &order[..k] {
            patches[i] = true;
        }
        Ok(Self {
            patches,
            patch_len: spec.patch_len,
            len,
        })
    }

    pub fn complement(&self) -> Self {
        Self {
            patches: self.patches.iter().map(|m| !m).collect(),
            ..self.clone()
        }
    }

    pub fn n_masked_patches(&self) -> usize {
        self.patches.iter().filter(|m| **m).count()
    }

    pub fn is_masked(&self, sample: usize) -> bool {
        self.patches[sample / self.patch_len]
    }

    /// Per-sample indicator, 1.0 where masked.
    pub fn sample_flags(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.is_masked(i) { 1.0 } else { 0.0 }).collect()
    }

    /// Zero every masked sample.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| if self.is_masked(i) { 0.0 } else { *v })
            .collect()
    }
}

pub fn apply_mask(segment: &[f64], spec: &MaskSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, PatchMask)> {
    let mask = PatchMask::sample(spec, segment.len(), rng)?;
    Ok((mask.apply(segment), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig() -> Vec<f64> {
        (0..1000).map(|i| (i as f64 * 0.05).sin()).collect()
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_simclr_pairs(&[sig()], &AugmentConfig::disabled(), &mut rng);
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0], sig());
    }

    #[test]
    fn augmented_views_keep_length_and_reproduce() {
        let cfg = AugmentConfig::default();
        let a = sample_simclr_pairs(&[sig()], &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_simclr_pairs(&[sig()], &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.len() == 1000));
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn mix_endpoints() {
        let x1 = vec![1.0, 2.0];
        let x2 = vec![-1.0, 5.0];
        assert_eq!(mix(&x1, &x2, 1.0).unwrap(), x1);
        assert_eq!(mix(&x1, &x2, 0.0).unwrap(), x2);
    }

    #[test]
    fn beta_weights_average_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean = (0..10000).map(|_| sample_mix_weight(0.5, &mut rng).unwrap()).sum::<f64>() / 10000.0;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn mask_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = sig();
        let (y, m) = apply_mask(&x, &MaskSpec::default(), &mut rng).unwrap();
        assert_eq!(m.n_masked_patches(), 10);
        assert_eq!(m.sample_flags().iter().sum::<f64>(), 500.0);
        for i in 0..1000 {
            assert_eq!(y[i], if m.is_masked(i) { 0.0 } else { x[i] });
        }

        let (y0, m0) = apply_mask(&x, &MaskSpec { ratio: 0.0, ..Default::default() }, &mut rng).unwrap();
        assert_eq!(y0, x);
        assert_eq!(m0.n_masked_patches(), 0);
        let (y1, _) = apply_mask(&x, &MaskSpec { ratio: 1.0, ..Default::default() }, &mut rng).unwrap();
        assert!(y1.iter().all(|v| *v == 0.0));
        assert!(apply_mask(&x, &MaskSpec { ratio: 1.5, ..Default::default() }, &mut rng).is_err());
    }

    #[test]
    fn complement_partitions_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = PatchMask::sample(&MaskSpec { patch_len: 30, ratio: 0.3 }, 1000, &mut rng).unwrap();
        let c = m.complement();
        for i in 0..1000 {
            assert_ne!(m.is_masked(i), c.is_masked(i));
        }
    }
}
