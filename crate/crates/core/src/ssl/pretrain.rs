//! Pretraining loop shared by all seven objectives.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, mix, sample_mix_weight, AugmentConfig, MaskSpec, PatchMask};
use super::losses::{deaps_loss, mixup_contrastive_loss, mtae_loss, nerula_loss, nt_xent_loss, DeapsWeights};
use super::samplers::{
    sample_clocs_pairs, sample_mixup_pairs, sample_pclr_pairs, sample_segments, sample_triplets, MixupSource, Pair,
    PretrainCorpus,
};
use crate::encoder::{batch_tensor, Decoder, Encoder, EncoderConfig, Module, ProjectionHead};
use crate::error::{Error, Result};
use crate::numcore::{clip_grad_norm, Adam, CosineSchedule, Tape, Tensor, Var};
use crate::rng;
use crate::sigproc::SEGMENT_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslMethod {
    Simclr,
    Mixup,
    Clocs,
    Pclr,
    Deaps,
    Mtae,
    Nerula,
}

impl SslMethod {
    pub const ALL: [SslMethod; 7] = [
        SslMethod::Simclr,
        SslMethod::Mixup,
        SslMethod::Clocs,
        SslMethod::Pclr,
        SslMethod::Deaps,
        SslMethod::Mtae,
        SslMethod::Nerula,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SslMethod::Simclr => "simclr",
            SslMethod::Mixup => "mixup",
            SslMethod::Clocs => "clocs",
            SslMethod::Pclr => "pclr",
            SslMethod::Deaps => "deaps",
            SslMethod::Mtae => "mtae",
            SslMethod::Nerula => "nerula",
        }
    }
}

impl fmt::Display for SslMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SslMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SslMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<&str> = SslMethod::ALL.iter().map(|m| m.name()).collect();
                Error::config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub method: SslMethod,
    /// Supplied by the enclosing experiment config when deserialised.
    #[serde(skip)]
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    /// Pairs per batch for contrastive methods, triplets for DEAPS,
    /// segments for the masked methods.
    pub batch_size: usize,
    pub temperature: f64,
    pub lr: f64,
    pub eta_min: f64,
    pub clip_norm: Option<f64>,
    pub augment: AugmentConfig,
    pub mixup_alpha: f64,
    pub mixup_source: MixupSource,
    pub mask: MaskSpec,
    pub gap_near_s: f64,
    pub gap_far_s: f64,
    pub deaps: DeapsWeights,
    pub nerula_lambda: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            method: SslMethod::Simclr,
            encoder: EncoderConfig::default(),
            epochs: 6,
            batches_per_epoch: 16,
            batch_size: 64,
            temperature: 0.1,
            lr: 1e-3,
            eta_min: 0.0,
            clip_norm: Some(5.0),
            augment: AugmentConfig::default(),
            mixup_alpha: 0.5,
            mixup_source: MixupSource::SameRecording,
            mask: MaskSpec::default(),
            gap_near_s: 10.0,
            gap_far_s: 120.0,
            deaps: DeapsWeights::default(),
            nerula_lambda: 1.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augment.validate()?;
        self.mask.validate()?;
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::config("epochs and batches per epoch must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("pretraining batch size must be at least 2"));
        }
        if self.method == SslMethod::Deaps && self.batch_size < 4 {
            return Err(Error::config("triplet batches need at least 4 triplets"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::config("mix-up Beta parameter must be positive"));
        }
        if matches!(self.method, SslMethod::Mtae | SslMethod::Nerula) && !(self.mask.ratio > 0.0 && self.mask.ratio < 1.0) {
            return Err(Error::config("masked pretraining needs a masking ratio strictly between 0 and 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
}

/// One batch of model inputs, already materialised.
enum Batch {
    /// `2N` signals in pair order.
    Contrastive(Vec<Vec<f64>>),
    Mixup {
        x1: Vec<Vec<f64>>,
        x2: Vec<Vec<f64>>,
        mixed: Vec<Vec<f64>>,
    },
    Triplets {
        anchor: Vec<Vec<f64>>,
        near: Vec<Vec<f64>>,
        far: Vec<Vec<f64>>,
    },
    Masked {
        input: Vec<Vec<f64>>,
        target: Vec<Vec<f64>>,
        mask: Vec<f64>,
    },
    Nerula {
        view_a: Vec<Vec<f64>>,
        view_b: Vec<Vec<f64>>,
        target: Vec<Vec<f64>>,
        mask_a: Vec<f64>,
    },
}

struct Models {
    encoder: Encoder,
    projection: ProjectionHead,
    decoder: Decoder,
}

fn rows(tape: &Tape, v: Var, n: usize) -> Result<()> {
    if tape.shape(v)[0] != n {
        return Err(Error::Shape {
            op: "batch rows",
            lhs: tape.shape(v).to_vec(),
            rhs: vec![n],
        });
    }
    Ok(())
}

impl Models {
    fn new(cfg: &PretrainConfig) -> Result<Self> {
        let encoder = Encoder::new(cfg.encoder.clone(), rng::derive_seed(cfg.seed, &[1]))?;
        let projection = ProjectionHead::new(cfg.encoder.embedding_dim, rng::derive_seed(cfg.seed, &[2]));
        let decoder = Decoder::new(&cfg.encoder, rng::derive_seed(cfg.seed, &[3]));
        Ok(Self {
            encoder,
            projection,
            decoder,
        })
    }

    fn all_params(&self) -> Vec<&Tensor> {
        self.encoder
            .params()
            .iter()
            .chain(self.projection.params())
            .chain(self.decoder.params())
            .collect()
    }

    fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .params_mut()
            .iter_mut()
            .chain(self.projection.params_mut().iter_mut())
            .chain(self.decoder.params_mut().iter_mut())
            .collect()
    }

    /// Projected embeddings `[B, D]` of a signal batch.
    fn project(&self, tape: &mut Tape, ev: &[Var], pv: &[Var], signals: &[Vec<f64>]) -> Result<Var> {
        let x = tape.constant(batch_tensor(signals)?);
        let out = self.encoder.forward(tape, ev, x)?;
        let z = self.projection.forward(tape, pv, out.embedding)?;
        rows(tape, z, signals.len())?;
        Ok(z)
    }

    fn reconstruct(&self, tape: &mut Tape, ev: &[Var], dv: &[Var], signals: &[Vec<f64>]) -> Result<(Var, Var)> {
        let x = tape.constant(batch_tensor(signals)?);
        let out = self.encoder.forward(tape, ev, x)?;
        let r = self.decoder.forward(tape, dv, out.features, SEGMENT_LEN)?;
        Ok((r, out.embedding))
    }

    fn loss(&self, tape: &mut Tape, vars: &[Vec<Var>; 3], batch: &Batch, cfg: &PretrainConfig) -> Result<Var> {
        let [ev, pv, dv] = vars;
        match batch {
            Batch::Contrastive(views) => {
                let z = self.project(tape, ev, pv, views)?;
                nt_xent_loss(tape, z, cfg.temperature)
            }
            Batch::Mixup { x1, x2, mixed } => {
                let n = x1.len();
                let all: Vec<Vec<f64>> = x1.iter().chain(x2).chain(mixed).cloned().collect();
                let z = self.project(tape, ev, pv, &all)?;
                let z1 = tape.slice(z, 0, 0, n)?;
                let z2 = tape.slice(z, 0, n, n)?;
                let zm = tape.slice(z, 0, 2 * n, n)?;
                mixup_contrastive_loss(tape, z1, z2, zm, cfg.temperature)
            }
            Batch::Triplets { anchor, near, far } => {
                let n = anchor.len();
                let all: Vec<Vec<f64>> = anchor.iter().chain(near).chain(far).cloned().collect();
                let z = self.project(tape, ev, pv, &all)?;
                let za = tape.slice(z, 0, 0, n)?;
                let zn = tape.slice(z, 0, n, n)?;
                let zf = tape.slice(z, 0, 2 * n, n)?;
                deaps_loss(tape, za, zn, zf, &cfg.deaps)
            }
            Batch::Masked { input, target, mask } => {
                let (r, _) = self.reconstruct(tape, ev, dv, input)?;
                let t = tape.constant(batch_tensor(target)?);
                let m = Tensor::new(vec![input.len(), 1, SEGMENT_LEN], mask.clone())?;
                mtae_loss(tape, r, t, &m)
            }
            Batch::Nerula {
                view_a,
                view_b,
                target,
                mask_a,
            } => {
                let n = view_a.len();
                let all: Vec<Vec<f64>> = view_a.iter().chain(view_b).cloned().collect();
                let x = tape.constant(batch_tensor(&all)?);
                let out = self.encoder.forward(tape, ev, x)?;
                let feats_a = tape.slice(out.features, 0, 0, n)?;
                let r = self.decoder.forward(tape, dv, feats_a, SEGMENT_LEN)?;
                let z = self.projection.forward(tape, pv, out.embedding)?;
                let za = tape.slice(z, 0, 0, n)?;
                let zb = tape.slice(z, 0, n, n)?;
                let t = tape.constant(batch_tensor(target)?);
                let m = Tensor::new(vec![n, 1, SEGMENT_LEN], mask_a.clone())?;
                nerula_loss(tape, r, t, &m, za, zb, cfg.nerula_lambda)
            }
        }
    }
}

fn gather(corpus: &PretrainCorpus, pairs: &[Pair]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .flat_map(|(a, b)| [corpus.get(*a).to_vec(), corpus.get(*b).to_vec()])
        .collect()
}

/// All batches of one epoch, drawn from `rng`.
fn epoch_batches(corpus: &PretrainCorpus, cfg: &PretrainConfig, rng: &mut impl Rng) -> Result<Vec<Batch>> {
    let (nb, n) = (cfg.batches_per_epoch, cfg.batch_size);
    let mut out = Vec::with_capacity(nb);
    match cfg.method {
        SslMethod::Simclr => {
            for _ in 0..nb {
                let refs = sample_segments(corpus, n, rng)?;
                let mut views = Vec::with_capacity(2 * n);
                for r in refs {
                    views.push(augment(corpus.get(r), &cfg.augment, rng));
                    views.push(augment(corpus.get(r), &cfg.augment, rng));
                }
                out.push(Batch::Contrastive(views));
            }
        }
        SslMethod::Clocs => {
            let pool = sample_clocs_pairs(corpus, rng)?;
            if pool.len() < 2 {
                return Err(Error::config("consecutive-strip pairing produced fewer than 2 pairs"));
            }
            let mut cursor = 0;
            for _ in 0..nb {
                let pairs: Vec<Pair> = (0..n).map(|i| pool[(cursor + i) % pool.len()]).collect();
                cursor = (cursor + n) % pool.len();
                out.push(Batch::Contrastive(gather(corpus, &pairs)));
            }
        }
        SslMethod::Pclr => {
            for pairs in sample_pclr_pairs(corpus, nb, n, rng)? {
                out.push(Batch::Contrastive(gather(corpus, &pairs)));
            }
        }
        SslMethod::Mixup => {
            for _ in 0..nb {
                let pairs = sample_mixup_pairs(corpus, n, cfg.mixup_source, rng)?;
                let mut x1 = Vec::with_capacity(n);
                let mut x2 = Vec::with_capacity(n);
                let mut mixed = Vec::with_capacity(n);
                for (a, b) in pairs {
                    let lambda = sample_mix_weight(cfg.mixup_alpha, rng)?;
                    mixed.push(mix(corpus.get(a), corpus.get(b), lambda)?);
                    x1.push(corpus.get(a).to_vec());
                    x2.push(corpus.get(b).to_vec());
                }
                out.push(Batch::Mixup { x1, x2, mixed });
            }
        }
        SslMethod::Deaps => {
            for triplets in sample_triplets(corpus, nb, n, cfg.gap_near_s, cfg.gap_far_s, rng)? {
                let pick = |f: fn(&super::samplers::Triplet) -> super::samplers::SegmentRef| {
                    triplets.iter().map(|t| corpus.get(f(t)).to_vec()).collect::<Vec<_>>()
                };
                out.push(Batch::Triplets {
                    anchor: pick(|t| t.anchor),
                    near: pick(|t| t.near),
                    far: pick(|t| t.far),
                });
            }
        }
        SslMethod::Mtae | SslMethod::Nerula => {
            for _ in 0..nb {
                let refs = sample_segments(corpus, n, rng)?;
                let mut target = Vec::with_capacity(n);
                let mut view_a = Vec::with_capacity(n);
                let mut view_b = Vec::with_capacity(n);
                let mut flags = Vec::with_capacity(n * SEGMENT_LEN);
                for r in refs {
                    let x = corpus.get(r);
                    let m = PatchMask::sample(&cfg.mask, x.len(), rng)?;
                    view_a.push(m.apply(x));
                    view_b.push(m.complement().apply(x));
                    flags.extend(m.sample_flags());
                    target.push(x.to_vec());
                }
                out.push(if cfg.method == SslMethod::Mtae {
                    Batch::Masked {
                        input: view_a,
                        target,
                        mask: flags,
                    }
                } else {
                    Batch::Nerula {
                        view_a,
                        view_b,
                        target,
                        mask_a: flags,
                    }
                });
            }
        }
    }
    Ok(out)
}

/// Train a fresh encoder with the configured objective. Heads are
/// discarded; only the encoder is returned.
pub fn pretrain(corpus: &PretrainCorpus, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.n_segments() == 0 {
        return Err(Error::config("pretraining corpus has no segments"));
    }
    if let Some(r) = corpus
        .recordings
        .iter()
        .find(|r| r.segments.iter().any(|s| s.len() != SEGMENT_LEN))
    {
        return Err(Error::data(format!("recording {} has a segment of the wrong length", r.recording_id)));
    }
    let mut models = Models::new(cfg)?;
    let mut adam = Adam::new(&models.all_params());
    let total = (cfg.epochs * cfg.batches_per_epoch) as u64;
    let schedule = CosineSchedule::new(cfg.lr, cfg.eta_min, total)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, &[100, epoch as u64]);
        let batches = epoch_batches(corpus, cfg, &mut rng)?;
        let mut sum = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let vars = [
                models.encoder.bind(&mut tape),
                models.projection.bind(&mut tape),
                models.decoder.bind(&mut tape),
            ];
            let loss = models.loss(&mut tape, &vars, batch, cfg)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("{} loss is not finite", cfg.method),
                });
            }
            sum += lv;
            let mut grads = tape.backward(loss)?;
            let mut gs: Vec<Tensor> = vars
                .iter()
                .flatten()
                .map(|v| grads.take_or_zeros(*v, tape.shape(*v)))
                .collect();
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut gs, max);
            }
            adam.step(&mut models.all_params_mut(), &gs, schedule.lr(step))?;
            step += 1;
        }
        let mean = sum / batches.len() as f64;
        log::info!("{} epoch {}: loss {mean:.4}", cfg.method, epoch + 1);
        losses.push(mean);
    }
    Ok(PretrainOutcome {
        encoder: models.encoder,
        losses,
    })
}
