//! Self-supervised pretraining: view construction, samplers, objectives
//! and the training loop.

pub mod augment;
pub mod losses;
mod pretrain;
pub mod samplers;

pub use augment::{apply_mask, mixup_views, sample_simclr_pairs, AugmentConfig, MaskSpec, PatchMask};
pub use losses::{
    cosine_sim, deaps_loss, mixup_contrastive_loss, mtae_loss, nerula_loss, nt_xent_loss, DeapsWeights,
};
pub use pretrain::{pretrain, PretrainConfig, PretrainOutcome, SslMethod};
pub use samplers::{MixupSource, PretrainCorpus, PretrainRecording, SegmentRef, Triplet};
