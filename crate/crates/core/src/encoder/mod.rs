//! The shared 1-D convolutional encoder and the small networks attached to
//! it: projection head, reconstruction decoder and the supervised head.

mod heads;
pub mod supervised;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{checkpoint, Tape, Tensor, Var};
use crate::sigproc::SEGMENT_LEN;

pub use heads::{Decoder, ProjectionHead, SupervisedHead};
pub use supervised::{bce_loss, train_supervised, SupervisedModel, TrainHistory, TrainRecipe};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            kernel_size: 7,
            stride: 2,
            embedding_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("encoder needs at least one block with nonzero width"));
        }
        if self.embedding_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::config("kernel size and stride must be positive"));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }
}

/// Anything owning an ordered list of trainable tensors.
pub trait Module {
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];

    /// Place every parameter on `tape` as a trainable leaf.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().iter().map(|p| tape.param(p)).collect()
    }

    /// Place every parameter on `tape` as a constant (no gradient).
    fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().iter().map(|p| tape.constant(p.clone())).collect()
    }
}

/// Uniform fan-in initialisation: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `x: [batch, in]`, `w: [in, out]`, `b: [1, out]`.
pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    let shape = tape.shape(y).to_vec();
    let bb = tape.broadcast_to(b, &shape)?;
    tape.add(y, bb)
}

/// Conv + per-channel bias; `b: [1, c_out, 1]`.
pub(crate) fn conv_bias(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let y = tape.conv1d(x, w, stride, padding)?;
    let shape = tape.shape(y).to_vec();
    let bb = tape.broadcast_to(b, &shape)?;
    tape.add(y, bb)
}

/// Stack equal-length signals into a `[batch, 1, len]` tensor.
pub fn batch_tensor<S: AsRef<[f64]>>(signals: &[S]) -> Result<Tensor> {
    let len = signals.first().map(|s| s.as_ref().len()).unwrap_or(0);
    let mut data = Vec::with_capacity(signals.len() * len);
    for s in signals {
        let s = s.as_ref();
        if s.len() != len {
            return Err(Error::Shape {
                op: "batch",
                lhs: vec![len],
                rhs: vec![s.len()],
            });
        }
        data.extend_from_slice(s);
    }
    Tensor::new(vec![signals.len(), 1, len], data)
}

/// Output of an encoder forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// Last convolutional feature map, `[batch, c_last, len']`.
    pub features: Var,
    /// Pooled embedding, `[batch, embedding_dim]`.
    pub embedding: Var,
}

/// Strided conv blocks with ReLU, global average pooling, then an affine
/// map to the embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: Vec<Tensor>,
}

const CHECKPOINT_KIND: &str = "encoder";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut c_in = 1;
        for &c_out in &config.channels {
            let fan_in = c_in * config.kernel_size;
            params.push(init_uniform(&[c_out, c_in, config.kernel_size], fan_in, &mut rng));
            params.push(init_uniform(&[1, c_out, 1], fan_in, &mut rng));
            c_in = c_out;
        }
        params.push(init_uniform(&[c_in, config.embedding_dim], c_in, &mut rng));
        params.push(init_uniform(&[1, config.embedding_dim], c_in, &mut rng));
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// `x: [batch, 1, len]`; `vars` from [`Module::bind`] or
    /// [`Module::bind_frozen`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let mut h = x;
        for block in 0..cfg.channels.len() {
            let (w, b) = (vars[2 * block], vars[2 * block + 1]);
            h = conv_bias(tape, h, w, b, cfg.stride, cfg.padding())?;
            h = tape.relu(h);
        }
        let features = h;
        let pooled = tape.mean_axis(features, 2)?;
        let n = vars.len();
        let embedding = linear(tape, pooled, vars[n - 2], vars[n - 1])?;
        Ok(EncoderOutput {
            features,
            embedding,
        })
    }

    /// Frozen-parameter embeddings of whole segments, computed in chunks.
    pub fn embed<S: AsRef<[f64]> + Sync>(&self, segments: &[S]) -> Result<Vec<Vec<f64>>> {
        for s in segments {
            if s.as_ref().len() != SEGMENT_LEN {
                return Err(Error::Shape {
                    op: "encode",
                    lhs: vec![SEGMENT_LEN],
                    rhs: vec![s.as_ref().len()],
                });
            }
        }
        let d = self.config.embedding_dim;
        let chunks: Vec<Result<Vec<Vec<f64>>>> = segments
            .par_chunks(64)
            .map(|chunk| {
                let mut tape = Tape::new();
                let vars = self.bind_frozen(&mut tape);
                let x = tape.constant(batch_tensor(chunk)?);
                let out = self.forward(&mut tape, &vars, x)?;
                Ok(tape
                    .value(out.embedding)
                    .data()
                    .chunks(d)
                    .map(<[f64]>::to_vec)
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(segments.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn encode(&self, segment: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed(&[segment])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        self.to_tagged_checkpoint(None)
    }

    /// Checkpoint whose metadata also records the hash of the run config.
    pub fn to_tagged_checkpoint(&self, config_hash: Option<&str>) -> Vec<u8> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            config_hash: config_hash.map(str::to_string),
        };
        checkpoint::encode(&serde_json::to_string(&meta).expect("serializable"), &self.params)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (meta, params) = checkpoint::decode(bytes)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected encoder, found {}", meta.kind)));
        }
        let reference = Encoder::new(meta.config.clone(), 0)?;
        let shapes_match = reference.params.len() == params.len()
            && reference.params.iter().zip(&params).all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(Error::Checkpoint("parameter shapes do not match config".into()));
        }
        Ok(Self {
            config: meta.config,
            params,
        })
    }
}

impl Module for Encoder {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}
