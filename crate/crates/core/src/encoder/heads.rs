use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv_bias, init_uniform, linear, EncoderConfig, Module};
use crate::error::Result;
use crate::numcore::{Tape, Tensor, Var};

/// Two-layer MLP `D -> D -> D` used only during contrastive or
/// non-contrastive pretraining.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    params: Vec<Tensor>,
}

impl ProjectionHead {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            init_uniform(&[dim, dim], dim, &mut rng),
            init_uniform(&[1, dim], dim, &mut rng),
            init_uniform(&[dim, dim], dim, &mut rng),
            init_uniform(&[1, dim], dim, &mut rng),
        ];
        Self { params }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = linear(tape, x, vars[0], vars[1])?;
        let h = tape.relu(h);
        linear(tape, h, vars[2], vars[3])
    }
}

impl Module for ProjectionHead {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

/// Mirror of the encoder's conv stack: nearest upsampling by the encoder
/// stride followed by a stride-1 conv, back down to one channel.
#[derive(Debug, Clone)]
pub struct Decoder {
    config: EncoderConfig,
    params: Vec<Tensor>,
}

impl Decoder {
    pub fn new(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;
        let mut widths: Vec<usize> = config.channels.iter().rev().copied().collect();
        widths.push(1);
        let params = widths
            .windows(2)
            .flat_map(|w| {
                let (c_in, c_out) = (w[0], w[1]);
                [
                    init_uniform(&[c_out, c_in, k], c_in * k, &mut rng),
                    init_uniform(&[1, c_out, 1], c_in * k, &mut rng),
                ]
            })
            .collect();
        Self {
            config: config.clone(),
            params,
        }
    }

    /// `features: [batch, c_last, len']` to `[batch, 1, out_len]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], features: Var, out_len: usize) -> Result<Var> {
        let n_blocks = self.config.channels.len();
        let mut h = features;
        for block in 0..n_blocks {
            h = tape.upsample(h, self.config.stride)?;
            h = conv_bias(
                tape,
                h,
                vars[2 * block],
                vars[2 * block + 1],
                1,
                self.config.padding(),
            )?;
            if block + 1 < n_blocks {
                h = tape.relu(h);
            }
        }
        tape.slice(h, 2, 0, out_len)
    }
}

impl Module for Decoder {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

const PROB_FLOOR: f64 = 1e-12;

/// Affine map to one logit followed by a sigmoid.
#[derive(Debug, Clone)]
pub struct SupervisedHead {
    params: Vec<Tensor>,
}

impl SupervisedHead {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            params: vec![
                init_uniform(&[dim, 1], dim, &mut rng),
                init_uniform(&[1, 1], dim, &mut rng),
            ],
        }
    }

    /// Class-1 probabilities, `[batch, 1]`, kept strictly inside (0, 1).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], embedding: Var) -> Result<Var> {
        let logit = linear(tape, embedding, vars[0], vars[1])?;
        let p = tape.sigmoid(logit);
        Ok(tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR))
    }
}

impl Module for SupervisedHead {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}
