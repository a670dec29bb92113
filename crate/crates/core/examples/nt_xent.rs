//! NT-Xent on random embeddings and on perfectly aligned pairs, across
//! temperatures.

use ecg_ssl::numcore::{Tape, Tensor};
use ecg_ssl::ssl::nt_xent_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(rows: &[Vec<f64>], tau: f64) -> ecg_ssl::Result<f64> {
    let t = Tensor::new(vec![rows.len(), rows[0].len()], rows.concat())?;
    let mut tape = Tape::new();
    let z = tape.constant(t);
    let l = nt_xent_loss(&mut tape, z, tau)?;
    Ok(tape.value(l).item())
}

fn main() -> ecg_ssl::Result<()> {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let aligned: Vec<Vec<f64>> = (0..2 * n).map(|i| random[i / 2 * 2].clone()).collect();
    println!("chance level log(2N-1) = {:.4}", ((2 * n - 1) as f64).ln());
    for tau in [0.1, 0.5, 1.0] {
        println!("tau {tau}: random {:.4}  aligned {:.4}", loss(&random, tau)?, loss(&aligned, tau)?);
    }
    Ok(())
}
