//! Fit the three probes on a noisy two-feature problem and compare their
//! held-out metrics.

use ecg_ssl::eval::compute_metrics;
use ecg_ssl::probes::{fit_probe, ProbeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
    // Circular boundary: linear probes can only do so much here.
    let y = x
        .iter()
        .map(|r| u8::from(r[0] * r[0] + r[1] * r[1] + rng.gen_range(-0.5..0.5) < 2.0))
        .collect();
    (x, y)
}

fn main() -> ecg_ssl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (xtr, ytr) = sample(&mut rng, 300);
    let (xte, yte) = sample(&mut rng, 300);
    for kind in [ProbeKind::logistic(), ProbeKind::linear_svm(), ProbeKind::default()] {
        let probe = fit_probe(&kind, &xtr, &ytr, 0)?;
        let p = probe.predict_proba(&xte)?;
        let pred: Vec<u8> = p.iter().map(|v| u8::from(*v >= 0.5)).collect();
        let m = compute_metrics(&yte, &pred, &p)?;
        println!(
            "{:<14} accuracy {:.3}  f1 {:.3}  auc {:.3}",
            kind.name(),
            m.accuracy,
            m.f1,
            m.auc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
