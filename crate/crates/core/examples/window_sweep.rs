//! Aggregate 10 s strip predictions over longer windows by keeping the most
//! confident strip, and sweep the window length.

use std::collections::BTreeMap;

use ecg_ssl::eval::{default_window_grid, sweep_window, windowed_inference, StripPrediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ecg_ssl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut strips = Vec::new();
    let mut truth = BTreeMap::new();
    for r in 0..20 {
        let label = (r % 2) as u8;
        let id = format!("rec{r:02}");
        truth.insert(id.clone(), label);
        for k in 0..30 {
            // Mostly uninformative strips with an occasional confident one.
            let p = if rng.gen_bool(0.15) {
                if label == 1 { 0.95 } else { 0.05 }
            } else {
                rng.gen_range(0.3..0.7)
            };
            strips.push(StripPrediction::from_proba(id.clone(), 10.0 * k as f64, p));
        }
    }

    let w60 = windowed_inference(&strips, 60.0)?;
    println!("{} strips -> {} one-minute windows", strips.len(), w60.len());

    let sweep = sweep_window(&strips, &truth, &default_window_grid(&strips))?;
    println!("window_s  accuracy  f1");
    for row in &sweep.rows {
        println!("{:>8}  {:>8.3}  {:.3}", row.window_s, row.accuracy, row.f1);
    }
    println!("best window: {} s", sweep.best_window_s);
    Ok(())
}
