//! Design the default 0.5-40 Hz band-pass and print its gain at a few
//! frequencies, then run one synthetic recording through the full chain.

use ecg_ssl::sigproc::{design_bandpass, generate_synthetic_corpus, prepare_segments, SigprocConfig, SyntheticSpec};

fn main() -> ecg_ssl::Result<()> {
    let fs = 250.0;
    let filter = design_bandpass(0.5, 40.0, fs)?;
    println!("stable: {}", filter.is_stable());
    for f in [0.05, 0.5, 1.0, 10.0, 40.0, 60.0, 100.0] {
        let h = filter.frequency_response(f).norm();
        println!("{f:>6} Hz  |H| = {h:.4}  ({:.1} dB)", 20.0 * h.log10());
    }

    let spec = SyntheticSpec {
        n_patients_per_class: 1,
        recordings_per_patient: 1,
        duration_s: 60.0,
        ..SyntheticSpec::default()
    };
    let rec = &generate_synthetic_corpus(&spec)?[0];
    let segs = prepare_segments(rec, &SigprocConfig::default())?;
    println!(
        "{}: {} samples at {} Hz -> {} segments of {} samples",
        rec.recording_id,
        rec.samples.len(),
        rec.sample_rate_hz,
        segs.len(),
        segs[0].values.len()
    );
    Ok(())
}
