//! Generate a small labeled corpus, write it to a temporary directory and
//! read it back through the manifest.

use ecg_ssl::sigproc::io::{load_manifest_recordings, write_corpus, SignalFormat};
use ecg_ssl::sigproc::{generate_synthetic_corpus, SyntheticSpec};

fn main() -> ecg_ssl::Result<()> {
    let spec = SyntheticSpec {
        n_patients_per_class: 3,
        recordings_per_patient: 2,
        duration_s: 30.0,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let recs = generate_synthetic_corpus(&spec)?;
    for r in &recs {
        println!(
            "{:<16} patient {:<12} label {:?} visit {} {:.0} s",
            r.recording_id,
            r.patient_id,
            r.label,
            r.visit_index,
            r.duration_s()
        );
    }

    let dir = tempfile::tempdir().expect("temp dir");
    write_corpus(dir.path(), &recs, SignalFormat::F32)?;
    let back = load_manifest_recordings(&dir.path().join("manifest.json"))?;
    let max_err = recs
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("round trip through f32 files: {} recordings, max error {max_err:.2e}", back.len());
    Ok(())
}
