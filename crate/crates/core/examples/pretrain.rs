//! Pretrain a small encoder with each self-supervised objective and print
//! its loss curve. Pass a method name to run just one.

use ecg_ssl::sigproc::{generate_synthetic_corpus, prepare_segments, SigprocConfig, SyntheticSpec};
use ecg_ssl::ssl::{pretrain, PretrainConfig, PretrainCorpus, SslMethod};
use ecg_ssl::encoder::EncoderConfig;

fn main() -> ecg_ssl::Result<()> {
    let spec = SyntheticSpec {
        n_patients_per_class: 4,
        recordings_per_patient: 2,
        duration_s: 300.0,
        with_labels: false,
        ..SyntheticSpec::default()
    };
    let mut segments = Vec::new();
    for r in generate_synthetic_corpus(&spec)? {
        segments.extend(prepare_segments(&r, &SigprocConfig::default())?);
    }
    let corpus = PretrainCorpus::from_segments(&segments);
    println!("{} recordings, {} segments", corpus.recordings.len(), corpus.n_segments());

    let methods: Vec<SslMethod> = match std::env::args().nth(1) {
        Some(m) => vec![m.parse()?],
        None => SslMethod::ALL.to_vec(),
    };
    for method in methods {
        let cfg = PretrainConfig {
            method,
            encoder: EncoderConfig {
                channels: vec![8, 16],
                embedding_dim: 16,
                ..EncoderConfig::default()
            },
            epochs: 3,
            batches_per_epoch: 4,
            batch_size: 16,
            ..PretrainConfig::default()
        };
        let out = pretrain(&corpus, &cfg)?;
        let curve: Vec<String> = out.losses.iter().map(|l| format!("{l:.4}")).collect();
        println!("{method:<8} {}", curve.join(" -> "));
    }
    Ok(())
}
