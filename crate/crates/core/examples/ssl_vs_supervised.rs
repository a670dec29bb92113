//! Pretrain with cross-recording positives on an unlabeled corpus, then
//! compare a random-forest probe on the frozen encoder against a supervised
//! network trained on the same small label budget.

use ecg_ssl::eval::{run_ssl_experiment, run_supervised_experiment, ProtocolConfig, SupervisedConfig};
use ecg_ssl::probes::ProbeKind;
use ecg_ssl::sigproc::{generate_synthetic_corpus, prepare_segments, Segment, SigprocConfig, SyntheticSpec};
use ecg_ssl::ssl::{pretrain, PretrainConfig, PretrainCorpus, SslMethod};

fn segments(spec: &SyntheticSpec, visit: Option<u32>) -> ecg_ssl::Result<Vec<Segment>> {
    let mut out = Vec::new();
    for r in generate_synthetic_corpus(spec)? {
        if visit.is_none_or(|v| v == r.visit_index) {
            out.extend(prepare_segments(&r, &SigprocConfig::default())?);
        }
    }
    Ok(out)
}

fn main() -> ecg_ssl::Result<()> {
    let pre = segments(
        &SyntheticSpec {
            with_labels: false,
            id_prefix: "pre".into(),
            seed: 1,
            ..SyntheticSpec::default()
        },
        None,
    )?;
    let eval = segments(
        &SyntheticSpec {
            id_prefix: "ev".into(),
            seed: 2,
            ..SyntheticSpec::default()
        },
        Some(0),
    )?;

    let cfg = PretrainConfig {
        method: SslMethod::Pclr,
        epochs: 3,
        ..PretrainConfig::default()
    };
    let out = pretrain(&PretrainCorpus::from_segments(&pre), &cfg)?;
    println!("pretraining losses {:?}", out.losses);

    let protocol = ProtocolConfig {
        label_budget: Some(8),
        ..ProtocolConfig::default()
    };
    let ssl = run_ssl_experiment(&out.encoder, "pclr", &eval, &ProbeKind::default(), &protocol, "example")?;
    let mut sup_cfg = SupervisedConfig::default();
    sup_cfg.recipe.max_epochs = 10;
    let sup = run_supervised_experiment(&eval, &sup_cfg, &protocol, "example")?;
    println!("{}", ssl.report.summary_table());
    println!("{}", sup.report.summary_table());
    Ok(())
}
