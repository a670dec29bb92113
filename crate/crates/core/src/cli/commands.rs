use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{
    default_window_grid, run_ssl_experiment, run_supervised_experiment, sweep_window, ExperimentOutcome, MetricsReport,
    WindowSweepResult,
};
use crate::fsutil;
use crate::sigproc::io::{load_manifest_recordings, write_corpus, SignalFormat};
use crate::sigproc::{generate_synthetic_corpus, prepare_segments, Segment, SigprocConfig, SyntheticSpec};
use crate::ssl::{pretrain, PretrainCorpus};

pub const CHECKPOINT_FILE: &str = "checkpoints/encoder.ckpt";

/// Write the corpus into a fresh directory next to `out`, then move it into
/// place so a failure leaves nothing behind.
pub fn gen_synth(out: &Path, spec: &SyntheticSpec, format: SignalFormat, force: bool) -> Result<String> {
    let recordings = generate_synthetic_corpus(spec)?;
    if out.exists() {
        let empty = out.is_dir() && std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !empty && !force {
            return Err(Error::config(format!(
                "{} already exists; pass --force to replace it",
                out.display()
            )));
        }
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fsutil::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new()
        .prefix(".gen-synth-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    write_corpus(staging.path(), &recordings, format)?;
    if out.exists() {
        let removed = if out.is_dir() { std::fs::remove_dir_all(out) } else { std::fs::remove_file(out) };
        removed.map_err(|e| Error::io(out, e))?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, out).map_err(|e| {
        let _ = std::fs::remove_dir_all(&staged);
        Error::io(out, e)
    })?;

    let patients = 2 * spec.n_patients_per_class;
    let positive = recordings.iter().filter(|r| r.label == Some(1)).count();
    let labeled = recordings.iter().filter(|r| r.label.is_some()).count();
    Ok(format!(
        "wrote {} recordings from {patients} patients to {}\nclass balance: {} control, {positive} positive, {} unlabeled",
        recordings.len(),
        out.display(),
        labeled - positive,
        recordings.len() - labeled
    ))
}

fn require(path: &Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::config(format!("no {what} given; set paths in the config or pass {flag}")))
}

/// Segments of every recording in a manifest.
pub fn load_segments(manifest: &Path, sigproc: &SigprocConfig, strip_labels: bool, visit: Option<u32>) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for mut rec in load_manifest_recordings(manifest)? {
        if visit.is_some_and(|v| v != rec.visit_index) {
            continue;
        }
        if strip_labels {
            rec.label = None;
        }
        out.extend(prepare_segments(&rec, sigproc)?);
    }
    if out.is_empty() {
        return Err(Error::data(format!("{} yields no complete segments", manifest.display())));
    }
    Ok(out)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(p) = path.parent() {
        fsutil::create_dir_all(p)?;
    }
    fsutil::write_atomic(&path, bytes)?;
    Ok(path)
}

/// The resolved config with its own hash alongside; loading ignores the
/// extra field.
fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    let mut value = serde_json::to_value(cfg)?;
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("config_hash".into(), cfg.hash().into());
    }
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    write(&cfg.paths.output_dir, "config.json", &bytes).map(|_| ())
}

pub struct PretrainRun {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
}

/// Pretrain on the label-stripped corpus and store the encoder plus the
/// per-epoch loss curve.
pub fn pretrain_cmd(cfg: &ExperimentConfig) -> Result<PretrainRun> {
    let manifest = match &cfg.paths.pretrain_manifest {
        Some(p) => p.clone(),
        None => require(&cfg.paths.manifest, "pretraining manifest", "--manifest")?,
    };
    let segments = load_segments(&manifest, &cfg.sigproc, true, None)?;
    let corpus = PretrainCorpus::from_segments(&segments);
    let outcome = pretrain(&corpus, &cfg.pretrain)?;
    let out = &cfg.paths.output_dir;
    write_config(cfg)?;
    let mut curve = format!("# config_hash={}\nepoch,loss\n", cfg.hash());
    for (i, l) in outcome.losses.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, l));
    }
    write(out, "loss_curve.csv", curve.as_bytes())?;
    let checkpoint = write(
        out,
        CHECKPOINT_FILE,
        &outcome.encoder.to_tagged_checkpoint(Some(&cfg.hash())),
    )?;
    Ok(PretrainRun {
        checkpoint,
        losses: outcome.losses,
    })
}

pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.output_dir.join(CHECKPOINT_FILE))
}

pub fn load_encoder(path: &Path) -> Result<Encoder> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            hint: "no encoder checkpoint; run `ecg-ssl pretrain` with the same config first or pass --checkpoint".into(),
        },
        _ => Error::io(path, e),
    })?;
    Encoder::from_checkpoint(&bytes)
}

/// CSV of `recording_id,start_s,e0..e{D-1}` for every segment.
pub fn embed_cmd(checkpoint: &Path, manifest: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let encoder = load_encoder(checkpoint)?;
    let segments = load_segments(manifest, &cfg.sigproc, true, None)?;
    let z = encoder.embed(&segments.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>())?;
    let d = encoder.embedding_dim();
    let mut csv = format!("# config_hash={}\nrecording_id,start_s", cfg.hash());
    for j in 0..d {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for (s, row) in segments.iter().zip(&z) {
        csv.push_str(&format!("{},{}", s.recording_id, s.start_time_s()));
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fsutil::create_dir_all(p)?;
    }
    fsutil::write_atomic(out, csv.as_bytes())?;
    Ok(segments.len())
}

fn eval_segments(cfg: &ExperimentConfig) -> Result<Vec<Segment>> {
    let manifest = require(&cfg.paths.manifest, "evaluation manifest", "--manifest")?;
    load_segments(&manifest, &cfg.sigproc, false, cfg.eval_visit)
}

fn write_outcome(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    let out = &cfg.paths.output_dir;
    write_config(cfg)?;
    let mut metrics = serde_json::to_vec_pretty(&outcome.report)?;
    metrics.push(b'\n');
    write(out, "metrics.json", &metrics)?;
    write(out, "folds.csv", outcome.report.folds_csv().as_bytes())?;
    write(out, "audit.jsonl", outcome.audit_jsonl()?.as_bytes())?;
    let mut preds = format!("# config_hash={}\nrecording_id,start_s,label,confidence\n", cfg.hash());
    for s in &outcome.strips {
        preds.push_str(&format!("{},{},{},{}\n", s.recording_id, s.start_s, s.label, s.confidence));
    }
    write(out, "predictions.csv", preds.as_bytes())?;
    Ok(())
}

fn ssl_outcome(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let encoder = load_encoder(&checkpoint_path(cfg))?;
    let segments = eval_segments(cfg)?;
    run_ssl_experiment(
        &encoder,
        cfg.pretrain.method.name(),
        &segments,
        &cfg.probe,
        &cfg.protocol,
        &cfg.hash(),
    )
}

/// Frozen-encoder probe evaluation.
pub fn evaluate_cmd(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let outcome = ssl_outcome(cfg)?;
    write_outcome(cfg, &outcome)?;
    Ok(outcome.report)
}

pub fn evaluate_supervised_cmd(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let segments = eval_segments(cfg)?;
    let outcome = run_supervised_experiment(&segments, &cfg.supervised, &cfg.protocol, &cfg.hash())?;
    write_outcome(cfg, &outcome)?;
    Ok(outcome.report)
}

/// Probe evaluation followed by the window sweep over its out-of-fold
/// strip predictions.
pub fn sweep_window_cmd(cfg: &ExperimentConfig) -> Result<(MetricsReport, WindowSweepResult)> {
    let outcome = ssl_outcome(cfg)?;
    write_outcome(cfg, &outcome)?;
    let grid = cfg
        .window_grid
        .clone()
        .unwrap_or_else(|| default_window_grid(&outcome.strips));
    let sweep = sweep_window(&outcome.strips, &outcome.truth, &grid)?;
    write(&cfg.paths.output_dir, "window_sweep.csv", sweep.to_csv(&cfg.hash()).as_bytes())?;
    Ok((outcome.report, sweep))
}
