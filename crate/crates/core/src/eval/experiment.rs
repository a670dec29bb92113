//! Patient-wise cross-validated runs for the probe-on-frozen-encoder and
//! end-to-end supervised protocols.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{inner_validation_split, make_stratified_patient_folds, patient_labels, stratified_subset, FoldSplit};
use super::metrics::{compute_metrics, Summary};
use super::window::StripPrediction;
use crate::encoder::supervised::LabeledSegments;
use crate::encoder::{train_supervised, Encoder, EncoderConfig, TrainRecipe};
use crate::error::{Error, Result};
use crate::probes::{fit_probe, ProbeKind};
use crate::rng;
use crate::sigproc::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub n_fit_segments: usize,
    pub n_test_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub probe: String,
    pub seed: u64,
    pub config_hash: String,
    pub folds: Vec<FoldMetrics>,
    pub accuracy: Summary,
    pub f1: Summary,
    pub auc: Option<Summary>,
}

impl MetricsReport {
    pub fn new(method: &str, probe: &str, seed: u64, config_hash: &str, folds: Vec<FoldMetrics>) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| Summary::of(&folds.iter().map(f).collect::<Vec<_>>());
        let aucs: Option<Vec<f64>> = folds.iter().map(|f| f.auc).collect();
        Self {
            method: method.into(),
            probe: probe.into(),
            seed,
            config_hash: config_hash.into(),
            accuracy: col(|f| f.accuracy),
            f1: col(|f| f.f1),
            auc: aucs.map(|a| Summary::of(&a)),
            folds,
        }
    }

    pub fn folds_csv(&self) -> String {
        let mut s = format!("# config_hash={}\nfold,accuracy,f1,auc,n_fit_segments,n_test_segments\n", self.config_hash);
        for f in &self.folds {
            let auc = f.auc.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.fold, f.accuracy, f.f1, auc, f.n_fit_segments, f.n_test_segments
            ));
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let auc = self.auc.map(|a| a.to_string()).unwrap_or_else(|| "n/a".into());
        format!(
            "{:<12} {:<14} accuracy {}  f1 {}  auc {}",
            self.method, self.probe, self.accuracy, self.f1, auc
        )
    }
}

/// One audit line per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub fold: usize,
    pub config_hash: String,
    pub train_patients: Vec<String>,
    pub fit_patients: Vec<String>,
    pub validation_patients: Vec<String>,
    pub test_patients: Vec<String>,
}

impl AuditRecord {
    /// Every fitted or validation segment must come from a patient outside
    /// the test fold.
    pub fn check(&self, used_segments: &[&Segment]) -> Result<()> {
        let test: BTreeSet<&str> = self.test_patients.iter().map(String::as_str).collect();
        let leaked = self
            .fit_patients
            .iter()
            .chain(&self.validation_patients)
            .map(String::as_str)
            .chain(used_segments.iter().map(|s| s.patient_id.as_str()))
            .find(|p| test.contains(p));
        match leaked {
            Some(p) => Err(Error::Metric {
                fold: self.fold,
                message: format!("patient {p} appears in both training and test"),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub audit: Vec<AuditRecord>,
    /// Out-of-fold strip predictions covering every evaluated recording.
    pub strips: Vec<StripPrediction>,
    /// Recording-level ground truth for the window sweep.
    pub truth: BTreeMap<String, u8>,
}

impl ExperimentOutcome {
    pub fn audit_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.audit {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub k_folds: usize,
    pub seed: u64,
    /// Patients (both classes, split evenly) whose labels may be used for
    /// fitting in each fold; `None` uses every training patient.
    pub label_budget: Option<usize>,
    /// Permute fitting labels across segments (null control).
    pub shuffle_labels: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            seed: 0,
            label_budget: None,
            shuffle_labels: false,
        }
    }
}

struct FoldPlan<'a> {
    split: FoldSplit,
    fit: Vec<(String, u8)>,
    test: Vec<&'a Segment>,
}

fn plan_folds<'a>(segments: &'a [Segment], cfg: &ProtocolConfig) -> Result<Vec<FoldPlan<'a>>> {
    let patients = patient_labels(segments)?;
    let folds = make_stratified_patient_folds(&patients, cfg.k_folds, cfg.seed)?;
    let labels: BTreeMap<&str, u8> = patients.iter().map(|(p, l)| (p.as_str(), *l)).collect();
    folds
        .into_iter()
        .map(|split| {
            let train: Vec<(String, u8)> = split
                .train_patients
                .iter()
                .map(|p| (p.clone(), labels[p.as_str()]))
                .collect();
            let fit = match cfg.label_budget {
                Some(n) => stratified_subset(&train, n, rng::derive_seed(cfg.seed, &[7, split.fold as u64]))?,
                None => train,
            };
            let held: BTreeSet<&str> = split.test_patients.iter().map(String::as_str).collect();
            let test = segments.iter().filter(|s| held.contains(s.patient_id.as_str())).collect();
            Ok(FoldPlan { split, fit, test })
        })
        .collect()
}

fn segments_of<'a>(segments: &'a [Segment], patients: &[(String, u8)]) -> Vec<&'a Segment> {
    let set: BTreeSet<&str> = patients.iter().map(|(p, _)| p.as_str()).collect();
    segments.iter().filter(|s| set.contains(s.patient_id.as_str())).collect()
}

fn fit_labels(segs: &[&Segment], shuffle: bool, seed: u64) -> Vec<u8> {
    let mut y: Vec<u8> = segs.iter().map(|s| s.label.expect("labeled")).collect();
    if shuffle {
        y.shuffle(&mut rng::stream(seed, &[11]));
    }
    y
}

fn score_fold(fold: usize, test: &[&Segment], probs: &[f64]) -> Result<(FoldMetrics, Vec<StripPrediction>)> {
    let y_true: Vec<u8> = test.iter().map(|s| s.label.expect("labeled")).collect();
    let y_pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let m = compute_metrics(&y_true, &y_pred, probs).map_err(|e| Error::Metric {
        fold,
        message: e.to_string(),
    })?;
    let strips = test
        .iter()
        .zip(probs)
        .map(|(s, &p)| StripPrediction::from_proba(s.recording_id.clone(), s.start_time_s(), p))
        .collect();
    Ok((
        FoldMetrics {
            fold,
            accuracy: m.accuracy,
            f1: m.f1,
            auc: m.auc,
            n_fit_segments: 0,
            n_test_segments: test.len(),
        },
        strips,
    ))
}

fn truth_of(segments: &[Segment]) -> BTreeMap<String, u8> {
    segments
        .iter()
        .filter_map(|s| s.label.map(|l| (s.recording_id.clone(), l)))
        .collect()
}

fn assemble(
    method: &str,
    probe: &str,
    cfg: &ProtocolConfig,
    config_hash: &str,
    segments: &[Segment],
    per_fold: Vec<(FoldMetrics, Vec<StripPrediction>, AuditRecord)>,
) -> ExperimentOutcome {
    let mut folds = Vec::new();
    let mut strips = Vec::new();
    let mut audit = Vec::new();
    for (m, s, a) in per_fold {
        folds.push(m);
        strips.extend(s);
        audit.push(a);
    }
    ExperimentOutcome {
        report: MetricsReport::new(method, probe, cfg.seed, config_hash, folds),
        audit,
        strips,
        truth: truth_of(segments),
    }
}

fn ids(p: &[(String, u8)]) -> Vec<String> {
    p.iter().map(|(id, _)| id.clone()).collect()
}

/// Embed with the frozen encoder, fit the probe on each fold's training
/// patients and score the held-out segments.
pub fn run_ssl_experiment(
    encoder: &Encoder,
    method: &str,
    segments: &[Segment],
    probe: &ProbeKind,
    cfg: &ProtocolConfig,
    config_hash: &str,
) -> Result<ExperimentOutcome> {
    let plans = plan_folds(segments, cfg)?;
    let embeddings = encoder.embed(&segments.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>())?;
    let row_of: BTreeMap<(&str, usize), usize> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.recording_id.as_str(), s.start_index), i))
        .collect();
    let rows = |segs: &[&Segment]| -> Vec<Vec<f64>> {
        segs.iter()
            .map(|s| embeddings[row_of[&(s.recording_id.as_str(), s.start_index)]].clone())
            .collect()
    };
    let per_fold: Vec<Result<_>> = plans
        .par_iter()
        .map(|plan| {
            let fold = plan.split.fold;
            let fit_segs = segments_of(segments, &plan.fit);
            let audit = AuditRecord {
                fold,
                config_hash: config_hash.into(),
                train_patients: plan.split.train_patients.clone(),
                fit_patients: ids(&plan.fit),
                validation_patients: Vec::new(),
                test_patients: plan.split.test_patients.clone(),
            };
            audit.check(&fit_segs)?;
            let y = fit_labels(&fit_segs, cfg.shuffle_labels, rng::derive_seed(cfg.seed, &[fold as u64]));
            let trained = fit_probe(probe, &rows(&fit_segs), &y, rng::derive_seed(cfg.seed, &[3, fold as u64]))?;
            let probs = trained.predict_proba(&rows(&plan.test))?;
            let (mut m, strips) = score_fold(fold, &plan.test, &probs)?;
            m.n_fit_segments = fit_segs.len();
            Ok((m, strips, audit))
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble(method, probe.name(), cfg, config_hash, segments, per_fold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    /// Supplied by the enclosing experiment config when deserialised.
    #[serde(skip)]
    pub encoder: EncoderConfig,
    pub recipe: TrainRecipe,
    pub validation_fraction: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            recipe: TrainRecipe::default(),
            validation_fraction: 0.2,
        }
    }
}

/// Train encoder and head from scratch in every fold, early-stopping on an
/// inner validation split of the fitting patients.
pub fn run_supervised_experiment(
    segments: &[Segment],
    sup: &SupervisedConfig,
    cfg: &ProtocolConfig,
    config_hash: &str,
) -> Result<ExperimentOutcome> {
    let plans = plan_folds(segments, cfg)?;
    let per_fold: Vec<Result<_>> = plans
        .par_iter()
        .map(|plan| {
            let fold = plan.split.fold;
            let (train_p, val_p) =
                inner_validation_split(&plan.fit, sup.validation_fraction, rng::derive_seed(cfg.seed, &[5, fold as u64]))?;
            let train_segs = segments_of(segments, &train_p);
            let val_segs = segments_of(segments, &val_p);
            let audit = AuditRecord {
                fold,
                config_hash: config_hash.into(),
                train_patients: plan.split.train_patients.clone(),
                fit_patients: ids(&train_p),
                validation_patients: ids(&val_p),
                test_patients: plan.split.test_patients.clone(),
            };
            let used: Vec<&Segment> = train_segs.iter().chain(&val_segs).copied().collect();
            audit.check(&used)?;
            let seed = rng::derive_seed(cfg.seed, &[fold as u64]);
            let train = LabeledSegments {
                signals: train_segs.iter().map(|s| s.values.as_slice()).collect(),
                labels: fit_labels(&train_segs, cfg.shuffle_labels, seed),
            };
            let val = LabeledSegments {
                signals: val_segs.iter().map(|s| s.values.as_slice()).collect(),
                labels: fit_labels(&val_segs, cfg.shuffle_labels, seed ^ 1),
            };
            let recipe = TrainRecipe {
                seed: rng::derive_seed(cfg.seed, &[9, fold as u64]),
                ..sup.recipe.clone()
            };
            let (model, history) = train_supervised(&train, &val, &sup.encoder, &recipe)?;
            log::info!("fold {fold}: supervised best epoch {}", history.best_epoch);
            let test: Vec<&[f64]> = plan.test.iter().map(|s| s.values.as_slice()).collect();
            let probs = model.predict_proba(&test)?;
            let (mut m, strips) = score_fold(fold, &plan.test, &probs)?;
            m.n_fit_segments = train_segs.len();
            Ok((m, strips, audit))
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble("supervised", "sigmoid_head", cfg, config_hash, segments, per_fold))
}
