//! Classifiers fitted on frozen embeddings.

mod forest;
mod linear;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub use forest::{fit_random_forest, Forest, ForestParams, Node, Tree};
pub use linear::{fit_linear_svm, fit_logistic, logistic_objective, svm_objective, LinearModel, GRAD_TOL};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Validate a design matrix and binary labels; returns the feature count.
pub(crate) fn check_inputs(x: &[Vec<f64>], y: &[u8], c: f64) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            op: "probe fit",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::config("probe needs at least one sample with one feature"));
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            op: "probe fit",
            lhs: vec![d],
            rhs: vec![r.len()],
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("probe inputs contain non-finite values"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::data("probe labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::config(format!(
            "probe training needs both classes; got {pos} positive of {}",
            y.len()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::config(format!("regularisation constant must be positive, got {c}")));
    }
    Ok(d)
}

/// Probe family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    Logistic { c: f64, max_iter: usize },
    LinearSvm { c: f64, epochs: usize },
    RandomForest(ForestParams),
}

impl Default for ProbeKind {
    fn default() -> Self {
        ProbeKind::RandomForest(ForestParams::default())
    }
}

impl ProbeKind {
    pub fn logistic() -> Self {
        ProbeKind::Logistic { c: 1.0, max_iter: 5000 }
    }

    pub fn linear_svm() -> Self {
        ProbeKind::LinearSvm { c: 1.0, epochs: 2000 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProbeKind::Logistic { .. } => "logistic",
            ProbeKind::LinearSvm { .. } => "linear_svm",
            ProbeKind::RandomForest(_) => "random_forest",
        }
    }

    /// Default hyperparameters for a probe name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(Self::logistic()),
            "linear_svm" | "svm" => Ok(Self::linear_svm()),
            "random_forest" | "forest" => Ok(Self::default()),
            _ => Err(Error::config(format!(
                "unknown probe {name:?}; expected logistic, linear_svm or random_forest"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedProbe {
    Logistic(LinearModel),
    LinearSvm(LinearModel),
    RandomForest(Forest),
}

pub fn fit_probe(kind: &ProbeKind, x: &[Vec<f64>], y: &[u8], seed: u64) -> Result<TrainedProbe> {
    Ok(match kind {
        ProbeKind::Logistic { c, max_iter } => TrainedProbe::Logistic(fit_logistic(x, y, *c, *max_iter)?),
        ProbeKind::LinearSvm { c, epochs } => TrainedProbe::LinearSvm(fit_linear_svm(x, y, *c, *epochs)?),
        ProbeKind::RandomForest(p) => TrainedProbe::RandomForest(fit_random_forest(x, y, p, seed)?),
    })
}

impl TrainedProbe {
    pub fn n_features(&self) -> usize {
        match self {
            TrainedProbe::Logistic(m) | TrainedProbe::LinearSvm(m) => m.weights.len(),
            TrainedProbe::RandomForest(f) => f.n_features,
        }
    }

    /// Class-1 probability per row.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.n_features();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::Shape {
                op: "predict_proba",
                lhs: vec![d],
                rhs: vec![r.len()],
            });
        }
        Ok(x.iter()
            .map(|r| match self {
                TrainedProbe::Logistic(m) | TrainedProbe::LinearSvm(m) => m.proba(r),
                TrainedProbe::RandomForest(f) => f.proba(r),
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fsutil::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<u8>) {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.3).sin(), (i as f64 * 0.7).cos()]).collect();
        let y = x.iter().map(|r| u8::from(r[0] > 0.1)).collect();
        (x, y)
    }

    #[test]
    fn zero_weights_give_one_half() {
        let m = TrainedProbe::Logistic(LinearModel {
            weights: vec![0.0; 3],
            bias: 0.0,
            link: [1.0, 0.0],
            iterations: 0,
            converged: true,
        });
        assert_eq!(m.predict_proba(&[vec![1.0, -4.0, 9.0]]).unwrap(), vec![0.5]);
        assert!(matches!(m.predict_proba(&[vec![1.0]]), Err(Error::Shape { .. })));
    }

    #[test]
    fn all_probes_round_trip_through_json() {
        let (x, y) = data();
        let dir = tempfile::tempdir().unwrap();
        for kind in [
            ProbeKind::logistic(),
            ProbeKind::linear_svm(),
            ProbeKind::RandomForest(ForestParams {
                n_trees: 5,
                ..Default::default()
            }),
        ] {
            let p = fit_probe(&kind, &x, &y, 3).unwrap();
            let path = dir.path().join(format!("{}.json", kind.name()));
            p.save(&path).unwrap();
            let back = TrainedProbe::load(&path).unwrap();
            assert_eq!(back.predict_proba(&x).unwrap(), p.predict_proba(&x).unwrap());
            assert!(p.predict_proba(&x).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = data();
        let y = vec![1; x.len()];
        for kind in [ProbeKind::logistic(), ProbeKind::linear_svm(), ProbeKind::default()] {
            assert!(matches!(fit_probe(&kind, &x, &y, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn probe_names() {
        for n in ["logistic", "linear_svm", "random_forest"] {
            assert_eq!(ProbeKind::from_name(n).unwrap().name(), n);
        }
        assert!(ProbeKind::from_name("xgboost").is_err());
    }
}
