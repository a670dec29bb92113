use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{ProtocolConfig, SupervisedConfig};
use crate::fsutil;
use crate::probes::ProbeKind;
use crate::sigproc::SigprocConfig;
use crate::ssl::PretrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Paths {
    /// Labeled evaluation cohort.
    pub manifest: Option<PathBuf>,
    /// Unlabeled pretraining corpus; falls back to `manifest`.
    pub pretrain_manifest: Option<PathBuf>,
    /// Encoder checkpoint read by `embed`, `evaluate` and `sweep-window`.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Everything a run needs. Command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub sigproc: SigprocConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub probe: ProbeKind,
    pub protocol: ProtocolConfig,
    pub supervised: SupervisedConfig,
    /// Restrict evaluation to recordings with this visit index.
    pub eval_visit: Option<u32>,
    /// Window sizes in seconds; defaults to every multiple of 10 s up to the
    /// longest recording.
    pub window_grid: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths {
                output_dir: PathBuf::from("runs/default"),
                ..Default::default()
            },
            sigproc: SigprocConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            probe: ProbeKind::default(),
            protocol: ProtocolConfig::default(),
            supervised: SupervisedConfig::default(),
            eval_visit: None,
            window_grid: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Propagate the shared seed and encoder into the nested sections and
    /// validate.
    pub fn resolve(mut self) -> Result<Self> {
        self.encoder.validate()?;
        self.pretrain.encoder = self.encoder.clone();
        self.pretrain.seed = self.seed;
        self.supervised.encoder = self.encoder.clone();
        self.protocol.seed = self.seed;
        self.pretrain.validate()?;
        if let Some(grid) = &self.window_grid {
            if grid.is_empty() {
                return Err(Error::config("window grid is empty"));
            }
        }
        if !(self.supervised.validation_fraction > 0.0 && self.supervised.validation_fraction < 1.0) {
            return Err(Error::config("validation fraction must be in (0, 1)"));
        }
        Ok(self)
    }

    /// SHA-256 of the resolved config without the output directory, so the
    /// same experiment written to different places shares a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_pretty_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("config serialises");
        v.push(b'\n');
        v
    }
}
