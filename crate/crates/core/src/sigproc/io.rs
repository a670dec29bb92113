//! Dataset manifest (JSON) and per-recording signal files.
//!
//! Signal format is chosen by extension: `.csv` holds one decimal sample per
//! line, `.f32` holds raw little-endian 32-bit floats.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RawRecording;
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub recording_id: String,
    pub label: Option<u8>,
    pub visit_index: u32,
    pub sample_rate_hz: f64,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    F32,
}

impl SignalFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(SignalFormat::Csv),
            Some("f32") => Ok(SignalFormat::F32),
            _ => Err(Error::config(format!(
                "unknown signal file extension for {} (expected .csv or .f32)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            SignalFormat::Csv => "csv",
            SignalFormat::F32 => "f32",
        }
    }
}

pub fn encode_signal(samples: &[f64], format: SignalFormat) -> Vec<u8> {
    match format {
        SignalFormat::Csv => {
            let mut s = String::with_capacity(samples.len() * 12);
            for v in samples {
                s.push_str(&v.to_string());
                s.push('\n');
            }
            s.into_bytes()
        }
        SignalFormat::F32 => samples.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
    }
}

pub fn decode_signal(bytes: &[u8], format: SignalFormat, origin: &Path) -> Result<Vec<f64>> {
    match format {
        SignalFormat::Csv => {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::data(format!("{} is not UTF-8", origin.display())))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    l.trim().parse::<f64>().map_err(|_| {
                        Error::data(format!("{}:{}: not a number: {l:?}", origin.display(), i + 1))
                    })
                })
                .collect()
        }
        SignalFormat::F32 => {
            if !bytes.len().is_multiple_of(4) {
                return Err(Error::data(format!(
                    "{} length {} is not a multiple of 4",
                    origin.display(),
                    bytes.len()
                )));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        }
    }
}

pub fn write_signal(path: &Path, samples: &[f64]) -> Result<()> {
    let format = SignalFormat::from_path(path)?;
    fsutil::write_atomic(path, &encode_signal(samples, format))
}

pub fn read_signal(path: &Path) -> Result<Vec<f64>> {
    let format = SignalFormat::from_path(path)?;
    decode_signal(&fsutil::read(path)?, format, path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = fsutil::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(entries)?;
    bytes.push(b'\n');
    fsutil::write_atomic(path, &bytes)
}

/// Load every recording listed in a manifest.
pub fn load_manifest_recordings(manifest_path: &Path) -> Result<Vec<RawRecording>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(manifest_path)?
        .into_iter()
        .map(|e| {
            let path = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
            let samples = read_signal(&path)?;
            RawRecording::new(e.patient_id, e.recording_id, e.sample_rate_hz, samples, e.label, e.visit_index)
        })
        .collect()
}

/// Write recordings as signal files under `dir` plus `dir/manifest.json`.
/// Returns the manifest entries.
pub fn write_corpus(dir: &Path, recordings: &[RawRecording], format: SignalFormat) -> Result<Vec<ManifestEntry>> {
    let signal_dir = dir.join("signals");
    fsutil::create_dir_all(&signal_dir)?;
    let mut entries = Vec::with_capacity(recordings.len());
    for r in recordings {
        let rel = PathBuf::from("signals").join(format!("{}.{}", r.recording_id, format.extension()));
        write_signal(&dir.join(&rel), &r.samples)?;
        entries.push(ManifestEntry {
            patient_id: r.patient_id.clone(),
            recording_id: r.recording_id.clone(),
            label: r.label,
            visit_index: r.visit_index,
            sample_rate_hz: r.sample_rate_hz,
            path: rel,
        });
    }
    write_manifest(&dir.join("manifest.json"), &entries)?;
    Ok(entries)
}
