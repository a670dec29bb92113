//! Raw single-lead ECG to model-ready segments, plus the synthetic corpus
//! generator and the on-disk manifest/signal formats.

mod filter;
pub mod io;
mod resample;
mod segment;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{apply_filter, design_bandpass, design_bandpass_order, design_lowpass, BandpassFilter, Biquad, Sos};
pub use resample::resample;
pub use segment::{segment, znormalize, Segment, Segmentation};
pub use synth::{generate_synthetic_corpus, ClassMorphology, SyntheticSpec};

/// Model input rate.
pub const TARGET_HZ: f64 = 100.0;
/// Ten seconds at [`TARGET_HZ`].
pub const SEGMENT_LEN: usize = 1000;

/// One recording as acquired, at its native sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub patient_id: String,
    pub recording_id: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    /// 0 = control, 1 = P-AF; `None` for unlabeled data.
    pub label: Option<u8>,
    pub visit_index: u32,
}

impl RawRecording {
    pub fn new(
        patient_id: impl Into<String>,
        recording_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<f64>,
        label: Option<u8>,
        visit_index: u32,
    ) -> Result<Self> {
        let rec = Self {
            patient_id: patient_id.into(),
            recording_id: recording_id.into(),
            sample_rate_hz,
            samples,
            label,
            visit_index,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::config(format!(
                "recording {}: sample rate must be positive, got {}",
                self.recording_id, self.sample_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::data(format!("recording {} is empty", self.recording_id)));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::data(format!(
                    "recording {}: label must be 0 or 1, got {l}",
                    self.recording_id
                )));
            }
        }
        self.check_finite()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::data(format!(
                "recording {}: non-finite sample at index {i}",
                self.recording_id
            ))),
            None => Ok(()),
        }
    }

    /// Identity fields with an empty sample buffer.
    pub(crate) fn clone_meta(&self) -> Self {
        Self {
            patient_id: self.patient_id.clone(),
            recording_id: self.recording_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            samples: Vec::new(),
            label: self.label,
            visit_index: self.visit_index,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// A band-passed recording at exactly [`TARGET_HZ`]. Only produced by
/// [`preprocess`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanRecording(RawRecording);

impl CleanRecording {
    pub fn patient_id(&self) -> &str {
        &self.0.patient_id
    }

    pub fn recording_id(&self) -> &str {
        &self.0.recording_id
    }

    pub fn label(&self) -> Option<u8> {
        self.0.label
    }

    pub fn visit_index(&self) -> u32 {
        self.0.visit_index
    }

    pub fn samples(&self) -> &[f64] {
        &self.0.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        TARGET_HZ
    }

    pub fn as_raw(&self) -> &RawRecording {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigprocConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub filter_order: usize,
    pub stride_s: f64,
    pub znormalize: bool,
}

impl Default for SigprocConfig {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 40.0,
            filter_order: 2,
            stride_s: 10.0,
            znormalize: true,
        }
    }
}

/// Band-pass at the native rate, then resample to [`TARGET_HZ`].
pub fn preprocess(raw: &RawRecording, config: &SigprocConfig) -> Result<CleanRecording> {
    raw.validate()?;
    let filter = design_bandpass_order(config.low_hz, config.high_hz, raw.sample_rate_hz, config.filter_order)?;
    let filtered = apply_filter(raw, &filter)?;
    let resampled = resample(&filtered, TARGET_HZ)?;
    Ok(CleanRecording(resampled))
}

/// Preprocess and segment a recording, normalising segments if configured.
pub fn prepare_segments(raw: &RawRecording, config: &SigprocConfig) -> Result<Vec<Segment>> {
    let clean = preprocess(raw, config)?;
    let seg = segment(&clean, config.stride_s)?;
    if seg.too_short {
        log::warn!(
            "recording {} shorter than one segment; skipped",
            clean.recording_id()
        );
    }
    let mut segments = seg.segments;
    if config.znormalize {
        for s in &mut segments {
            s.values = znormalize(&s.values);
        }
    }
    Ok(segments)
}
