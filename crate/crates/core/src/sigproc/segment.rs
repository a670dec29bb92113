use super::{CleanRecording, SEGMENT_LEN, TARGET_HZ};
use crate::error::{Error, Result};

const CONSTANT_EPS: f64 = 1e-8;

/// A fixed-length strip of a clean recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub patient_id: String,
    pub recording_id: String,
    pub visit_index: u32,
    pub start_index: usize,
    pub label: Option<u8>,
    pub values: Vec<f64>,
}

impl Segment {
    pub fn start_time_s(&self) -> f64 {
        self.start_index as f64 / TARGET_HZ
    }
}

#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Set when the recording was shorter than one segment.
    pub too_short: bool,
}

/// Cut `SEGMENT_LEN`-sample windows every `stride_s` seconds; the trailing
/// remainder is dropped.
pub fn segment(recording: &CleanRecording, stride_s: f64) -> Result<Segmentation> {
    let stride = (stride_s * TARGET_HZ).round() as usize;
    if !(stride_s > 0.0) || stride == 0 {
        return Err(Error::config(format!("segment stride must be positive, got {stride_s} s")));
    }
    let x = recording.samples();
    if x.len() < SEGMENT_LEN {
        return Ok(Segmentation {
            segments: Vec::new(),
            too_short: true,
        });
    }
    let segments = (0..=x.len() - SEGMENT_LEN)
        .step_by(stride)
        .map(|start| Segment {
            patient_id: recording.patient_id().to_string(),
            recording_id: recording.recording_id().to_string(),
            visit_index: recording.visit_index(),
            start_index: start,
            label: recording.label(),
            values: x[start..start + SEGMENT_LEN].to_vec(),
        })
        .collect();
    Ok(Segmentation {
        segments,
        too_short: false,
    })
}

/// Zero mean, unit population standard deviation; near-constant input maps
/// to all zeros.
pub fn znormalize(values: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < CONSTANT_EPS {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}
