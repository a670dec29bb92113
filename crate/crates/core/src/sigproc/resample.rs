use super::{design_lowpass, RawRecording};
use crate::error::{Error, Result};

const ANTI_ALIAS_ORDER: usize = 8;
/// Anti-alias cutoff as a fraction of the target rate.
const ANTI_ALIAS_FRACTION: f64 = 0.45;

/// Linear-interpolation resampling to `target_hz`. Downsampling is preceded
/// by a zero-phase Butterworth low-pass at `0.45 * target_hz`.
///
/// Output length is `round(n * target_hz / fs)`.
pub fn resample(recording: &RawRecording, target_hz: f64) -> Result<RawRecording> {
    let fs = recording.sample_rate_hz;
    if !(target_hz > 0.0 && target_hz.is_finite()) || !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::config(format!(
            "cannot resample {} from {fs} Hz to {target_hz} Hz",
            recording.recording_id
        )));
    }
    if (fs - target_hz).abs() < 1e-9 {
        return Ok(recording.clone());
    }
    recording.check_finite()?;
    let source = if fs > target_hz {
        design_lowpass(ANTI_ALIAS_FRACTION * target_hz, fs, ANTI_ALIAS_ORDER)?.filtfilt(&recording.samples)
    } else {
        recording.samples.clone()
    };
    let n = source.len();
    let out_len = (n as f64 * target_hz / fs).round() as usize;
    let ratio = fs / target_hz;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            source[lo] * (1.0 - frac) + source[hi] * frac
        })
        .collect();
    Ok(RawRecording {
        samples,
        sample_rate_hz: target_hz,
        ..recording.clone_meta()
    })
}
