//! Butterworth IIR design by bilinear transform with frequency prewarping,
//! realised as cascaded second-order sections, plus zero-phase filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::RawRecording;
use crate::error::{Error, Result};

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = self.a[0] + self.a[1] * z1 + self.a[2] * z2;
        num / den
    }

    /// Direct-form-II-transposed state after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * g;
        let z1 = b1 - a1 * g + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b.iter().sum::<f64>()) / (self.a.iter().sum::<f64>())
    }
}

/// Cascade of second-order sections at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
}

impl Sos {
    pub fn frequency_response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal filtering starting from the given per-section states.
    fn run(&self, x: &[f64], mut state: Vec<[f64; 2]>) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in y.iter_mut() {
                let xn = *v;
                let yn = b0 * xn + z[0];
                z[0] = b1 * xn - a1 * yn + z[1];
                z[1] = b2 * xn - a2 * yn;
                *v = yn;
            }
        }
        y
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, vec![[0.0; 2]; self.sections.len()])
    }

    fn step_states(&self, level: f64) -> Vec<[f64; 2]> {
        let mut scale = level;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let ntaps = 2 * self.sections.len() + 1;
        let pad = (3 * ntaps).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let fwd = self.run(&ext, self.step_states(ext[0]));
        let rev: Vec<f64> = fwd.into_iter().rev().collect();
        let back = self.run(&rev, self.step_states(rev[0]));
        back.into_iter().rev().skip(pad).take(n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub sos: Sos,
}

impl BandpassFilter {
    pub fn frequency_response(&self, freq_hz: f64) -> Complex64 {
        self.sos.frequency_response(freq_hz)
    }

    pub fn is_stable(&self) -> bool {
        self.sos.is_stable()
    }
}

/// Analog Butterworth low-pass prototype poles (cutoff 1 rad/s).
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (1..=order)
        .map(|k| {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex64, fs2: f64) -> Complex64 {
    (fs2 + s) / (fs2 - s)
}

fn prewarp(freq_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * freq_hz / fs).tan()
}

/// Group digital poles into conjugate pairs (or pairs of reals).
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Option<Complex64>)> {
    const TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > TOL).collect();
    complex.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= TOL).map(|p| p.re).collect();
    real.sort_by(f64::total_cmp);
    let mut pairs: Vec<(Complex64, Option<Complex64>)> =
        complex.into_iter().map(|p| (p, Some(p.conj()))).collect();
    let mut it = real.chunks(2);
    for chunk in it.by_ref() {
        let first = Complex64::new(chunk[0], 0.0);
        pairs.push((first, chunk.get(1).map(|r| Complex64::new(*r, 0.0))));
    }
    pairs
}

fn denominator(p: Complex64, q: Option<Complex64>) -> [f64; 3] {
    match q {
        Some(q) => [1.0, -(p + q).re, (p * q).re],
        None => [1.0, -p.re, 0.0],
    }
}

/// Scale section numerators so `|H(freq_hz)| == 1`, spread evenly.
fn normalize_gain(sos: &mut Sos, freq_hz: f64) {
    let g = sos.frequency_response(freq_hz).norm();
    let per = g.powf(1.0 / sos.sections.len() as f64);
    for s in &mut sos.sections {
        s.b.iter_mut().for_each(|b| *b /= per);
    }
}

/// Butterworth band-pass of the given prototype order (the overall digital
/// filter has `2 * order` poles).
pub fn design_bandpass_order(
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
    order: usize,
) -> Result<BandpassFilter> {
    let valid = low_hz.is_finite()
        && high_hz.is_finite()
        && sample_rate_hz.is_finite()
        && low_hz > 0.0
        && low_hz < high_hz
        && high_hz < sample_rate_hz / 2.0
        && order >= 1;
    if !valid {
        return Err(Error::config(format!(
            "invalid band-pass edges: require 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({}), order {order} >= 1",
            sample_rate_hz / 2.0
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let wl = prewarp(low_hz, sample_rate_hz);
    let wh = prewarp(high_hz, sample_rate_hz);
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let mut digital = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * bw / 2.0;
        let root = (half * half - w0_sq).sqrt();
        digital.push(bilinear(half + root, fs2));
        digital.push(bilinear(half - root, fs2));
    }
    let sections = pair_poles(&digital)
        .into_iter()
        .map(|(p, q)| Biquad {
            b: [1.0, 0.0, -1.0],
            a: denominator(p, q),
        })
        .collect();
    let mut sos = Sos {
        sections,
        sample_rate_hz,
    };
    // Analog centre sqrt(wl * wh) mapped back through the prewarp.
    let centre_hz = sample_rate_hz / PI * (w0_sq.sqrt() / fs2).atan();
    normalize_gain(&mut sos, centre_hz);
    Ok(BandpassFilter {
        low_hz,
        high_hz,
        order,
        sos,
    })
}

/// Second-order Butterworth band-pass.
pub fn design_bandpass(low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<BandpassFilter> {
    design_bandpass_order(low_hz, high_hz, sample_rate_hz, 2)
}

/// Butterworth low-pass with unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, sample_rate_hz: f64, order: usize) -> Result<Sos> {
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0 && order >= 1) {
        return Err(Error::config(format!(
            "invalid low-pass cutoff {cutoff_hz} Hz at fs {sample_rate_hz} Hz"
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let wc = prewarp(cutoff_hz, sample_rate_hz);
    let digital: Vec<Complex64> = prototype_poles(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs2))
        .collect();
    let sections = pair_poles(&digital)
        .into_iter()
        .map(|(p, q)| Biquad {
            b: if q.is_some() { [1.0, 2.0, 1.0] } else { [1.0, 1.0, 0.0] },
            a: denominator(p, q),
        })
        .collect();
    let mut sos = Sos {
        sections,
        sample_rate_hz,
    };
    normalize_gain(&mut sos, 0.0);
    Ok(sos)
}

/// Zero-phase band-pass filtering of a recording.
pub fn apply_filter(recording: &RawRecording, filter: &BandpassFilter) -> Result<RawRecording> {
    if (recording.sample_rate_hz - filter.sos.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::config(format!(
            "filter designed for {} Hz applied to {} Hz recording {}",
            filter.sos.sample_rate_hz, recording.sample_rate_hz, recording.recording_id
        )));
    }
    recording.check_finite()?;
    let samples = filter.sos.filtfilt(&recording.samples);
    Ok(RawRecording {
        samples,
        ..recording.clone_meta()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_edges() {
        assert!(design_bandpass(0.0, 40.0, 100.0).is_err());
        assert!(design_bandpass(40.0, 0.5, 100.0).is_err());
        assert!(design_bandpass(0.5, 50.0, 100.0).is_err());
        assert!(design_bandpass(0.5, f64::NAN, 100.0).is_err());
    }

    #[test]
    fn default_band_has_four_stable_poles() {
        let f = design_bandpass(0.5, 40.0, 100.0).unwrap();
        assert_eq!(f.sos.sections.len(), 2);
        assert!(f.is_stable());
    }

    #[test]
    fn lowpass_unit_dc_and_stable() {
        for order in 1..=8 {
            let s = design_lowpass(45.0, 250.0, order).unwrap();
            assert!((s.frequency_response(0.0).norm() - 1.0).abs() < 1e-9);
            assert!(s.is_stable());
            assert!(s.frequency_response(120.0).norm() < 0.5);
        }
    }

    #[test]
    fn filtfilt_passes_constant_through_highpass_as_zero() {
        let f = design_bandpass(0.5, 40.0, 100.0).unwrap();
        let y = f.sos.filtfilt(&vec![3.0; 500]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }
}
