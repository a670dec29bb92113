//! Synthetic single-lead ECG cohort.
//!
//! Each beat is a sum of Gaussian bumps (P, Q, R, S, T) placed on an
//! RR-interval point process. The two classes differ in RR variability and
//! P-wave amplitude, which persist across a patient's recordings. Heart
//! rate, QRS width, R and T amplitudes and baseline wander are redrawn for
//! every recording.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawRecording;
use crate::error::{Error, Result};
use crate::rng;

/// Per-class ranges from which each patient draws its own value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMorphology {
    /// RR-interval coefficient of variation range.
    pub rr_cv: [f64; 2],
    /// P-wave amplitude range (R-wave units are roughly 1).
    pub p_amplitude: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_patients_per_class: usize,
    pub recordings_per_patient: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub control: ClassMorphology,
    pub paf: ClassMorphology,
    pub noise_level: f64,
    pub with_labels: bool,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients_per_class: 40,
            recordings_per_patient: 2,
            duration_s: 300.0,
            sample_rate_hz: 250.0,
            control: ClassMorphology {
                rr_cv: [0.02, 0.06],
                p_amplitude: [0.12, 0.25],
            },
            paf: ClassMorphology {
                rr_cv: [0.06, 0.16],
                p_amplitude: [0.02, 0.08],
            },
            noise_level: 0.04,
            with_labels: true,
            id_prefix: "syn".into(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 20.0 {
            return Err(Error::config(format!(
                "synthetic recordings must last at least 20 s, got {}",
                self.duration_s
            )));
        }
        if self.n_patients_per_class == 0 || self.recordings_per_patient == 0 {
            return Err(Error::config("need at least one patient per class and one recording each"));
        }
        if !(self.sample_rate_hz >= 100.0) {
            return Err(Error::config("synthetic sample rate must be at least 100 Hz"));
        }
        for m in [&self.control, &self.paf] {
            if m.rr_cv[0] < 0.0 || m.rr_cv[0] > m.rr_cv[1] || m.p_amplitude[0] > m.p_amplitude[1] {
                return Err(Error::config("morphology ranges must be ordered and non-negative"));
            }
        }
        if self.noise_level < 0.0 {
            return Err(Error::config("noise level must be non-negative"));
        }
        Ok(())
    }

    pub fn n_recordings(&self) -> usize {
        2 * self.n_patients_per_class * self.recordings_per_patient
    }
}

/// Traits that persist across a patient's recordings.
struct PatientParams {
    rr_cv: f64,
    p_amp: f64,
}

/// Nuisance factors redrawn for every recording session.
struct SessionParams {
    heart_rate_bpm: f64,
    qrs_scale: f64,
    r_amp: f64,
    t_amp: f64,
    wander_amp: f64,
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn draw_patient(rng: &mut impl Rng, m: &ClassMorphology) -> PatientParams {
    PatientParams {
        rr_cv: uniform(rng, m.rr_cv),
        p_amp: uniform(rng, m.p_amplitude),
    }
}

fn draw_session(rng: &mut impl Rng) -> SessionParams {
    SessionParams {
        heart_rate_bpm: rng.gen_range(55.0..90.0),
        qrs_scale: rng.gen_range(0.85..1.15),
        r_amp: rng.gen_range(0.8..1.5),
        t_amp: rng.gen_range(0.15..0.4),
        wander_amp: rng.gen_range(0.05..0.3),
    }
}

/// Add `amp * exp(-(t - centre)^2 / (2 sigma^2))` over +-5 sigma.
fn add_bump(x: &mut [f64], fs: f64, centre: f64, sigma: f64, amp: f64) {
    let lo = ((centre - 5.0 * sigma) * fs).floor().max(0.0) as usize;
    let hi = (((centre + 5.0 * sigma) * fs).ceil() as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let dt = i as f64 / fs - centre;
        *v += amp * (-dt * dt / (2.0 * sigma * sigma)).exp();
    }
}

fn synthesize(p: &PatientParams, spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<f64> {
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as usize;
    let mut x = vec![0.0; n];

    let session = draw_session(rng);
    let rr_mean = 60.0 / session.heart_rate_bpm;
    let p_amp = p.p_amp * rng.gen_range(0.9..1.1);
    let r_amp = session.r_amp;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let rsa_phase = rng.gen_range(0.0..2.0 * PI);

    let mut t = rng.gen_range(0.2..0.2 + rr_mean);
    while t < spec.duration_s + 0.5 {
        let w = session.qrs_scale;
        add_bump(&mut x, fs, t - 0.16, 0.022, p_amp);
        add_bump(&mut x, fs, t - 0.028 * w, 0.008 * w, -0.12 * r_amp);
        add_bump(&mut x, fs, t, 0.010 * w, r_amp);
        add_bump(&mut x, fs, t + 0.03 * w, 0.010 * w, -0.22 * r_amp);
        add_bump(&mut x, fs, t + 0.26 * rr_mean.sqrt(), 0.045, session.t_amp);

        let rsa = 1.0 + 0.02 * (2.0 * PI * 0.25 * t + rsa_phase).sin();
        let jitter = 1.0 + p.rr_cv * std_normal.sample(rng);
        t += (rr_mean * rsa * jitter).clamp(0.45 * rr_mean, 1.8 * rr_mean);
    }

    let wander_f = rng.gen_range(0.15..0.35);
    let wander_phase = rng.gen_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).expect("valid noise level");
    for (i, v) in x.iter_mut().enumerate() {
        let ti = i as f64 / fs;
        *v += session.wander_amp * (2.0 * PI * wander_f * ti + wander_phase).sin();
        if spec.noise_level > 0.0 {
            *v += noise.sample(rng);
        }
    }
    x
}

pub fn patient_id(spec: &SyntheticSpec, class: u8, index: usize) -> String {
    format!("{}_c{class}_p{index:03}", spec.id_prefix)
}

/// Deterministic corpus: class 0 patients first, then class 1; each patient
/// has `recordings_per_patient` recordings indexed by visit.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_recordings());
    for class in 0..2u8 {
        let morph = if class == 0 { &spec.control } else { &spec.paf };
        for idx in 0..spec.n_patients_per_class {
            let pid = patient_id(spec, class, idx);
            let mut prng = rng::stream(spec.seed, &[u64::from(class), idx as u64]);
            let params = draw_patient(&mut prng, morph);
            for visit in 0..spec.recordings_per_patient {
                let mut rrng = rng::stream(spec.seed, &[u64::from(class), idx as u64, 1 + visit as u64]);
                let samples = synthesize(&params, spec, &mut rrng);
                out.push(RawRecording::new(
                    pid.clone(),
                    format!("{pid}_v{visit}"),
                    spec.sample_rate_hz,
                    samples,
                    spec.with_labels.then_some(class),
                    visit as u32,
                )?);
            }
        }
    }
    Ok(out)
}
