//! Signal-level oracles on the synthetic generator and the preprocessing
//! chain, computed with simple hand-written detectors.

use ecg_ssl::eval::auc;
use ecg_ssl::sigproc::{
    design_bandpass, generate_synthetic_corpus, prepare_segments, preprocess, RawRecording, SigprocConfig,
    SyntheticSpec, SEGMENT_LEN, TARGET_HZ,
};

fn corpus() -> Vec<RawRecording> {
    generate_synthetic_corpus(&SyntheticSpec {
        n_patients_per_class: 10,
        recordings_per_patient: 1,
        duration_s: 120.0,
        seed: 77,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

/// Local maxima above half the 99th percentile, at least 300 ms apart.
fn r_peaks(x: &[f64], fs: f64) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thr = 0.5 * sorted[(sorted.len() as f64 * 0.99) as usize];
    let refractory = (0.3 * fs) as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..x.len() - 1 {
        if x[i] > thr && x[i] >= x[i - 1] && x[i] > x[i + 1] {
            match peaks.last() {
                Some(&p) if i - p < refractory => {
                    if x[i] > x[p] {
                        *peaks.last_mut().unwrap() = i;
                    }
                }
                _ => peaks.push(i),
            }
        }
    }
    peaks
}

fn rr_cv(peaks: &[usize], fs: f64) -> f64 {
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let var = rr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr.len() as f64;
    var.sqrt() / mean
}

/// Median height 160 ms before each beat over the level 100 ms before it.
fn p_height(x: &[f64], peaks: &[usize], fs: f64) -> f64 {
    let (dp, dq) = ((0.16 * fs) as usize, (0.10 * fs) as usize);
    let mut h: Vec<f64> = peaks.iter().filter(|&&p| p >= dp).map(|&p| x[p - dp] - x[p - dq]).collect();
    h.sort_by(f64::total_cmp);
    h[h.len() / 2]
}

#[test]
fn rr_variability_separates_classes() {
    let cfg = SigprocConfig::default();
    let mut labels = Vec::new();
    let mut cvs = Vec::new();
    for r in corpus() {
        let clean = preprocess(&r, &cfg).unwrap();
        let peaks = r_peaks(clean.samples(), TARGET_HZ);
        let expected = r.duration_s() / 1.1;
        assert!(peaks.len() as f64 > 0.6 * expected, "{}: {} beats", r.recording_id, peaks.len());
        cvs.push(rr_cv(&peaks, TARGET_HZ));
        labels.push(r.label.unwrap());
    }
    let mean = |c: u8| {
        let v: Vec<f64> = cvs.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(v, _)| *v).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(1) > mean(0), "RR CV control {} vs positive {}", mean(0), mean(1));
    let a = auc(&labels, &cvs).unwrap();
    assert!(a >= 0.85, "threshold rule on RR CV: AUC {a}");
}

#[test]
fn p_wave_height_separates_classes() {
    let cfg = SigprocConfig::default();
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for r in corpus() {
        let clean = preprocess(&r, &cfg).unwrap();
        let peaks = r_peaks(clean.samples(), TARGET_HZ);
        scores.push(-p_height(clean.samples(), &peaks, TARGET_HZ));
        labels.push(r.label.unwrap());
    }
    let a = auc(&labels, &scores).unwrap();
    assert!(a >= 0.85, "threshold rule on P height: AUC {a}");
}

#[test]
fn stopband_is_attenuated() {
    for fs in [100.0, 250.0, 500.0] {
        let f = design_bandpass(0.5, 40.0, fs).unwrap();
        let pass = f.frequency_response(10.0).norm();
        let stop = f.frequency_response(49.0).norm();
        assert!(stop < pass, "fs {fs}: |H(49)| {stop} vs |H(10)| {pass}");
        assert!((pass - 1.0).abs() < 0.05, "fs {fs}: passband gain {pass}");
        assert!(f.frequency_response(0.05).norm() < 0.1);
    }
}

#[test]
fn identity_fields_survive_preprocessing() {
    let cfg = SigprocConfig::default();
    for r in corpus().iter().take(4) {
        let clean = preprocess(r, &cfg).unwrap();
        assert_eq!(clean.patient_id(), r.patient_id);
        assert_eq!(clean.recording_id(), r.recording_id);
        assert_eq!(clean.label(), r.label);
        assert_eq!(clean.visit_index(), r.visit_index);
        assert_eq!(clean.sample_rate_hz(), TARGET_HZ);
        assert_eq!(clean.samples().len(), (r.duration_s() * TARGET_HZ).round() as usize);
        let segs = prepare_segments(r, &cfg).unwrap();
        assert_eq!(segs.len(), clean.samples().len() / SEGMENT_LEN);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.patient_id, r.patient_id);
            assert_eq!(s.recording_id, r.recording_id);
            assert_eq!(s.label, r.label);
            assert_eq!(s.start_index, k * SEGMENT_LEN);
            assert_eq!(s.values.len(), SEGMENT_LEN);
        }
    }
}
