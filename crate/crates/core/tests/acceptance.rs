//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line straight to stdout so the summary is
//! visible even when the harness captures output.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use ecg_ssl::encoder::bce_loss;
use ecg_ssl::eval::{
    auc, compute_metrics, make_stratified_patient_folds, run_ssl_experiment, run_supervised_experiment, sweep_window,
    default_window_grid, ProtocolConfig, SupervisedConfig,
};
use ecg_ssl::numcore::gradcheck;
use ecg_ssl::numcore::{Tape, Tensor};
use ecg_ssl::probes::{logistic_objective, svm_objective, ProbeKind};
use ecg_ssl::sigproc::{
    design_bandpass, generate_synthetic_corpus, prepare_segments, preprocess, resample, segment, RawRecording, Segment,
    SigprocConfig, SyntheticSpec,
};
use ecg_ssl::ssl::{
    deaps_loss, mixup_contrastive_loss, mtae_loss, nerula_loss, nt_xent_loss, pretrain, DeapsWeights, PretrainConfig,
    PretrainCorpus, SslMethod,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

/// Criteria carry wall-clock budgets, so they run one at a time even when
/// the harness uses several threads.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. NT-Xent against a direct evaluator

/// Rows `2k` and `2k + 1` are a positive pair. Average over all 2N anchors
/// of `-log(exp(s_ip / t) / sum_{k != i} exp(s_ik / t))`.
fn nt_xent_oracle(rows: &[Vec<f64>], tau: f64) -> f64 {
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let m = rows.len();
    let mut total = 0.0;
    for i in 0..m {
        let pos = if i % 2 == 0 { i + 1 } else { i - 1 };
        let denom: f64 = (0..m).filter(|&k| k != i).map(|k| sim(i, k).exp()).sum();
        total += -(sim(i, pos).exp() / denom).ln();
    }
    total / m as f64
}

fn lib_nt_xent(rows: &[Vec<f64>], tau: f64) -> f64 {
    let d = rows[0].len();
    let t = Tensor::new(vec![rows.len(), d], rows.concat()).unwrap();
    let mut tape = Tape::new();
    let z = tape.constant(t);
    let l = nt_xent_loss(&mut tape, z, tau).unwrap();
    tape.value(l).item()
}

#[test]
fn criterion_1_nt_xent_oracle() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(2..=12);
        let tau = [0.05, 0.1, 0.5, 1.0][rng.gen_range(0..4)];
        let rows: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        worst = worst.max((lib_nt_xent(&rows, tau) - nt_xent_oracle(&rows, tau)).abs());
    }

    let mut closed: f64 = 0.0;
    for n in 2..=8usize {
        let same = vec![vec![0.3, -1.2, 0.7]; 2 * n];
        closed = closed.max((lib_nt_xent(&same, 0.5) - ((2 * n - 1) as f64).ln()).abs());
    }
    let orth = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let orth_err = (lib_nt_xent(&orth, 1.0) - 0.551444).abs();
    closed = closed.max(orth_err);

    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && closed <= 1e-6 && elapsed < Duration::from_secs(10);
    report(
        1,
        pass,
        &format!("max |lib - oracle| = {worst:.2e} over 100 batches, closed-form error {closed:.2e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Finite-difference gradient suite

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
const POINTS: usize = 20;

/// Central differences on a plain function of a parameter vector.
fn fd_rel_error(theta: &[f64], f: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    let (_, analytic) = f(theta);
    let mut num = vec![0.0; theta.len()];
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        t[i] = theta[i] + FD_STEP;
        let up = f(&t).0;
        t[i] = theta[i] - FD_STEP;
        let down = f(&t).0;
        t[i] = theta[i];
        num[i] = (up - down) / (2.0 * FD_STEP);
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn linear_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u8>, Vec<f64>) {
    let (n, d) = (12, 3);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let theta: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (x, y, theta)
}

#[test]
fn criterion_2_gradient_suite() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => worst.push((name, e)),
    };

    for _ in 0..POINTS {
        let tau = [0.1, 0.5, 1.0][rng.gen_range(0..3)];
        let z = randn(&mut rng, &[8, 5], 1.0);
        let g = gradcheck::check(&[z], FD_STEP, |t, v| nt_xent_loss(t, v[0], tau)).unwrap();
        record("nt_xent", g.rel_error);

        let zs = [randn(&mut rng, &[4, 5], 1.0), randn(&mut rng, &[4, 5], 1.0), randn(&mut rng, &[4, 5], 1.0)];
        let g = gradcheck::check(&zs, FD_STEP, |t, v| mixup_contrastive_loss(t, v[0], v[1], v[2], tau)).unwrap();
        record("mixup", g.rel_error);

        let w = DeapsWeights {
            covariance: 0.25,
            ..DeapsWeights::default()
        };
        let abc = [randn(&mut rng, &[6, 4], 0.5), randn(&mut rng, &[6, 4], 0.5), randn(&mut rng, &[6, 4], 0.5)];
        let g = gradcheck::check(&abc, FD_STEP, |t, v| deaps_loss(t, v[0], v[1], v[2], &w)).unwrap();
        record("deaps", g.rel_error);

        let mask = Tensor::new(vec![3, 1, 20], (0..60).map(|i| f64::from(u8::from(i % 3 != 0))).collect()).unwrap();
        let pt = [randn(&mut rng, &[3, 1, 20], 1.0), randn(&mut rng, &[3, 1, 20], 1.0)];
        let g = gradcheck::check(&pt, FD_STEP, |t, v| mtae_loss(t, v[0], v[1], &mask)).unwrap();
        record("mtae", g.rel_error);

        // The target branch is detached, so it enters as a constant.
        let lambda = rng.gen_range(0.1..2.0);
        let zb = randn(&mut rng, &[3, 6], 1.0);
        let nr = [randn(&mut rng, &[3, 1, 20], 1.0), randn(&mut rng, &[3, 1, 20], 1.0), randn(&mut rng, &[3, 6], 1.0)];
        let g = gradcheck::check(&nr, FD_STEP, |t, v| {
            let target = t.constant(zb.clone());
            nerula_loss(t, v[0], v[1], &mask, v[2], target, lambda)
        })
        .unwrap();
        record("nerula", g.rel_error);

        let p = Tensor::new(vec![6], (0..6).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap();
        let y = Tensor::new(vec![6], (0..6).map(|i| f64::from(u8::from(i % 2 == 0))).collect()).unwrap();
        let g = gradcheck::check(&[p], FD_STEP, |t, v| {
            let yv = t.constant(y.clone());
            bce_loss(t, v[0], yv)
        })
        .unwrap();
        record("bce", g.rel_error);

        let (x, yl, theta) = linear_problem(&mut rng);
        let c = rng.gen_range(0.1..5.0);
        let d = theta.len() - 1;
        record(
            "hinge",
            fd_rel_error(&theta, |t| svm_objective(&t[..d], t[d], &x, &yl, c)),
        );
        record(
            "logistic_nll",
            fd_rel_error(&theta, |t| logistic_objective(&t[..d], t[d], &x, &yl, c)),
        );
    }

    let elapsed = start.elapsed();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let pass = max <= FD_TOL && worst.len() == 8 && elapsed < Duration::from_secs(120);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(2, pass, &format!("max rel error {max:.2e} ({}), {elapsed:.2?}", detail.join(", ")));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Signal processing

/// `H(e^{jw})` of a cascade evaluated straight from the biquad coefficients.
fn response_oracle(sections: &[([f64; 3], [f64; 3])], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let z1 = Complex64::from_polar(1.0, -w);
    let z2 = z1 * z1;
    sections
        .iter()
        .map(|(b, a)| (b[0] + b[1] * z1 + b[2] * z2) / (a[0] + a[1] * z1 + a[2] * z2))
        .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
        .norm()
}

fn dominant_bin(x: &[f64]) -> usize {
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        x.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    (1..buf.len() / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap()
}

#[test]
fn criterion_3_signal_processing() {
    let _serial = serial();
    let start = Instant::now();
    let filt = design_bandpass(0.5, 40.0, 100.0).unwrap();
    let sections: Vec<_> = filt.sos.sections.iter().map(|s| (s.b, s.a)).collect();
    let h0 = response_oracle(&sections, 0.0, 100.0);
    let h10 = response_oracle(&sections, 10.0, 100.0);
    let lib_agrees = (filt.frequency_response(10.0).norm() - h10).abs() < 1e-12;
    // Pole radii from the quadratic formula on each denominator.
    let max_radius = sections
        .iter()
        .flat_map(|(_, a)| {
            let disc = Complex64::new(a[1] * a[1] - 4.0 * a[2], 0.0).sqrt();
            [((-a[1] + disc) / 2.0).norm(), ((-a[1] - disc) / 2.0).norm()]
        })
        .fold(0.0, f64::max);

    let fs = 250.0;
    let secs = 20.0;
    let tone: Vec<f64> = (0..(fs * secs) as usize)
        .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / fs).sin())
        .collect();
    let raw = RawRecording::new("p", "r", fs, tone.clone(), None, 0).unwrap();
    let out = resample(&raw, 100.0).unwrap();
    let bin_in = dominant_bin(&tone) as f64 * fs / tone.len() as f64;
    let bin_out = dominant_bin(&out.samples) as f64 * 100.0 / out.samples.len() as f64;
    let tone_kept = (bin_in - 5.0).abs() < 1e-9 && (bin_out - 5.0).abs() < 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SigprocConfig::default();
    let mut count_mismatch = 0;
    for i in 0..1000 {
        let len = rng.gen_range(0..12_000usize);
        let x: Vec<f64> = (0..len.max(1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rec = RawRecording::new("p", format!("r{i}"), 100.0, x, None, 0).unwrap();
        let clean = preprocess(&rec, &cfg).unwrap();
        let n = segment(&clean, cfg.stride_s).unwrap().segments.len();
        if n != len.max(1) / 1000 {
            count_mismatch += 1;
        }
    }

    let elapsed = start.elapsed();
    let pass = h0 <= 1e-3
        && (0.9..=1.01).contains(&h10)
        && lib_agrees
        && max_radius < 1.0
        && tone_kept
        && count_mismatch == 0
        && elapsed < Duration::from_secs(30);
    report(
        3,
        pass,
        &format!(
            "|H(0)| {h0:.1e}, |H(10 Hz)| {h10:.4}, max pole radius {max_radius:.4}, tone peak {bin_in} Hz -> {bin_out} Hz, \
             {count_mismatch} segment-count mismatches, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. Protocol invariants

fn small_cohort(seed: u64, per_class: usize) -> Vec<Segment> {
    let spec = SyntheticSpec {
        n_patients_per_class: per_class,
        recordings_per_patient: 1,
        duration_s: 40.0,
        seed,
        ..Default::default()
    };
    let cfg = SigprocConfig::default();
    generate_synthetic_corpus(&spec)
        .unwrap()
        .iter()
        .flat_map(|r| prepare_segments(r, &cfg).unwrap())
        .collect()
}

#[test]
fn criterion_4_protocol_invariants() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = Vec::new();
    for corpus in 0..50 {
        let n0 = rng.gen_range(5..40);
        let n1 = rng.gen_range(5..40);
        let patients: Vec<(String, u8)> = (0..n0)
            .map(|i| (format!("a{i}"), 0))
            .chain((0..n1).map(|i| (format!("b{i}"), 1)))
            .collect();
        let folds = make_stratified_patient_folds(&patients, 5, rng.gen()).unwrap();
        let mut seen = BTreeSet::new();
        for f in &folds {
            let train: BTreeSet<_> = f.train_patients.iter().collect();
            if f.test_patients.iter().any(|p| train.contains(p)) {
                violations.push(format!("corpus {corpus} fold {}: train/test overlap", f.fold));
            }
            if train.len() + f.test_patients.len() != patients.len() {
                violations.push(format!("corpus {corpus} fold {}: split does not partition", f.fold));
            }
            for p in &f.test_patients {
                if !seen.insert(p.clone()) {
                    violations.push(format!("corpus {corpus}: {p} tested twice"));
                }
            }
        }
        if seen.len() != patients.len() {
            violations.push(format!("corpus {corpus}: coverage {}/{}", seen.len(), patients.len()));
        }
        for class in 0..2u8 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| {
                    f.test_patients
                        .iter()
                        .filter(|p| patients.iter().any(|(id, l)| id == *p && *l == class))
                        .count()
                })
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            if hi - lo > 1 {
                violations.push(format!("corpus {corpus}: class {class} fold counts {counts:?}"));
            }
        }
    }

    // Full evaluation run: the audit check runs inside every fold; also
    // verify the emitted records independently.
    let segments = small_cohort(41, 8);
    let encoder = ecg_ssl::encoder::Encoder::new(Default::default(), 0).unwrap();
    let proto = ProtocolConfig {
        k_folds: 5,
        seed: 4,
        label_budget: Some(4),
        shuffle_labels: false,
    };
    let probe = ProbeKind::logistic();
    let outcome = run_ssl_experiment(&encoder, "random", &segments, &probe, &proto, "h");
    let audit_ok = match &outcome {
        Ok(o) => o.audit.iter().all(|a| {
            let test: BTreeSet<_> = a.test_patients.iter().collect();
            a.fit_patients.iter().all(|p| !test.contains(p)) && a.train_patients.iter().all(|p| !test.contains(p))
        }),
        Err(_) => false,
    };
    if !audit_ok {
        violations.push(format!("evaluation run: {:?}", outcome.err()));
    }

    let pass = violations.is_empty();
    report(
        4,
        pass,
        &format!("50 random cohorts + 1 full run, {} violations {:?}", violations.len(), violations.first()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

fn auc_oracle(y: &[u8], s: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            if yi == 1 && yj == 0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn criterion_5_metric_oracles() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let mut worst_auc: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..25);
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8)) / 5.0).collect();
        let pred: Vec<u8> = s.iter().map(|&v| u8::from(v >= 0.5)).collect();
        let m = compute_metrics(&y, &pred, &s).unwrap();

        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        let mut correct = 0usize;
        for (&t, &p) in y.iter().zip(&pred) {
            correct += usize::from(t == p);
            tp += usize::from(t == 1 && p == 1);
            fp += usize::from(t == 0 && p == 1);
            fn_ += usize::from(t == 1 && p == 0);
        }
        let acc = correct as f64 / n as f64;
        let f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        if m.accuracy != acc || m.f1 != f1 {
            failures += 1;
        }
        match (auc_oracle(&y, &s), m.auc, auc(&y, &s)) {
            (Some(o), Some(a), Some(b)) => worst_auc = worst_auc.max((o - a).abs()).max((o - b).abs()),
            (None, None, None) => {}
            _ => failures += 1,
        }
    }
    let pass = failures == 0 && worst_auc <= 1e-12;
    report(
        5,
        pass,
        &format!("200 random sets, {failures} exact mismatches, max AUC error {worst_auc:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Directional reproduction: SSL probe beats the supervised baseline

const HEADLINE_METHOD: SslMethod = SslMethod::Pclr;
const SEEDS: u64 = 5;

fn segments_of(spec: &SyntheticSpec, visit: Option<u32>) -> Vec<Segment> {
    let cfg = SigprocConfig::default();
    generate_synthetic_corpus(spec)
        .unwrap()
        .iter()
        .filter(|r| visit.is_none_or(|v| r.visit_index == v))
        .flat_map(|r| prepare_segments(r, &cfg).unwrap())
        .collect()
}

struct SeedResult {
    ssl: f64,
    control: f64,
    supervised: f64,
}

fn headline_seed(seed: u64) -> SeedResult {
    let pre = segments_of(
        &SyntheticSpec {
            seed: 1000 + seed,
            with_labels: false,
            id_prefix: "pre".into(),
            ..Default::default()
        },
        None,
    );
    let eval = segments_of(
        &SyntheticSpec {
            seed: 2000 + seed,
            id_prefix: "ev".into(),
            ..Default::default()
        },
        Some(0),
    );
    let cfg = PretrainConfig {
        method: HEADLINE_METHOD,
        seed,
        ..Default::default()
    };
    let encoder = pretrain(&PretrainCorpus::from_segments(&pre), &cfg).unwrap().encoder;
    let mut proto = ProtocolConfig {
        k_folds: 5,
        seed,
        label_budget: Some(8),
        shuffle_labels: false,
    };
    let rf = ProbeKind::default();
    let ssl = run_ssl_experiment(&encoder, HEADLINE_METHOD.name(), &eval, &rf, &proto, "h").unwrap();
    proto.shuffle_labels = true;
    let control = run_ssl_experiment(&encoder, HEADLINE_METHOD.name(), &eval, &rf, &proto, "h").unwrap();
    proto.shuffle_labels = false;
    let sup = run_supervised_experiment(&eval, &SupervisedConfig::default(), &proto, "h").unwrap();
    let mean = |r: &ecg_ssl::eval::MetricsReport| r.auc.map(|s| s.mean).unwrap_or(f64::NAN);
    SeedResult {
        ssl: mean(&ssl.report),
        control: mean(&control.report),
        supervised: mean(&sup.report),
    }
}

#[test]
fn criterion_6_ssl_beats_supervised() {
    let _serial = serial();
    let start = Instant::now();
    let results: Vec<SeedResult> = (0..SEEDS).map(headline_seed).collect();
    let avg = |f: fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let (ssl, control, sup) = (avg(|r| r.ssl), avg(|r| r.control), avg(|r| r.supervised));
    let elapsed = start.elapsed();
    let pass = ssl >= sup + 0.05
        && ssl >= 0.80
        && (0.4..=0.6).contains(&control)
        && elapsed <= Duration::from_secs(600);
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("{:.3}/{:.3}/{:.3}", r.ssl, r.supervised, r.control))
        .collect();
    report(
        6,
        pass,
        &format!(
            "{} + random forest AUC {ssl:.3} vs supervised {sup:.3} (gap {:+.3}), shuffled control {control:.3}, \
             per seed ssl/sup/control [{}], {elapsed:.0?}",
            HEADLINE_METHOD,
            ssl - sup,
            per_seed.join(" ")
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Windowed inference

#[test]
fn criterion_7_window_sweep() {
    let _serial = serial();
    let segments = small_cohort(77, 10);
    let segments: Vec<Segment> = segments
        .into_iter()
        .chain({
            let spec = SyntheticSpec {
                n_patients_per_class: 10,
                recordings_per_patient: 1,
                duration_s: 300.0,
                seed: 78,
                id_prefix: "long".into(),
                ..Default::default()
            };
            segments_of(&spec, None)
        })
        .collect();
    let encoder = ecg_ssl::encoder::Encoder::new(Default::default(), 7).unwrap();
    let proto = ProtocolConfig {
        k_folds: 5,
        seed: 7,
        label_budget: None,
        shuffle_labels: false,
    };
    let run = || {
        let o = run_ssl_experiment(&encoder, "random", &segments, &ProbeKind::default(), &proto, "h").unwrap();
        let grid = default_window_grid(&o.strips);
        let sweep = sweep_window(&o.strips, &o.truth, &grid).unwrap();
        (grid, sweep)
    };
    let (grid, a) = run();
    let (_, b) = run();
    let f1_at = |w: f64| a.rows.iter().find(|r| r.window_s == w).map(|r| r.f1).unwrap();
    let best = f1_at(a.best_window_s);
    let first = f1_at(10.0);
    let pass = best >= first && a.best_window_s == b.best_window_s && a.rows == b.rows && a.rows.len() == grid.len();
    report(
        7,
        pass,
        &format!(
            "W* = {} s, F1(W*) {best:.3} >= F1(10 s) {first:.3}, {} rows for {} grid sizes, rerun W* = {} s",
            a.best_window_s,
            a.rows.len(),
            grid.len(),
            b.best_window_s
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Determinism of every command

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ecg-ssl")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn criterion_8_determinism() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut failures: Vec<String> = Vec::new();

    let cfg = d.join("config.json");
    std::fs::write(
        &cfg,
        r#"{
  "pretrain": {"method": "simclr", "epochs": 2, "batches_per_epoch": 2, "batch_size": 8},
  "probe": {"kind": "random_forest", "n_trees": 20, "max_depth": 6, "min_leaf": 2, "max_features": null, "bootstrap": true},
  "protocol": {"k_folds": 3, "label_budget": null, "shuffle_labels": false},
  "supervised": {"recipe": {"max_epochs": 2, "batch_size": 16}}
}
"#,
    )
    .unwrap();

    for tag in ["a", "b"] {
        let corpus = d.join(format!("corpus_{tag}"));
        let run = d.join(format!("run_{tag}"));
        let sup = d.join(format!("sup_{tag}"));
        let emb = d.join(format!("emb_{tag}.csv"));
        // Both pipelines read the first corpus so their configs, and hence
        // their hashes, agree.
        let manifest = d.join("corpus_a/manifest.json");
        let steps: Vec<Vec<String>> = vec![
            vec!["gen-synth".into(), "--out".into(), s(&corpus), "--seed".into(), "3".into(),
                 "--patients-per-class".into(), "3".into(), "--recordings-per-patient".into(), "2".into(),
                 "--duration-s".into(), "60".into()],
            vec!["pretrain".into(), "--config".into(), s(&cfg), "--manifest".into(), s(&manifest), "--out".into(), s(&run), "--seed".into(), "5".into()],
            vec!["embed".into(), "--checkpoint".into(), s(&run.join("checkpoints/encoder.ckpt")), "--manifest".into(), s(&manifest), "--out".into(), s(&emb)],
            vec!["evaluate".into(), "--config".into(), s(&cfg), "--manifest".into(), s(&manifest), "--out".into(), s(&run), "--seed".into(), "5".into()],
            vec!["sweep-window".into(), "--config".into(), s(&cfg), "--manifest".into(), s(&manifest), "--out".into(), s(&run), "--seed".into(), "5".into()],
            vec!["evaluate-supervised".into(), "--config".into(), s(&cfg), "--manifest".into(), s(&manifest), "--out".into(), s(&sup), "--seed".into(), "5".into()],
        ];
        for step in &steps {
            let args: Vec<&str> = step.iter().map(String::as_str).collect();
            let (code, err) = run_cli(&args);
            if code != 0 {
                failures.push(format!("{} exited {code}: {err}", step[0]));
            }
        }
    }

    let compare = [
        "corpus_{}/manifest.json",
        "corpus_{}/signals/syn_c0_p000_v0.csv",
        "run_{}/checkpoints/encoder.ckpt",
        "run_{}/loss_curve.csv",
        "emb_{}.csv",
        "run_{}/metrics.json",
        "run_{}/folds.csv",
        "run_{}/window_sweep.csv",
        "sup_{}/metrics.json",
    ];
    let mut compared = 0;
    if failures.is_empty() {
        for pattern in compare {
            let (pa, pb) = (d.join(pattern.replace("{}", "a")), d.join(pattern.replace("{}", "b")));
            if !pa.exists() {
                failures.push(format!("missing {}", pa.display()));
                continue;
            }
            compared += 1;
            if read(&pa) != read(&pb) {
                failures.push(format!("{pattern} differs between runs"));
            }
        }
    }

    let pass = failures.is_empty();
    report(
        8,
        pass,
        &format!("6 commands run twice, {compared} artifacts byte-identical, failures {failures:?}"),
    );
    assert!(pass);
}
