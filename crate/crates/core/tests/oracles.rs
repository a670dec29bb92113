//! Gradient, optimiser and training-loop checks against independent
//! reference computations.

use ecg_ssl::encoder::supervised::LabeledSegments;
use ecg_ssl::encoder::{train_supervised, Encoder, EncoderConfig, Module, TrainRecipe};
use ecg_ssl::numcore::gradcheck;
use ecg_ssl::numcore::{Tape, Tensor, Var};
use ecg_ssl::probes::{fit_linear_svm, fit_logistic};
use ecg_ssl::sigproc::{generate_synthetic_corpus, prepare_segments, Segment, SigprocConfig, SyntheticSpec};
use ecg_ssl::ssl::samplers::sample_pclr_pairs;
use ecg_ssl::ssl::{pretrain, PretrainConfig, PretrainCorpus, SslMethod};
use ecg_ssl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `sum(w * y)` with fixed random weights so every output element matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

#[test]
fn every_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m34 = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[3, 4], -1.0, 1.0);
    let pos = |rng: &mut ChaCha8Rng| rand_tensor(rng, &[3, 4], 0.5, 2.0);
    let cases: Vec<Case> = vec![
        ("add", vec![m34(&mut rng), m34(&mut rng)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; project(t, y, 1) })),
        ("sub", vec![m34(&mut rng), m34(&mut rng)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; project(t, y, 2) })),
        ("mul", vec![m34(&mut rng), m34(&mut rng)], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; project(t, y, 3) })),
        ("affine", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.affine(v[0], -1.7, 0.3); project(t, y, 4) })),
        ("scale", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.scale(v[0], 2.5); project(t, y, 5) })),
        ("matmul", vec![m34(&mut rng), rand_tensor(&mut rng, &[4, 5], -1.0, 1.0)], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, 6) })),
        ("conv1d", vec![rand_tensor(&mut rng, &[2, 3, 17], -1.0, 1.0), rand_tensor(&mut rng, &[4, 3, 5], -1.0, 1.0)], Box::new(|t, v| { let y = t.conv1d(v[0], v[1], 2, 2)?; project(t, y, 7) })),
        ("relu", vec![rand_tensor(&mut rng, &[3, 4], 0.1, 1.0)], Box::new(|t, v| { let n = t.scale(v[0], -1.0); let c = t.concat(&[v[0], n], 0)?; let y = t.relu(c); project(t, y, 8) })),
        ("sigmoid", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.sigmoid(v[0]); project(t, y, 9) })),
        ("exp", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.exp(v[0]); project(t, y, 10) })),
        ("log", vec![pos(&mut rng)], Box::new(|t, v| { let y = t.log(v[0]); project(t, y, 11) })),
        ("sqrt", vec![pos(&mut rng)], Box::new(|t, v| { let y = t.sqrt(v[0]); project(t, y, 12) })),
        ("clamp", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.clamp(v[0], -0.99, 0.99); project(t, y, 13) })),
        ("sum", vec![m34(&mut rng)], Box::new(|t, v| { let s = t.exp(v[0]); Ok(t.sum(s)) })),
        ("mean", vec![m34(&mut rng)], Box::new(|t, v| { let s = t.exp(v[0]); Ok(t.mean(s)) })),
        ("sum_axis", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.sum_axis(v[0], 1)?; project(t, y, 14) })),
        ("mean_axis", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.mean_axis(v[0], 0)?; project(t, y, 15) })),
        ("softmax", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.softmax(v[0])?; project(t, y, 16) })),
        ("log_softmax", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.log_softmax(v[0])?; project(t, y, 17) })),
        ("l2_normalize", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.l2_normalize(v[0])?; project(t, y, 18) })),
        ("concat", vec![m34(&mut rng), rand_tensor(&mut rng, &[3, 2], -1.0, 1.0)], Box::new(|t, v| { let y = t.concat(&[v[0], v[1]], 1)?; project(t, y, 19) })),
        ("slice", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.slice(v[0], 1, 1, 2)?; project(t, y, 20) })),
        ("transpose", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.transpose(v[0])?; project(t, y, 21) })),
        ("reshape", vec![m34(&mut rng)], Box::new(|t, v| { let y = t.reshape(v[0], &[2, 6])?; project(t, y, 22) })),
        ("broadcast_to", vec![rand_tensor(&mut rng, &[1, 4], -1.0, 1.0)], Box::new(|t, v| { let y = t.broadcast_to(v[0], &[3, 4])?; project(t, y, 23) })),
        ("upsample", vec![rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0)], Box::new(|t, v| { let y = t.upsample(v[0], 3)?; project(t, y, 24) })),
    ];
    for (name, inputs, f) in cases {
        let r = gradcheck::check(&inputs, 1e-6, |t, v| f(t, v)).unwrap();
        assert!(r.rel_error < 1e-6, "{name}: relative error {:e}", r.rel_error);
    }
}

#[test]
fn encoder_input_gradient() {
    let cfg = EncoderConfig {
        channels: vec![4, 6, 8],
        kernel_size: 5,
        stride: 2,
        embedding_dim: 6,
    };
    let enc = Encoder::new(cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 1, 64], -1.0, 1.0);
    let r = gradcheck::check(&[x], 1e-6, |t, v| {
        let vars = enc.bind_frozen(t);
        let out = enc.forward(t, &vars, v[0])?;
        project(t, out.embedding, 99)
    })
    .unwrap();
    assert!(r.rel_error < 1e-5, "relative error {:e}", r.rel_error);
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Newton's method on `mean NLL + |w|^2 / (2 C n)` with an explicit Hessian.
fn newton_logistic(x: &[Vec<f64>], y: &[u8], c: f64) -> Vec<f64> {
    let n = x.len();
    let d = x[0].len();
    let lam = 1.0 / (c * n as f64);
    let mut th = vec![0.0; d + 1];
    for _ in 0..50 {
        let mut g = vec![0.0; d + 1];
        let mut h = vec![vec![0.0; d + 1]; d + 1];
        for (xi, &yi) in x.iter().zip(y) {
            let xa: Vec<f64> = xi.iter().copied().chain([1.0]).collect();
            let z: f64 = xa.iter().zip(&th).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for j in 0..=d {
                g[j] += (p - f64::from(yi)) * xa[j] / n as f64;
                for k in 0..=d {
                    h[j][k] += p * (1.0 - p) * xa[j] * xa[k] / n as f64;
                }
            }
        }
        for j in 0..d {
            g[j] += lam * th[j];
            h[j][j] += lam;
        }
        let step = solve(h, g);
        th.iter_mut().zip(&step).for_each(|(t, s)| *t -= s);
    }
    th
}

#[test]
fn logistic_matches_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w_true = [1.5, -2.0, 0.5, 0.0];
    let x: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u8> = x
        .iter()
        .map(|r| {
            let z: f64 = r.iter().zip(&w_true).map(|(a, b)| a * b).sum::<f64>() + 0.3;
            u8::from(rng.gen_range(0.0..1.0) < 1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    let oracle = newton_logistic(&x, &y, 1.0);
    let m = fit_logistic(&x, &y, 1.0, 5000).unwrap();
    assert!(m.converged);
    for (j, (w, o)) in m.weights.iter().zip(&oracle).enumerate() {
        assert!((w - o).abs() < 1e-3, "w{j}: {w} vs {o}");
    }
    assert!((m.bias - oracle[4]).abs() < 1e-3);

    // Probability is monotone in the score.
    let mut scored: Vec<(f64, f64)> = x.iter().map(|r| (m.score(r), m.proba(r))).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(scored.windows(2).all(|w| w[0].1 <= w[1].1));
}

fn hinge_objective(w: [f64; 2], b: f64, x: &[Vec<f64>], y: &[u8], c: f64) -> f64 {
    let n = x.len() as f64;
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &l)| {
            let s = if l == 1 { 1.0 } else { -1.0 };
            (1.0 - s * (w[0] * r[0] + w[1] * r[1] + b)).max(0.0)
        })
        .sum();
    (w[0] * w[0] + w[1] * w[1]) / (2.0 * c * n) + hinge / n
}

#[test]
fn svm_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
    let y: Vec<u8> = x.iter().map(|r| u8::from(r[0] - 0.5 * r[1] + rng.gen_range(-0.8..0.8) > 0.0)).collect();
    let c = 1.0;
    let mut best = (f64::INFINITY, [0.0; 2], 0.0);
    let mut centre = ([0.0, 0.0], 0.0);
    for (half, step) in [(4.0, 0.05), (0.1, 0.002)] {
        let k = (half / step) as i32;
        for i in -k..=k {
            for j in -k..=k {
                for l in -k..=k {
                    let w = [centre.0[0] + i as f64 * step, centre.0[1] + j as f64 * step];
                    let b = centre.1 + l as f64 * step;
                    let f = hinge_objective(w, b, &x, &y, c);
                    if f < best.0 {
                        best = (f, w, b);
                    }
                }
            }
        }
        centre = (best.1, best.2);
    }
    let m = fit_linear_svm(&x, &y, c, 2000).unwrap();
    let f = hinge_objective([m.weights[0], m.weights[1]], m.bias, &x, &y, c);
    assert!(f <= best.0 * 1.01, "svm objective {f} vs grid minimum {}", best.0);
}

fn labeled<'a>(v: &[&'a Segment]) -> LabeledSegments<'a> {
    LabeledSegments {
        signals: v.iter().map(|s| s.values.as_slice()).collect(),
        labels: v.iter().map(|s| s.label.unwrap()).collect(),
    }
}

fn segments(spec: &SyntheticSpec) -> Vec<Segment> {
    generate_synthetic_corpus(spec)
        .unwrap()
        .iter()
        .flat_map(|r| prepare_segments(r, &SigprocConfig::default()).unwrap())
        .collect()
}

fn small_spec(with_labels: bool) -> SyntheticSpec {
    SyntheticSpec {
        n_patients_per_class: 4,
        recordings_per_patient: 2,
        duration_s: 60.0,
        with_labels,
        seed: 8,
        ..SyntheticSpec::default()
    }
}

#[test]
fn pclr_batches_have_the_requested_size() {
    let corpus = PretrainCorpus::from_segments(&segments(&small_spec(false)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (batches, n) in [(1, 1), (3, 7), (5, 64)] {
        let b = sample_pclr_pairs(&corpus, batches, n, &mut rng).unwrap();
        assert_eq!(b.len(), batches);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), batches * n);
    }
}

#[test]
fn fresh_encoder_contrastive_loss_near_chance() {
    let corpus = PretrainCorpus::from_segments(&segments(&small_spec(false)));
    let n = 16;
    let cfg = PretrainConfig {
        method: SslMethod::Simclr,
        epochs: 1,
        batches_per_epoch: 1,
        batch_size: n,
        ..PretrainConfig::default()
    };
    let out = pretrain(&corpus, &cfg).unwrap();
    let chance = (2.0 * n as f64 - 1.0).ln();
    assert!((out.losses[0] - chance).abs() < 0.5, "first loss {} vs {chance}", out.losses[0]);
}

#[test]
fn fresh_classifier_loss_near_ln2() {
    let segs = segments(&small_spec(true));
    let (train, val): (Vec<&Segment>, Vec<&Segment>) = segs.iter().partition(|s| s.visit_index == 0);
    let recipe = TrainRecipe {
        max_epochs: 1,
        lr: 1e-5,
        ..TrainRecipe::default()
    };
    let (_, hist) = train_supervised(&labeled(&train), &labeled(&val), &EncoderConfig::default(), &recipe).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((hist.train_losses[0] - ln2).abs() < 0.15, "first loss {}", hist.train_losses[0]);
}
