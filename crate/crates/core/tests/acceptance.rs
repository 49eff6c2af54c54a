//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS or FAIL line, then exits non-zero if
//! any criterion failed.
//!
//! Oracles here are written independently of the library: plain loops over
//! `Vec`s, exhaustive search, and central finite differences.

// Range checks are written as `!(x < y)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use smuda_core::data::{blobs3, Domains, LabeledDataset};
use smuda_core::gmm::{fit_gmm, fit_gmm_latent, GmmConfig};
use smuda_core::linalg::Matrix;
use smuda_core::neural::{cross_entropy, softmax_rows, Architecture, Classifier, Dense, Encoder};
use smuda_core::pipeline::{
    bound_report, compute_weights, confidence_term, decide_from_probs, direct_adapt_baseline, evaluate, jensen_from_probs,
    run_algorithm1, Evaluation, PipelineConfig, PseudoConfig, RunOutput, SamplingMode, WeightStrategy,
};
use smuda_core::protocol::{audit_privacy, run_distributed, run_distributed_leaky, LeakFixture, NodeId, PayloadKind};
use smuda_core::rng::Rng;
use smuda_core::swd::{swd, swd_grad, ProjectionSet};

/// Seed of the pinned synthetic benchmark run.
const BLOBS3_SEED: u64 = 7;
const BLOBS3_SAMPLES: usize = 500;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, offset: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| offset + scale * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = l2(a).max(l2(b));
    if scale == 0.0 {
        0.0
    } else {
        l2(&diff) / scale
    }
}

// Shared pipeline runs on the synthetic benchmark.

struct Runs {
    domains: Domains,
    config: PipelineConfig,
    smuda: OnceCell<(RunOutput, Duration)>,
    direct: OnceCell<RunOutput>,
}

impl Runs {
    fn new() -> Self {
        let domains = blobs3(BLOBS3_SEED, BLOBS3_SAMPLES).generate().expect("preset generates");
        let config = PipelineConfig {
            seed: BLOBS3_SEED,
            ..PipelineConfig::default()
        };
        Self {
            domains,
            config,
            smuda: OnceCell::new(),
            direct: OnceCell::new(),
        }
    }

    fn smuda(&self) -> &(RunOutput, Duration) {
        self.smuda.get_or_init(|| {
            let t = Instant::now();
            let out = run_algorithm1(self.domains.sources.clone(), &self.domains.target.features, &self.config).expect("pipeline run");
            (out, t.elapsed())
        })
    }

    fn direct(&self) -> &RunOutput {
        self.direct.get_or_init(|| {
            direct_adapt_baseline(self.domains.sources.clone(), &self.domains.target.features, &self.config).expect("direct run")
        })
    }

    fn eval(&self, out: &RunOutput) -> Evaluation {
        evaluate(&out.ensemble, &self.domains.target).expect("evaluation")
    }

    fn eval_source_only(&self, out: &RunOutput) -> Evaluation {
        evaluate(&out.source_only_ensemble().expect("source-only ensemble"), &self.domains.target).expect("evaluation")
    }
}

/// Light settings for runs that only exercise plumbing.
fn quick_config(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    c.encoder.hidden = vec![16];
    c.encoder.latent_dim = 8;
    c.train.epochs = 2;
    c.adapt.steps = 10;
    c.estimator.repeats = 2;
    c
}

// 1. Prototype moments.

/// Per-class mean and divide-by-count scatter, by two passes over plain rows.
fn two_pass_moments(rows: &[Vec<f64>], labels: &[usize], class: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &y)| y == class).map(|(r, _)| r).collect();
    if members.is_empty() {
        return None;
    }
    let d = rows[0].len();
    let n = members.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &members {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in &members {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Some((mean, cov))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(1001);
    let config = GmmConfig::default();
    let mut worst: f64 = 0.0;
    let mut absent = 0;
    for case in 0..200 {
        let n = 2 + rng.index(150);
        let classes = 1 + rng.index(5);
        let labels: Vec<usize> = (0..n).map(|_| rng.index(classes)).collect();
        let offset = rng.uniform_range(-5.0, 5.0);
        let (latent, gmm) = if case % 2 == 0 {
            let d = 1 + rng.index(10);
            let x = random_matrix(n, d, rng.uniform_range(0.1, 3.0), offset, &mut rng);
            let gmm = fit_gmm_latent(&x, &labels, classes, &config).map_err(|e| format!("case {case}: {e}"))?;
            (x, gmm)
        } else {
            let d_in = 1 + rng.index(6);
            let arch = Architecture::new(d_in, vec![8], 1 + rng.index(8), classes);
            let enc = Encoder::init(&arch, &mut rng);
            let x = random_matrix(n, d_in, 1.0, offset, &mut rng);
            let data = LabeledDataset::new(x.clone(), labels.clone(), "case").unwrap();
            let gmm = fit_gmm(&enc, &data, classes, &config).map_err(|e| format!("case {case}: {e}"))?;
            (enc.encode(&x).unwrap(), gmm)
        };
        let rows: Vec<Vec<f64>> = latent.row_iter().map(<[f64]>::to_vec).collect();
        for c in 0..classes {
            match (two_pass_moments(&rows, &labels, c), gmm.get(c)) {
                (None, None) => absent += 1,
                (Some((mean, cov)), Some(p)) => {
                    let count = labels.iter().filter(|&&y| y == c).count();
                    ensure(p.count == count, || format!("case {case} class {c}: count {} vs {count}", p.count))?;
                    for (a, b) in mean.iter().zip(&p.mean) {
                        worst = worst.max((a - b).abs());
                    }
                    for (i, row) in cov.iter().enumerate() {
                        for (j, v) in row.iter().enumerate() {
                            worst = worst.max((v - p.covariance[(i, j)]).abs());
                        }
                    }
                }
                (o, p) => return Err(format!("case {case} class {c}: oracle present {} vs prototype present {}", o.is_some(), p.is_some())),
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-10, || format!("max abs error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("200 datasets, max abs error {worst:.1e}, {absent} absent classes omitted, {elapsed:.2?}"))
}

// 2. One-dimensional oracle.

fn sorted_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64
}

/// Minimum matching cost over all permutations (Heap's algorithm).
fn exhaustive_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| x.iter().zip(p).map(|(a, &j)| (a - y[j]).powi(2)).sum::<f64>() / n as f64;
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn criterion_2() -> Check {
    let unit = ProjectionSet::from_directions(Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
    let col = |v: &[f64]| Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap();
    let hand = swd(&col(&[0.0, 2.0]), &col(&[1.0, 3.0]), &unit).unwrap().value;
    ensure((hand - 1.0).abs() < 1e-12, || format!("{{0,2}} vs {{1,3}} gave {hand}"))?;

    let mut rng = Rng::new(2002);
    let mut worst: f64 = 0.0;
    let mut exhaustive = 0;
    for case in 0..500 {
        let n = if case % 2 == 0 { 1 + rng.index(6) } else { 7 + rng.index(58) };
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let got = swd(&col(&x), &col(&y), &unit).map_err(|e| e.to_string())?.value;
        worst = worst.max((got - sorted_oracle(&x, &y)).abs());
        if n <= 6 {
            exhaustive += 1;
            worst = worst.max((got - exhaustive_oracle(&x, &y)).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("500 instances ({exhaustive} also exhaustive), max error {worst:.1e}"))
}

// 3. Metric properties under fixed projections.

fn criterion_3() -> Check {
    let mut rng = Rng::new(3003);
    let mut worst_violation = f64::NEG_INFINITY;
    for case in 0..1000 {
        let n = 1 + rng.index(32);
        let d = 1 + rng.index(8);
        let proj = ProjectionSet::sample(1 + rng.index(20), d, &mut rng).unwrap();
        let x = random_matrix(n, d, rng.uniform_range(0.1, 3.0), 0.0, &mut rng);
        let y = random_matrix(n, d, rng.uniform_range(0.1, 3.0), rng.uniform_range(-2.0, 2.0), &mut rng);
        let z = random_matrix(n, d, rng.uniform_range(0.1, 3.0), rng.uniform_range(-2.0, 2.0), &mut rng);
        let s = |a: &Matrix, b: &Matrix| swd(a, b, &proj).unwrap().value;
        let (xy, yx, yz, xz) = (s(&x, &y), s(&y, &x), s(&y, &z), s(&x, &z));
        ensure(s(&x, &x) == 0.0, || format!("case {case}: swd(x, x) = {}", s(&x, &x)))?;
        ensure(xy >= 0.0 && yz >= 0.0 && xz >= 0.0, || format!("case {case}: negative distance"))?;
        ensure(xy.to_bits() == yx.to_bits(), || format!("case {case}: asymmetric {xy} vs {yx}"))?;
        let violation = xz.sqrt() - (xy.sqrt() + yz.sqrt());
        worst_violation = worst_violation.max(violation);
        ensure(violation <= 1e-9, || format!("case {case}: triangle violated by {violation:e}"))?;
    }
    Ok(format!("1000 triples, symmetry exact, max triangle violation {worst_violation:.2e}"))
}

// 4. Gradients against central finite differences.

const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of `params`.
fn numeric_grad(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn flat_params(enc: &Encoder) -> Vec<f64> {
    enc.layers
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied().collect::<Vec<_>>())
        .collect()
}

fn with_params(enc: &Encoder, flat: &[f64]) -> Encoder {
    let mut out = enc.clone();
    let mut k = 0;
    for slot in out.params_mut() {
        let len = slot.len();
        slot.copy_from_slice(&flat[k..k + len]);
        k += len;
    }
    out
}

fn flat_encoder_grads(g: &smuda_core::neural::EncoderGrads) -> Vec<f64> {
    g.as_slices().concat()
}

fn small_encoder(rng: &mut Rng) -> (Encoder, usize) {
    let d_in = 1 + rng.index(4);
    let hidden = vec![2 + rng.index(5), 2 + rng.index(5)];
    let arch = Architecture::new(d_in, hidden, 2 + rng.index(4), 3);
    let mut enc = Encoder::init(&arch, rng);
    // Zero biases behind a dead layer put pre-activations exactly on the
    // ReLU kink, where central differences are meaningless. A positive
    // output bias also keeps distinct inputs from collapsing onto the same
    // all-zero encoding, which would tie them in every slice.
    let last = enc.layers.len() - 1;
    for (i, layer) in enc.layers.iter_mut().enumerate() {
        let lo = if i == last { 0.5 } else { -0.5 };
        layer.bias.iter_mut().for_each(|b| *b = rng.uniform_range(lo, lo + 1.0));
    }
    (enc, d_in)
}

/// Smallest |pre-activation| over all layers for this batch.
fn kink_distance(enc: &Encoder, x: &Matrix) -> f64 {
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    for layer in &enc.layers {
        h = layer.forward(&h).unwrap();
        for v in h.as_mut_slice() {
            closest = closest.min(v.abs());
            *v = v.max(0.0);
        }
    }
    closest
}

/// Draw an encoder and a batch whose pre-activations all sit well clear of
/// the ReLU kink; returns how many draws were rejected.
fn smooth_instance(rng: &mut Rng, max_rows: usize) -> (Encoder, Matrix, usize) {
    let mut rejected = 0;
    loop {
        let (enc, d_in) = small_encoder(rng);
        let x = random_matrix(1 + rng.index(max_rows), d_in, 1.0, 0.0, rng);
        if kink_distance(&enc, &x) > 1e-4 {
            return (enc, x, rejected);
        }
        rejected += 1;
    }
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(4004);
    let mut worst = [0.0f64; 6];
    let labels = ["swd", "dense", "encoder", "classifier", "full model", "alignment"];
    let mut track = |slot: usize, e: f64, case: usize| -> Result<(), String> {
        worst[slot] = worst[slot].max(e);
        ensure(e < 1e-4, || format!("{} case {case}: relative error {e:e}", labels[slot]))
    };

    // SWD w.r.t. the first point set, including the 16-point 8-dim instance.
    for case in 0..60 {
        let (n, d) = if case == 0 { (16, 8) } else { (2 + rng.index(15), 1 + rng.index(8)) };
        let proj = ProjectionSet::sample(1 + rng.index(10), d, &mut rng).unwrap();
        let x = random_matrix(n, d, 1.0, 0.0, &mut rng);
        let y = random_matrix(n, d, 1.5, 0.5, &mut rng);
        let g = swd_grad(&x, &y, &proj).unwrap();
        let fd = numeric_grad(x.as_slice(), |p| swd(&Matrix::from_vec(n, d, p.to_vec()).unwrap(), &y, &proj).unwrap().value);
        track(0, rel_err(g.grad.as_slice(), &fd), case)?;
    }

    // One affine layer against a random linear read-out.
    for case in 0..60 {
        let (i, o, n) = (1 + rng.index(6), 1 + rng.index(6), 1 + rng.index(8));
        let layer = Dense::init(i, o, &mut rng);
        let x = random_matrix(n, i, 1.0, 0.0, &mut rng);
        let r = random_matrix(n, o, 1.0, 0.0, &mut rng);
        let readout = |m: &Matrix| m.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        let (lg, gin) = layer.backward(&x, &r).unwrap();
        let fd_w = numeric_grad(layer.weight.as_slice(), |p| {
            let l = Dense { weight: Matrix::from_vec(o, i, p.to_vec()).unwrap(), bias: layer.bias.clone() };
            readout(&l.forward(&x).unwrap())
        });
        let fd_b = numeric_grad(&layer.bias, |p| {
            let l = Dense { weight: layer.weight.clone(), bias: p.to_vec() };
            readout(&l.forward(&x).unwrap())
        });
        let fd_x = numeric_grad(x.as_slice(), |p| readout(&layer.forward(&Matrix::from_vec(n, i, p.to_vec()).unwrap()).unwrap()));
        track(1, rel_err(&[lg.weight.as_slice(), &lg.bias, gin.as_slice()].concat(), &[fd_w, fd_b, fd_x].concat()), case)?;
    }

    // Encoder w.r.t. every parameter and its input.
    let mut rejected = 0;
    for case in 0..60 {
        let (enc, x, r) = smooth_instance(&mut rng, 6);
        rejected += r;
        let (n, d_in) = (x.rows(), x.cols());
        let r = random_matrix(n, enc.latent_dim(), 1.0, 0.0, &mut rng);
        let readout = |m: &Matrix| m.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum::<f64>();
        let trace = enc.forward(&x).unwrap();
        let g = enc.backward(&trace, &r).unwrap();
        let flat = flat_params(&enc);
        let fd_p = numeric_grad(&flat, |p| readout(&with_params(&enc, p).encode(&x).unwrap()));
        let fd_x = numeric_grad(x.as_slice(), |p| readout(&enc.encode(&Matrix::from_vec(n, d_in, p.to_vec()).unwrap()).unwrap()));
        track(2, rel_err(&[flat_encoder_grads(&g), g.input.as_slice().to_vec()].concat(), &[fd_p, fd_x].concat()), case)?;
    }

    // Classifier with softmax cross-entropy.
    for case in 0..60 {
        let (latent, classes, n) = (1 + rng.index(6), 2 + rng.index(4), 1 + rng.index(8));
        let arch = Architecture::new(1, vec![], latent, classes);
        let clf = Classifier::init(&arch, &mut rng);
        let h = random_matrix(n, latent, 1.0, 0.0, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| rng.index(classes)).collect();
        let loss = |c: &Classifier, h: &Matrix| cross_entropy(&softmax_rows(&c.logits(h).unwrap()), &y).unwrap().loss;
        let ce = cross_entropy(&softmax_rows(&clf.logits(&h).unwrap()), &y).unwrap();
        let (lg, gin) = clf.layer.backward(&h, &ce.grad_logits).unwrap();
        let mut flat: Vec<f64> = clf.layer.weight.as_slice().to_vec();
        flat.extend(&clf.layer.bias);
        let fd_p = numeric_grad(&flat, |p| {
            let mut c = clf.clone();
            let w = c.layer.weight.as_slice().len();
            c.layer.weight.as_mut_slice().copy_from_slice(&p[..w]);
            c.layer.bias.copy_from_slice(&p[w..]);
            loss(&c, &h)
        });
        let fd_h = numeric_grad(h.as_slice(), |p| loss(&clf, &Matrix::from_vec(n, latent, p.to_vec()).unwrap()));
        track(3, rel_err(&[lg.weight.as_slice(), &lg.bias, gin.as_slice()].concat(), &[fd_p, fd_h].concat()), case)?;
    }

    // Training loss through encoder and classifier.
    for case in 0..60 {
        let (enc, x, r) = smooth_instance(&mut rng, 6);
        rejected += r;
        let (n, d_in) = (x.rows(), x.cols());
        let arch = Architecture::new(d_in, vec![], enc.latent_dim(), 3);
        let clf = Classifier::init(&arch, &mut rng);
        let y: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
        let trace = enc.forward(&x).unwrap();
        let ce = cross_entropy(&softmax_rows(&clf.logits(trace.output()).unwrap()), &y).unwrap();
        let (_, grad_h) = clf.layer.backward(trace.output(), &ce.grad_logits).unwrap();
        let g = enc.backward(&trace, &grad_h).unwrap();
        let fd = numeric_grad(&flat_params(&enc), |p| {
            let z = with_params(&enc, p).encode(&x).unwrap();
            cross_entropy(&softmax_rows(&clf.logits(&z).unwrap()), &y).unwrap().loss
        });
        track(4, rel_err(&flat_encoder_grads(&g), &fd), case)?;
    }

    // Alignment objective through the encoder.
    for case in 0..60 {
        let (enc, x, r) = smooth_instance(&mut rng, 10);
        rejected += r;
        let n = x.rows();
        let reference = random_matrix(n, enc.latent_dim(), 0.8, 0.6, &mut rng);
        let proj = ProjectionSet::sample(1 + rng.index(8), enc.latent_dim(), &mut rng).unwrap();
        let trace = enc.forward(&x).unwrap();
        let sg = swd_grad(trace.output(), &reference, &proj).unwrap();
        let g = enc.backward(&trace, &sg.grad).unwrap();
        let fd = numeric_grad(&flat_params(&enc), |p| swd(&with_params(&enc, p).encode(&x).unwrap(), &reference, &proj).unwrap().value);
        track(5, rel_err(&flat_encoder_grads(&g), &fd), case)?;
    }

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    let summary: Vec<String> = labels.iter().zip(worst).map(|(l, w)| format!("{l} {w:.1e}")).collect();
    Ok(format!(
        "60 instances each, worst relative error: {}; {rejected} draws near a ReLU kink redrawn; {elapsed:.2?}",
        summary.join(", ")
    ))
}

// 5. Ensemble risk against the weighted member risk.

fn criterion_5(runs: &Runs) -> Check {
    // Hand case: one sample, true-class probabilities 0.5 and 0.1.
    let p1 = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
    let p2 = Matrix::from_rows(&[[0.1, 0.9]]).unwrap();
    let hand = jensen_from_probs(&[p1, p2], &[0.5, 0.5], &[0]).unwrap();
    ensure((hand.ensemble_risk - 0.3f64.ln().abs()).abs() < 1e-12, || format!("hand lhs {}", hand.ensemble_risk))?;
    ensure((hand.weighted_member_risk - 0.5 * (0.5f64.ln().abs() + 0.1f64.ln().abs())).abs() < 1e-12, || format!("hand rhs {}", hand.weighted_member_risk))?;

    let mut rng = Rng::new(5005);
    let mut equality_gap: f64 = 0.0;
    for case in 0..1000 {
        let (k, c, n) = (1 + rng.index(5), 2 + rng.index(5), 1 + rng.index(50));
        let probs: Vec<Matrix> = (0..k).map(|_| softmax_rows(&random_matrix(n, c, 3.0, 0.0, &mut rng))).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.01, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.index(c)).collect();
        let j = jensen_from_probs(&probs, &w, &y).unwrap();
        ensure(j.holds(1e-9), || format!("case {case}: {} > {}", j.ensemble_risk, j.weighted_member_risk))?;
        let same = vec![probs[0].clone(); k];
        let j = jensen_from_probs(&same, &w, &y).unwrap();
        equality_gap = equality_gap.max((j.ensemble_risk - j.weighted_member_risk).abs());
    }
    ensure(equality_gap < 1e-12, || format!("identical members differ by {equality_gap:e}"))?;

    let (smuda, _) = runs.smuda();
    let evals = [
        ("adapted", runs.eval(smuda)),
        ("source-only", runs.eval_source_only(smuda)),
        ("direct", runs.eval(runs.direct())),
    ];
    for (name, e) in &evals {
        ensure(e.jensen.holds(1e-9), || format!("{name} run: {} > {}", e.jensen.ensemble_risk, e.jensen.weighted_member_risk))?;
    }
    Ok(format!(
        "1000 random ensembles hold, identical members equal within {equality_gap:.1e}, 3 pipeline evaluations hold"
    ))
}

// 6. Mixing weights.

fn criterion_6() -> Check {
    let hand = compute_weights(&[1.5, 4.0], &[0.5, 2.0], WeightStrategy::Swd).unwrap();
    ensure((hand[0] - 0.75).abs() < 1e-12 && (hand[1] - 0.25).abs() < 1e-12, || format!("sums (2, 6) gave {hand:?}"))?;

    let mut rng = Rng::new(6006);
    let mut worst_scale: f64 = 0.0;
    for case in 0..1000 {
        let k = 1 + rng.index(8);
        let dt: Vec<f64> = (0..k).map(|_| rng.uniform_range(1e-4, 10.0)).collect();
        let ds: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.0, 2.0)).collect();
        let w = compute_weights(&dt, &ds, WeightStrategy::Swd).unwrap();
        let sum: f64 = w.iter().sum();
        ensure((sum - 1.0).abs() < 1e-9, || format!("case {case}: sum {sum}"))?;
        ensure(w.iter().all(|&v| v > 0.0), || format!("case {case}: non-positive weight {w:?}"))?;
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = compute_weights(
                &dt.iter().map(|v| v * c).collect::<Vec<_>>(),
                &ds.iter().map(|v| v * c).collect::<Vec<_>>(),
                WeightStrategy::Swd,
            )
            .unwrap();
            for (a, b) in w.iter().zip(&scaled) {
                worst_scale = worst_scale.max((a - b).abs());
            }
        }
    }
    ensure(worst_scale < 1e-12, || format!("scaling changed weights by {worst_scale:e}"))?;
    Ok(format!("(2, 6) -> {hand:?}; 1000 random cases on the simplex; scaling moves weights by at most {worst_scale:.1e}"))
}

// 7. End-to-end synthetic adaptation.

/// Frozen results of the pinned run: ensemble accuracy after adaptation,
/// source-only ensemble accuracy, adapted member accuracies, and the
/// initial and final target distances per source.
struct Pinned {
    adapted: f64,
    source_only: f64,
    members: [f64; 3],
    d_initial: [f64; 3],
    d_final: [f64; 3],
}

const PINNED: Pinned = Pinned {
    adapted: 0.950,
    source_only: 0.886,
    members: [0.488, 0.584, 0.966],
    d_initial: [0.2007534851780935, 0.121808825948713, 0.045683811955381994],
    d_final: [0.03709587304141906, 0.031864991549272435, 0.014826821331590676],
};

fn criterion_7(runs: &Runs) -> Check {
    let (out, elapsed) = runs.smuda();
    let adapted = runs.eval(out);
    let source_only = runs.eval_source_only(out);
    let d_initial: Vec<f64> = out.report.sources.iter().map(|s| s.d_target_initial).collect();
    let d_final: Vec<f64> = out.report.sources.iter().map(|s| s.d_target_final).collect();
    let best = adapted.member_accuracy.iter().copied().fold(0.0, f64::max);
    let observed = format!(
        "adapted {:.3}, source-only {:.3}, members {:?}, D initial {:?}, D final {:?}, {elapsed:.1?}",
        adapted.accuracy, source_only.accuracy, adapted.member_accuracy, d_initial, d_final
    );

    let mut failures = Vec::new();
    for (k, (i, f)) in d_initial.iter().zip(&d_final).enumerate() {
        if !(*f < 0.5 * i) {
            failures.push(format!("(a) source {k}: final D {f:.4} not below half of {i:.4}"));
        }
    }
    if !(adapted.accuracy >= source_only.accuracy + 0.05) {
        failures.push(format!("(b) adapted {:.3} < source-only {:.3} + 0.05", adapted.accuracy, source_only.accuracy));
    }
    if !(adapted.accuracy >= best - 0.01) {
        failures.push(format!("(c) ensemble {:.3} < best member {best:.3} - 0.01", adapted.accuracy));
    }
    if *elapsed >= Duration::from_secs(120) {
        failures.push(format!("runtime {elapsed:?}"));
    }

    // Regression numbers: accuracies are multiples of 1/n, distances are
    // compared relatively.
    let close = |a: f64, b: f64, rel: f64| (a - b).abs() <= rel * b.abs().max(1e-12);
    let pinned_ok = close(adapted.accuracy, PINNED.adapted, 1e-9)
        && close(source_only.accuracy, PINNED.source_only, 1e-9)
        && adapted.member_accuracy.iter().zip(PINNED.members).all(|(a, b)| close(*a, b, 1e-9))
        && d_initial.iter().zip(PINNED.d_initial).all(|(a, b)| close(*a, b, 1e-6))
        && d_final.iter().zip(PINNED.d_final).all(|(a, b)| close(*a, b, 1e-6));
    if !pinned_ok {
        failures.push("differs from frozen regression numbers".to_string());
    }

    if failures.is_empty() {
        Ok(observed)
    } else {
        Err(format!("{}; observed {observed}", failures.join("; ")))
    }
}

// 8. Direct alignment parity.

fn criterion_8(runs: &Runs) -> Check {
    let a = runs.eval(&runs.smuda().0).accuracy;
    let d = runs.eval(runs.direct()).accuracy;
    let gap = (a - d).abs();
    let msg = format!("prototype path {a:.3}, direct {d:.3}, gap {gap:.3}");
    ensure(gap <= 0.03 + 1e-12, || msg.clone())?;
    Ok(msg)
}

// 9. Privacy and transport.

fn criterion_9(runs: &Runs) -> Check {
    // Same seed, isolated nodes: identical results.
    let (local, _) = runs.smuda();
    let dist = run_distributed(runs.domains.sources.clone(), &runs.domains.target.features, &runs.config).map_err(|e| e.to_string())?;
    ensure(dist.run.report == local.report, || "distributed report differs from local".into())?;
    ensure(dist.run.ensemble.to_bytes() == local.ensemble.to_bytes(), || "distributed ensemble differs from local".into())?;
    let mut all_data = runs.domains.sources.clone();
    all_data.push(runs.domains.target.clone());
    let audit = audit_privacy(&dist.transcript, &all_data);
    ensure(audit.passed(), || format!("benchmark transcript flagged: {:?} {:?}", audit.matches.first(), audit.schema_violations))?;

    // Canaries planted in every source.
    let mut planted = blobs3(3, 200).generate().unwrap();
    for (i, s) in planted.sources.iter_mut().enumerate() {
        s.plant_canary(i as u8);
    }
    let cfg = quick_config(3);
    let clean = run_distributed(planted.sources.clone(), &planted.target.features, &cfg).map_err(|e| e.to_string())?;
    let clean_audit = audit_privacy(&clean.transcript, &planted.sources);
    ensure(clean_audit.passed() && clean_audit.canaries == 3, || format!("canary run flagged or canaries missing: {clean_audit:?}"))?;

    let mut leak_locations = Vec::new();
    for fixture in [LeakFixture::ScalarName, LeakFixture::ModelBias] {
        let leaky = run_distributed_leaky(planted.sources.clone(), &planted.target.features, &cfg, fixture).map_err(|e| e.to_string())?;
        let report = audit_privacy(&leaky.transcript, &planted.sources);
        ensure(!report.passed(), || format!("{fixture:?} leak not detected"))?;
        let m = report.matches.first().ok_or_else(|| format!("{fixture:?}: no match location"))?;
        leak_locations.push(format!("{fixture:?} at message {} byte {}", m.entry, m.offset));
    }

    // Bytes per source do not grow with the data.
    let mut per_source = Vec::new();
    for samples in [100, 1000] {
        let d = blobs3(5, samples).generate().unwrap();
        let out = run_distributed(d.sources, &d.target.features, &quick_config(5)).map_err(|e| e.to_string())?;
        ensure(out.transcript.count_kind(PayloadKind::ModelParameters) == 3, || "expected one model per source".into())?;
        per_source.push((0..3).map(|k| out.transcript.bytes_for(NodeId::source(k))).collect::<Vec<_>>());
    }
    ensure(per_source[0] == per_source[1], || format!("bytes per source {:?} vs {:?}", per_source[0], per_source[1]))?;

    Ok(format!(
        "local == distributed ({} messages, {} bytes); audits pass with {} rows checked; leaks caught: {}; bytes per source {:?} at 100 and 1000 samples",
        dist.transcript.len(),
        dist.transcript.total_bytes(),
        audit.rows_checked,
        leak_locations.join(", "),
        per_source[0]
    ))
}

// 10. Sampling-distribution rule.

/// `n` target rows, the first `confident` of them predicted with
/// probability 0.95, the rest spread out, labels cycling through
/// `pattern`.
fn confidence_profile(n: usize, confident: usize, pattern: &[usize]) -> Matrix {
    let rows: Vec<[f64; 4]> = (0..n)
        .map(|i| {
            let c = pattern[i % pattern.len()];
            let (top, rest) = if i < confident { (0.95, 0.05 / 3.0) } else { (0.4, 0.2) };
            let mut r = [rest; 4];
            r[c] = top;
            r
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn criterion_10() -> Check {
    let config = PseudoConfig::default();
    let present = [0, 1, 2, 3];
    let pattern = [0, 0, 0, 0, 1, 1, 1, 2, 2, 3];
    let mut seen = Vec::new();
    for (fraction, expect) in [(0.0, SamplingMode::Uniform), (0.7, SamplingMode::Uniform), (1.0, SamplingMode::Pseudo)] {
        let n = 100;
        let probs = confidence_profile(n, (fraction * n as f64) as usize, &pattern);
        let d = decide_from_probs(&probs, &present, &config).map_err(|e| e.to_string())?;
        ensure(d.mode == expect, || format!("{fraction}: chose {:?}", d.mode))?;
        ensure((d.high_confidence_fraction - fraction).abs() < 1e-12, || format!("{fraction}: measured {}", d.high_confidence_fraction))?;
        let want: Vec<f64> = match expect {
            SamplingMode::Uniform => vec![0.25; 4],
            SamplingMode::Pseudo => vec![0.4, 0.3, 0.2, 0.1],
        };
        ensure(d.distribution.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12), || format!("{fraction}: distribution {:?}", d.distribution))?;
        seen.push(format!("{:.0}% -> {}", fraction * 100.0, d.mode.as_str()));
    }
    Ok(seen.join(", "))
}

// 11. Bound diagnostics.

fn criterion_11(runs: &Runs) -> Check {
    let hand = (2.0 * 20.0f64.ln()).sqrt() * (2.0 / 1000.0f64.sqrt());
    let term = confidence_term(0.05, 1.0, 1000.0, 1000.0).unwrap();
    ensure((term - hand).abs() < 1e-9, || format!("confidence term {term} vs hand {hand}"))?;
    ensure((term - 0.1548).abs() < 5e-5, || format!("confidence term {term}"))?;
    ensure(confidence_term(1.0, 1.0, 10.0, 10.0).unwrap() == 0.0, || "xi = 1 should zero the term".into())?;

    let (out, _) = runs.smuda();
    let eval = runs.eval(out);
    let report = bound_report(&out.report.bound_inputs(), 0.05, 1.0, Some(eval.risk)).map_err(|e| e.to_string())?;
    for s in &report.sources {
        let n = out.report.sources.iter().find(|r| r.name == s.name).unwrap().source_count as f64;
        let m = out.report.target_count as f64;
        let hand = (2.0 * 20.0f64.ln()).sqrt() * (1.0 / n.sqrt() + 1.0 / m.sqrt());
        ensure((s.confidence - hand).abs() < 1e-9, || format!("{}: confidence {} vs {hand}", s.name, s.confidence))?;
    }
    let msg = format!(
        "target risk {:.4} vs right-hand side {:.4} (excess {:.4}); confidence term {term:.6}",
        eval.risk,
        report.weighted_rhs,
        report.slack.unwrap_or(0.0)
    );
    ensure(report.holds() == Some(true), || msg.clone())?;
    Ok(msg)
}

type Criterion<'a> = (u32, &'static str, Box<dyn Fn() -> Check + 'a>);

fn main() {
    let runs = Runs::new();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "prototype moments match a two-pass oracle", Box::new(criterion_1)),
        (2, "sliced distance equals exact 1D transport", Box::new(criterion_2)),
        (3, "metric properties under fixed projections", Box::new(criterion_3)),
        (4, "analytic gradients match finite differences", Box::new(criterion_4)),
        (5, "ensemble risk within weighted member risk", Box::new(|| criterion_5(&runs))),
        (6, "mixing weights contract", Box::new(criterion_6)),
        (7, "synthetic benchmark adaptation", Box::new(|| criterion_7(&runs))),
        (8, "direct alignment parity", Box::new(|| criterion_8(&runs))),
        (9, "privacy, isolation and transport size", Box::new(|| criterion_9(&runs))),
        (10, "sampling-distribution rule", Box::new(criterion_10)),
        (11, "bound diagnostics", Box::new(|| criterion_11(&runs))),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (id, title, check) in &criteria {
        if only.is_some_and(|o| o != *id) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {title}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {title}: {detail}");
                failed.push(*id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
