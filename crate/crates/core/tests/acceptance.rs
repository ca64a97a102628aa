//! Acceptance checks. Each test writes one `criterion N: PASS|FAIL` line to
//! stderr (outside the test harness's capture) before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qdiff::cli::artifacts::Manifest;
use qdiff::cli::commands::{execute, replay, CommandKind};
use qdiff::cli::config::{Config, DataConfig, DataFormat, ModelConfig, OptimizerConfig, RunConfig, ScheduleConfig};
use qdiff::data::load_idx;
use qdiff::diffusion::{bottom_mask, clipped_noise_mse, inpaint, sample, train, DiffusionSchedule, TrainOptions};
use qdiff::embed::amplitude_embed;
use qdiff::grad::{GradMethod, ParamStore};
use qdiff::image::ImageTensor;
use qdiff::metrics::{frechet_distance, frechet_gaussian, psnr, ssim};
use qdiff::models::{Denoiser, QDense, QDenseConfig};
use qdiff::qstate::{apply_circuit, circuit_unitary, Angle, CircuitBuilder, GateKind, StateVector};
use qdiff::uss::{compose_diffusion_unitary, iterative_sample, uss_sample, UssModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: impl std::fmt::Display) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {status} - {detail}");
}

fn angles(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
}

fn random_state(rng: &mut impl Rng, n_qubits: usize) -> StateVector {
    let amps = (0..1 << n_qubits).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    StateVector::normalized(amps).unwrap()
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_1_simulator_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_state, mut worst_unitary) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let mut b = CircuitBuilder::new(n);
        for _ in 0..rng.gen_range(1..=4) {
            for q in 0..n {
                let kind = [GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::Rot][rng.gen_range(0..4)];
                let slots = (0..kind.n_angles())
                    .map(|_| if rng.gen_bool(0.7) { Angle::Param } else { Angle::Fixed(rng.gen_range(-3.0..3.0)) })
                    .collect();
                b.push(kind, vec![q], slots);
            }
            if n > 1 {
                for _ in 0..rng.gen_range(0..=n) {
                    let c = rng.gen_range(0..n);
                    let t = (c + rng.gen_range(1..n)) % n;
                    b.cnot(c, t);
                }
            }
            b.end_layer();
        }
        let circuit = b.build().unwrap();
        let params = angles(&mut rng, circuit.n_params());
        let psi = random_state(&mut rng, n);
        let u = circuit_unitary(&circuit, &params).unwrap();
        let direct = apply_circuit(&psi, &circuit, &params).unwrap();
        let via_u = u.apply_state(&psi).unwrap();
        worst_state = worst_state.max(max_diff(direct.amplitudes(), via_u.amplitudes()));
        worst_unitary = worst_unitary.max(u.unitarity_error());
    }
    let elapsed = start.elapsed();
    let pass = worst_state <= 1e-10 && worst_unitary <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        1,
        pass,
        format!("100 circuits: state diff {worst_state:.2e}, U†U−I {worst_unitary:.2e}, {:.2}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_image_qubits = rng.gen_range(2..=4);
        let guided = rng.gen_bool(0.5);
        let n_layers = rng.gen_range(1..=4);
        let n_reuploads = if guided { rng.gen_range(0..n_layers.min(3)) } else { 0 };
        let cfg = QDenseConfig { n_image_qubits, n_layers, guided, ancilla: false, n_reuploads, n_classes: 2 };
        let model = QDense::new(cfg).unwrap();
        let (hgt, wid) = (2, (1 << n_image_qubits) / 2);
        let x = ImageTensor::gray(hgt, wid, (0..hgt * wid).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
        let target = x.with_values((0..hgt * wid).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let label = guided.then(|| rng.gen_range(0..2));
        let params = angles(&mut rng, model.n_params());
        let (_, grad) = model.mse_grad(&params, &x, label, &target, GradMethod::ParameterShift).unwrap();
        let loss = |p: &[f64]| {
            let out = model.forward(p, &x, label).unwrap();
            out.values().iter().zip(target.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
        };
        let mut fd = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p);
            p[i] -= 2.0 * h;
            fd.push((up - loss(&p)) / (2.0 * h));
        }
        let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let err = grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-5 && elapsed < Duration::from_secs(60);
    report(2, pass, format!("20 Q-Dense losses: max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_3_parameter_counts() {
    let qdense = QDense::new(QDenseConfig {
        n_image_qubits: 6,
        n_layers: 47,
        guided: true,
        ancilla: false,
        n_reuploads: 0,
        n_classes: 2,
    })
    .unwrap();
    let uss = UssModel::new(QDenseConfig {
        n_image_qubits: 6,
        n_layers: 56,
        guided: false,
        ancilla: false,
        n_reuploads: 0,
        n_classes: 2,
    })
    .unwrap();
    let qubits = qdense.config().n_qubits();
    let pass = qubits == 7 && qdense.n_params() == 987 && uss.n_params() == 1008;
    report(
        3,
        pass,
        format!("Q-Dense 47 layers/{qubits} qubits: {}, USS 56 layers/6 qubits: {}", qdense.n_params(), uss.n_params()),
    );
    assert!(pass);
}

#[test]
fn criterion_4_uss_equivalence() {
    let model = UssModel::new(QDenseConfig {
        n_image_qubits: 6,
        n_layers: 8,
        guided: false,
        ancilla: false,
        n_reuploads: 0,
        n_classes: 2,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let params = angles(&mut rng, model.n_params());
    let circuit = model.circuit(None);
    let t0 = Instant::now();
    compose_diffusion_unitary(circuit, &params, 1).unwrap();
    let compose_time = t0.elapsed();
    let opts = model.sample_options(8, 8, None).unwrap();
    let mut worst = 0.0f64;
    for tau in [1, 5, 10] {
        let u = model.compose(&params, tau, None).unwrap();
        for _ in 0..5 {
            let psi = random_state(&mut rng, 6);
            let mut s = psi.clone();
            for _ in 0..tau {
                s = apply_circuit(&s, circuit, &params).unwrap();
            }
            worst = worst.max(max_diff(u.apply_state(&psi).unwrap().amplitudes(), s.amplitudes()));
        }
        let single = uss_sample(&u, 4, 9, &opts).unwrap();
        let iterative = iterative_sample(circuit, &params, tau, 4, 9, &opts).unwrap();
        for (a, b) in single.iter().zip(&iterative) {
            let d = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    let pass = worst <= 1e-9 && compose_time < Duration::from_secs(5);
    report(
        4,
        pass,
        format!("tau 1/5/10: max diff {worst:.2e}; compose tau=1 in {:.4}s", compose_time.as_secs_f64()),
    );
    assert!(pass);
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Smoke {
    model: QDense,
    params: Vec<f64>,
    untrained: Vec<f64>,
    losses: Vec<f64>,
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    test: Vec<(ImageTensor, usize)>,
    elapsed: Duration,
}

const SMOKE_LR: f64 = 0.00097;

/// The guided Q-Dense smoke model, trained once and shared.
fn smoke() -> &'static Smoke {
    static SMOKE: OnceLock<Smoke> = OnceLock::new();
    SMOKE.get_or_init(|| {
        let (all, all_labels) =
            load_idx(fixture("digits01-8x8-images.idx"), fixture("digits01-8x8-labels.idx")).unwrap();
        let images = all[..64].to_vec();
        let labels = all_labels[..64].to_vec();
        let test = all[64..114].iter().cloned().zip(all_labels[64..114].iter().copied()).collect();
        let model = QDense::new(QDenseConfig {
            n_image_qubits: 6,
            n_layers: 47,
            guided: true,
            ancilla: false,
            n_reuploads: 0,
            n_classes: 2,
        })
        .unwrap();
        let untrained = angles(&mut ChaCha8Rng::seed_from_u64(1), model.n_params());
        let mut store = ParamStore::new(untrained.clone());
        let opts = TrainOptions { epochs: 30, batch_size: 20, lr: SMOKE_LR, method: GradMethod::ParameterShift };
        let schedule = DiffusionSchedule::default();
        let start = Instant::now();
        let history = train(
            &model,
            &mut store,
            &images,
            Some(&labels),
            &schedule,
            &opts,
            &mut ChaCha8Rng::seed_from_u64(7),
            |_, _| {},
        )
        .unwrap();
        let elapsed = start.elapsed();
        let losses = history.iter().map(|s| s.loss).collect();
        Smoke { model, params: store.values, untrained, losses, images, labels, test, elapsed }
    })
}

fn class_mean(images: &[ImageTensor], labels: &[usize], c: usize) -> ImageTensor {
    let members: Vec<&ImageTensor> = images.iter().zip(labels).filter(|(_, l)| **l == c).map(|(i, _)| i).collect();
    let mut mean = vec![0.0; members[0].len()];
    for im in &members {
        for (a, b) in mean.iter_mut().zip(im.values()) {
            *a += b / members.len() as f64;
        }
    }
    members[0].with_values(mean).unwrap()
}

/// Mean SSIM of final samples and of their starting noise against the class
/// means, for (min-max rescaled, raw) samples.
fn sample_ssim(s: &Smoke, params: &[f64]) -> ((f64, f64), (f64, f64)) {
    let schedule = DiffusionSchedule::default();
    let (mut rescaled, mut raw, mut count) = ((0.0, 0.0), (0.0, 0.0), 0.0);
    for c in 0..2 {
        let mean = class_mean(&s.images, &s.labels, c);
        for tr in sample(&s.model, params, &schedule, (1, 8, 8), 20, Some(c), 99 + c as u64).unwrap() {
            let (noise, last) = (&tr.frames[0], tr.final_image());
            rescaled.0 += ssim(&last.minmax_rescaled(), &mean, 1.0).unwrap();
            rescaled.1 += ssim(&noise.minmax_rescaled(), &mean, 1.0).unwrap();
            raw.0 += ssim(last, &mean, 1.0).unwrap();
            raw.1 += ssim(noise, &mean, 1.0).unwrap();
            count += 1.0;
        }
    }
    ((rescaled.0 / count, rescaled.1 / count), (raw.0 / count, raw.1 / count))
}

#[test]
fn criterion_5_training_smoke() {
    let s = smoke();
    let (first, last) = (s.losses[0], *s.losses.last().unwrap());
    let drop = 1.0 - last / first;
    let ((sample_ssim_v, noise_ssim), (raw_ssim, raw_noise)) = sample_ssim(s, &s.params);
    let ((untrained_ssim, _), _) = sample_ssim(s, &s.untrained);
    let loss_ok = drop >= 0.4;
    let ssim_ok = sample_ssim_v - noise_ssim >= 0.1;
    let time_ok = s.elapsed < Duration::from_secs(30 * 60);
    report(
        5,
        loss_ok && ssim_ok && time_ok,
        format!(
            "loss epoch 1 {first:.3} -> epoch 30 {last:.3} (drop {:.1}%, need 40%); \
             SSIM rescaled samples {sample_ssim_v:.3} vs noise {noise_ssim:.3} (untrained {untrained_ssim:.3}); \
             raw samples {raw_ssim:.3} vs noise {raw_noise:.3}; trained in {:.0}s",
            100.0 * drop,
            s.elapsed.as_secs_f64()
        ),
    );
    assert!(ssim_ok, "SSIM margin {:.3}", sample_ssim_v - noise_ssim);
    assert!(time_ok);
    assert!(loss_ok, "summed loss dropped {:.1}% (epoch 1 {first:.3}, epoch 30 {last:.3})", 100.0 * drop);
}

fn inpaint_wins(s: &Smoke, params: &[f64]) -> (usize, f64, f64) {
    let schedule = DiffusionSchedule::default();
    let known = bottom_mask(8, 8, 4);
    let (mut wins, mut mse, mut base) = (0, 0.0, 0.0);
    for (i, (x, l)) in s.test.iter().enumerate() {
        let r = inpaint(&s.model, params, x, &known, &schedule, true, Some(*l), 500 + i as u64).unwrap();
        let unknown: Vec<f64> = x.values().iter().zip(&known).filter(|(_, k)| !**k).map(|(v, _)| *v).collect();
        let b = clipped_noise_mse(&unknown);
        wins += usize::from(r.unknown_mse < b);
        mse += r.unknown_mse;
        base += b;
    }
    let n = s.test.len() as f64;
    (wins, mse / n, base / n)
}

#[test]
fn criterion_6_metric_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let im = |rng: &mut ChaCha8Rng| ImageTensor::gray(8, 8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let x = im(&mut rng);
    let self_ssim = ssim(&x, &x, 1.0).unwrap();
    let self_psnr = psnr(&x, &x, 1.0).unwrap();
    let set: Vec<ImageTensor> = (0..40).map(|_| im(&mut rng)).collect();
    let self_fd = frechet_distance(&set, &set, 8).unwrap();
    let d = 5;
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
    let mu_a = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
    let mu_b = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
    let gaussian = frechet_gaussian(&mu_a, &cov, &mu_b, &cov).unwrap();
    let expected: f64 = mu_a.iter().zip(mu_b.iter()).map(|(p, q)| (p - q).powi(2)).sum();
    let pass = (self_ssim - 1.0).abs() < 1e-12
        && self_psnr == 100.0
        && self_fd <= 1e-8
        && (gaussian - expected).abs() <= 1e-6;
    report(
        6,
        pass,
        format!(
            "ssim(x,x) {self_ssim}, psnr(x,x) {self_psnr} dB, frechet(a,a) {self_fd:.1e}, \
             equal-covariance {gaussian:.9} vs |dmu|^2 {expected:.9}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_embedding_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n_qubits = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=1usize << n_qubits);
        let pixels: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sq: f64 = pixels.iter().map(|p| p * p).sum();
        let probs = amplitude_embed(&pixels, n_qubits).unwrap().state.probabilities();
        for (i, p) in probs.iter().enumerate() {
            let expected = pixels.get(i).map_or(0.0, |v| v * v / sq);
            worst = worst.max((p - expected).abs());
        }
    }
    let pass = worst <= 1e-12;
    report(7, pass, format!("1000 images: max deviation {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_8_inpainting() {
    let s = smoke();
    let (wins, mse, base) = inpaint_wins(s, &s.params);
    let (untrained_wins, _, _) = inpaint_wins(s, &s.untrained);
    let n = s.test.len();
    let pass = wins * 5 >= n * 4;
    report(
        8,
        pass,
        format!(
            "{wins}/{n} below the fresh-noise baseline (mean MSE {mse:.4} vs {base:.4}); untrained model: {untrained_wins}/{n}"
        ),
    );
    assert!(pass);
}

fn small_config(model: ModelConfig, out: PathBuf) -> Config {
    Config {
        model,
        schedule: ScheduleConfig { tau: 4, ..ScheduleConfig::default() },
        data: DataConfig {
            images: fixture("digits01-8x8-images.idx"),
            labels: Some(fixture("digits01-8x8-labels.idx")),
            format: DataFormat::Idx,
            size: 8,
            classes: None,
            offset: 0,
            limit: Some(40),
        },
        optimizer: OptimizerConfig { lr: 0.01, batch_size: 10, epochs: 2, method: GradMethod::Adjoint, wrap: None },
        run: RunConfig { seed: 3, out_dir: out, n_samples: 10, feature_dim: 4, mask_rows: Some(4), ..RunConfig::default() },
    }
}

#[test]
fn criterion_9_determinism() {
    let root = tempfile::tempdir().unwrap();
    let dense = QDenseConfig { n_image_qubits: 6, n_layers: 6, guided: true, ancilla: false, n_reuploads: 0, n_classes: 2 };
    let uss = QDenseConfig { guided: false, ancilla: true, ..dense.clone() };
    let mut manifests: Vec<PathBuf> = Vec::new();
    for (name, model, commands) in [
        ("dense", ModelConfig::QDense(dense), &[CommandKind::Sample, CommandKind::Eval, CommandKind::Inpaint][..]),
        ("uss", ModelConfig::SingleSample(uss), &[CommandKind::Sample, CommandKind::Eval, CommandKind::Compose][..]),
    ] {
        let train_dir = root.path().join(name).join("train");
        let cfg = small_config(model, train_dir.clone());
        execute(CommandKind::Train, &cfg, None, &train_dir).unwrap();
        manifests.push(train_dir.join("manifest.toml"));
        let checkpoint = train_dir.join("checkpoint.bin");
        for &cmd in commands {
            let dir = root.path().join(name).join(cmd.name());
            execute(cmd, &cfg, Some(&checkpoint), &dir).unwrap();
            manifests.push(dir.join("manifest.toml"));
        }
    }
    let (mut files, mut mismatches) = (0, Vec::new());
    for m in &manifests {
        let recorded = Manifest::load(m).unwrap();
        let report = replay(m, &m.parent().unwrap().join("replay")).unwrap();
        files += report.outputs.len();
        if !report.matches() || recorded.outputs.is_empty() {
            mismatches.push(format!("{} ({})", recorded.command, m.display()));
        }
    }
    let pass = mismatches.is_empty();
    report(
        9,
        pass,
        format!("{} manifests replayed, {files} PNG/CSV/binary outputs bit-identical; mismatches: {mismatches:?}", manifests.len()),
    );
    assert!(pass);
}
