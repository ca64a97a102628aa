//! Unitary single sampling: the per-step circuit composed τ times into one
//! matrix, trained on complex states and sampled with one product per image.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{fit, item_rng, training_pair, DiffusionSchedule, EpochStats, TargetMode, TrainOptions, TrainingPair};
use crate::embed::{amplitude_embed, label_angle};
use crate::error::{Error, Result};
use crate::grad::{circuit_vjp, Cotangent, GradMethod, ParamStore};
use crate::image::ImageTensor;
use crate::models::{QDense, QDenseConfig};
use crate::qstate::{apply_circuit, circuit_unitary, CircuitSpec, Gate, StateVector, UnitaryMatrix};
use crate::vqc::marginal_probabilities;

/// Real part of the sampling noise: `N(0.4, 0.24)`.
pub const NOISE_RE: (f64, f64) = (0.4, 0.24);
/// Imaginary part of the sampling noise: `N(0, 0.14)`.
pub const NOISE_IM: (f64, f64) = (0.0, 0.14);

/// `U^τ` for `U = circuit_unitary(circuit, params)`.
pub fn compose_diffusion_unitary(circuit: &CircuitSpec, params: &[f64], tau: usize) -> Result<UnitaryMatrix> {
    circuit_unitary(circuit, params)?.pow(tau)
}

/// Mean over all entries of `|a_i − b_i|`.
pub fn state_mae(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("states of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64)
}

/// MAE between `predicted` and the amplitude embedding of `target_pixels`.
pub fn uss_loss(predicted: &StateVector, target_pixels: &[f64]) -> Result<f64> {
    let target = amplitude_embed(target_pixels, predicted.n_qubits())?;
    state_mae(predicted.amplitudes(), target.state.amplitudes())
}

/// `∂ MAE / ∂φ̄`; zero where the entries coincide.
fn mae_cotangent(predicted: &[Complex64], target: &[Complex64]) -> Vec<Complex64> {
    let d = predicted.len() as f64;
    predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let diff = p - t;
            let m = diff.norm();
            if m == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                diff / (2.0 * m * d)
            }
        })
        .collect()
}

/// Q-Dense circuit trained on post-circuit states instead of measurements.
#[derive(Debug, Clone)]
pub struct UssModel {
    dense: QDense,
}

impl UssModel {
    pub fn new(cfg: QDenseConfig) -> Result<Self> {
        Ok(Self { dense: QDense::new(cfg)? })
    }

    pub fn config(&self) -> &QDenseConfig {
        self.dense.config()
    }

    pub fn n_params(&self) -> usize {
        self.config().n_params()
    }

    /// Per-step circuit; guided models carry the label in their re-upload gates.
    pub fn circuit(&self, label: Option<usize>) -> &CircuitSpec {
        self.dense.circuit(label)
    }

    fn check_label(&self, label: Option<usize>) -> Result<()> {
        let cfg = self.config();
        match (cfg.guided, label) {
            (true, Some(l)) if l < cfg.n_classes => Ok(()),
            (true, Some(l)) => Err(Error::ClassOutOfRange { index: l, n_classes: cfg.n_classes }),
            (true, None) => Err(Error::InvalidArgument("guided model needs a class label".into())),
            (false, _) => Ok(()),
        }
    }

    /// Embeds pixels, with the ancilla (if any) in its label state.
    pub fn embed(&self, pixels: &[f64], label: Option<usize>) -> Result<StateVector> {
        Ok(self.dense.embed(pixels, label)?.state)
    }

    /// `U^τ` for the given label.
    pub fn compose(&self, params: &[f64], tau: usize, label: Option<usize>) -> Result<UnitaryMatrix> {
        self.check_label(label)?;
        compose_diffusion_unitary(self.circuit(label), params, tau)
    }

    /// Sampling options matching this model's qubit layout.
    pub fn sample_options(&self, height: usize, width: usize, label: Option<usize>) -> Result<UssSampleOptions> {
        self.check_label(label)?;
        let cfg = self.config();
        let label = match label.filter(|_| cfg.guided) {
            Some(l) => Some((l, cfg.n_classes)),
            None if cfg.ancilla => Some((0, 1)),
            None => None,
        };
        Ok(UssSampleOptions { height, width, n_image_qubits: cfg.n_image_qubits, label, shots: None })
    }

    /// MAE of one step `x_t → x_{t−1}` and its parameter gradient.
    pub fn loss_grad(&self, params: &[f64], pair: &TrainingPair, method: GradMethod) -> Result<(f64, Vec<f64>)> {
        let input = self.embed(pair.input.values(), pair.label)?;
        let target = self.embed(pair.target.values(), pair.label)?;
        let circuit = self.circuit(pair.label);
        let out = apply_circuit(&input, circuit, params)?;
        let loss = state_mae(out.amplitudes(), target.amplitudes())?;
        let cot = Cotangent::Amplitudes(mae_cotangent(out.amplitudes(), target.amplitudes()));
        let vjp = circuit_vjp(circuit, params, &input, &cot, method, false)?;
        Ok((loss, vjp.params))
    }

    pub fn loss(&self, params: &[f64], pair: &TrainingPair) -> Result<f64> {
        let input = self.embed(pair.input.values(), pair.label)?;
        let target = self.embed(pair.target.values(), pair.label)?;
        let out = apply_circuit(&input, self.circuit(pair.label), params)?;
        state_mae(out.amplitudes(), target.amplitudes())
    }
}

fn check_data_mode(schedule: &DiffusionSchedule) -> Result<()> {
    if schedule.target_mode() != TargetMode::Data {
        return Err(Error::InvalidArgument("single-sampling models train on data targets only".into()));
    }
    Ok(())
}

/// One Adam step on the summed MAE of a batch; item `i` uses stream `i` of `rng_seed`.
#[allow(clippy::too_many_arguments)]
pub fn uss_train_step(
    model: &UssModel,
    store: &ParamStore,
    batch: &[ImageTensor],
    labels: Option<&[usize]>,
    schedule: &DiffusionSchedule,
    lr: f64,
    rng_seed: u64,
    method: GradMethod,
) -> Result<(ParamStore, f64)> {
    check_data_mode(schedule)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let pairs = batch
        .iter()
        .enumerate()
        .map(|(i, x0)| training_pair(x0, labels.map(|l| l[i]), schedule, &mut item_rng(rng_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let parts = pairs
        .par_iter()
        .map(|p| model.loss_grad(&store.values, p, method))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.n_params()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {loss}")));
    }
    Ok((store.adam_step(&grad, lr)?, loss))
}

/// Mini-batch training; `store` should wrap with `Wrap::TwoPi` so that
/// remapping leaves the trained amplitudes (and their phase) untouched.
#[allow(clippy::too_many_arguments)]
pub fn train_uss<F>(
    model: &UssModel,
    store: &mut ParamStore,
    images: &[ImageTensor],
    labels: Option<&[usize]>,
    schedule: &DiffusionSchedule,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
    on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    F: FnMut(&EpochStats, &ParamStore),
{
    check_data_mode(schedule)?;
    let step = |s: &ParamStore, batch: &[ImageTensor], l: Option<&[usize]>, seed: u64| {
        uss_train_step(model, s, batch, l, schedule, opts.lr, seed, opts.method)
    };
    fit(store, images, labels, opts, rng, &step, on_epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UssSampleOptions {
    pub height: usize,
    pub width: usize,
    /// Qubits carrying the image; any further qubits are marginalized out.
    pub n_image_qubits: usize,
    /// `(class, n_classes)`: the noise covers the image qubits and the ancilla
    /// is prepared in the label state.
    pub label: Option<(usize, usize)>,
    /// Estimate probabilities from this many measurements instead of exactly.
    pub shots: Option<u64>,
}

/// Complex noise state with independent `N(0.4, 0.24)` real and `N(0, 0.14)`
/// imaginary parts, normalized.
pub fn noise_state(n_qubits: usize, rng: &mut impl Rng) -> Result<StateVector> {
    let re = Normal::new(NOISE_RE.0, NOISE_RE.1).expect("valid");
    let im = Normal::new(NOISE_IM.0, NOISE_IM.1).expect("valid");
    let amps = (0..1usize << n_qubits).map(|_| Complex64::new(re.sample(rng), im.sample(rng))).collect();
    StateVector::normalized(amps)
}

fn sample_input(dim: usize, opts: &UssSampleOptions, rng: &mut impl Rng) -> Result<StateVector> {
    let z = noise_state(opts.n_image_qubits, rng)?;
    let z = match opts.label {
        Some((c, n)) => {
            let ancilla = StateVector::zero(1)?.apply_gate(&Gate::rx(0, label_angle(c, n)?))?;
            z.tensor(&ancilla)?
        }
        None => z,
    };
    if z.dim() != dim {
        return Err(Error::Shape(format!("noise of dimension {} for a {dim}-dim operator", z.dim())));
    }
    Ok(z)
}

/// Pixels from a final state: per image-basis state, the square root of its
/// (exact or shot-estimated) marginal probability, truncated to the image and
/// min-max rescaled to `[0, 1]`. Without extra qubits and shots this is the
/// entrywise modulus.
pub fn state_to_image(state: &StateVector, opts: &UssSampleOptions, rng: &mut impl Rng) -> Result<ImageTensor> {
    let mut probs = marginal_probabilities(state, opts.n_image_qubits)?;
    if let Some(shots) = opts.shots {
        if shots == 0 {
            return Err(Error::InvalidArgument("shot count must be positive".into()));
        }
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..shots {
            counts[dist.sample(rng)] += 1;
        }
        probs = counts.iter().map(|&c| c as f64 / shots as f64).collect();
    }
    let n = opts.height * opts.width;
    if n > probs.len() {
        return Err(Error::Shape(format!("{n} pixels from {} basis states", probs.len())));
    }
    let values = probs[..n].iter().map(|p| p.sqrt()).collect();
    Ok(ImageTensor::gray(opts.height, opts.width, values)?.minmax_rescaled())
}

/// One matrix-vector product per image; image `i` draws from stream `i`.
pub fn uss_sample(u: &UnitaryMatrix, n_images: usize, rng_seed: u64, opts: &UssSampleOptions) -> Result<Vec<ImageTensor>> {
    (0..n_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(rng_seed, i as u64);
            let z = sample_input(u.dim(), opts, &mut rng)?;
            let out = u.apply_state(&z)?;
            state_to_image(&out, opts, &mut rng)
        })
        .collect()
}

/// The same samples as [`uss_sample`], produced by `tau` circuit passes.
pub fn iterative_sample(
    circuit: &CircuitSpec,
    params: &[f64],
    tau: usize,
    n_images: usize,
    rng_seed: u64,
    opts: &UssSampleOptions,
) -> Result<Vec<ImageTensor>> {
    (0..n_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(rng_seed, i as u64);
            let mut s = sample_input(1 << circuit.n_qubits(), opts, &mut rng)?;
            for _ in 0..tau {
                s = apply_circuit(&s, circuit, params)?;
            }
            state_to_image(&s, opts, &mut rng)
        })
        .collect()
}

/// Input that `u` maps onto `x`: `U†·x`.
pub fn preimage(u: &UnitaryMatrix, x: &[Complex64]) -> Result<Vec<Complex64>> {
    u.dagger().apply(x)
}

pub const UNITARY_MAGIC: &[u8; 8] = b"QDIFFUNI";
pub const UNITARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 32;

/// Writes `u` with its step count; layout in `docs/file-formats.md`.
pub fn write_unitary(mut w: impl Write, u: &UnitaryMatrix, tau: u64) -> Result<()> {
    let mut payload = Vec::with_capacity(u.entries().len() * 16);
    for z in u.entries() {
        payload.extend_from_slice(&z.re.to_le_bytes());
        payload.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(UNITARY_MAGIC)?;
    w.write_all(&UNITARY_VERSION.to_le_bytes())?;
    w.write_all(&(u.dim() as u64).to_le_bytes())?;
    w.write_all(&tau.to_le_bytes())?;
    w.write_all(&Sha256::digest(&payload))?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_unitary(mut r: impl Read) -> Result<(UnitaryMatrix, u64)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_unitary(&bytes)
}

fn parse_unitary(bytes: &[u8]) -> Result<(UnitaryMatrix, u64)> {
    let err = |offset: usize, reason: &str| Error::Parse { offset, reason: reason.into() };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != UNITARY_MAGIC {
        return Err(err(0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != UNITARY_VERSION {
        return Err(err(8, &format!("unsupported version {version}")));
    }
    let dim = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let tau = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let checksum = &bytes[28..60];
    let payload = &bytes[HEADER_LEN..];
    let expected = dim.checked_mul(dim).and_then(|n| n.checked_mul(16)).ok_or_else(|| err(12, "dimension overflows"))?;
    if payload.len() != expected {
        return Err(err(HEADER_LEN + payload.len().min(expected), "payload size does not match dimension"));
    }
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(err(28, "checksum mismatch"));
    }
    let entries = payload
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((UnitaryMatrix::from_row_major(dim, entries)?, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub re_mean: f64,
    pub re_std: f64,
    pub im_mean: f64,
    pub im_std: f64,
}

/// Moments of the real and imaginary parts of a set of complex vectors.
pub fn fit_noise(vectors: &[Vec<Complex64>]) -> NoiseFit {
    let all: Vec<Complex64> = vectors.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let re_mean = all.iter().map(|z| z.re).sum::<f64>() / n;
    let im_mean = all.iter().map(|z| z.im).sum::<f64>() / n;
    let re_std = (all.iter().map(|z| (z.re - re_mean).powi(2)).sum::<f64>() / n).sqrt();
    let im_std = (all.iter().map(|z| (z.im - im_mean).powi(2)).sum::<f64>() / n).sqrt();
    NoiseFit { re_mean, re_std, im_mean, im_std }
}
