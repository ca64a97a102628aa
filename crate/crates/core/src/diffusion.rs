//! Forward noising, training, iterative sampling and inpainting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{GradMethod, ParamStore};
use crate::image::{mse, ImageTensor};
use crate::models::Denoiser;

/// What the denoiser is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// The less noisy image `x_{t−1}`.
    #[default]
    Data,
    /// The noise `ε` that produced `x_t`.
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    target_mode: TargetMode,
}

impl DiffusionSchedule {
    pub const DEFAULT_TAU: usize = 10;
    pub const DEFAULT_BETA_START: f64 = 0.05;
    pub const DEFAULT_BETA_END: f64 = 0.5;

    /// Schedule from explicit `β₁ … β_τ`.
    pub fn from_betas(betas: Vec<f64>, target_mode: TargetMode) -> Result<Self> {
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!("beta_{} = {b} is outside (0, 1)", i + 1)));
            }
            if i > 0 && b < betas[i - 1] {
                return Err(Error::InvalidArgument(format!("betas decrease at step {}", i + 1)));
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &b in &betas {
            let next = acc * (1.0 - b);
            if next >= acc {
                return Err(Error::InvalidArgument("alpha_bar is not strictly decreasing".into()));
            }
            acc = next;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars, target_mode })
    }

    /// Linear `β` from `beta_start` (t = 1) to `beta_end` (t = τ).
    pub fn linear(tau: usize, beta_start: f64, beta_end: f64, target_mode: TargetMode) -> Result<Self> {
        let betas = (0..tau)
            .map(|i| {
                if tau == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (tau - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, target_mode)
    }

    pub fn with_tau(tau: usize, target_mode: TargetMode) -> Result<Self> {
        Self::linear(tau, Self::DEFAULT_BETA_START, Self::DEFAULT_BETA_END, target_mode)
    }

    pub fn tau(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn target_mode(&self) -> TargetMode {
        self.target_mode
    }

    /// `β_t` for `1 ≤ t ≤ τ`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tau() {
            return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.tau())));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::with_tau(Self::DEFAULT_TAU, TargetMode::Data).expect("default schedule is valid")
    }
}

/// Rng for item `index` of a run seeded with `seed`; streams never overlap.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn standard_normal(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn mix(x0: &ImageTensor, eps: &[f64], alpha_bar: f64) -> ImageTensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let values = x0.values().iter().zip(eps).map(|(x, e)| a * x + b * e).collect();
    x0.with_values(values).expect("same length")
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` with `ε ~ N(0, I)` drawn from `rng_seed`.
pub fn forward_noise(
    x0: &ImageTensor,
    t: usize,
    schedule: &DiffusionSchedule,
    rng_seed: u64,
) -> Result<(ImageTensor, ImageTensor)> {
    forward_noise_with(x0, t, schedule, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

pub fn forward_noise_with(
    x0: &ImageTensor,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, ImageTensor)> {
    schedule.check_step(t)?;
    let eps = standard_normal(x0.len(), rng);
    let xt = mix(x0, &eps, schedule.alpha_bar(t));
    Ok((xt, x0.with_values(eps)?))
}

/// One supervised example: the model sees `input` (and `label`) and should
/// produce `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub t: usize,
    pub input: ImageTensor,
    pub target: ImageTensor,
    pub label: Option<usize>,
}

/// Draws `t ~ U{1..τ}` and `ε`, and builds the pair for the schedule's target
/// mode. Data mode shares `ε` between `x_t` and `x_{t−1}`.
pub fn training_pair(
    x0: &ImageTensor,
    label: Option<usize>,
    schedule: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<TrainingPair> {
    if schedule.tau() == 0 {
        return Err(Error::InvalidArgument("cannot train with zero diffusion steps".into()));
    }
    let t = rng.gen_range(1..=schedule.tau());
    let (input, eps) = forward_noise_with(x0, t, schedule, rng)?;
    let target = match schedule.target_mode() {
        TargetMode::Data => mix(x0, eps.values(), schedule.alpha_bar(t - 1)),
        TargetMode::Noise => eps,
    };
    Ok(TrainingPair { t, input, target, label })
}

/// Summed MSE over the pairs and its parameter gradient.
pub fn batch_loss_grad<M: Denoiser + ?Sized>(
    model: &M,
    params: &[f64],
    pairs: &[TrainingPair],
    method: GradMethod,
) -> Result<(f64, Vec<f64>)> {
    let parts = pairs
        .par_iter()
        .map(|p| model.mse_grad(params, &p.input, p.label, &p.target, method))
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
    Ok((loss, grad))
}

/// Summed MSE over the pairs, without gradients.
pub fn batch_loss<M: Denoiser + ?Sized>(model: &M, params: &[f64], pairs: &[TrainingPair]) -> Result<f64> {
    let losses = pairs
        .par_iter()
        .map(|p| Ok(mse(model.forward(params, &p.input, p.label)?.values(), p.target.values())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum())
}

/// Builds one pair per image (item `i` uses stream `i` of `rng_seed`),
/// then takes one Adam step on the summed loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<M: Denoiser + ?Sized>(
    model: &M,
    store: &ParamStore,
    batch: &[ImageTensor],
    labels: Option<&[usize]>,
    schedule: &DiffusionSchedule,
    lr: f64,
    rng_seed: u64,
    method: GradMethod,
) -> Result<(ParamStore, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if let Some(l) = labels {
        if l.len() != batch.len() {
            return Err(Error::Shape(format!("{} labels for {} images", l.len(), batch.len())));
        }
    }
    let pairs = batch
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let label = labels.map(|l| l[i]);
            training_pair(x0, label, schedule, &mut item_rng(rng_seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, grad) = batch_loss_grad(model, &store.values, &pairs, method)?;
    Ok((store.adam_step(&grad, lr)?, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub method: GradMethod,
}

/// Summed loss of every batch in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
}

/// Signature shared by the per-batch update functions.
pub type StepFn<'a> = dyn Fn(&ParamStore, &[ImageTensor], Option<&[usize]>, u64) -> Result<(ParamStore, f64)> + 'a;

/// Epoch loop: shuffles with `rng`, draws one seed per batch from it, and
/// applies `step`. `on_epoch` sees the stats and parameters after each epoch.
pub fn fit<F>(
    store: &mut ParamStore,
    images: &[ImageTensor],
    labels: Option<&[usize]>,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
    step: &StepFn<'_>,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    F: FnMut(&EpochStats, &ParamStore),
{
    if images.is_empty() || opts.batch_size == 0 {
        return Err(Error::InvalidArgument("training needs images and a positive batch size".into()));
    }
    if labels.is_some_and(|l| l.len() != images.len()) {
        return Err(Error::Shape("label count differs from image count".into()));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<ImageTensor> = chunk.iter().map(|&i| images[i].clone()).collect();
            let batch_labels: Option<Vec<usize>> = labels.map(|l| chunk.iter().map(|&i| l[i]).collect());
            let (next, loss) = step(store, &batch, batch_labels.as_deref(), rng.gen())?;
            *store = next;
            total += loss;
        }
        let stats = EpochStats { epoch, loss: total };
        on_epoch(&stats, store);
        history.push(stats);
    }
    Ok(history)
}

/// Diffusion training of a denoiser with [`train_step`].
#[allow(clippy::too_many_arguments)]
pub fn train<M, F>(
    model: &M,
    store: &mut ParamStore,
    images: &[ImageTensor],
    labels: Option<&[usize]>,
    schedule: &DiffusionSchedule,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
    on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    M: Denoiser + ?Sized,
    F: FnMut(&EpochStats, &ParamStore),
{
    let step = |s: &ParamStore, batch: &[ImageTensor], l: Option<&[usize]>, seed: u64| {
        train_step(model, s, batch, l, schedule, opts.lr, seed, opts.method)
    };
    fit(store, images, labels, opts, rng, &step, on_epoch)
}

/// `N(0, 1)` per pixel, clipped to the value range.
pub fn initial_noise(shape: (usize, usize, usize), value_range: (f64, f64), rng: &mut impl Rng) -> ImageTensor {
    let (c, h, w) = shape;
    let values = standard_normal(c * h * w, rng).into_iter().map(|v| v.clamp(value_range.0, value_range.1)).collect();
    ImageTensor::new(c, h, w, values).expect("sized").with_range(value_range.0, value_range.1)
}

/// One reverse step `x_t → x_{t−1}`.
pub fn reverse_step<M: Denoiser + ?Sized>(
    model: &M,
    params: &[f64],
    schedule: &DiffusionSchedule,
    t: usize,
    xt: &ImageTensor,
    label: Option<usize>,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    let pred = model.forward(params, xt, label)?;
    match schedule.target_mode() {
        TargetMode::Data => Ok(pred),
        TargetMode::Noise => {
            // posterior mean with the predicted noise; no variance term
            let beta = schedule.beta(t);
            let k = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
            let s = (1.0 - beta).sqrt();
            let values = xt.values().iter().zip(pred.values()).map(|(x, e)| (x - k * e) / s).collect();
            xt.with_values(values)
        }
    }
}

/// Images from `x_τ` (first) to `x_0` (last).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<ImageTensor>,
}

impl Trajectory {
    pub fn final_image(&self) -> &ImageTensor {
        self.frames.last().expect("a trajectory holds at least the initial noise")
    }
}

fn run_sampler<M: Denoiser + ?Sized>(
    model: &M,
    params: &[f64],
    schedule: &DiffusionSchedule,
    start: ImageTensor,
    label: Option<usize>,
    mut after_step: impl FnMut(&mut ImageTensor),
) -> Result<Trajectory> {
    let mut frames = Vec::with_capacity(schedule.tau() + 1);
    let mut x = start;
    frames.push(x.clone());
    for t in (1..=schedule.tau()).rev() {
        x = reverse_step(model, params, schedule, t, &x, label)?;
        after_step(&mut x);
        frames.push(x.clone());
    }
    Ok(Trajectory { frames })
}

/// Generates `n_images` of `shape`; image `i` draws its noise from stream `i`.
pub fn sample<M: Denoiser + ?Sized>(
    model: &M,
    params: &[f64],
    schedule: &DiffusionSchedule,
    shape: (usize, usize, usize),
    n_images: usize,
    label: Option<usize>,
    rng_seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n_images)
        .into_par_iter()
        .map(|i| {
            let x = initial_noise(shape, (0.0, 1.0), &mut item_rng(rng_seed, i as u64));
            run_sampler(model, params, schedule, x, label, |_| {})
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainted {
    pub trajectory: Trajectory,
    /// MSE against the ground truth over unknown pixels only.
    pub unknown_mse: f64,
}

impl Inpainted {
    pub fn image(&self) -> &ImageTensor {
        self.trajectory.final_image()
    }
}

/// `known[i]` marks pixel `i` (per spatial position, shared by all channels).
fn check_mask(image: &ImageTensor, known: &[bool]) -> Result<()> {
    let spatial = image.height() * image.width();
    if known.len() != spatial {
        return Err(Error::Shape(format!("mask has {} entries for {spatial} pixels", known.len())));
    }
    if !known.contains(&true) {
        return Err(Error::InvalidArgument("mask marks no pixel as known".into()));
    }
    Ok(())
}

fn unknown_indices(image: &ImageTensor, known: &[bool]) -> Vec<usize> {
    let spatial = known.len();
    (0..image.len()).filter(|i| !known[i % spatial]).collect()
}

/// Mask with the bottom `rows` rows unknown.
pub fn bottom_mask(height: usize, width: usize, rows: usize) -> Vec<bool> {
    (0..height * width).map(|i| i / width < height.saturating_sub(rows)).collect()
}

/// Fills the unknown pixels of `image` by running the sampler from noise;
/// with `reset_each_step` the known pixels are restored after every step.
#[allow(clippy::too_many_arguments)]
pub fn inpaint<M: Denoiser + ?Sized>(
    model: &M,
    params: &[f64],
    image: &ImageTensor,
    known: &[bool],
    schedule: &DiffusionSchedule,
    reset_each_step: bool,
    label: Option<usize>,
    rng_seed: u64,
) -> Result<Inpainted> {
    check_mask(image, known)?;
    let unknown = unknown_indices(image, known);
    let noise = initial_noise(image.shape(), image.value_range, &mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut start = image.clone();
    for &i in &unknown {
        start.values_mut()[i] = noise.values()[i];
    }
    let spatial = known.len();
    let restore = |x: &mut ImageTensor| {
        if reset_each_step {
            for (i, v) in x.values_mut().iter_mut().enumerate() {
                if known[i % spatial] {
                    *v = image.values()[i];
                }
            }
        }
    };
    let trajectory = run_sampler(model, params, schedule, start, label, restore)?;
    let unknown_mse = region_mse(trajectory.final_image(), image, &unknown);
    Ok(Inpainted { trajectory, unknown_mse })
}

fn region_mse(a: &ImageTensor, b: &ImageTensor, indices: &[usize]) -> f64 {
    let pa: Vec<f64> = indices.iter().map(|&i| a.values()[i]).collect();
    let pb: Vec<f64> = indices.iter().map(|&i| b.values()[i]).collect();
    mse(&pa, &pb)
}

/// Expected squared error `E[(clip(Z, 0, 1) − g)²]`, `Z ~ N(0, 1)`, averaged
/// over `ground_truth`: the MSE of an unfilled, freshly noised region.
pub fn clipped_noise_mse(ground_truth: &[f64]) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    // moments of φ over [0, 1] by composite Simpson
    const N: usize = 2000;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let h = 1.0 / N as f64;
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=N {
        let z = i as f64 * h;
        let w = if i == 0 || i == N { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p = w * phi(z);
        m0 += p;
        m1 += p * z;
        m2 += p * z * z;
    }
    let (m0, m1, m2) = (m0 * h / 3.0, m1 * h / 3.0, m2 * h / 3.0);
    let p_low = 0.5;
    let p_high = 0.5 - m0;
    let total: f64 = ground_truth
        .iter()
        .map(|&g| p_low * g * g + p_high * (1.0 - g) * (1.0 - g) + m2 - 2.0 * g * m1 + g * g * m0)
        .sum();
    total / ground_truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{QDense, QDenseConfig};

    fn dense(layers: usize, guided: bool) -> QDense {
        QDense::new(QDenseConfig { n_image_qubits: 4, n_layers: layers, guided, ancilla: false, n_reuploads: 0, n_classes: 2 }).unwrap()
    }

    fn img(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::gray(4, 4, (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn schedule_invariants() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.tau(), 10);
        assert_eq!(s.beta(1), 0.05);
        assert!((s.beta(10) - 0.5).abs() < 1e-15);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!((s.alpha_bar(2) - 0.95 * 0.9).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(DiffusionSchedule::from_betas(vec![0.2, 0.1], TargetMode::Data).is_err());
        assert!(DiffusionSchedule::from_betas(vec![0.0], TargetMode::Data).is_err());
        assert!(DiffusionSchedule::from_betas(vec![1.0], TargetMode::Data).is_err());
        assert_eq!(DiffusionSchedule::with_tau(0, TargetMode::Noise).unwrap().tau(), 0);
    }

    #[test]
    fn forward_noise_zero_signal() {
        let s = DiffusionSchedule::default();
        let x0 = ImageTensor::zeros(1, 3, 3);
        let (xt, eps) = forward_noise(&x0, 4, &s, 7).unwrap();
        let k = (1.0 - s.alpha_bar(4)).sqrt();
        for (a, e) in xt.values().iter().zip(eps.values()) {
            assert_eq!(*a, k * e);
        }
        assert_eq!(forward_noise(&x0, 4, &s, 7).unwrap().0, xt);
        assert!(forward_noise(&x0, 0, &s, 7).is_err());
        assert!(forward_noise(&x0, 11, &s, 7).is_err());
    }

    #[test]
    fn forward_noise_tiny_beta_keeps_signal() {
        let s = DiffusionSchedule::from_betas(vec![1e-15], TargetMode::Data).unwrap();
        let x0 = img(1);
        let (xt, _) = forward_noise(&x0, 1, &s, 3).unwrap();
        for (a, b) in xt.values().iter().zip(x0.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_noise_variance() {
        let s = DiffusionSchedule::default();
        let t = 5;
        let ab = s.alpha_bar(t);
        let x0 = ImageTensor::gray(1, 2, vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let i = rng.gen_range(0..2);
                forward_noise_with(&x0, t, &s, &mut rng).unwrap().0.values()[i]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        let expected = ab * 0.25 + (1.0 - ab);
        assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
    }

    #[test]
    fn data_pairs_share_noise() {
        let s = DiffusionSchedule::default();
        let x0 = img(2);
        let p = training_pair(&x0, None, &s, &mut item_rng(5, 0)).unwrap();
        let mut rng = item_rng(5, 0);
        let t: usize = rng.gen_range(1..=10);
        assert_eq!(t, p.t);
        let eps = standard_normal(16, &mut rng);
        let a = s.alpha_bar(t - 1);
        for i in 0..16 {
            let want = a.sqrt() * x0.values()[i] + (1.0 - a).sqrt() * eps[i];
            assert!((p.target.values()[i] - want).abs() < 1e-15);
        }
        let s1 = DiffusionSchedule::with_tau(1, TargetMode::Data).unwrap();
        assert_eq!(training_pair(&x0, None, &s1, &mut item_rng(1, 1)).unwrap().target, x0);
    }

    #[test]
    fn zero_layer_loss_is_direct_mse() {
        let m = dense(0, false);
        let s = DiffusionSchedule::default();
        let x0 = img(3);
        let pair = training_pair(&x0, None, &s, &mut item_rng(11, 0)).unwrap();
        let norm = pair.input.l2_norm();
        let out: Vec<f64> = pair.input.values().iter().map(|v| v * v / norm).collect();
        let want = mse(&out, pair.target.values());
        let store = ParamStore::new(vec![]);
        let (_, loss) = train_step(&m, &store, &[x0.clone()], None, &s, 0.01, 11, GradMethod::ParameterShift).unwrap();
        assert!((loss - want).abs() < 1e-14);
        let (_, again) = train_step(&m, &store, &[x0], None, &s, 0.01, 11, GradMethod::ParameterShift).unwrap();
        assert_eq!(loss, again);
    }

    #[test]
    fn duplicated_batch_doubles_loss() {
        let m = dense(2, true);
        let s = DiffusionSchedule::default();
        let params: Vec<f64> = (0..m.n_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let pairs: Vec<_> =
            (0..3).map(|i| training_pair(&img(i), Some(i as usize % 2), &s, &mut item_rng(4, i)).unwrap()).collect();
        let doubled: Vec<_> = pairs.iter().chain(&pairs).cloned().collect();
        let (a, ga) = batch_loss_grad(&m, &params, &pairs, GradMethod::Adjoint).unwrap();
        let (b, gb) = batch_loss_grad(&m, &params, &doubled, GradMethod::Adjoint).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-14 * a);
        for (x, y) in ga.iter().zip(&gb) {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        assert!((batch_loss(&m, &params, &pairs).unwrap() - a).abs() < 1e-14);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let m = dense(2, false);
        let s = DiffusionSchedule::default();
        let store = ParamStore::new((0..m.n_params()).map(|i| (i as f64).cos()).collect());
        let (next, loss) = train_step(&m, &store, &[img(1), img(2)], None, &s, 0.0, 1, GradMethod::Adjoint).unwrap();
        assert_eq!(next.values, store.values);
        assert!(loss > 0.0);
        assert!(train_step(&m, &store, &[], None, &s, 0.0, 1, GradMethod::Adjoint).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = dense(2, true);
        let s = DiffusionSchedule::default();
        let p: Vec<f64> = (0..m.n_params()).map(|i| i as f64 * 0.1).collect();
        let a = sample(&m, &p, &s, (1, 4, 4), 3, Some(1), 42).unwrap();
        let b = sample(&m, &p, &s, (1, 4, 4), 3, Some(1), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].frames.len(), 11);
        assert_ne!(a[0].final_image(), a[1].final_image());
        assert!(a[0].frames[0].values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_steps_return_noise() {
        let m = dense(1, false);
        let s = DiffusionSchedule::with_tau(0, TargetMode::Data).unwrap();
        let p = vec![0.3; m.n_params()];
        let out = sample(&m, &p, &s, (1, 4, 4), 1, None, 8).unwrap();
        assert_eq!(out[0].frames.len(), 1);
        assert_eq!(out[0].frames[0], initial_noise((1, 4, 4), (0.0, 1.0), &mut item_rng(8, 0)));
    }

    /// Predicts a fixed noise image regardless of input.
    struct Oracle(ImageTensor);

    impl Denoiser for Oracle {
        fn n_params(&self) -> usize {
            0
        }
        fn n_classes(&self) -> Option<usize> {
            None
        }
        fn forward(&self, _: &[f64], _: &ImageTensor, _: Option<usize>) -> Result<ImageTensor> {
            Ok(self.0.clone())
        }
        fn mse_grad(&self, _: &[f64], _: &ImageTensor, _: Option<usize>, _: &ImageTensor, _: GradMethod) -> Result<(f64, Vec<f64>)> {
            unreachable!()
        }
    }

    #[test]
    fn noise_step_is_identity_as_beta_vanishes() {
        let eps = img(5);
        let xt = img(6);
        for beta in [1e-6, 1e-9, 1e-12] {
            let s = DiffusionSchedule::from_betas(vec![beta], TargetMode::Noise).unwrap();
            let out = reverse_step(&Oracle(eps.clone()), &[], &s, 1, &xt, None).unwrap();
            let err = out.values().iter().zip(xt.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 10.0 * beta.sqrt(), "beta {beta}: {err}");
        }
    }

    #[test]
    fn noise_step_with_true_noise_moves_toward_data() {
        let s = DiffusionSchedule::with_tau(10, TargetMode::Noise).unwrap();
        let x0 = img(7);
        let t = 6;
        let (xt, eps) = forward_noise(&x0, t, &s, 1).unwrap();
        let prev = reverse_step(&Oracle(eps.clone()), &[], &s, t, &xt, None).unwrap();
        // posterior mean given the true x0
        let (ab, ab1, beta) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.beta(t));
        let c0 = ab1.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab1) / (1.0 - ab);
        for i in 0..16 {
            let want = c0 * x0.values()[i] + ct * xt.values()[i];
            assert!((prev.values()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn inpaint_all_known_returns_input() {
        let m = dense(2, false);
        let s = DiffusionSchedule::default();
        let p = vec![0.4; m.n_params()];
        let x = img(9);
        let r = inpaint(&m, &p, &x, &[true; 16], &s, true, None, 3).unwrap();
        assert_eq!(r.image(), &x);
        assert_eq!(r.unknown_mse, 0.0);
        assert!(inpaint(&m, &p, &x, &[false; 16], &s, true, None, 3).is_err());
        assert!(inpaint(&m, &p, &x, &[true; 15], &s, true, None, 3).is_err());
    }

    #[test]
    fn inpaint_reset_keeps_known_pixels() {
        let m = dense(2, false);
        let s = DiffusionSchedule::default();
        let p: Vec<f64> = (0..m.n_params()).map(|i| (i as f64).sin()).collect();
        let x = img(10);
        let mask = bottom_mask(4, 4, 2);
        assert_eq!(mask.iter().filter(|k| !**k).count(), 8);
        let r = inpaint(&m, &p, &x, &mask, &s, true, None, 3).unwrap();
        for i in 0..8 {
            assert_eq!(r.image().values()[i], x.values()[i]);
        }
        let want = mse(&r.image().values()[8..], &x.values()[8..]);
        assert!((r.unknown_mse - want).abs() < 1e-15);
        assert!(r.unknown_mse > 0.0);
    }

    #[test]
    fn clipped_noise_baseline_matches_monte_carlo() {
        let g = [0.0, 0.3, 1.0];
        let exact = clipped_noise_mse(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for &gi in &g {
                let z: f64 = rng.sample::<f64, _>(StandardNormal).clamp(0.0, 1.0);
                acc += (z - gi).powi(2);
            }
        }
        let mc = acc / (n * g.len()) as f64;
        assert!((exact - mc).abs() < 3e-3, "{exact} vs {mc}");
        // g = 0: E[clip(Z)²] = ∫₀¹ z²φ + P(Z > 1)
        let e0 = clipped_noise_mse(&[0.0]);
        assert!((e0 - (0.0993 + 0.1587)).abs() < 1e-3, "{e0}");
    }
}
