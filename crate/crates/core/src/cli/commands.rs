//! The work behind each subcommand. Every command writes its outputs and a
//! manifest into one directory.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{
    params_hash, record, sha256_hex, write_csv, write_grid_png, Checkpoint, Manifest, MetricRow, OutputRecord,
    MANIFEST_FORMAT,
};
use super::config::{config_err, Config, DataFormat, ModelConfig};
use crate::data;
use crate::diffusion::{self, bottom_mask, clipped_noise_mse, inpaint, item_rng, DiffusionSchedule, EpochStats, TrainOptions};
use crate::error::{Error, Result};
use crate::grad::ParamStore;
use crate::image::ImageTensor;
use crate::metrics::{frechet_distance, psnr, ssim};
use crate::models::{Denoiser, Model, QDense, QUNet};
use crate::uss::{train_uss, uss_sample, write_unitary, UssModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Train,
    Sample,
    Compose,
    Eval,
    Inpaint,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Train => "train",
            CommandKind::Sample => "sample",
            CommandKind::Compose => "compose",
            CommandKind::Eval => "eval",
            CommandKind::Inpaint => "inpaint",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [Self::Train, Self::Sample, Self::Compose, Self::Eval, Self::Inpaint]
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| config_err("command", format!("unknown command `{name}`")))
    }
}

/// The config with the output directory blanked, so that identical work in
/// different directories hashes (and checkpoints) identically.
pub fn portable(cfg: &Config) -> Config {
    let mut c = cfg.clone();
    c.run.out_dir = PathBuf::new();
    c
}

pub fn run_id(command: CommandKind, cfg: &Config) -> String {
    let text = format!("{}\n{}", command.name(), portable(cfg).to_toml());
    sha256_hex(text.as_bytes())[..16].to_string()
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data::data_path(path)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => config_err("data", format!("dataset file {} not found", path.display())),
        _ => Error::Io(e),
    })
}

/// Loads, filters and resizes the configured dataset. With a class filter
/// the labels become indices into the filter list.
pub fn load_dataset(cfg: &Config) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let d = &cfg.data;
    let (raw, raw_labels) = match d.format {
        DataFormat::Idx => {
            let labels = d.labels.as_ref().ok_or_else(|| config_err("data.labels", "IDX data needs a label file"))?;
            let images = data::parse_idx_images(&read(&resolve(&d.images))?)?;
            (images, data::parse_idx_labels(&read(&resolve(labels))?)?)
        }
        DataFormat::Cifar => data::parse_cifar_batch(&read(&resolve(&d.images))?, true)?,
    };
    let (mut images, mut labels) = data::preprocess(&raw, &raw_labels, d.size, d.classes.as_deref(), true)?;
    if let Some(cs) = &d.classes {
        for l in &mut labels {
            *l = cs.iter().position(|c| c == l).expect("filtered");
        }
    }
    let end = d.limit.map_or(images.len(), |n| (d.offset + n).min(images.len()));
    if d.offset >= end {
        return Err(config_err("data.offset", format!("no images left of {}", images.len())));
    }
    images.truncate(end);
    labels.truncate(end);
    Ok((images.split_off(d.offset), labels.split_off(d.offset)))
}

pub enum Built {
    Diffusion(Model),
    Single(UssModel),
}

impl Built {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::QDense(c) => Built::Diffusion(Model::QDense(QDense::new(c.clone())?)),
            ModelConfig::QuNet(c) => Built::Diffusion(Model::QUNet(QUNet::new(c.clone())?)),
            ModelConfig::SingleSample(c) => Built::Single(UssModel::new(c.clone())?),
        })
    }

    pub fn n_params(&self) -> usize {
        match self {
            Built::Diffusion(m) => m.n_params(),
            Built::Single(m) => m.n_params(),
        }
    }
}

/// Uniform angles in `[−π, π)` drawn from `seed`.
pub fn init_params(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = item_rng(seed, 0);
    (0..n).map(|_| rng.gen_range(-PI..PI)).collect()
}

fn train_rng(seed: u64) -> ChaCha8Rng {
    item_rng(seed, 1)
}

#[derive(Debug, Clone, Serialize)]
struct LossRow<'a> {
    run_id: &'a str,
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Clone, Serialize)]
struct InpaintRow<'a> {
    run_id: &'a str,
    image: usize,
    label: usize,
    unknown_mse: f64,
    noise_baseline: f64,
}

/// Runs `command` with `cfg` and writes everything into `out_dir`.
/// `checkpoint` is required by every command except `train`.
pub fn execute(command: CommandKind, cfg: &Config, checkpoint: Option<&Path>, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let id = run_id(command, cfg);
    let built = Built::new(&cfg.model)?;
    let (store, ck_path, ck_hash) = match command {
        CommandKind::Train => (None, None, None),
        _ => {
            let path = checkpoint.ok_or_else(|| config_err("checkpoint", "this command needs --checkpoint"))?;
            let bytes = std::fs::read(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => config_err("checkpoint", format!("no checkpoint at {}", path.display())),
                _ => Error::Io(e),
            })?;
            let ck = Checkpoint::from_bytes(&bytes)?;
            if ck.config.model != cfg.model {
                return Err(config_err("model", "differs from the model the checkpoint was trained with"));
            }
            if ck.store.len() != built.n_params() {
                return Err(Error::ParamCount { expected: built.n_params(), actual: ck.store.len() });
            }
            let abs = std::fs::canonicalize(path)?;
            (Some(ck.store), Some(abs), Some(sha256_hex(&bytes)))
        }
    };
    let (outputs, params) = match command {
        CommandKind::Train => train(cfg, &built, &id, out_dir)?,
        CommandKind::Sample => {
            let store = store.expect("loaded");
            (sample(cfg, &built, &store.values, out_dir)?, store.values)
        }
        CommandKind::Compose => {
            let store = store.expect("loaded");
            (compose(cfg, &built, &store.values, out_dir)?, store.values)
        }
        CommandKind::Eval => {
            let store = store.expect("loaded");
            (eval(cfg, &built, &store.values, &id, out_dir)?, store.values)
        }
        CommandKind::Inpaint => {
            let store = store.expect("loaded");
            (inpaint_cmd(cfg, &built, &store.values, &id, out_dir)?, store.values)
        }
    };
    let (checkpoint, checkpoint_sha256) = match command {
        CommandKind::Train => {
            let r = outputs.iter().find(|o| o.path == Path::new(CHECKPOINT_FILE)).expect("written");
            (Some(PathBuf::from(CHECKPOINT_FILE)), Some(r.sha256.clone()))
        }
        _ => (ck_path, ck_hash),
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        command: command.name().to_string(),
        run_id: id,
        seed: cfg.run.seed,
        params_hash: params_hash(&params),
        checkpoint,
        checkpoint_sha256,
        config: cfg.clone(),
        outputs,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn train(cfg: &Config, built: &Built, id: &str, out: &Path) -> Result<(Vec<OutputRecord>, Vec<f64>)> {
    let (images, labels) = load_dataset(cfg)?;
    let schedule = cfg.schedule.build()?;
    let labels = cfg.model.n_classes().map(|_| labels.as_slice());
    let opts = TrainOptions {
        epochs: cfg.optimizer.epochs,
        batch_size: cfg.optimizer.batch_size,
        lr: cfg.optimizer.lr,
        method: cfg.optimizer.method,
    };
    let mut store = ParamStore::new(init_params(built.n_params(), cfg.run.seed)).with_wrap(cfg.wrap());
    let mut rng = train_rng(cfg.run.seed);
    let progress = |s: &EpochStats, _: &ParamStore| eprintln!("epoch {}/{} loss {:.6}", s.epoch, opts.epochs, s.loss);
    let history = match built {
        Built::Diffusion(m) => diffusion::train(m, &mut store, &images, labels, &schedule, &opts, &mut rng, progress)?,
        Built::Single(m) => train_uss(m, &mut store, &images, labels, &schedule, &opts, &mut rng, progress)?,
    };
    Checkpoint::new(portable(cfg), store.clone(), &rng).save(&out.join(CHECKPOINT_FILE))?;
    let rows: Vec<LossRow> = history.iter().map(|s| LossRow { run_id: id, epoch: s.epoch, loss: s.loss }).collect();
    write_csv(&out.join("losses.csv"), &rows)?;
    Ok((vec![record(out, CHECKPOINT_FILE)?, record(out, "losses.csv")?], store.values))
}

/// Labels to generate: the configured class, or every class of a guided
/// model, or none.
fn sample_labels(cfg: &Config) -> Vec<Option<usize>> {
    match (cfg.run.label, cfg.model.n_classes()) {
        (Some(l), _) => vec![Some(l)],
        (None, Some(n)) => (0..n).map(Some).collect(),
        (None, None) => vec![None],
    }
}

fn label_seed(seed: u64, label: Option<usize>) -> u64 {
    seed.wrapping_add(label.map_or(0, |l| l as u64))
}

/// One group of generated images per label.
struct Generated {
    label: Option<usize>,
    /// Per image, `x_τ … x_0` (single sampling: only the result).
    frames: Vec<Vec<ImageTensor>>,
}

fn generate(cfg: &Config, built: &Built, params: &[f64]) -> Result<Vec<Generated>> {
    let size = cfg.data.size;
    let schedule = cfg.schedule.build()?;
    let mut groups = Vec::new();
    for label in sample_labels(cfg) {
        let seed = label_seed(cfg.run.seed, label);
        let frames = match built {
            Built::Diffusion(m) => {
                let shape = (1, size, size);
                diffusion::sample(m, params, &schedule, shape, cfg.run.n_samples, label, seed)?
                    .into_iter()
                    .map(|tr| tr.frames.iter().map(ImageTensor::minmax_rescaled).collect())
                    .collect()
            }
            Built::Single(m) => {
                let mut opts = m.sample_options(size, size, label)?;
                opts.shots = cfg.run.shots;
                let u = m.compose(params, schedule.tau(), label)?;
                uss_sample(&u, cfg.run.n_samples, seed, &opts)?.into_iter().map(|im| vec![im]).collect()
            }
        };
        groups.push(Generated { label, frames });
    }
    Ok(groups)
}

fn sample(cfg: &Config, built: &Built, params: &[f64], out: &Path) -> Result<Vec<OutputRecord>> {
    let groups = generate(cfg, built, params)?;
    let finals: Vec<Vec<ImageTensor>> =
        groups.iter().map(|g| g.frames.iter().map(|f| f.last().expect("frame").clone()).collect()).collect();
    write_grid_png(&out.join("samples.png"), &finals)?;
    let mut outputs = vec![record(out, "samples.png")?];
    if matches!(built, Built::Diffusion(_)) {
        let rows: Vec<Vec<ImageTensor>> = groups.iter().flat_map(|g| g.frames.iter().cloned()).collect();
        write_grid_png(&out.join("trajectory.png"), &rows)?;
        outputs.push(record(out, "trajectory.png")?);
    }
    Ok(outputs)
}

fn compose(cfg: &Config, built: &Built, params: &[f64], out: &Path) -> Result<Vec<OutputRecord>> {
    let Built::Single(m) = built else {
        return Err(config_err("model.kind", "compose needs a single-sample model"));
    };
    let tau = cfg.schedule.tau;
    let mut outputs = Vec::new();
    for label in sample_labels(cfg) {
        let name = match label {
            Some(l) => format!("unitary-class{l}.bin"),
            None => "unitary.bin".to_string(),
        };
        let u = m.compose(params, tau, label)?;
        write_unitary(std::io::BufWriter::new(File::create(out.join(&name))?), &u, tau as u64)?;
        outputs.push(record(out, &name)?);
    }
    Ok(outputs)
}

/// Pixel mean of each class.
pub fn class_means(images: &[ImageTensor], labels: &[usize]) -> Result<BTreeMap<usize, ImageTensor>> {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (im, &l) in images.iter().zip(labels) {
        let e = sums.entry(l).or_insert_with(|| (vec![0.0; im.len()], 0));
        for (a, b) in e.0.iter_mut().zip(im.values()) {
            *a += b;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(l, (s, n))| Ok((l, images[0].with_values(s.into_iter().map(|v| v / n as f64).collect())?)))
        .collect()
}

/// The reference a sample is scored against: its own class mean, or for
/// unguided samples the most similar class mean.
fn reference<'a>(means: &'a BTreeMap<usize, ImageTensor>, label: Option<usize>, image: &ImageTensor) -> Result<&'a ImageTensor> {
    if let Some(l) = label {
        return means.get(&l).ok_or_else(|| config_err("run.label", format!("class {l} is not in the dataset")));
    }
    let mut best: Option<(f64, &ImageTensor)> = None;
    for m in means.values() {
        let s = ssim(image, m, 1.0)?;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, m));
        }
    }
    Ok(best.expect("dataset has a class").1)
}

fn eval(cfg: &Config, built: &Built, params: &[f64], id: &str, out: &Path) -> Result<Vec<OutputRecord>> {
    let (images, labels) = load_dataset(cfg)?;
    let means = class_means(&images, &labels)?;
    let groups = generate(cfg, built, params)?;
    let n_frames = groups[0].frames[0].len();
    let last_t = |k: usize| n_frames - 1 - k;
    let mut sums = vec![(0.0, 0.0); n_frames];
    let mut count = 0usize;
    let mut finals = Vec::new();
    for g in &groups {
        for frames in &g.frames {
            let last = frames.last().expect("frame");
            let r = reference(&means, g.label, last)?;
            for (k, f) in frames.iter().enumerate() {
                sums[k].0 += ssim(f, r, 1.0)?;
                sums[k].1 += psnr(f, r, 1.0)?;
            }
            count += 1;
            finals.push(last.clone());
        }
    }
    let mut rows = Vec::new();
    for (k, (s, p)) in sums.iter().enumerate() {
        let tau = last_t(k);
        rows.push(MetricRow { run_id: id.into(), tau, metric: "ssim".into(), value: s / count as f64 });
        rows.push(MetricRow { run_id: id.into(), tau, metric: "psnr".into(), value: p / count as f64 });
    }
    let dim = cfg.run.feature_dim;
    if finals.len() > dim && images.len() > dim {
        let fid = frechet_distance(&finals, &images, dim)?;
        rows.push(MetricRow { run_id: id.into(), tau: 0, metric: "fid_proxy".into(), value: fid });
    } else {
        eprintln!("fid_proxy skipped: needs more than {dim} samples and dataset images");
    }
    write_csv(&out.join("metrics.csv"), &rows)?;
    Ok(vec![record(out, "metrics.csv")?])
}

fn inpaint_cmd(cfg: &Config, built: &Built, params: &[f64], id: &str, out: &Path) -> Result<Vec<OutputRecord>> {
    let Built::Diffusion(m) = built else {
        return Err(config_err("model.kind", "inpainting needs a diffusion model"));
    };
    let (images, labels) = load_dataset(cfg)?;
    let schedule: DiffusionSchedule = cfg.schedule.build()?;
    let size = cfg.data.size;
    let rows_hidden = cfg.run.mask_rows.unwrap_or(size / 2);
    if rows_hidden == 0 || rows_hidden >= size {
        return Err(config_err("run.mask_rows", format!("must be between 1 and {}", size - 1)));
    }
    let known = bottom_mask(size, size, rows_hidden);
    let mut grid = Vec::new();
    let mut rows = Vec::new();
    for (i, (im, &l)) in images.iter().zip(&labels).take(cfg.run.n_samples).enumerate() {
        let label = m.n_classes().map(|_| l);
        let res = inpaint(m, params, im, &known, &schedule, cfg.run.reset_each_step, label, cfg.run.seed.wrapping_add(i as u64))?;
        let unknown: Vec<f64> = im.values().iter().zip(&known).filter(|(_, k)| !**k).map(|(v, _)| *v).collect();
        let mut masked = im.clone();
        for (v, k) in masked.values_mut().iter_mut().zip(&known) {
            if !k {
                *v = 0.0;
            }
        }
        let mut result = res.image().clone();
        result.clamp_to_range();
        grid.push(vec![im.clone(), masked, result]);
        rows.push(InpaintRow { run_id: id, image: i, label: l, unknown_mse: res.unknown_mse, noise_baseline: clipped_noise_mse(&unknown) });
    }
    if grid.is_empty() {
        return Err(config_err("run.n_samples", "must be positive"));
    }
    write_grid_png(&out.join("inpaint.png"), &grid)?;
    write_csv(&out.join("inpaint.csv"), &rows)?;
    Ok(vec![record(out, "inpaint.png")?, record(out, "inpaint.csv")?])
}

/// Outcome of re-running a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub out_dir: PathBuf,
    /// `(path, recorded, reproduced)` for every recorded output.
    pub outputs: Vec<(PathBuf, String, Option<String>)>,
    pub params_match: bool,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.params_match && self.outputs.iter().all(|(_, a, b)| b.as_deref() == Some(a.as_str()))
    }
}

/// Re-runs the command a manifest records into `out_dir` and compares every
/// output hash. A recorded input checkpoint must still hash the same.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let m = Manifest::load(manifest_path)?;
    let command = CommandKind::from_name(&m.command)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let checkpoint = match (command, &m.checkpoint) {
        (CommandKind::Train, _) => None,
        (_, None) => return Err(config_err("checkpoint", "manifest records no checkpoint")),
        (_, Some(p)) => {
            let p = if p.is_absolute() { p.clone() } else { base.join(p) };
            let actual = sha256_hex(&std::fs::read(&p)?);
            if Some(&actual) != m.checkpoint_sha256.as_ref() {
                return Err(config_err("checkpoint", format!("{} changed since the run", p.display())));
            }
            Some(p)
        }
    };
    let mut cfg = m.config.clone();
    cfg.run.out_dir = out_dir.to_path_buf();
    let again = execute(command, &cfg, checkpoint.as_deref(), out_dir)?;
    let produced: BTreeMap<&PathBuf, &String> = again.outputs.iter().map(|o| (&o.path, &o.sha256)).collect();
    let outputs = m
        .outputs
        .iter()
        .map(|o| (o.path.clone(), o.sha256.clone(), produced.get(&o.path).map(|s| s.to_string())))
        .collect();
    Ok(ReplayReport { out_dir: out_dir.to_path_buf(), outputs, params_match: again.params_hash == m.params_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_ignores_the_output_directory() {
        let mut a = super::super::config::preset("qdense-guided-47").unwrap();
        let id = run_id(CommandKind::Train, &a);
        a.run.out_dir = PathBuf::from("elsewhere");
        assert_eq!(run_id(CommandKind::Train, &a), id);
        assert_ne!(run_id(CommandKind::Sample, &a), id);
        a.run.seed = 9;
        assert_ne!(run_id(CommandKind::Train, &a), id);
    }

    #[test]
    fn init_params_are_seeded_angles() {
        let a = init_params(500, 3);
        assert_eq!(a, init_params(500, 3));
        assert_ne!(a, init_params(500, 4));
        assert!(a.iter().all(|v| (-PI..PI).contains(v)));
        assert!(a.iter().any(|v| *v < -2.0) && a.iter().any(|v| *v > 2.0));
    }

    #[test]
    fn class_means_average_per_label() {
        let im = |v: f64| ImageTensor::gray(1, 2, vec![v, 2.0 * v]).unwrap();
        let means = class_means(&[im(1.0), im(3.0), im(10.0)], &[0, 0, 1]).unwrap();
        assert_eq!(means[&0].values(), &[2.0, 4.0]);
        assert_eq!(means[&1].values(), &[10.0, 20.0]);
    }
}
