//! Experiment configuration: a TOML file with `model`, `schedule`, `data`,
//! `optimizer` and `run` sections, plus named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionSchedule, TargetMode};
use crate::error::{Error, Result};
use crate::grad::{GradMethod, Wrap};
use crate::models::{QDenseConfig, QUNetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    QDense(QDenseConfig),
    QuNet(QUNetConfig),
    /// Q-Dense circuit trained for unitary single sampling.
    SingleSample(QDenseConfig),
}

impl ModelConfig {
    pub fn is_single_sample(&self) -> bool {
        matches!(self, ModelConfig::SingleSample(_))
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            ModelConfig::QDense(c) | ModelConfig::SingleSample(c) => c.guided.then_some(c.n_classes),
            ModelConfig::QuNet(c) => c.guided.then_some(c.n_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub tau: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub target: TargetMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            tau: DiffusionSchedule::DEFAULT_TAU,
            beta_start: DiffusionSchedule::DEFAULT_BETA_START,
            beta_end: DiffusionSchedule::DEFAULT_BETA_END,
            target: TargetMode::Data,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.tau, self.beta_start, self.beta_end, self.target)
            .map_err(|e| config_err("schedule", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    #[default]
    Idx,
    Cifar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub format: DataFormat,
    /// Image file (IDX) or batch file (CIFAR); relative paths resolve
    /// against the dataset directory.
    pub images: PathBuf,
    /// IDX label file; unused for CIFAR.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
    /// Images skipped after filtering.
    #[serde(default)]
    pub offset: usize,
    /// Images kept after `offset`.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_size() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub method: GradMethod,
    /// Defaults to `pi` for diffusion models and `two-pi` for single sampling.
    #[serde(default)]
    pub wrap: Option<Wrap>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 0.001, batch_size: 20, epochs: 10, method: GradMethod::ParameterShift, wrap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Images generated by `sample`/`eval`, or inpainted by `inpaint`.
    pub n_samples: usize,
    /// Class to generate; guided models cycle through all classes when unset.
    #[serde(default)]
    pub label: Option<usize>,
    /// Single sampling: estimate probabilities from this many shots.
    #[serde(default)]
    pub shots: Option<u64>,
    pub feature_dim: usize,
    /// Rows hidden at the bottom for `inpaint`; half the image when unset.
    #[serde(default)]
    pub mask_rows: Option<usize>,
    pub reset_each_step: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            n_samples: 8,
            label: None,
            shots: None,
            feature_dim: crate::metrics::DEFAULT_FEATURE_DIM,
            mask_rows: None,
            reset_each_step: true,
        }
    }
}

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            // Spans cover either a key or a whole table; name the table by its header.
            let field = e
                .span()
                .map(|s| text[s].lines().next().unwrap_or("").trim().trim_matches(['[', ']']).to_string())
                .unwrap_or_default();
            config_err(&field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn wrap(&self) -> Wrap {
        self.optimizer
            .wrap
            .unwrap_or(if self.model.is_single_sample() { Wrap::TwoPi } else { Wrap::Pi })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        let pixels = self.data.size * self.data.size;
        match &self.model {
            ModelConfig::QDense(m) | ModelConfig::SingleSample(m) => {
                if m.n_image_qubits == 0 || m.n_image_qubits >= crate::qstate::MAX_QUBITS {
                    return Err(config_err("model.n_image_qubits", "must be between 1 and 19"));
                }
                if pixels > 1 << m.n_image_qubits {
                    return Err(config_err(
                        "model.n_image_qubits",
                        format!("{pixels} pixels do not fit into {} qubits", m.n_image_qubits),
                    ));
                }
                if m.n_qubits() < 2 {
                    return Err(config_err("model.n_image_qubits", "entangling layers need at least two qubits"));
                }
            }
            ModelConfig::QuNet(u) => {
                let div = 1usize << u.channels.len().saturating_sub(1);
                if self.data.size % div != 0 {
                    return Err(config_err("data.size", format!("must be divisible by {div} for this depth")));
                }
            }
        }
        if self.model.is_single_sample() && self.schedule.target != TargetMode::Data {
            return Err(config_err("schedule.target", "single sampling trains on data targets"));
        }
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(config_err("optimizer.lr", "must be a non-negative number"));
        }
        if self.optimizer.batch_size == 0 {
            return Err(config_err("optimizer.batch_size", "must be positive"));
        }
        if let (Some(l), Some(n)) = (self.run.label, self.model.n_classes()) {
            if l >= n {
                return Err(config_err("run.label", format!("class {l} of a {n}-class model")));
            }
        }
        if self.data.format == DataFormat::Idx && self.data.labels.is_none() {
            return Err(config_err("data.labels", "IDX data needs a label file"));
        }
        Ok(())
    }
}

/// A named configuration with a tuned learning rate.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: Config,
}

fn dense(n_image_qubits: usize, n_layers: usize, guided: bool, n_reuploads: usize, n_classes: usize) -> QDenseConfig {
    QDenseConfig { n_image_qubits, n_layers, guided, ancilla: false, n_reuploads, n_classes }
}

fn qunet(channels: &[usize], layers: usize, guided: bool, n_classes: usize) -> QUNetConfig {
    QUNetConfig { channels: channels.to_vec(), layers_per_qconv: layers, kernel: 3, guided, n_classes }
}

#[derive(Clone, Copy)]
enum Set {
    Digits8,
    Mnist28,
    Mnist32,
    Fashion,
}

fn data(set: Set) -> DataConfig {
    let (dir, size, classes) = match set {
        Set::Digits8 => ("mnist", 8, Some(vec![0, 1])),
        Set::Mnist28 => ("mnist", 28, None),
        Set::Mnist32 => ("mnist", 32, None),
        Set::Fashion => ("fashion", 32, None),
    };
    DataConfig {
        format: DataFormat::Idx,
        images: PathBuf::from(format!("{dir}/train-images-idx3-ubyte")),
        labels: Some(PathBuf::from(format!("{dir}/train-labels-idx1-ubyte"))),
        size,
        classes,
        offset: 0,
        limit: None,
    }
}

fn entry(name: &'static str, description: &'static str, model: ModelConfig, set: Set, target: TargetMode, lr: f64) -> Preset {
    let batch_size = if matches!(model, ModelConfig::QuNet(_)) { 10 } else { 20 };
    Preset {
        name,
        description,
        config: Config {
            model,
            schedule: ScheduleConfig { target, ..ScheduleConfig::default() },
            data: data(set),
            optimizer: OptimizerConfig { lr, batch_size, ..OptimizerConfig::default() },
            run: RunConfig { out_dir: PathBuf::from(format!("runs/{name}")), ..RunConfig::default() },
        },
    }
}

pub fn presets() -> Vec<Preset> {
    use ModelConfig::{QDense as D, QuNet as U, SingleSample as S};
    use Set::*;
    use TargetMode::{Data, Noise};
    let ss = |layers, guided, ancilla, reups, n_image_qubits| {
        S(QDenseConfig { n_image_qubits, n_layers: layers, guided, ancilla, n_reuploads: reups, n_classes: 2 })
    };
    vec![
        entry("qdense-guided-47", "guided Q-Dense, 47 layers, digits 0/1 at 8x8", D(dense(6, 47, true, 0, 2)), Digits8, Data, 0.00097),
        entry("qdense-guided-47-reup3", "guided Q-Dense, 47 layers, 3 re-uploads", D(dense(6, 47, true, 3, 2)), Digits8, Data, 0.00360),
        entry("qdense-guided-47-reup5", "guided Q-Dense, 47 layers, 5 re-uploads", D(dense(6, 47, true, 5, 2)), Digits8, Data, 0.00345),
        entry("qdense-guided-47-reup7", "guided Q-Dense, 47 layers, 7 re-uploads", D(dense(6, 47, true, 7, 2)), Digits8, Data, 0.00362),
        entry("qdense-50", "unguided Q-Dense, 50 layers, data target", D(dense(6, 50, false, 0, 2)), Digits8, Data, 0.00065),
        entry("qunet-2-4-8-l8", "QU-Net 2/4/8 channels, 8 layers, data target", U(qunet(&[2, 4, 8], 8, false, 2)), Digits8, Data, 0.00023),
        entry("qunet-2-4-8-l12", "QU-Net 2/4/8 channels, 12 layers, data target", U(qunet(&[2, 4, 8], 12, false, 2)), Digits8, Data, 0.00815),
        entry("qdense-55-noise", "unguided Q-Dense, 55 layers, noise target", D(dense(6, 55, false, 0, 2)), Digits8, Noise, 0.00160),
        entry("qunet-2-4-8-l8-noise", "QU-Net 2/4/8 channels, 8 layers, noise target", U(qunet(&[2, 4, 8], 8, false, 2)), Digits8, Noise, 0.00113),
        entry("qunet-2-4-8-l12-noise", "QU-Net 2/4/8 channels, 12 layers, noise target", U(qunet(&[2, 4, 8], 12, false, 2)), Digits8, Noise, 0.00912),
        entry("mnist28-qdense-guided-30", "guided Q-Dense, 30 layers, MNIST 28x28, noise target", D(dense(10, 30, true, 0, 10)), Mnist28, Noise, 0.00409),
        entry("mnist28-qdense-guided-60", "guided Q-Dense, 60 layers, MNIST 28x28, noise target", D(dense(10, 60, true, 0, 10)), Mnist28, Noise, 0.00211),
        entry("mnist28-qunet-guided-l9", "guided QU-Net 2/4/8, 9 layers, MNIST 28x28", U(qunet(&[2, 4, 8], 9, true, 10)), Mnist28, Noise, 0.00287),
        entry("mnist28-qunet-guided-l19", "guided QU-Net 2/4/8, 19 layers, MNIST 28x28", U(qunet(&[2, 4, 8], 19, true, 10)), Mnist28, Noise, 0.01479),
        entry("fashion-qdense-guided-121", "guided Q-Dense, 121 layers, Fashion 32x32", D(dense(10, 121, true, 0, 10)), Fashion, Noise, 0.00014),
        entry("fashion-qdense-guided-60", "guided Q-Dense, 60 layers, Fashion 32x32", D(dense(10, 60, true, 0, 10)), Fashion, Noise, 0.00723),
        entry("fashion-qunet-guided-l8", "guided QU-Net 3/6/12, 8 layers, Fashion 32x32", U(qunet(&[3, 6, 12], 8, true, 10)), Fashion, Noise, 0.00051),
        entry("fashion-qunet-guided-l12", "guided QU-Net 3/6/12, 12 layers, Fashion 32x32", U(qunet(&[3, 6, 12], 12, true, 10)), Fashion, Noise, 0.00029),
        entry("uss-476-ancilla", "single sampling, 476 layers, unguided with ancilla", ss(476, false, true, 0, 6), Digits8, Data, 0.00012),
        entry("uss-47-ancilla", "single sampling, 47 layers, unguided with ancilla", ss(47, false, true, 0, 6), Digits8, Data, 0.00322),
        entry("uss-55", "single sampling, 55 layers, no ancilla", ss(55, false, false, 0, 6), Digits8, Data, 0.00172),
        entry("uss-555", "single sampling, 555 layers, no ancilla", ss(555, false, false, 0, 6), Digits8, Data, 0.00002),
        entry("uss-111", "single sampling, 111 layers, no ancilla", ss(111, false, false, 0, 6), Digits8, Data, 0.00419),
        entry("uss-95-ancilla", "single sampling, 95 layers, unguided with ancilla", ss(95, false, true, 0, 6), Digits8, Data, 0.00104),
        entry("uss-guided-476", "guided single sampling, 476 layers", ss(476, true, false, 0, 6), Digits8, Data, 0.00022),
        entry("uss-guided-476-reup10", "guided single sampling, 476 layers, 10 re-uploads", ss(476, true, false, 10, 6), Digits8, Data, 0.00016),
        entry("uss-guided-47", "guided single sampling, 47 layers", ss(47, true, false, 0, 6), Digits8, Data, 0.00721),
        entry("uss-guided-47-reup10", "guided single sampling, 47 layers, 10 re-uploads", ss(47, true, false, 10, 6), Digits8, Data, 0.00220),
        entry("uss-guided-95", "guided single sampling, 95 layers", ss(95, true, false, 0, 6), Digits8, Data, 0.00099),
        entry("uss32-66", "single sampling, 66 layers, MNIST 32x32, no ancilla", ss(66, false, false, 0, 10), Mnist32, Data, 0.00212),
        entry("uss32-133", "single sampling, 133 layers, MNIST 32x32, no ancilla", ss(133, false, false, 0, 10), Mnist32, Data, 0.00190),
    ]
}

pub fn preset(name: &str) -> Result<Config> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.config)
        .ok_or_else(|| config_err("preset", format!("unknown preset `{name}`; run `qdiff presets` for the list")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "q-dense"
n_image_qubits = 6
n_layers = 47
guided = true

[data]
images = "a.idx"
labels = "b.idx"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.schedule.tau, 10);
        assert_eq!(c.optimizer.batch_size, 20);
        assert_eq!(c.wrap(), Wrap::Pi);
        match &c.model {
            ModelConfig::QDense(m) => assert_eq!(m.n_params(), 987),
            other => panic!("{other:?}"),
        }
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let typo = MINIMAL.replace("n_layers", "n_layer");
        match Config::parse(&typo) {
            Err(Error::Config { field, reason }) => {
                assert_eq!(field, "model");
                assert!(reason.contains("n_layer"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let extra = format!("{MINIMAL}\n[optimizer]\nlr = 0.1\nbatch_size = 2\nepochs = 1\nmethod = \"adjoint\"\nmomentum = 0.9\n");
        let err = Config::parse(&extra).unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
        let section = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(Config::parse(&section).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let small = MINIMAL.replace("n_image_qubits = 6", "n_image_qubits = 5");
        match Config::parse(&small) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.n_image_qubits"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn presets_follow_the_tables() {
        let all = presets();
        assert!(all.len() >= 30);
        for p in &all {
            p.config.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
        let q = preset("qdense-guided-47").unwrap();
        assert_eq!(q.optimizer.lr, 0.00097);
        assert_eq!(q.optimizer.batch_size, 20);
        assert_eq!(preset("qunet-2-4-8-l8").unwrap().optimizer.batch_size, 10);
        assert_eq!(preset("uss-55").unwrap().wrap(), Wrap::TwoPi);
        match preset("uss-47-ancilla").unwrap().model {
            ModelConfig::SingleSample(m) => assert_eq!(m.n_params(), 47 * 3 * 7),
            other => panic!("{other:?}"),
        }
        assert!(preset("nope").is_err());
    }
}
