//! Experiment configuration.
//!
//! Files are flat `key = value` lines. `#` starts a comment, blank lines are
//! ignored and dotted keys group related settings:
//!
//! ```text
//! experiment = capacity_sweep
//! seed = 7
//! optim.lr = 0.05
//! activation.t_init = -1
//! ```
//!
//! Later assignments (including `--override key=value`) replace earlier ones.
//! Unknown keys are rejected so that typos cannot silently fall back to
//! defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ngen_core::activations::{BaseActivation, Granularity, DEFAULT_T_INIT};
use ngen_core::network::{
    build_mlp, build_plain_cnn, build_resnet, build_toy_cnn, ActivationSpec, InitKind, NetworkSpec, NgSpec,
};
use ngen_core::optim::{OptimConfig, PlateauMetric, Schedule};

use crate::error::{io_err, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    CapacitySweep,
    CriticalDepth,
    LearningBehavior,
    VarianceStudy,
    SingleRun,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CapacitySweep => "capacity_sweep",
            Self::CriticalDepth => "critical_depth",
            Self::LearningBehavior => "learning_behavior",
            Self::VarianceStudy => "variance_study",
            Self::SingleRun => "single_run",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "capacity_sweep" => Self::CapacitySweep,
            "critical_depth" => Self::CriticalDepth,
            "learning_behavior" => Self::LearningBehavior,
            "variance_study" => Self::VarianceStudy,
            "single_run" => Self::SingleRun,
            _ => return Err(format!("unknown experiment {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    PlainCnn,
    Resnet,
    Mlp,
    ToyCnn,
}

impl FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "plain_cnn" => Self::PlainCnn,
            "resnet" => Self::Resnet,
            "mlp" => Self::Mlp,
            "toy_cnn" => Self::ToyCnn,
            _ => return Err(format!("unknown model family {s:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Weighted-layer depth for the CNNs; number of dense layers for the MLP.
    pub depth: usize,
    /// Base width (CNN channels, MLP hidden units, toy-CNN kernels).
    pub width: usize,
    /// Explicit MLP hidden sizes; overrides `depth`/`width` when non-empty.
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
}

impl ModelConfig {
    pub fn build(
        &self,
        input_shape: &[usize],
        classes: usize,
        activation: ActivationSpec,
    ) -> Result<NetworkSpec> {
        let spec = match self.family {
            ModelFamily::PlainCnn => {
                build_plain_cnn(input_shape, self.depth, self.width, classes, self.batch_norm, activation)?
            }
            ModelFamily::Resnet => build_resnet(input_shape, self.depth, self.width, classes, self.batch_norm, activation)?,
            ModelFamily::ToyCnn => build_toy_cnn(input_shape, self.width, classes, activation)?,
            ModelFamily::Mlp => {
                let input: usize = input_shape.iter().product();
                let hidden = if self.hidden.is_empty() {
                    if self.depth < 1 {
                        return Err(LabError::Config("mlp depth must be at least 1".into()));
                    }
                    vec![self.width; self.depth - 1]
                } else {
                    self.hidden.clone()
                };
                let mut spec = build_mlp(input, &hidden, classes, self.batch_norm, activation)?;
                spec.input_shape = vec![input];
                spec
            }
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Gaussian clusters around random class centers.
    Blobs { classes: usize, shape: Vec<usize>, spread: f64 },
    /// Interleaved two-dimensional spiral arms, reshaped to `shape`.
    Spirals { classes: usize, shape: Vec<usize>, noise: f64 },
    /// Concentric shells: class `k` lies at radius `(k + 0.5) / classes` in
    /// `prod(shape)` dimensions, with Gaussian radial noise.
    Rings { classes: usize, shape: Vec<usize>, noise: f64 },
    Cifar10 {
        path: PathBuf,
        test_path: Option<PathBuf>,
        subset: Option<usize>,
        downsample: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Training samples for the synthetic kinds.
    pub n: usize,
    /// Test samples for the synthetic kinds; held-out count for CIFAR without
    /// a test file.
    pub test_n: usize,
    pub augment: bool,
    pub normalize: bool,
    /// Seed of the data stream; defaults to the run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub t_values: Vec<f64>,
    pub depths: Vec<usize>,
    pub inits: Vec<InitKind>,
    /// Sandwich probe interval in steps; 0 disables probing.
    pub probe_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    pub activation: ActivationSpec,
    pub init: InitKind,
    pub optim: OptimConfig,
    pub data: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub sweep: SweepConfig,
}

/// Raw `key -> value` assignments in file order semantics (last wins).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            raw.assign(line).map_err(|e| LabError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> std::result::Result<(), String> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {assignment:?}"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(format!("invalid key {key:?}"));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Consumes keys from a [`RawConfig`] and reports leftovers.
struct Fields {
    entries: BTreeMap<String, String>,
}

impl Fields {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| LabError::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.entries.remove(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| LabError::Config(format!("{key} item {s:?}: {e}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn shape(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        let Some(v) = self.entries.remove(key) else { return Ok(None) };
        v.split('x')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| LabError::Config(format!("{key} = {v:?}: expected dims like 1x8x8")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(LabError::Config(format!("unknown key {k:?}"))),
        }
    }
}

fn parse_base(name: &str, alpha: Option<f64>) -> Result<BaseActivation> {
    Ok(match name {
        "identity" => BaseActivation::Identity,
        "relu" => BaseActivation::Relu,
        "leaky_relu" => match alpha {
            Some(alpha) => BaseActivation::LeakyRelu { alpha },
            None => BaseActivation::leaky_relu(),
        },
        "prelu" => BaseActivation::Prelu,
        "selu" => BaseActivation::selu(),
        _ => return Err(LabError::Config(format!("unknown activation base {name:?}"))),
    })
}

pub fn base_name(base: &BaseActivation) -> &'static str {
    match base {
        BaseActivation::Identity => "identity",
        BaseActivation::Relu => "relu",
        BaseActivation::LeakyRelu { .. } => "leaky_relu",
        BaseActivation::Prelu => "prelu",
        BaseActivation::Selu { .. } => "selu",
    }
}

fn parse_granularity(name: &str) -> Result<Granularity> {
    Ok(match name {
        "element" => Granularity::ElementWise,
        "channel" => Granularity::ChannelWise,
        "layer" => Granularity::LayerWise,
        _ => return Err(LabError::Config(format!("unknown granularity {name:?}"))),
    })
}

pub fn parse_init(name: &str) -> Result<InitKind> {
    Ok(match name {
        "xavier" => InitKind::Xavier,
        "msra" => InitKind::Msra,
        "orthogonal" => InitKind::Orthogonal,
        _ => return Err(LabError::Config(format!("unknown init {name:?}"))),
    })
}

pub fn init_name(kind: InitKind) -> &'static str {
    match kind {
        InitKind::Xavier => "xavier",
        InitKind::Msra => "msra",
        InitKind::Orthogonal => "orthogonal",
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut f = Fields { entries: raw.entries.clone() };

        let kind = f.or("experiment", ExperimentKind::SingleRun)?;
        let seed = f
            .take("seed")?
            .ok_or_else(|| LabError::Config("seed is required".into()))?;

        let model = ModelConfig {
            family: f.or("model.family", ModelFamily::Mlp)?,
            depth: f.or("model.depth", 3)?,
            width: f.or("model.width", 8)?,
            hidden: f.list("model.hidden")?.unwrap_or_default(),
            batch_norm: f.or("model.batch_norm", false)?,
        };

        let alpha = f.take("activation.alpha")?;
        let base = parse_base(&f.or("activation.base", "relu".to_string())?, alpha)?;
        let ng = f.or("activation.ng", true)?;
        let ng_spec = NgSpec {
            t_init: f.or("activation.t_init", DEFAULT_T_INIT)?,
            granularity: parse_granularity(&f.or("activation.granularity", "channel".to_string())?)?,
            trainable: f.or("activation.trainable", true)?,
        };
        let activation = if ng { ActivationSpec::ng(base, ng_spec) } else { ActivationSpec::plain(base) };

        let init = parse_init(&f.or("init.kind", "xavier".to_string())?)?;

        let defaults = OptimConfig::default();
        let lr = f.or("optim.lr", defaults.lr)?;
        let momentum = f.or("optim.momentum", defaults.momentum)?;
        let factor = f.or("optim.factor", 0.1)?;
        let schedule = match f.or("optim.schedule", "constant".to_string())?.as_str() {
            "constant" => Schedule::constant(),
            "step" => Schedule::Step {
                milestones: f.list("optim.milestones")?.unwrap_or_default(),
                factor,
            },
            "plateau" => Schedule::Plateau {
                patience: f.or("optim.patience", 10)?,
                factor,
                metric: match f.or("optim.metric", "train_loss".to_string())?.as_str() {
                    "train_loss" => PlateauMetric::TrainLoss,
                    "test_error" => PlateauMetric::TestError,
                    m => return Err(LabError::Config(format!("unknown plateau metric {m:?}"))),
                },
            },
            s => return Err(LabError::Config(format!("unknown schedule {s:?}"))),
        };
        let optim = OptimConfig {
            lr,
            momentum,
            weight_decay: f.or("optim.weight_decay", defaults.weight_decay)?,
            t_lr: f.or("optim.t_lr", lr)?,
            t_momentum: f.or("optim.t_momentum", momentum)?,
            schedule,
            schedule_t: f.or("optim.schedule_t", defaults.schedule_t)?,
        };
        optim.validate()?;

        let classes = f.or("data.classes", 3)?;
        let data_kind = match f.or("data.kind", "spirals".to_string())?.as_str() {
            "blobs" => DatasetKind::Blobs {
                classes,
                shape: f.shape("data.shape")?.unwrap_or_else(|| vec![2]),
                spread: f.or("data.spread", 1.0)?,
            },
            "spirals" => DatasetKind::Spirals {
                classes,
                shape: f.shape("data.shape")?.unwrap_or_else(|| vec![2]),
                noise: f.or("data.noise", 0.2)?,
            },
            "rings" => DatasetKind::Rings {
                classes,
                shape: f.shape("data.shape")?.unwrap_or_else(|| vec![2]),
                noise: f.or("data.noise", 0.05)?,
            },
            "cifar10" => DatasetKind::Cifar10 {
                path: f
                    .take::<String>("data.path")?
                    .ok_or_else(|| LabError::Config("data.path is required for cifar10".into()))?
                    .into(),
                test_path: f.take::<String>("data.test_path")?.map(PathBuf::from),
                subset: f.take("data.subset")?,
                downsample: f.or("data.downsample", 1)?,
            },
            k => return Err(LabError::Config(format!("unknown dataset {k:?}"))),
        };
        let data = DatasetSpec {
            kind: data_kind,
            n: f.or("data.n", 600)?,
            test_n: f.or("data.test_n", 300)?,
            augment: f.or("data.augment", false)?,
            normalize: f.or("data.normalize", true)?,
            seed: f.take("data.seed")?,
        };

        let sweep = SweepConfig {
            t_values: f.list("sweep.t_values")?.unwrap_or_else(|| vec![-2.0, -1.0, -0.5, -0.25]),
            depths: f.list("sweep.depths")?.unwrap_or_default(),
            inits: f
                .list::<String>("sweep.inits")?
                .unwrap_or_else(|| vec!["xavier".into(), "msra".into(), "orthogonal".into()])
                .iter()
                .map(|s| parse_init(s))
                .collect::<Result<_>>()?,
            probe_every: f.or("sweep.probe_every", 0)?,
        };

        let cfg = Self {
            kind,
            model,
            activation,
            init,
            optim,
            data,
            epochs: f.or("epochs", 30)?,
            batch_size: f.or("batch_size", 32)?,
            seed,
            out: f.or("out", PathBuf::from("out"))?,
            sweep,
        };
        f.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LabError::Config("epochs and batch_size must be positive".into()));
        }
        if self.data.n == 0 {
            return Err(LabError::Config("data.n must be positive".into()));
        }
        if let DatasetKind::Cifar10 { downsample, .. } = self.data.kind {
            if downsample == 0 || 32 % downsample != 0 {
                return Err(LabError::Config("data.downsample must divide 32".into()));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match &self.data.kind {
            DatasetKind::Blobs { classes, .. }
            | DatasetKind::Spirals { classes, .. }
            | DatasetKind::Rings { classes, .. } => *classes,
            DatasetKind::Cifar10 { .. } => 10,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }
}
