use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::data::{generate_hierarchical, load_csv, load_csv_with_classes, DatasetSpec, LabeledDataset};
use crate::losses::{ContrastiveSpec, TdlSpec};
use crate::scaling::ScalingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Hard labels only; the teacher is ignored.
    Scratch,
    /// Temperature-softened KL divergence to the teacher.
    KdKl,
    /// Contrastive term against the raw teacher.
    Contrastive,
    /// Contrastive + decoupled loss, both on the scaled teacher.
    Topkd,
    /// `Topkd` with scaling switched off.
    TopkdNoTsm,
    /// Contrastive term on the scaled teacher, no decoupled loss.
    TopkdNoTdl,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Scratch,
        Method::KdKl,
        Method::Contrastive,
        Method::TopkdNoTdl,
        Method::TopkdNoTsm,
        Method::Topkd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scratch => "scratch",
            Method::KdKl => "kd_kl",
            Method::Contrastive => "contrastive",
            Method::Topkd => "topkd",
            Method::TopkdNoTsm => "topkd_no_tsm",
            Method::TopkdNoTdl => "topkd_no_tdl",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Method::Scratch
    }

    pub fn uses_scaling(self) -> bool {
        matches!(self, Method::Topkd | Method::TopkdNoTdl)
    }

    pub fn uses_tdl(self) -> bool {
        matches!(self, Method::Topkd | Method::TopkdNoTsm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .with_context(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(DatasetSpec),
    Csv { train: PathBuf, val: PathBuf, dim: usize },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(DatasetSpec::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> anyhow::Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSource::Synthetic(spec) => Ok(generate_hierarchical(spec)?),
            DatasetSource::Csv { train, val, dim } => {
                let tr = load_csv(train, *dim).with_context(|| format!("reading {}", train.display()))?;
                let va = load_csv_with_classes(val, *dim, tr.num_classes)
                    .with_context(|| format!("reading {}", val.display()))?;
                Ok((tr, va))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    /// Epochs at which the learning rate is multiplied by `factor`.
    pub milestones: Vec<usize>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: Option<LrDecay>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: None,
        }
    }
}

impl OptimizerSpec {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match &self.lr_decay {
            Some(d) => {
                let hits = d.milestones.iter().filter(|&&m| epoch >= m).count();
                self.lr * d.factor.powi(hits as i32)
            }
            None => self.lr,
        }
    }

    pub fn validate(&self, what: &str) -> anyhow::Result<()> {
        if self.batch_size == 0 {
            bail!("{what}.batch_size must be >= 1");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            bail!("{what}: need lr > 0, 0 <= momentum < 1, weight_decay >= 0");
        }
        if let Some(d) = &self.lr_decay {
            if !(d.factor > 0.0) {
                bail!("{what}.lr_decay.factor must be > 0");
            }
        }
        Ok(())
    }
}

/// One experiment: data, architectures, objective and optimizer settings.
///
/// `teacher_dims` / `student_dims` list hidden-layer widths; the input and
/// output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub teacher_dims: Vec<usize>,
    pub student_dims: Vec<usize>,
    pub method: Method,
    pub scaling: ScalingSpec,
    pub tdl: TdlSpec,
    pub tau: f64,
    pub normalize: bool,
    pub tsm_on_contrastive: bool,
    pub temperature: f64,
    pub ce_weight: f64,
    pub distill_weight: f64,
    pub optimizer: OptimizerSpec,
    /// Teacher optimizer; `None` reuses `optimizer`.
    pub teacher_optimizer: Option<OptimizerSpec>,
    pub teacher_seed: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            teacher_dims: vec![512],
            student_dims: vec![16],
            method: Method::Topkd,
            scaling: ScalingSpec {
                lambda: 0.1,
                ..ScalingSpec::default()
            },
            tdl: TdlSpec::default(),
            tau: 0.5,
            normalize: true,
            tsm_on_contrastive: true,
            temperature: 4.0,
            ce_weight: 1.0,
            distill_weight: 3.0,
            optimizer: OptimizerSpec::default(),
            teacher_optimizer: Some(OptimizerSpec {
                weight_decay: 0.01,
                ..OptimizerSpec::default()
            }),
            teacher_seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn teacher_optimizer(&self) -> &OptimizerSpec {
        self.teacher_optimizer.as_ref().unwrap_or(&self.optimizer)
    }

    pub fn contrastive_spec(&self) -> ContrastiveSpec {
        ContrastiveSpec {
            tau: self.tau,
            normalize: self.normalize,
            scaled_teacher: self.tsm_on_contrastive,
        }
    }

    /// Checks the settings the chosen method actually uses.
    pub fn validate(&self, num_classes: usize) -> anyhow::Result<()> {
        self.optimizer.validate("optimizer")?;
        self.teacher_optimizer().validate("teacher_optimizer")?;
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.teacher_dims.contains(&0) || self.student_dims.contains(&0) {
            bail!("hidden layer widths must be >= 1");
        }
        if !(self.ce_weight >= 0.0 && self.distill_weight >= 0.0) {
            bail!("loss weights must be >= 0");
        }
        let m = self.method;
        if m.uses_scaling() && self.scaling.enabled {
            self.scaling.validate()?;
            if 2 * self.scaling.k > num_classes {
                bail!("scaling.k = {} needs 2k <= {num_classes} classes", self.scaling.k);
            }
        }
        if m.uses_tdl() {
            self.tdl.validate(num_classes)?;
        }
        if matches!(m, Method::Contrastive | Method::Topkd | Method::TopkdNoTsm | Method::TopkdNoTdl) && !(self.tau > 0.0) {
            bail!("tau must be > 0");
        }
        if m == Method::KdKl && !(self.temperature > 0.0) {
            bail!("temperature must be > 0");
        }
        Ok(())
    }
}
