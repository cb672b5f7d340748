//! Mini-batch training of teachers and students.

use anyhow::{ensure, Context};

use crate::data::{batch_indices, LabeledDataset};
use crate::harness::config::{ExperimentConfig, Method, OptimizerSpec};
use crate::losses::{contrastive_loss, kd_kl_loss, supervised_ce_loss, topkd_loss, LossOutput};
use crate::model::{backward, evaluate_accuracy, forward, init_mlp, predict, sgd_step, MlpParams, SgdState};
use crate::numerics::{IndexVector, Matrix};
use crate::scaling::{apply_tsm, ScalingSpec};

/// Loss components of one batch (or their epoch mean).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub distill: f64,
    pub contrastive: f64,
    pub tdl: f64,
    pub kd: f64,
}

impl LossParts {
    fn accumulate(&mut self, o: &LossParts) {
        self.total += o.total;
        self.ce += o.ce;
        self.distill += o.distill;
        self.contrastive += o.contrastive;
        self.tdl += o.tdl;
        self.kd += o.kd;
    }

    fn divide(&mut self, n: f64) {
        for v in [
            &mut self.total,
            &mut self.ce,
            &mut self.distill,
            &mut self.contrastive,
            &mut self.tdl,
            &mut self.kd,
        ] {
            *v /= n;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub params: MlpParams,
    pub epochs: Vec<EpochRecord>,
    pub final_val_acc: f64,
}

/// Everything a distillation objective needs besides the student logits.
pub struct Objective<'a> {
    pub method: Method,
    pub config: &'a ExperimentConfig,
}

impl Objective<'_> {
    /// Total loss and gradient for one batch.
    pub fn evaluate(&self, student: &Matrix, teacher: Option<&Matrix>, labels: &IndexVector) -> anyhow::Result<(LossOutput, LossParts)> {
        let cfg = self.config;
        let ce = supervised_ce_loss(student, labels)?;
        let mut parts = LossParts {
            ce: ce.value,
            ..LossParts::default()
        };
        let mut grad = ce.grad_student.scaled(cfg.ce_weight);
        let mut total = cfg.ce_weight * ce.value;

        if self.method.uses_teacher() && cfg.distill_weight != 0.0 {
            let t = teacher.context("distillation needs teacher logits")?;
            let scaling = ScalingSpec {
                enabled: cfg.scaling.enabled && self.method.uses_scaling(),
                ..cfg.scaling.clone()
            };
            let distill = match self.method {
                Method::Scratch => unreachable!(),
                Method::KdKl => {
                    let out = kd_kl_loss(student, t, cfg.temperature)?;
                    parts.kd = out.value;
                    out
                }
                Method::Contrastive => {
                    let out = contrastive_loss(student, t, cfg.tau, cfg.normalize)?;
                    parts.contrastive = out.value;
                    out
                }
                Method::TopkdNoTdl => {
                    let scaled = apply_tsm(t, labels, &scaling)?.values;
                    let out = contrastive_loss(student, &scaled, cfg.tau, cfg.normalize)?;
                    parts.contrastive = out.value;
                    out
                }
                Method::Topkd | Method::TopkdNoTsm => {
                    let out = topkd_loss(student, t, labels, &scaling, &cfg.tdl, &cfg.contrastive_spec())?;
                    parts.contrastive = out.contrastive;
                    parts.tdl = out.tdl;
                    out.total
                }
            };
            parts.distill = distill.value;
            total += cfg.distill_weight * distill.value;
            grad.add_scaled(&distill.grad_student, cfg.distill_weight)?;
        }
        parts.total = total;
        Ok((
            LossOutput {
                value: total,
                grad_student: grad,
            },
            parts,
        ))
    }
}

/// Stream id mixed into the run seed for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Trains `params` in place-free fashion and returns the final parameters and
/// per-epoch metrics. `teacher_train_logits` holds the fixed teacher's logits
/// for every training sample, row-aligned with `train`.
pub fn train(
    mut params: MlpParams,
    train: &LabeledDataset,
    val: &LabeledDataset,
    teacher_train_logits: Option<&Matrix>,
    objective: &Objective<'_>,
    opt: &OptimizerSpec,
    seed: u64,
) -> anyhow::Result<RunResult> {
    if let Some(t) = teacher_train_logits {
        ensure!(
            t.shape() == (train.len(), params.output_dim()),
            "teacher logits are {}x{}, expected {}x{}",
            t.rows(),
            t.cols(),
            train.len(),
            params.output_dim()
        );
    }
    let mut state = SgdState::new(&params, opt.lr, opt.momentum, opt.weight_decay)?;
    let mut epochs = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        state.learning_rate = opt.lr_at(epoch);
        let shuffle_seed = crate::numerics::RandomStream::derive(seed ^ SHUFFLE_STREAM, epoch as u64).next_u64();
        let mut sum = LossParts::default();
        let mut n_batches = 0usize;
        for idx in batch_indices(train.len(), opt.batch_size, shuffle_seed) {
            let x = train.features.select_rows(&idx);
            let y: IndexVector = idx.iter().map(|&i| train.labels[i]).collect();
            let t = teacher_train_logits.map(|t| t.select_rows(&idx));
            let (logits, cache) = forward(&params, &x)?;
            let (loss, parts) = objective.evaluate(&logits, t.as_ref(), &y)?;
            let grads = backward(&params, &cache, &loss.grad_student)?;
            sgd_step(&mut params, &grads, &mut state)?;
            sum.accumulate(&parts);
            n_batches += 1;
        }
        ensure!(
            params.is_finite(),
            "training diverged at epoch {epoch} (non-finite parameters); lower lr or distill_weight"
        );
        sum.divide(n_batches.max(1) as f64);
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr: state.learning_rate,
            train_acc: evaluate_accuracy(&params, train)?,
            val_acc: evaluate_accuracy(&params, val)?,
            loss: sum,
        });
    }
    let final_val_acc = match epochs.last() {
        Some(e) => e.val_acc,
        None => evaluate_accuracy(&params, val)?,
    };
    Ok(RunResult {
        params,
        epochs,
        final_val_acc,
    })
}

pub fn full_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain([output]).collect()
}

/// Trains a teacher with cross-entropy only.
pub fn train_teacher(cfg: &ExperimentConfig, train_ds: &LabeledDataset, val: &LabeledDataset) -> anyhow::Result<RunResult> {
    let dims = full_dims(train_ds.dim(), &cfg.teacher_dims, train_ds.num_classes);
    let params = init_mlp(&dims, cfg.teacher_seed)?;
    let objective = Objective {
        method: Method::Scratch,
        config: cfg,
    };
    train(params, train_ds, val, None, &objective, cfg.teacher_optimizer(), cfg.teacher_seed)
}

/// Trains one student with the configured method and seed.
pub fn train_student(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    train_ds: &LabeledDataset,
    val: &LabeledDataset,
    teacher_train_logits: Option<&Matrix>,
) -> anyhow::Result<RunResult> {
    let dims = full_dims(train_ds.dim(), &cfg.student_dims, train_ds.num_classes);
    let params = init_mlp(&dims, seed)?;
    let objective = Objective { method, config: cfg };
    let teacher = if method.uses_teacher() { teacher_train_logits } else { None };
    train(params, train_ds, val, teacher, &objective, &cfg.optimizer, seed)
}

/// The teacher's logits over a dataset, after checking it fits the data.
pub fn teacher_logits(teacher: &MlpParams, ds: &LabeledDataset) -> anyhow::Result<Matrix> {
    ensure!(
        teacher.input_dim() == ds.dim(),
        "teacher expects {} features, data has {}",
        teacher.input_dim(),
        ds.dim()
    );
    ensure!(
        teacher.output_dim() == ds.num_classes,
        "teacher outputs {} classes, data has {}",
        teacher.output_dim(),
        ds.num_classes
    );
    Ok(predict(teacher, &ds.features)?)
}
