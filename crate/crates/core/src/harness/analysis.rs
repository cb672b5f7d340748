//! Logit analyses of trained models: where the teacher's mistakes land, and
//! how closely a student reproduces the teacher's class-correlation structure.

use anyhow::{bail, ensure};
use serde::Serialize;

use crate::data::LabeledDataset;
use crate::model::{predict, MlpParams};
use crate::numerics::{argmax, topk_indices, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopkReport {
    pub k: usize,
    pub samples: usize,
    pub top1_accuracy: f64,
    /// Fraction of all samples whose label is among the top-k logits.
    pub topk_accuracy: f64,
    pub wrong_count: usize,
    /// Among top-1 mistakes: label inside the top-k. `None` without mistakes.
    pub gt_in_topk_given_wrong: Option<f64>,
    /// Among top-1 mistakes: predicted class shares the label's superclass.
    /// `None` without mistakes or without a class hierarchy.
    pub same_superclass_given_wrong: Option<f64>,
    /// Chance level `(M − 1)/(C − 1)` of landing in the right superclass with
    /// a uniformly random wrong class.
    pub same_superclass_chance: Option<f64>,
}

pub fn analyze_topk(teacher: &MlpParams, ds: &LabeledDataset, k: usize) -> anyhow::Result<TopkReport> {
    let c = teacher.output_dim();
    if k == 0 || k > c {
        bail!("k = {k} must be in 1..={c}");
    }
    ensure!(!ds.is_empty(), "dataset is empty");
    ensure!(ds.num_classes <= c, "data has {} classes, model outputs {c}", ds.num_classes);
    let logits = predict(teacher, &ds.features)?;
    let (mut correct, mut in_topk, mut wrong, mut wrong_in_topk, mut wrong_same_super) = (0, 0, 0, 0, 0);
    for (row, &y) in logits.row_iter().zip(ds.labels.iter()) {
        let pred = argmax(row);
        let hit_k = topk_indices(row, k)?.contains(&y);
        in_topk += usize::from(hit_k);
        if pred == y {
            correct += 1;
            continue;
        }
        wrong += 1;
        wrong_in_topk += usize::from(hit_k);
        if let Some(map) = &ds.superclass_of {
            wrong_same_super += usize::from(pred < map.len() && map[pred] == map[y]);
        }
    }
    let n = ds.len() as f64;
    let frac = |x: usize| (wrong > 0).then(|| x as f64 / wrong as f64);
    let chance = ds.superclass_of.as_ref().and_then(|map| superclass_chance(map));
    Ok(TopkReport {
        k,
        samples: ds.len(),
        top1_accuracy: correct as f64 / n,
        topk_accuracy: in_topk as f64 / n,
        wrong_count: wrong,
        gt_in_topk_given_wrong: frac(wrong_in_topk),
        same_superclass_given_wrong: ds.superclass_of.as_ref().and(frac(wrong_same_super)),
        same_superclass_chance: chance,
    })
}

/// Probability that a uniformly random wrong class shares the true class's
/// superclass, averaged over true classes.
pub fn superclass_chance(superclass_of: &[usize]) -> Option<f64> {
    let c = superclass_of.len();
    if c < 2 {
        return None;
    }
    let total: f64 = (0..c)
        .map(|y| {
            let siblings = superclass_of.iter().filter(|&&s| s == superclass_of[y]).count() - 1;
            siblings as f64 / (c - 1) as f64
        })
        .sum();
    Some(total / c as f64)
}

/// Pearson correlation between logit columns over the samples. Columns with
/// zero variance correlate 0 with everything else; the diagonal is 1. Returns
/// the matrix and the zero-variance column indices.
pub fn logit_correlation(logits: &Matrix) -> (Matrix, Vec<usize>) {
    let (n, c) = logits.shape();
    let mut means = vec![0.0; c];
    for row in logits.row_iter() {
        means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    means.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut cov = Matrix::zeros(c, c);
    for row in logits.row_iter() {
        for i in 0..c {
            let di = row[i] - means[i];
            for j in i..c {
                cov[(i, j)] += di * (row[j] - means[j]);
            }
        }
    }
    let sd: Vec<f64> = (0..c).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let scale = sd.iter().fold(0.0f64, |m, v| m.max(*v));
    let degenerate: Vec<usize> = (0..c).filter(|&i| sd[i] <= 1e-12 * scale.max(1e-300)).collect();
    let mut corr = Matrix::zeros(c, c);
    for i in 0..c {
        corr[(i, i)] = 1.0;
        for j in (i + 1)..c {
            let r = if degenerate.contains(&i) || degenerate.contains(&j) {
                0.0
            } else {
                (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
            };
            corr[(i, j)] = r;
            corr[(j, i)] = r;
        }
    }
    (corr, degenerate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrReport {
    /// `|corr_T − corr_S|` divided by its maximum (all zeros if identical).
    pub normalized_diff: Matrix,
    /// Mean of the unnormalized `|corr_T − corr_S|` over all `C²` entries.
    pub mean_abs_diff: f64,
    pub max_abs_diff: f64,
    pub zero_variance_teacher: Vec<usize>,
    pub zero_variance_student: Vec<usize>,
}

pub fn analyze_corr(teacher: &MlpParams, student: &MlpParams, ds: &LabeledDataset) -> anyhow::Result<CorrReport> {
    ensure!(
        teacher.output_dim() == student.output_dim(),
        "teacher has {} classes, student {}",
        teacher.output_dim(),
        student.output_dim()
    );
    ensure!(ds.len() >= 2, "need at least two samples for correlations");
    let (ct, zt) = logit_correlation(&predict(teacher, &ds.features)?);
    let (cs, zs) = logit_correlation(&predict(student, &ds.features)?);
    let c = ct.rows();
    let diff = Matrix::from_fn(c, c, |i, j| (ct[(i, j)] - cs[(i, j)]).abs());
    let max = diff.max_abs();
    let mean = diff.data().iter().sum::<f64>() / (c * c) as f64;
    let normalized = if max > 0.0 { diff.clone().scaled(1.0 / max) } else { diff };
    Ok(CorrReport {
        normalized_diff: normalized,
        mean_abs_diff: mean,
        max_abs_diff: max,
        zero_variance_teacher: zt,
        zero_variance_student: zs,
    })
}
