//! Top-K logit scaling of teacher outputs.
//!
//! Per sample, the teacher's `k` largest logits are amplified by a
//! rank-dependent weight and shifted by a common bias; when the teacher's
//! top-1 prediction is wrong, the ground-truth logit is amplified as well
//! with a boosted weight. Every other entry passes through untouched.
//!
//! Weight schedule: `w[r] = 1 + gamma·(k − r)/k` for zero-based rank `r`.
//! Bias: `lambda · (mean of top-k entries − mean of the rest)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, topk_indices, IndexVector, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSpec {
    pub k: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub gt_boost: f64,
    pub enabled: bool,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self {
            k: 10,
            gamma: 0.5,
            lambda: 1.0,
            gt_boost: 2.0,
            enabled: true,
        }
    }
}

impl ScalingSpec {
    /// All knobs at their neutral values: the transform is the identity.
    pub fn identity(k: usize) -> Self {
        Self {
            k,
            gamma: 0.0,
            lambda: 0.0,
            gt_boost: 1.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("scaling.k must be >= 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!("scaling.gamma = {} must be >= 0", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("scaling.lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.gt_boost >= 1.0 && self.gt_boost.is_finite()) {
            return Err(Error::InvalidParam(format!("scaling.gt_boost = {} must be >= 1", self.gt_boost)));
        }
        Ok(())
    }
}

/// Scaled teacher logits together with the entries the transform touched.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLogits {
    pub values: Matrix,
    modified: Vec<bool>,
}

impl ScaledLogits {
    /// Wraps unscaled logits with an all-false mask.
    pub fn unmodified(values: Matrix) -> Self {
        let modified = vec![false; values.data().len()];
        Self { values, modified }
    }

    pub fn is_modified(&self, row: usize, col: usize) -> bool {
        self.modified[row * self.values.cols() + col]
    }

    pub fn modified_in_row(&self, row: usize) -> usize {
        let c = self.values.cols();
        self.modified[row * c..(row + 1) * c].iter().filter(|&&m| m).count()
    }
}

pub fn rank_weights(k: usize, gamma: f64) -> Vec<f64> {
    (0..k)
        .map(|r| 1.0 + gamma * (k - r) as f64 / k as f64)
        .collect()
}

/// `lambda · (mean(row[top]) − mean(row[rest]))`, never negative.
pub fn bias_delta(row: &[f64], top: &[usize], lambda: f64) -> Result<f64> {
    let c = row.len();
    let k = top.len();
    if k == 0 || k >= c {
        return Err(Error::InvalidK {
            k,
            len: c,
            reason: "the non-top-k complement must be non-empty",
        });
    }
    let mut in_top = vec![false; c];
    for &i in top {
        if i >= c {
            return Err(Error::IndexOutOfRange { index: i, dim: c });
        }
        in_top[i] = true;
    }
    // Shifting by the row minimum makes a constant row give exactly zero.
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut top_sum, mut rest_sum) = (0.0, 0.0);
    for (i, &v) in row.iter().enumerate() {
        if in_top[i] {
            top_sum += v - lo;
        } else {
            rest_sum += v - lo;
        }
    }
    let diff = top_sum / k as f64 - rest_sum / (c - k) as f64;
    Ok(lambda * diff.max(0.0))
}

pub fn apply_tsm(teacher: &Matrix, labels: &IndexVector, spec: &ScalingSpec) -> Result<ScaledLogits> {
    let (b, c) = teacher.shape();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    labels.check_bound(c)?;
    if !spec.enabled {
        return Ok(ScaledLogits::unmodified(teacher.clone()));
    }
    spec.validate()?;
    if 2 * spec.k > c {
        return Err(Error::InvalidK {
            k: spec.k,
            len: c,
            reason: "top-k scaling needs 2k <= number of classes",
        });
    }

    let weights = rank_weights(spec.k, spec.gamma);
    let mut values = teacher.clone();
    let mut modified = vec![false; b * c];
    for row_idx in 0..b {
        let row = teacher.row(row_idx);
        let top = topk_indices(row, spec.k)?;
        let delta = bias_delta(row, &top, spec.lambda)?;
        let label = labels[row_idx];
        let out = values.row_mut(row_idx);
        let mask = &mut modified[row_idx * c..(row_idx + 1) * c];
        for (rank, &i) in top.iter().enumerate() {
            out[i] = row[i] * weights[rank] + delta;
            mask[i] = true;
        }
        if argmax(row) != label {
            out[label] = row[label] * spec.gt_boost * weights[0] + delta;
            mask[label] = true;
        }
    }
    Ok(ScaledLogits { values, modified })
}
