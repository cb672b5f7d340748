//! Distillation objectives over logit batches. Each returns the scalar loss
//! and its exact gradient with respect to the student logits; the teacher is
//! always treated as a constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    bottomk_indices, check_same_shape, dot, l2_norm, log_softmax_rows, matmul, matmul_transpose,
    softmax_rows, topk_indices, IndexVector, Matrix, COSINE_EPS,
};
use crate::scaling::{apply_tsm, ScalingSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_student: Matrix,
}

impl LossOutput {
    fn zero(rows: usize, cols: usize) -> Self {
        Self {
            value: 0.0,
            grad_student: Matrix::zeros(rows, cols),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdlSpec {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TdlSpec {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 3.0,
            beta: 1.0,
        }
    }
}

impl TdlSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.k == 0 || 2 * self.k > classes {
            return Err(Error::InvalidK {
                k: self.k,
                len: classes,
                reason: "decoupled loss needs 1 <= k and 2k <= number of classes",
            });
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "tdl weights must be positive (alpha = {}, beta = {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Sum of the three slice weights; the loss lies in `[1 − s, 1 + s]`.
    pub fn weight_sum(&self) -> f64 {
        self.alpha + self.beta + 1.0
    }
}

/// Contrastive-term options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveSpec {
    pub tau: f64,
    /// L2-normalize logit rows before the similarity product.
    pub normalize: bool,
    /// Feed the top-k scaled teacher (rather than the raw one) to the
    /// contrastive term when scaling is enabled.
    pub scaled_teacher: bool,
}

impl Default for ContrastiveSpec {
    fn default() -> Self {
        Self {
            tau: 0.07,
            normalize: false,
            scaled_teacher: true,
        }
    }
}

/// Positive top-k, negative top-k and remaining class indices of one row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdlPartition {
    pub pos: IndexVector,
    pub neg: IndexVector,
    pub non: IndexVector,
}

/// Symmetric cross-entropy over the student/teacher similarity matrix,
/// matching every sample to itself across the batch.
pub fn contrastive_loss(student: &Matrix, teacher: &Matrix, tau: f64, normalize: bool) -> Result<LossOutput> {
    check_same_shape(student, teacher)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be > 0")));
    }
    let (b, c) = student.shape();
    if b == 0 {
        return Err(Error::Empty("contrastive_loss batch"));
    }
    if b == 1 {
        return Ok(LossOutput::zero(1, c));
    }

    let (s, s_norms) = if normalize {
        normalize_rows(student)
    } else {
        (student.clone(), Vec::new())
    };
    let t = if normalize {
        normalize_rows(teacher).0
    } else {
        teacher.clone()
    };

    // sim[i][j] = s_i·t_j / tau; the second term uses simᵀ.
    let sim = matmul_transpose(&s, &t)?.scaled(1.0 / tau);
    let sim_t = sim.transpose();
    let targets = IndexVector::range(b);
    let (ce_a, grad_a) = diagonal_ce(&sim, &targets);
    let (ce_b, grad_b) = diagonal_ce(&sim_t, &targets);
    let value = 0.5 * (ce_a + ce_b);

    // d/ds of both terms: ½(G_a + G_bᵀ)·t / tau.
    let mut g = grad_a;
    g.add_assign(&grad_b.transpose())?;
    let mut grad = matmul(&g, &t)?.scaled(0.5 / tau);

    if normalize {
        for (i, &n) in s_norms.iter().enumerate() {
            let row = grad.row_mut(i);
            if n < COSINE_EPS {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let u = s.row(i);
            let proj = dot(row, u);
            for (g, &ui) in row.iter_mut().zip(u) {
                *g = (*g - proj * ui) / n;
            }
        }
    }
    Ok(LossOutput {
        value,
        grad_student: grad,
    })
}

fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = l2_norm(m.row(i));
        norms.push(n);
        let row = out.row_mut(i);
        if n < COSINE_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Mean cross-entropy and its gradient `(softmax − onehot)/N`.
fn diagonal_ce(logits: &Matrix, targets: &IndexVector) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let lsm = log_softmax_rows(logits);
    let mut value = 0.0;
    let mut grad = lsm.clone();
    for (i, &t) in targets.iter().enumerate() {
        value -= lsm[(i, t)];
        for v in grad.row_mut(i) {
            *v = v.exp() / n;
        }
        grad[(i, t)] -= 1.0 / n;
    }
    ((value / n).max(0.0), grad)
}

/// Splits one (scaled) teacher row into positive top-k, negative top-k and
/// the rest. On ties the positive set claims an index first; the negative set
/// then takes the k smallest of what remains.
pub fn tdl_partition(row: &[f64], k: usize) -> Result<TdlPartition> {
    let c = row.len();
    if k == 0 || 2 * k > c {
        return Err(Error::InvalidK {
            k,
            len: c,
            reason: "decoupled partition needs 1 <= k and 2k <= length",
        });
    }
    let pos = topk_indices(row, k)?;
    let mut taken = vec![false; c];
    pos.iter().for_each(|&i| taken[i] = true);

    let rest: Vec<usize> = (0..c).filter(|&i| !taken[i]).collect();
    let rest_vals: Vec<f64> = rest.iter().map(|&i| row[i]).collect();
    // `rest` is ascending, so index order inside `rest_vals` preserves the
    // lower-index tie-break.
    let neg: IndexVector = bottomk_indices(&rest_vals, k)?
        .iter()
        .map(|&j| rest[j])
        .collect();
    neg.iter().for_each(|&i| taken[i] = true);
    let non: IndexVector = (0..c).filter(|&i| !taken[i]).collect();
    Ok(TdlPartition { pos, neg, non })
}

/// Per-row cosine terms of the decoupled loss, useful for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdlTerms {
    pub pos: f64,
    pub neg: f64,
    pub non: f64,
}

/// Cosine of a gathered slice pair and `∂cos/∂u`, zero when the guard fires.
fn slice_cosine(u: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu < COSINE_EPS || nv < COSINE_EPS {
        return (0.0, vec![0.0; u.len()]);
    }
    let cos = dot(u, v) / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| vi / (nu * nv) - cos * ui / (nu * nu))
        .collect();
    (cos.clamp(-1.0, 1.0), grad)
}

fn gather(row: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| row[i]).collect()
}

/// Cosine terms for one row using the teacher-derived partition.
pub fn tdl_row_terms(student_row: &[f64], teacher_row: &[f64], k: usize) -> Result<(TdlPartition, TdlTerms)> {
    let part = tdl_partition(teacher_row, k)?;
    let cos = |idx: &IndexVector| slice_cosine(&gather(student_row, idx), &gather(teacher_row, idx)).0;
    let terms = TdlTerms {
        pos: cos(&part.pos),
        neg: cos(&part.neg),
        non: cos(&part.non),
    };
    Ok((part, terms))
}

/// `1 − mean_b[α·cos(pos) + β·cos(neg) + cos(non)]` with slices chosen on the
/// scaled teacher row and applied identically to the student row.
///
/// When `2k == C` the non-top-k slice is empty and contributes 0.
pub fn tdl_loss(student: &Matrix, teacher_scaled: &Matrix, spec: &TdlSpec) -> Result<LossOutput> {
    check_same_shape(student, teacher_scaled)?;
    let (b, c) = student.shape();
    spec.validate(c)?;
    if b == 0 {
        return Err(Error::Empty("tdl_loss batch"));
    }
    let mut grad = Matrix::zeros(b, c);
    let mut acc = 0.0;
    for r in 0..b {
        let s_row = student.row(r);
        let t_row = teacher_scaled.row(r);
        let part = tdl_partition(t_row, spec.k)?;
        let g_row = grad.row_mut(r);
        for (idx, w) in [(&part.pos, spec.alpha), (&part.neg, spec.beta), (&part.non, 1.0)] {
            let (cos, dcos) = slice_cosine(&gather(s_row, idx), &gather(t_row, idx));
            acc += w * cos;
            for (&i, d) in idx.iter().zip(dcos) {
                g_row[i] = -w * d / b as f64;
            }
        }
    }
    Ok(LossOutput {
        value: 1.0 - acc / b as f64,
        grad_student: grad,
    })
}

/// Combined objective with its two components kept for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKdOutput {
    pub total: LossOutput,
    pub contrastive: f64,
    pub tdl: f64,
}

/// Contrastive + decoupled loss against the top-k scaled teacher.
///
/// Scaling is applied once to the raw teacher; `contrastive.scaled_teacher`
/// chooses whether the contrastive term sees the scaled or the raw logits,
/// the decoupled term always sees the scaled ones.
pub fn topkd_loss(
    student: &Matrix,
    teacher_raw: &Matrix,
    labels: &IndexVector,
    scaling: &ScalingSpec,
    tdl: &TdlSpec,
    contrastive: &ContrastiveSpec,
) -> Result<TopKdOutput> {
    check_same_shape(student, teacher_raw)?;
    let scaled = apply_tsm(teacher_raw, labels, scaling)?.values;
    let con_teacher = if contrastive.scaled_teacher { &scaled } else { teacher_raw };
    let con = contrastive_loss(student, con_teacher, contrastive.tau, contrastive.normalize)?;
    let dec = tdl_loss(student, &scaled, tdl)?;
    let mut grad = con.grad_student;
    grad.add_assign(&dec.grad_student)?;
    Ok(TopKdOutput {
        total: LossOutput {
            value: con.value + dec.value,
            grad_student: grad,
        },
        contrastive: con.value,
        tdl: dec.value,
    })
}

/// `T²·mean_b KL(softmax(t/T) ‖ softmax(s/T))`.
pub fn kd_kl_loss(student: &Matrix, teacher: &Matrix, temperature: f64) -> Result<LossOutput> {
    check_same_shape(student, teacher)?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidParam(format!("temperature = {temperature} must be > 0")));
    }
    let b = student.rows();
    if b == 0 {
        return Err(Error::Empty("kd_kl_loss batch"));
    }
    let inv_t = 1.0 / temperature;
    let s = student.clone().scaled(inv_t);
    let t = teacher.clone().scaled(inv_t);
    let log_ps = log_softmax_rows(&s);
    let log_pt = log_softmax_rows(&t);
    let ps = softmax_rows(&s);
    let pt = softmax_rows(&t);

    let mut kl = 0.0;
    for ((&lt, &ls), &p) in log_pt.data().iter().zip(log_ps.data()).zip(pt.data()) {
        kl += p * (lt - ls);
    }
    let value = (temperature * temperature * kl / b as f64).max(0.0);
    let mut grad = ps;
    grad.add_scaled(&pt, -1.0)?;
    grad.scale(temperature / b as f64);
    Ok(LossOutput {
        value,
        grad_student: grad,
    })
}

/// Mean hard-label cross-entropy, gradient `(softmax − onehot)/B`.
pub fn supervised_ce_loss(student: &Matrix, labels: &IndexVector) -> Result<LossOutput> {
    if labels.len() != student.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            student.rows()
        )));
    }
    labels.check_bound(student.cols())?;
    if student.rows() == 0 {
        return Err(Error::Empty("supervised_ce_loss batch"));
    }
    let (value, grad_student) = diagonal_ce(student, labels);
    Ok(LossOutput { value, grad_student })
}

/// Central-difference gradient `(f(x + h·e) − f(x − h·e)) / 2h`, entry by entry.
pub fn finite_difference_grad(loss_fn: impl Fn(&Matrix) -> f64, student: &Matrix, h: f64) -> Matrix {
    let mut x = student.clone();
    let mut grad = Matrix::zeros(student.rows(), student.cols());
    for i in 0..x.data().len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = loss_fn(&x);
        x.data_mut()[i] = orig - h;
        let down = loss_fn(&x);
        x.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `max|a − b| / max(max|a|, max|b|, floor)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / analytic.max_abs().max(numeric.max_abs()).max(floor)
}
