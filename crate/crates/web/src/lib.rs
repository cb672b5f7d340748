//! WebAssembly bindings for the interactive demo page in `www/`.
//!
//! Three views: top-k scaling of one teacher logit vector, the decoupled
//! cosine loss of one student/teacher pair, and the batch similarity matrix
//! of the contrastive term. Each binding is a thin wrapper around a plain
//! Rust function so the logic is testable off the browser.

use topkd::losses::{contrastive_loss, tdl_loss, tdl_row_terms, TdlSpec};
use topkd::numerics::{softmax_rows, IndexVector, Matrix, seeded_rng};
use topkd::scaling::{apply_tsm, rank_weights, ScalingSpec};
use wasm_bindgen::prelude::*;

fn row_matrix(values: &[f64]) -> Result<Matrix, String> {
    Matrix::new(1, values.len(), values.to_vec()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct ScalingView {
    values: Vec<f64>,
    modified: Vec<u8>,
    weights: Vec<f64>,
}

#[wasm_bindgen]
impl ScalingView {
    /// Scaled logits.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// 1 where the entry was rescaled, else 0.
    #[wasm_bindgen(getter)]
    pub fn modified(&self) -> Vec<u8> {
        self.modified.clone()
    }

    /// Rank weights, largest logit first.
    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }
}

pub fn scaling_view(logits: &[f64], label: usize, k: usize, gamma: f64, lambda: f64, gt_boost: f64) -> Result<ScalingView, String> {
    let teacher = row_matrix(logits)?;
    let spec = ScalingSpec {
        k,
        gamma,
        lambda,
        gt_boost,
        enabled: true,
    };
    let out = apply_tsm(&teacher, &IndexVector::new(vec![label]), &spec).map_err(|e| e.to_string())?;
    let modified = (0..logits.len()).map(|c| u8::from(out.is_modified(0, c))).collect();
    Ok(ScalingView {
        values: out.values.into_data(),
        modified,
        weights: rank_weights(k, gamma),
    })
}

#[wasm_bindgen(js_name = scaleLogits)]
pub fn scale_logits(logits: &[f64], label: usize, k: usize, gamma: f64, lambda: f64, gt_boost: f64) -> Result<ScalingView, JsError> {
    scaling_view(logits, label, k, gamma, lambda, gt_boost).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct DecoupledView {
    loss: f64,
    cos_pos: f64,
    cos_neg: f64,
    cos_non: f64,
    roles: Vec<u8>,
}

#[wasm_bindgen]
impl DecoupledView {
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }

    #[wasm_bindgen(getter, js_name = cosPos)]
    pub fn cos_pos(&self) -> f64 {
        self.cos_pos
    }

    #[wasm_bindgen(getter, js_name = cosNeg)]
    pub fn cos_neg(&self) -> f64 {
        self.cos_neg
    }

    #[wasm_bindgen(getter, js_name = cosNon)]
    pub fn cos_non(&self) -> f64 {
        self.cos_non
    }

    /// Per class: 0 = positive top-k, 1 = negative top-k, 2 = rest.
    #[wasm_bindgen(getter)]
    pub fn roles(&self) -> Vec<u8> {
        self.roles.clone()
    }
}

pub fn decoupled_view(student: &[f64], teacher: &[f64], k: usize, alpha: f64, beta: f64) -> Result<DecoupledView, String> {
    let s = row_matrix(student)?;
    let t = row_matrix(teacher)?;
    let spec = TdlSpec { k, alpha, beta };
    let loss = tdl_loss(&s, &t, &spec).map_err(|e| e.to_string())?;
    let (part, terms) = tdl_row_terms(student, teacher, k).map_err(|e| e.to_string())?;
    let mut roles = vec![2u8; teacher.len()];
    part.pos.iter().for_each(|&i| roles[i] = 0);
    part.neg.iter().for_each(|&i| roles[i] = 1);
    Ok(DecoupledView {
        loss: loss.value,
        cos_pos: terms.pos,
        cos_neg: terms.neg,
        cos_non: terms.non,
        roles,
    })
}

#[wasm_bindgen(js_name = decoupledLoss)]
pub fn decoupled_loss(student: &[f64], teacher: &[f64], k: usize, alpha: f64, beta: f64) -> Result<DecoupledView, JsError> {
    decoupled_view(student, teacher, k, alpha, beta).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct ContrastiveView {
    loss: f64,
    probs: Vec<f64>,
}

#[wasm_bindgen]
impl ContrastiveView {
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Row-major `B×B` softmax over student-to-teacher similarities.
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Vec<f64> {
        self.probs.clone()
    }
}

pub fn contrastive_view(student: &[f64], teacher: &[f64], rows: usize, tau: f64, normalize: bool) -> Result<ContrastiveView, String> {
    if rows == 0 || !student.len().is_multiple_of(rows) {
        return Err(format!("{} values do not split into {rows} rows", student.len()));
    }
    let cols = student.len() / rows;
    let s = Matrix::new(rows, cols, student.to_vec()).map_err(|e| e.to_string())?;
    let t = Matrix::new(rows, cols, teacher.to_vec()).map_err(|e| e.to_string())?;
    let loss = contrastive_loss(&s, &t, tau, normalize).map_err(|e| e.to_string())?;
    let unit = |m: &Matrix| {
        if !normalize {
            return m.clone();
        }
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            let n = topkd::numerics::l2_norm(m.row(i));
            if n > 0.0 { m[(i, j)] / n } else { 0.0 }
        })
    };
    let sim = topkd::numerics::matmul_transpose(&unit(&s), &unit(&t))
        .map_err(|e| e.to_string())?
        .scaled(1.0 / tau);
    Ok(ContrastiveView {
        loss: loss.value,
        probs: softmax_rows(&sim).into_data(),
    })
}

#[wasm_bindgen(js_name = contrastiveSimilarity)]
pub fn contrastive_similarity(student: &[f64], teacher: &[f64], rows: usize, tau: f64, normalize: bool) -> Result<ContrastiveView, JsError> {
    contrastive_view(student, teacher, rows, tau, normalize).map_err(|e| JsError::new(&e))
}

/// `n` seeded standard-normal draws scaled by `scale`, for demo inputs.
#[wasm_bindgen(js_name = randomLogits)]
pub fn random_logits(n: usize, seed: u32, scale: f64) -> Vec<f64> {
    let mut rng = seeded_rng(u64::from(seed));
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}
