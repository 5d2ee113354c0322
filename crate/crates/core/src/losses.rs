//! Differentiable loss functions over per-pixel two-class logits. Each returns
//! the scalar value and the exact gradient w.r.t. the logits.
//!
//! Logits and probabilities are channel-major `[2][N]` with the water class in
//! channel 1. CLOUD/INVALID pixels never contribute to value or gradient.

use crate::error::{CoreError, Result};
use crate::labeling::WeightMap;
use crate::model::softmax_probs;
use crate::num::Scalar;
use crate::raster::{ClassMask, Code};

#[derive(Debug, Clone)]
pub struct LossOutput<F: Scalar> {
    pub value: F,
    pub grad_logits: Vec<F>,
}

fn log_softmax_pair<F: Scalar>(a: F, b: F) -> (F, F) {
    let m = a.max(b);
    let z = ((a - m).exp() + (b - m).exp()).ln() + m;
    (a - z, b - z)
}

/// Edge-weighted cross entropy: Σ w·(−log p_true) / Σ w, gradient
/// w·(p − onehot)/Σw per pixel.
pub fn weighted_ce<F: Scalar>(
    logits: &[F],
    label: &ClassMask,
    weights: &WeightMap<F>,
) -> Result<LossOutput<F>> {
    let n = label.width() * label.height();
    if logits.len() != 2 * n || weights.weights.len() != n {
        return Err(CoreError::Schema("weighted_ce shape mismatch".into()));
    }
    let mut w_sum = F::zero();
    for (i, &c) in label.codes().iter().enumerate() {
        if c.is_scored() {
            w_sum += weights.weights[i];
        }
    }
    if w_sum <= F::zero() {
        return Err(CoreError::Degenerate(
            "all pixel weights are zero".into(),
        ));
    }
    let mut value = F::zero();
    let mut grad = vec![F::zero(); 2 * n];
    for (i, &c) in label.codes().iter().enumerate() {
        if !c.is_scored() {
            continue;
        }
        let wgt = weights.weights[i];
        if wgt == F::zero() {
            continue;
        }
        let (l0, l1) = log_softmax_pair(logits[i], logits[n + i]);
        let (p0, p1) = (l0.exp(), l1.exp());
        let (log_true, y1) = match c {
            Code::Water => (l1, F::one()),
            _ => (l0, F::zero()),
        };
        value -= wgt * log_true;
        grad[i] = wgt * (p0 - (F::one() - y1)) / w_sum;
        grad[n + i] = wgt * (p1 - y1) / w_sum;
    }
    Ok(LossOutput {
        value: value / w_sum,
        grad_logits: grad,
    })
}

/// Soft cross-entropy distillation loss: mean over valid pixels of
/// −Σ_K p_t log p_s. Gradient w.r.t. student logits is (p_s − p_t)/|valid|.
pub fn distill_kd<F: Scalar>(
    teacher_probs: &[F],
    student_logits: &[F],
    valid: &[bool],
) -> Result<LossOutput<F>> {
    let n = valid.len();
    if teacher_probs.len() != 2 * n || student_logits.len() != 2 * n {
        return Err(CoreError::Schema("distill_kd shape mismatch".into()));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(CoreError::Degenerate("no valid pixels".into()));
    }
    let inv = F::one() / F::from_f64(n_valid as f64);
    let mut value = F::zero();
    let mut grad = vec![F::zero(); 2 * n];
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let (t0, t1) = (teacher_probs[i], teacher_probs[n + i]);
        let (l0, l1) = log_softmax_pair(student_logits[i], student_logits[n + i]);
        value -= t0 * l0 + t1 * l1;
        grad[i] = (l0.exp() - t0) * inv;
        grad[n + i] = (l1.exp() - t1) * inv;
    }
    Ok(LossOutput {
        value: value * inv,
        grad_logits: grad,
    })
}

/// Focal Tversky loss on the water class: (1 − TI)^γ with
/// TI = TP/(TP + α·FP + β·FN) over soft water probabilities.
pub fn tversky_focal<F: Scalar>(
    logits: &[F],
    label: &ClassMask,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<LossOutput<F>> {
    if alpha <= 0.0 || beta <= 0.0 || gamma <= 0.0 {
        return Err(CoreError::Config("alpha, beta, gamma must be > 0".into()));
    }
    let n = label.width() * label.height();
    if logits.len() != 2 * n {
        return Err(CoreError::Schema("tversky_focal shape mismatch".into()));
    }
    if !label.codes().iter().any(|c| c.is_scored()) {
        return Err(CoreError::Degenerate("no scored pixels".into()));
    }
    let probs = softmax_probs(logits);
    let (alpha_f, beta_f, gamma_f) = (
        F::from_f64(alpha),
        F::from_f64(beta),
        F::from_f64(gamma),
    );
    let mut tp = F::zero();
    let mut fp = F::zero();
    let mut fne = F::zero();
    for (i, &c) in label.codes().iter().enumerate() {
        if !c.is_scored() {
            continue;
        }
        let p = probs[n + i];
        if c == Code::Water {
            tp += p;
            fne += F::one() - p;
        } else {
            fp += p;
        }
    }
    let denom = tp + alpha_f * fp + beta_f * fne;
    let mut grad = vec![F::zero(); 2 * n];
    if denom == F::zero() {
        // no water in truth and no predicted water mass: perfect score
        return Ok(LossOutput {
            value: F::zero(),
            grad_logits: grad,
        });
    }
    let ti = tp / denom;
    let one_minus = (F::one() - ti).max(F::from_f64(1e-12));
    let value = one_minus.powf(gamma_f);
    let dl_dti = -gamma_f * one_minus.powf(gamma_f - F::one());
    for (i, &c) in label.codes().iter().enumerate() {
        if !c.is_scored() {
            continue;
        }
        let p = probs[n + i];
        let (y, d_denom) = if c == Code::Water {
            (F::one(), F::one() - beta_f)
        } else {
            (F::zero(), alpha_f)
        };
        let dti_dp = (y * denom - tp * d_denom) / (denom * denom);
        let dl_dp = dl_dti * dti_dp;
        let dp_dz = p * (F::one() - p); // d p_water / d z_water
        grad[n + i] = dl_dp * dp_dz;
        grad[i] = -dl_dp * dp_dz;
    }
    Ok(LossOutput {
        value,
        grad_logits: grad,
    })
}
