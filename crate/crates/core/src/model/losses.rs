use crate::error::{check_dim, Result};
use crate::numerics::{axpy, cosine_sim, cosine_sim_grad, l2_normalize, l2_normalize_backward, log_sum_exp, norm, softmax, sub, NORM_EPS};

/// Softmax cross-entropy of raw `logits` against `target`, with `∂L/∂logits`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits, 1.0)?;
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// `‖x̂ − x‖² + λ (1 − cos(x̂ − p, x − p))` and its gradient in `x̂`.
///
/// The cosine term is computed as `½‖â − b̂‖²` on the normalised differences,
/// which equals `1 − cos` and is exactly zero when `x̂ = x`. It is dropped when
/// either difference is shorter than `NORM_EPS`.
pub fn evolution_loss(prediction: &[f64], target: &[f64], anchor: &[f64], lambda_cos: f64) -> Result<(f64, Vec<f64>)> {
    check_dim(prediction.len(), target.len())?;
    check_dim(prediction.len(), anchor.len())?;
    let err = sub(prediction, target);
    let mut loss: f64 = err.iter().map(|e| e * e).sum();
    let mut grad: Vec<f64> = err.iter().map(|e| 2.0 * e).collect();

    let moved = sub(prediction, anchor);
    let wanted = sub(target, anchor);
    if lambda_cos != 0.0 && norm(&moved) > NORM_EPS && norm(&wanted) > NORM_EPS {
        let a = l2_normalize(&moved);
        let b = l2_normalize(&wanted);
        let diff = sub(&a, &b);
        loss += lambda_cos * 0.5 * diff.iter().map(|x| x * x).sum::<f64>();
        let g = l2_normalize_backward(&moved, &diff);
        for (gi, x) in grad.iter_mut().zip(&g) {
            *gi += lambda_cos * x;
        }
    }
    Ok((loss, grad))
}

/// Cross-entropy of `cos(query, protos[j]) / τ` logits against `target`.
///
/// Adds `weight · ∂L/∂protos[j]` into `grads[j - trainable_from]` for every
/// `j ≥ trainable_from`; earlier prototypes are treated as constants.
pub(crate) fn cosine_cross_entropy(
    query: &[f64],
    protos: &[&[f64]],
    target: usize,
    tau: f64,
    trainable_from: usize,
    weight: f64,
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    let logits: Vec<f64> = protos
        .iter()
        .map(|p| cosine_sim(query, p).map(|c| c / tau))
        .collect::<Result<_>>()?;
    let (loss, g_logits) = softmax_cross_entropy(&logits, target)?;
    if weight != 0.0 {
        for (j, p) in protos.iter().enumerate().skip(trainable_from) {
            let (_, _, gp) = cosine_sim_grad(query, p)?;
            axpy(&mut grads[j - trainable_from], weight * g_logits[j] / tau, &gp);
        }
    }
    Ok(loss)
}
