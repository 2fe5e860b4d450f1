//! Single-query scaled dot-product attention.

use super::ops;
use super::vector::{axpy, dot, softmax};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gradients flowing back from the attention context.
#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

/// Weights are `softmax(q·k_j / √d)` at `temperature`; the context is `Σ_j w_j v_j`.
pub fn attention<K, V>(query: &[f64], keys: &[K], values: &[V], temperature: f64) -> Result<AttentionOutput>
where
    K: AsRef<[f64]>,
    V: AsRef<[f64]>,
{
    if keys.is_empty() {
        return Err(Error::InvalidArgument("attention over an empty key set".into()));
    }
    check_dim(keys.len(), values.len())?;
    let d = query.len();
    for k in keys {
        check_dim(d, k.as_ref().len())?;
    }
    for v in values {
        check_dim(d, v.as_ref().len())?;
    }
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| dot(query, k.as_ref()) * inv_sqrt_d)
        .collect();
    ops::add(scores.len());
    let weights = softmax(&scores, temperature)?;
    let mut context = vec![0.0; d];
    for (w, v) in weights.iter().zip(values) {
        axpy(&mut context, *w, v.as_ref());
    }
    Ok(AttentionOutput { context, weights })
}

/// Backward pass of [`attention`] given the forward weights and `∂L/∂context`.
pub fn attention_backward<K, V>(
    query: &[f64],
    keys: &[K],
    values: &[V],
    weights: &[f64],
    temperature: f64,
    grad_context: &[f64],
) -> Result<AttentionGrads>
where
    K: AsRef<[f64]>,
    V: AsRef<[f64]>,
{
    check_dim(keys.len(), weights.len())?;
    check_dim(values.len(), weights.len())?;
    check_dim(query.len(), grad_context.len())?;
    let d = query.len();
    let scale = 1.0 / ((d as f64).sqrt() * temperature);

    let g_values: Vec<Vec<f64>> = weights
        .iter()
        .map(|w| grad_context.iter().map(|g| w * g).collect())
        .collect();
    let g_weights: Vec<f64> = values.iter().map(|v| dot(v.as_ref(), grad_context)).collect();
    let mean: f64 = weights.iter().zip(&g_weights).map(|(w, g)| w * g).sum();
    let g_scores: Vec<f64> = weights
        .iter()
        .zip(&g_weights)
        .map(|(w, g)| w * (g - mean))
        .collect();

    let mut g_query = vec![0.0; d];
    let mut g_keys = Vec::with_capacity(keys.len());
    for (k, gs) in keys.iter().zip(&g_scores) {
        axpy(&mut g_query, gs * scale, k.as_ref());
        g_keys.push(query.iter().map(|q| gs * scale * q).collect());
    }
    Ok(AttentionGrads {
        query: g_query,
        keys: g_keys,
        values: g_values,
    })
}
