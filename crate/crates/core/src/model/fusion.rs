//! Visual–text prototype fusion through the query/key/value projections.

use crate::error::{Error, Result};
use crate::numerics::{add, attention, attention_backward, l2_normalize, l2_normalize_backward, mean, Mat};

/// Projection matrices shared by every task.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
}

impl Projections {
    pub fn zeros_like(&self) -> Self {
        let (r, c) = self.query.shape();
        Self {
            query: Mat::zeros(r, c),
            key: Mat::zeros(r, c),
            value: Mat::zeros(r, c),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [self.query.as_slice(), self.key.as_slice(), self.value.as_slice()]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.query.as_mut_slice(),
            self.key.as_mut_slice(),
            self.value.as_mut_slice(),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.query.is_finite() && self.key.is_finite() && self.value.is_finite()
    }
}

/// Every intermediate of one fusion, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FusionTrace {
    pub visual: Vec<f64>,
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `W_q v + Attn(W_q v, W_k t, W_v t)` before normalisation.
    pub fused: Vec<f64>,
    /// Unit-norm fused prototype.
    pub prototype: Vec<f64>,
}

pub fn fuse(proj: &Projections, visual: &[f64], texts: &[Vec<f64>], tau_attn: f64) -> Result<FusionTrace> {
    if texts.is_empty() {
        return Err(Error::Model("fusion needs at least one text embedding".into()));
    }
    let query = proj.query.matvec(visual)?;
    let keys: Vec<Vec<f64>> = texts.iter().map(|t| proj.key.matvec(t)).collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = texts.iter().map(|t| proj.value.matvec(t)).collect::<Result<_>>()?;
    let att = attention(&query, &keys, &values, tau_attn)?;
    let fused = add(&query, &att.context);
    let prototype = l2_normalize(&fused);
    Ok(FusionTrace {
        visual: visual.to_vec(),
        query,
        keys,
        values,
        weights: att.weights,
        context: att.context,
        fused,
        prototype,
    })
}

/// Accumulates into `grads` the projection gradients for `∂L/∂prototype`.
pub fn fusion_backward(
    trace: &FusionTrace,
    texts: &[Vec<f64>],
    tau_attn: f64,
    grad_prototype: &[f64],
    grads: &mut Projections,
) -> Result<()> {
    let g_fused = l2_normalize_backward(&trace.fused, grad_prototype);
    let ag = attention_backward(&trace.query, &trace.keys, &trace.values, &trace.weights, tau_attn, &g_fused)?;
    let g_query = add(&g_fused, &ag.query);
    grads.query.add_outer(&g_query, &trace.visual, 1.0);
    for ((gk, gv), t) in ag.keys.iter().zip(&ag.values).zip(texts) {
        grads.key.add_outer(gk, t, 1.0);
        grads.value.add_outer(gv, t, 1.0);
    }
    Ok(())
}

/// Class-mean visual prototype fused with the class texts, L2-normalised.
pub fn distill_anchor(proj: &Projections, class_features: &[&[f64]], class_texts: &[Vec<f64>], tau_attn: f64) -> Result<Vec<f64>> {
    let visual = mean(class_features).ok_or_else(|| Error::Model("anchor distillation needs at least one feature".into()))?;
    Ok(fuse(proj, &visual, class_texts, tau_attn)?.prototype)
}
