//! Phase 1: predictive evolution on later stages.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::losses::{cosine_cross_entropy, evolution_loss};
use super::pool::PatternPool;
use super::{evolve, sample_rehearsal, Evolution, StageConfig, StageEntry, StageModel, StepTrace};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::numerics::{add, attention, clip_grad_norm, axpy, mlp_apply, mlp_grad, scale, sgd_update, sub, MlpParams, OptState};
use crate::protocol::LearningStep;
use crate::rng::SeedTree;

/// `mean ‖E(p + ctx(p, u))‖²` over `(anchor, pattern index)` pairs, with its
/// gradient in the evolution network. Zero when there are no pairs.
pub fn pattern_rehearsal_loss(
    evo: &MlpParams,
    pool: &PatternPool,
    pairs: &[(&[f64], usize)],
    tau_attn: f64,
) -> Result<(f64, MlpParams)> {
    let mut grads = evo.zeros_like();
    if pairs.is_empty() {
        return Ok((0.0, grads));
    }
    let w = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for &(p, j) in pairs {
        if j >= pool.size() {
            return Err(Error::InvalidArgument(format!("pattern index {j} out of range 0..{}", pool.size())));
        }
        let u = [pool.pattern(j)];
        let ctx = attention(p, &u, &u, tau_attn)?.context;
        let (out, cache) = mlp_apply(evo, &add(p, &ctx))?;
        loss += w * out.iter().map(|o| o * o).sum::<f64>();
        let (g, _) = mlp_grad(evo, &cache, &scale(&out, 2.0 * w))?;
        grads.accumulate(&g, 1.0);
    }
    Ok((loss, grads))
}

pub struct Phase1Inputs<'a> {
    /// Every seen class anchor, in class order.
    pub anchors: &'a [(u32, &'a [f64])],
    /// Classes whose evolved prediction joins the prototype set.
    pub current: &'a [u32],
    pub batch: &'a [(&'a [f64], u32)],
    pub rehearsal: &'a [(&'a [f64], usize)],
}

pub struct Phase1Output {
    pub loss: f64,
    pub grads: MlpParams,
    pub evolutions: BTreeMap<u32, Evolution>,
}

/// `mean_batch (L_ce + α L_evo) + γ L_proto + δ L_pattern` and its gradient
/// in the evolution network.
///
/// Prototypes are all seen anchors followed by the current classes'
/// predictions; a sample's target is its class's prediction.
pub fn phase1_objective(evo: &MlpParams, pool: &PatternPool, cfg: &StageConfig, inp: &Phase1Inputs) -> Result<Phase1Output> {
    if inp.batch.is_empty() {
        return Err(Error::Model("empty training batch".into()));
    }
    let anchor_of: BTreeMap<u32, (usize, &[f64])> = inp
        .anchors
        .iter()
        .enumerate()
        .map(|(i, &(c, a))| (c, (i, a)))
        .collect();
    let mut evolutions = BTreeMap::new();
    let mut pred_entry = BTreeMap::new();
    let n_a = inp.anchors.len();
    for (i, &c) in inp.current.iter().enumerate() {
        let (_, a) = anchor_of
            .get(&c)
            .ok_or_else(|| Error::Model(format!("class {c} has no anchor")))?;
        evolutions.insert(c, evolve(evo, pool, a, cfg.top_k, cfg.tau_attn)?);
        pred_entry.insert(c, n_a + i);
    }
    let protos: Vec<&[f64]> = inp
        .anchors
        .iter()
        .map(|(_, a)| *a)
        .chain(inp.current.iter().map(|c| evolutions[c].prediction.as_slice()))
        .collect();

    let d = evo.d_out();
    let mut g_pred = vec![vec![0.0; d]; inp.current.len()];
    let w = 1.0 / inp.batch.len() as f64;
    let mut loss = 0.0;
    for &(x, y) in inp.batch {
        let t = *pred_entry
            .get(&y)
            .ok_or_else(|| Error::Model(format!("sample of class {y} is not part of the current task")))?;
        loss += w * cosine_cross_entropy(x, &protos, t, cfg.tau_cls, n_a, w, &mut g_pred)?;
        if cfg.alpha > 0.0 {
            let (le, ge) = evolution_loss(&evolutions[&y].prediction, x, anchor_of[&y].1, cfg.lambda_cos)?;
            loss += w * cfg.alpha * le;
            axpy(&mut g_pred[t - n_a], w * cfg.alpha, &ge);
        }
    }
    let old: Vec<usize> = (0..n_a).filter(|&i| !pred_entry.contains_key(&inp.anchors[i].0)).collect();
    if !old.is_empty() && cfg.gamma > 0.0 {
        let wp = cfg.gamma / old.len() as f64;
        for &i in &old {
            loss += wp * cosine_cross_entropy(inp.anchors[i].1, &protos, i, cfg.tau_cls, n_a, wp, &mut g_pred)?;
        }
    }

    let mut grads = evo.zeros_like();
    for (c, g) in inp.current.iter().zip(&g_pred) {
        let (gc, _) = mlp_grad(evo, &evolutions[c].cache, g)?;
        grads.accumulate(&gc, 1.0);
    }
    if cfg.delta > 0.0 && !inp.rehearsal.is_empty() {
        let (lp, gp) = pattern_rehearsal_loss(evo, pool, inp.rehearsal, cfg.tau_attn)?;
        loss += cfg.delta * lp;
        grads.accumulate(&gp, cfg.delta);
    }
    Ok(Phase1Output { loss, grads, evolutions })
}

impl StageModel {
    pub(super) fn train_phase1(&mut self, step: &LearningStep, ds: &FeatureDataset) -> Result<StepTrace> {
        let cfg = self.cfg.clone();
        let stage = step.stage_index;
        for &c in &step.class_ids {
            if self.store.anchor(c).is_none() {
                return Err(Error::Model(format!("class {c} has no anchor; Phase 0 must run first")));
            }
        }
        let mut samples: Vec<(&[f64], u32)> = Vec::with_capacity(step.record_indices.len());
        for &i in &step.record_indices {
            let r = ds
                .records
                .get(i)
                .ok_or_else(|| Error::Model(format!("record index {i} out of range")))?;
            samples.push((&r.features, r.class_id));
        }
        let anchors_owned: Vec<(u32, Vec<f64>)> = self
            .store
            .anchors
            .iter()
            .map(|(&c, a)| (c, a.anchor.clone()))
            .collect();
        let anchors: Vec<(u32, &[f64])> = anchors_owned.iter().map(|(c, a)| (*c, a.as_slice())).collect();
        let old: Vec<(u32, &[f64])> = anchors
            .iter()
            .filter(|(c, _)| !step.class_ids.contains(c))
            .copied()
            .collect();

        let per_epoch = samples.len().div_ceil(cfg.batch_size);
        let shapes: Vec<usize> = self.evo.tensors().iter().map(|t| t.len()).collect();
        let mut opt = OptState::new(&shapes, cfg.base_lr, cfg.momentum, (cfg.epochs * per_epoch) as u64)?;
        let tree = SeedTree::new(cfg.seed).child("phase1").index(step.step_index as u64);
        let mut order_rng = tree.stream("order");
        let mut rehearsal_rng = tree.stream("rehearsal");
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut usage = vec![0u64; self.pool.size()];
        let mut losses = Vec::with_capacity(cfg.epochs * per_epoch);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&[f64], u32)> = chunk.iter().map(|&i| samples[i]).collect();
                let rehearsal = if cfg.delta > 0.0 {
                    sample_rehearsal(&mut rehearsal_rng, &old, cfg.pool_size, cfg.pattern_rehearsal_count)
                } else {
                    Vec::new()
                };
                let mut out = phase1_objective(
                    &self.evo,
                    &self.pool,
                    &cfg,
                    &Phase1Inputs {
                        anchors: &anchors,
                        current: &step.class_ids,
                        batch: &batch,
                        rehearsal: &rehearsal,
                    },
                )?;
                if !cfg.freeze_evolution {
                    if let Some(c) = cfg.grad_clip_norm {
                        clip_grad_norm(&mut out.grads.tensors_mut(), c);
                    }
                    sgd_update(&mut self.evo.tensors_mut(), &out.grads.tensors(), &mut opt)?;
                }
                for &(x, y) in &batch {
                    let ev = &out.evolutions[&y];
                    self.pool.record_usage(&ev.indices);
                    for &j in &ev.indices {
                        usage[j] += 1;
                    }
                    let target = self.store.observe(y, stage, x).target().expect("just observed");
                    let reference = self.store.previous_reference(y, stage).expect("anchor checked above");
                    self.pool
                        .ema_update(&ev.indices, &ev.weights, &sub(&target, &reference), cfg.ema_rate)?;
                }
                self.check_finite(step.step_index, out.loss)?;
                losses.push(out.loss);
            }
        }

        for &c in &step.class_ids {
            let anchor = self.store.anchor(c).expect("checked above").to_vec();
            let prediction = self.predict_evolved(&anchor)?.prediction;
            self.store
                .stages
                .entry((c, stage))
                .or_insert_with(|| StageEntry::new(cfg.dim))
                .prediction = Some(prediction);
        }
        self.usage.push(step.step_index, usage);
        Ok(StepTrace {
            phase: 1,
            batch_losses: losses,
            batches_per_epoch: per_epoch,
        })
    }
}
