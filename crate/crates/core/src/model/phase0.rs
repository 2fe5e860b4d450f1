//! Phase 0: anchor distillation on a task's first-seen stage.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::fusion::{fuse, fusion_backward, FusionTrace, Projections};
use super::losses::cosine_cross_entropy;
use super::phase1::pattern_rehearsal_loss;
use super::{sample_rehearsal, ClassAnchor, StageConfig, StageModel, StepTrace};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, mean, sgd_update, OptState};
use crate::protocol::LearningStep;
use crate::rng::SeedTree;

/// A class being distilled in the current step.
#[derive(Clone, Debug)]
pub struct CurrentClass<'a> {
    pub class_id: u32,
    /// Mean of the class's step features.
    pub visual: Vec<f64>,
    pub texts: &'a [Vec<f64>],
}

/// `mean_batch L_ce + γ L_proto` and its gradient in the projections.
///
/// The prototype set is `old` (constants) followed by the freshly fused
/// prototypes of `current`.
pub fn phase0_objective(
    proj: &Projections,
    cfg: &StageConfig,
    current: &[CurrentClass],
    old: &[(u32, &[f64])],
    batch: &[(&[f64], u32)],
) -> Result<(f64, Projections)> {
    if batch.is_empty() {
        return Err(Error::Model("empty training batch".into()));
    }
    let traces: Vec<FusionTrace> = current
        .iter()
        .map(|c| fuse(proj, &c.visual, c.texts, cfg.tau_attn))
        .collect::<Result<_>>()?;
    let n_old = old.len();
    let protos: Vec<&[f64]> = old
        .iter()
        .map(|(_, a)| *a)
        .chain(traces.iter().map(|t| t.prototype.as_slice()))
        .collect();
    let entry: BTreeMap<u32, usize> = current
        .iter()
        .enumerate()
        .map(|(i, c)| (c.class_id, n_old + i))
        .collect();

    let d = proj.query.rows();
    let mut g_protos = vec![vec![0.0; d]; current.len()];
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(x, y) in batch {
        let t = *entry
            .get(&y)
            .ok_or_else(|| Error::Model(format!("sample of class {y} is not part of the current task")))?;
        loss += w * cosine_cross_entropy(x, &protos, t, cfg.tau_cls, n_old, w, &mut g_protos)?;
    }
    if n_old > 0 && cfg.gamma > 0.0 {
        let wp = cfg.gamma / n_old as f64;
        for (i, (_, a)) in old.iter().enumerate() {
            loss += wp * cosine_cross_entropy(a, &protos, i, cfg.tau_cls, n_old, wp, &mut g_protos)?;
        }
    }

    let mut grads = proj.zeros_like();
    for ((trace, c), g) in traces.iter().zip(current).zip(&g_protos) {
        fusion_backward(trace, c.texts, cfg.tau_attn, g, &mut grads)?;
    }
    Ok((loss, grads))
}

impl StageModel {
    pub(super) fn train_phase0(&mut self, step: &LearningStep, ds: &FeatureDataset) -> Result<StepTrace> {
        let cfg = self.cfg.clone();
        let mut by_class: BTreeMap<u32, Vec<&[f64]>> = BTreeMap::new();
        let mut samples: Vec<(&[f64], u32)> = Vec::with_capacity(step.record_indices.len());
        for &i in &step.record_indices {
            let r = ds
                .records
                .get(i)
                .ok_or_else(|| Error::Model(format!("record index {i} out of range")))?;
            by_class.entry(r.class_id).or_default().push(&r.features);
            samples.push((&r.features, r.class_id));
        }
        let mut current = Vec::with_capacity(step.class_ids.len());
        for &c in &step.class_ids {
            let feats = by_class.get(&c).ok_or_else(|| {
                Error::Model(format!("no stage-{} data for class {c}", step.stage_index))
            })?;
            let texts = ds
                .class_texts
                .get(&c)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| Error::Model(format!("class {c} has no text embeddings")))?;
            current.push(CurrentClass {
                class_id: c,
                visual: mean(feats).expect("non-empty"),
                texts,
            });
        }
        let old_owned: Vec<(u32, Vec<f64>)> = self
            .store
            .anchors
            .iter()
            .filter(|(c, _)| !step.class_ids.contains(c))
            .map(|(&c, a)| (c, a.anchor.clone()))
            .collect();
        let old: Vec<(u32, &[f64])> = old_owned.iter().map(|(c, a)| (*c, a.as_slice())).collect();

        let per_epoch = samples.len().div_ceil(cfg.batch_size);
        let d = cfg.dim;
        let mut opt = OptState::new(&[d * d; 3], cfg.base_lr, cfg.momentum, (cfg.epochs * per_epoch) as u64)?;
        let tree = SeedTree::new(cfg.seed).child("phase0").index(step.step_index as u64);
        let mut order_rng = tree.stream("order");
        let mut rehearsal_rng = tree.stream("rehearsal");
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::with_capacity(cfg.epochs * per_epoch);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&[f64], u32)> = chunk.iter().map(|&i| samples[i]).collect();
                let (mut loss, mut grads) = phase0_objective(&self.proj, &cfg, &current, &old, &batch)?;
                if cfg.delta > 0.0 {
                    let pairs = sample_rehearsal(&mut rehearsal_rng, &old, cfg.pool_size, cfg.pattern_rehearsal_count);
                    loss += cfg.delta * pattern_rehearsal_loss(&self.evo, &self.pool, &pairs, cfg.tau_attn)?.0;
                }
                if let Some(c) = cfg.grad_clip_norm {
                    clip_grad_norm(&mut grads.tensors_mut(), c);
                }
                sgd_update(&mut self.proj.tensors_mut(), &grads.tensors(), &mut opt)?;
                self.check_finite(step.step_index, loss)?;
                losses.push(loss);
            }
        }

        for c in &current {
            let anchor = fuse(&self.proj, &c.visual, c.texts, cfg.tau_attn)?.prototype;
            self.store.anchors.insert(
                c.class_id,
                ClassAnchor {
                    stage: step.stage_index,
                    anchor,
                },
            );
        }
        Ok(StepTrace {
            phase: 0,
            batch_losses: losses,
            batches_per_epoch: per_epoch,
        })
    }
}
