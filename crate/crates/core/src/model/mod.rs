//! Anchor distillation, predictive evolution through the pattern pool, and
//! predict-then-classify inference.

mod checkpoint;
mod fusion;
mod losses;
mod phase0;
mod phase1;
mod pool;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{check_dim, Error, Result};
use crate::metrics::UsageLog;
use crate::numerics::{add, attention, cosine_sim, l2_normalize, mlp_apply, Mat, MlpCache, MlpParams};
use crate::protocol::LearningStep;
use crate::rng::{SeedTree, StreamRng};
use rand::Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use fusion::{distill_anchor, fuse, fusion_backward, FusionTrace, Projections};
pub use losses::{evolution_loss, softmax_cross_entropy};
pub use phase0::{phase0_objective, CurrentClass};
pub use phase1::{pattern_rehearsal_loss, phase1_objective, Phase1Inputs, Phase1Output};
pub use pool::{PatternPool, Selection};


mod defaults {
    pub fn pool_size() -> usize {
        50
    }
    pub fn top_k() -> usize {
        5
    }
    pub fn ema_rate() -> f64 {
        0.05
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        0.5
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn lambda_cos() -> f64 {
        0.5
    }
    pub fn tau_cls() -> f64 {
        0.07
    }
    pub fn tau_attn() -> f64 {
        1.0
    }
    pub fn epochs() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn base_lr() -> f64 {
        0.001
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn pattern_rehearsal_count() -> usize {
        8
    }
    pub fn pattern_init_sigma() -> f64 {
        0.02
    }
    pub fn grad_clip_norm() -> Option<f64> {
        Some(1.0)
    }
}

/// Hyperparameters of the model. `dim = 0` means "take it from the data".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    #[serde(default)]
    pub dim: usize,
    #[serde(default = "defaults::pool_size")]
    pub pool_size: usize,
    #[serde(default = "defaults::top_k")]
    pub top_k: usize,
    #[serde(default = "defaults::ema_rate")]
    pub ema_rate: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::lambda_cos")]
    pub lambda_cos: f64,
    #[serde(default = "defaults::tau_cls")]
    pub tau_cls: f64,
    #[serde(default = "defaults::tau_attn")]
    pub tau_attn: f64,
    /// Hidden width of the evolution network; defaults to `dim`.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::base_lr")]
    pub base_lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::pattern_rehearsal_count")]
    pub pattern_rehearsal_count: usize,
    #[serde(default = "defaults::pattern_init_sigma")]
    pub pattern_init_sigma: f64,
    /// Joint gradient-norm cap per update; `null` disables clipping.
    #[serde(default = "defaults::grad_clip_norm")]
    pub grad_clip_norm: Option<f64>,
    /// Keep the evolution network at its initial weights.
    #[serde(default)]
    pub freeze_evolution: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StageConfig {
    pub fn new(dim: usize) -> Self {
        let mut cfg: StageConfig = serde_json::from_str("{}").expect("all fields have defaults");
        cfg.dim = dim;
        cfg
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("model dim must be at least 1".into());
        }
        if self.hidden == Some(0) {
            return fail("hidden width must be at least 1".into());
        }
        if self.top_k == 0 || self.top_k > self.pool_size {
            return fail(format!("top_k must lie in 1..={}, got {}", self.pool_size, self.top_k));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate < 1.0) {
            return fail(format!("ema_rate must lie in (0, 1), got {}", self.ema_rate));
        }
        for (name, t) in [("tau_cls", self.tau_cls), ("tau_attn", self.tau_attn)] {
            if !(t > 0.0 && t.is_finite()) {
                return fail(format!("{name} must be positive, got {t}"));
            }
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("lambda_cos", self.lambda_cos),
            ("pattern_init_sigma", self.pattern_init_sigma),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{name} must be non-negative, got {w}"));
            }
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAnchor {
    /// Stage at which the class was first seen.
    pub stage: u32,
    /// Unit-norm fused prototype.
    pub anchor: Vec<f64>,
}

/// Per (class, later stage): the stored evolved prototype and the running target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub prediction: Option<Vec<f64>>,
    pub target_sum: Vec<f64>,
    pub count: u64,
}

impl StageEntry {
    fn new(dim: usize) -> Self {
        Self {
            prediction: None,
            target_sum: vec![0.0; dim],
            count: 0,
        }
    }

    /// L2-normalised running mean of the observed features.
    pub fn target(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| l2_normalize(&self.target_sum))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorStore {
    pub anchors: BTreeMap<u32, ClassAnchor>,
    pub stages: BTreeMap<(u32, u32), StageEntry>,
}

impl AnchorStore {
    pub fn anchor(&self, class_id: u32) -> Option<&[f64]> {
        self.anchors.get(&class_id).map(|a| a.anchor.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchor plus every stored evolved prototype of the class.
    pub fn prototypes(&self, class_id: u32) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.anchor(class_id).into_iter().collect();
        out.extend(
            self.stages
                .range((class_id, 0)..=(class_id, u32::MAX))
                .filter_map(|(_, e)| e.prediction.as_deref()),
        );
        out
    }

    fn observe(&mut self, class_id: u32, stage: u32, x: &[f64]) -> &StageEntry {
        let e = self
            .stages
            .entry((class_id, stage))
            .or_insert_with(|| StageEntry::new(x.len()));
        for (s, v) in e.target_sum.iter_mut().zip(x) {
            *s += v;
        }
        e.count += 1;
        e
    }

    /// Reference point of the transition into `stage`: the previous stage's
    /// running target, or the anchor when the previous stage is the anchor stage.
    fn previous_reference(&self, class_id: u32, stage: u32) -> Option<Vec<f64>> {
        let a = self.anchors.get(&class_id)?;
        if stage <= a.stage + 1 {
            return Some(a.anchor.clone());
        }
        self.stages
            .get(&(class_id, stage - 1))
            .and_then(StageEntry::target)
            .or_else(|| Some(a.anchor.clone()))
    }
}

/// Output of one evolution prediction, with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub prediction: Vec<f64>,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    pub cache: MlpCache,
}

/// `p + E(p + ctx)` with `ctx` the attention over the top-k patterns for `p`.
pub fn evolve(evo: &MlpParams, pool: &PatternPool, anchor: &[f64], k: usize, tau_attn: f64) -> Result<Evolution> {
    let sel = pool.select_topk(anchor, k)?;
    let pats: Vec<&[f64]> = sel.indices.iter().map(|&j| pool.pattern(j)).collect();
    let att = attention(anchor, &pats, &pats, tau_attn)?;
    let (residual, cache) = mlp_apply(evo, &add(anchor, &att.context))?;
    Ok(Evolution {
        prediction: add(anchor, &residual),
        indices: sel.indices,
        weights: att.weights,
        context: att.context,
        cache,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub class_id: u32,
    pub scores: BTreeMap<u32, f64>,
}

/// Which objective a step trained and its per-batch losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub phase: u8,
    pub batch_losses: Vec<f64>,
    pub batches_per_epoch: usize,
}

impl StepTrace {
    pub fn epoch_means(&self) -> Vec<f64> {
        self.batch_losses
            .chunks(self.batches_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageModel {
    pub cfg: StageConfig,
    pub proj: Projections,
    pub evo: MlpParams,
    pub pool: PatternPool,
    pub store: AnchorStore,
    pub usage: UsageLog,
}

impl StageModel {
    /// Identity projections, `N(0, σ²)` patterns, and an evolution network
    /// whose output layer starts at zero so the initial prediction is the anchor.
    pub fn new(cfg: StageConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let h = cfg.hidden_width();
        let tree = SeedTree::new(cfg.seed);
        let pool = PatternPool::gaussian(cfg.pool_size, d, cfg.pattern_init_sigma, &mut tree.stream("pool"));
        let mut evo = MlpParams::zeros(d, h, d);
        let mut rng = tree.stream("evolution");
        evo.w1 = Mat::gaussian(h, d, (2.0 / d as f64).sqrt(), &mut rng);
        evo.w2 = Mat::gaussian(h, h, (2.0 / h as f64).sqrt(), &mut rng);
        Ok(Self {
            proj: Projections {
                query: Mat::identity(d),
                key: Mat::identity(d),
                value: Mat::identity(d),
            },
            evo,
            usage: UsageLog::new(cfg.pool_size),
            pool,
            store: AnchorStore::default(),
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn predict_evolved(&self, anchor: &[f64]) -> Result<Evolution> {
        check_dim(self.dim(), anchor.len())?;
        evolve(&self.evo, &self.pool, anchor, self.cfg.top_k, self.cfg.tau_attn)
    }

    /// Max-cosine over each class's anchor and evolved prototypes; ties go to the lower class id.
    pub fn classify(&self, x: &[f64]) -> Result<Classification> {
        if self.store.is_empty() {
            return Err(Error::Model("cannot classify with an empty anchor store".into()));
        }
        check_dim(self.dim(), x.len())?;
        let mut scores = BTreeMap::new();
        let mut best: Option<(u32, f64)> = None;
        for &c in self.store.anchors.keys() {
            let mut s = f64::NEG_INFINITY;
            for p in self.store.prototypes(c) {
                s = s.max(cosine_sim(x, p)?);
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
            scores.insert(c, s);
        }
        Ok(Classification {
            class_id: best.expect("store is non-empty").0,
            scores,
        })
    }

    /// Trains one protocol step: Phase 0 when its classes are new, Phase 1 otherwise.
    pub fn fit_step(&mut self, step: &LearningStep, ds: &FeatureDataset) -> Result<StepTrace> {
        check_dim(self.dim(), ds.dim)?;
        let known: BTreeSet<bool> = step
            .class_ids
            .iter()
            .map(|c| self.store.anchors.contains_key(c))
            .collect();
        if known.len() > 1 {
            return Err(Error::Model(format!(
                "step {} mixes new classes with classes that already have anchors",
                step.step_index
            )));
        }
        if known.contains(&true) {
            self.train_phase1(step, ds)
        } else {
            self.train_phase0(step, ds)
        }
    }

    fn check_finite(&self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() || !self.proj.is_finite() || !self.evo.is_finite() || !self.pool.patterns.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss or parameters during step {step}")));
        }
        Ok(())
    }
}

/// Pairs `min(count, K)` distinct pattern indices with uniformly drawn old anchors.
fn sample_rehearsal<'a>(
    rng: &mut StreamRng,
    old: &[(u32, &'a [f64])],
    pool_size: usize,
    count: usize,
) -> Vec<(&'a [f64], usize)> {
    if old.is_empty() || count == 0 {
        return Vec::new();
    }
    let patterns = rand::seq::index::sample(rng, pool_size, count.min(pool_size)).into_vec();
    patterns
        .into_iter()
        .map(|j| (old[rng.random_range(0..old.len())].1, j))
        .collect()
}
