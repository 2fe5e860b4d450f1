//! Synthetic stage-annotated worlds with known evolution transforms.
//!
//! Each class has a unit anchor on the sphere and is assigned one of a few
//! shared transforms; stage `s` of the class sits at the transform applied `s`
//! times. Samples are noisy unit vectors around the stage anchors.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::numerics::{add, cosine_sim, l2_normalize, scale};
use crate::rng::{gaussian_vec, SeedTree, StreamRng};

/// Norm of every true offset vector.
pub const OFFSET_NORM: f64 = 0.8;
/// Largest allowed cosine between two true offsets.
pub const MAX_OFFSET_COSINE: f64 = 0.5;
pub const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    LinearOffset,
    GatedNonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub dim: usize,
    pub num_classes: usize,
    pub num_stages: u32,
    pub num_true_patterns: usize,
    pub transform_mode: TransformMode,
    pub noise_sigma: f64,
    pub text_noise_sigma: f64,
    pub train_per_class_stage: usize,
    pub test_per_class_stage: usize,
    pub texts_per_class: usize,
    pub seed: u64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim < 2 {
            return bad(format!("world dim must be at least 2, got {}", self.dim));
        }
        if self.num_classes == 0 || self.num_stages == 0 || self.num_true_patterns == 0 {
            return bad("class, stage and transform counts must be at least 1".into());
        }
        if self.train_per_class_stage == 0 || self.test_per_class_stage == 0 || self.texts_per_class == 0 {
            return bad("per-class sample and text counts must be at least 1".into());
        }
        if self.texts_per_class > usize::from(u16::MAX) || self.num_stages > u32::from(u16::MAX) + 1 {
            return bad("text or stage count exceeds the file format limits".into());
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("text_noise_sigma", self.text_noise_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueTransform {
    pub offset: Vec<f64>,
    /// Multiplicative 0/1 gate, present in gated-nonlinear mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub transform_mode: TransformMode,
    pub class_anchors: BTreeMap<u32, Vec<f64>>,
    pub class_pattern: BTreeMap<u32, usize>,
    pub transforms: Vec<TrueTransform>,
}

impl WorldTruth {
    /// Stage anchors `a_c(0..M)` of a class.
    pub fn stage_anchors(&self, class_id: u32, num_stages: u32) -> Result<Vec<Vec<f64>>> {
        let anchor = self
            .class_anchors
            .get(&class_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {class_id}")))?;
        let g = self.class_pattern[&class_id];
        let mut out = vec![anchor.clone()];
        for _ in 1..num_stages {
            let next = true_transform(self, g, out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Applies transform `g`: `normalize(x + v_g)`, or `normalize(x ⊙ mask_g + v_g)` when gated.
pub fn true_transform(truth: &WorldTruth, g: usize, x: &[f64]) -> Result<Vec<f64>> {
    let t = truth.transforms.get(g).ok_or_else(|| {
        Error::InvalidArgument(format!("transform index {g} out of range 0..{}", truth.transforms.len()))
    })?;
    let gated: Vec<f64> = match &t.mask {
        Some(mask) => x.iter().zip(mask).map(|(a, m)| a * m).collect(),
        None => x.to_vec(),
    };
    Ok(l2_normalize(&add(&gated, &t.offset)))
}

fn unit_vector(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v = l2_normalize(&gaussian_vec(rng, dim, 1.0));
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn sample_offsets(spec: &WorldSpec, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(spec.num_true_patterns);
    let mut attempts = 0u64;
    while offsets.len() < spec.num_true_patterns {
        attempts += 1;
        if attempts > MAX_REJECTION_ATTEMPTS {
            return Err(Error::InvalidArgument(format!(
                "could not place {} offsets with pairwise cosine <= {MAX_OFFSET_COSINE} in dimension {} \
                 within {MAX_REJECTION_ATTEMPTS} attempts",
                spec.num_true_patterns, spec.dim
            )));
        }
        let v = scale(&unit_vector(rng, spec.dim), OFFSET_NORM);
        let far = offsets
            .iter()
            .all(|o| cosine_sim(o, &v).map(|c| c <= MAX_OFFSET_COSINE).unwrap_or(false));
        if far {
            offsets.push(v);
        }
    }
    Ok(offsets)
}

fn noisy(anchor: &[f64], sigma: f64, rng: &mut StreamRng) -> Vec<f64> {
    if sigma > 0.0 {
        l2_normalize(&add(anchor, &gaussian_vec(rng, anchor.len(), sigma)))
    } else {
        anchor.to_vec()
    }
}

pub struct World {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub truth: WorldTruth,
}

/// Builds train/test datasets and the ground truth. A pure function of `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let tree = SeedTree::new(spec.seed);
    let d = spec.dim;

    let mut anchor_rng = tree.stream("anchors");
    let class_anchors: BTreeMap<u32, Vec<f64>> = (0..spec.num_classes as u32)
        .map(|c| (c, unit_vector(&mut anchor_rng, d)))
        .collect();

    let mut transform_rng = tree.stream("transforms");
    let offsets = sample_offsets(spec, &mut transform_rng)?;
    let transforms = offsets
        .into_iter()
        .map(|offset| {
            let mask = match spec.transform_mode {
                TransformMode::LinearOffset => None,
                TransformMode::GatedNonlinear => {
                    let mut m = vec![1.0; d];
                    for i in index::sample(&mut transform_rng, d, d / 4) {
                        m[i] = 0.0;
                    }
                    Some(m)
                }
            };
            TrueTransform { offset, mask }
        })
        .collect();

    // balanced assignment: every transform is used by ⌊N/K*⌋ or ⌈N/K*⌉ classes
    let mut assignment: Vec<usize> = (0..spec.num_classes).map(|c| c % spec.num_true_patterns).collect();
    assignment.shuffle(&mut tree.stream("assignment"));
    let class_pattern: BTreeMap<u32, usize> = assignment.into_iter().enumerate().map(|(c, g)| (c as u32, g)).collect();

    let truth = WorldTruth {
        transform_mode: spec.transform_mode,
        class_anchors,
        class_pattern,
        transforms,
    };

    let mut text_rng = tree.stream("texts");
    let mut class_texts = BTreeMap::new();
    let mut class_names = BTreeMap::new();
    for (c, mu) in &truth.class_anchors {
        let texts = (0..spec.texts_per_class)
            .map(|_| noisy(mu, spec.text_noise_sigma, &mut text_rng))
            .collect();
        class_texts.insert(*c, texts);
        class_names.insert(*c, format!("class_{c:03}"));
    }

    let stage_anchors: BTreeMap<u32, Vec<Vec<f64>>> = truth
        .class_anchors
        .keys()
        .map(|&c| truth.stage_anchors(c, spec.num_stages).map(|a| (c, a)))
        .collect::<Result<_>>()?;

    let draw = |label: &str, per: usize| -> FeatureDataset {
        let mut rng = tree.stream(label);
        let mut ds = FeatureDataset::new(d, spec.num_stages);
        ds.class_texts = class_texts.clone();
        ds.class_names = class_names.clone();
        for (&c, anchors) in &stage_anchors {
            for (s, a) in anchors.iter().enumerate() {
                for _ in 0..per {
                    ds.records.push(FeatureRecord {
                        class_id: c,
                        stage_id: s as u32,
                        features: noisy(a, spec.noise_sigma, &mut rng),
                    });
                }
            }
        }
        ds
    };

    Ok(World {
        train: draw("train", spec.train_per_class_stage),
        test: draw("test", spec.test_per_class_stage),
        truth,
    })
}
