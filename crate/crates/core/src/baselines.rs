//! Reference classifiers: per-class prototype overwriting and a joint skyline.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_cells, Classifier};
use crate::metrics::{LedgerStep, MetricsLedger};
use crate::numerics::{cosine_sim, l2_normalize, mean};
use crate::protocol::TaskStream;

pub const OVERWRITE_METHOD: &str = "overwrite";
pub const JOINT_METHOD: &str = "joint";

/// Nearest-prototype cosine classifier; a class may own several prototypes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrototypeClassifier {
    /// Keyed by `(class, slot)`; iteration order fixes the tie rule.
    pub prototypes: BTreeMap<(u32, u32), Vec<f64>>,
}

impl Classifier for PrototypeClassifier {
    /// Highest cosine wins; ties go to the lower class id.
    fn predict(&self, x: &[f64]) -> Result<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (&(c, _), p) in &self.prototypes {
            let s = cosine_sim(x, p)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        best.map(|(c, _)| c)
            .ok_or_else(|| Error::Model("classifier has no prototypes".into()))
    }
}

fn class_means(ds: &FeatureDataset, indices: &[usize]) -> BTreeMap<u32, Vec<f64>> {
    let mut groups: BTreeMap<u32, Vec<&[f64]>> = BTreeMap::new();
    for &i in indices {
        let r = &ds.records[i];
        groups.entry(r.class_id).or_default().push(&r.features);
    }
    groups
        .into_iter()
        .map(|(c, fs)| (c, l2_normalize(&mean(&fs).expect("non-empty group"))))
        .collect()
}

/// Each step replaces its classes' single prototype with the normalised mean
/// of the step's features, then evaluates every seen (class, stage) cell.
pub fn run_overwrite_baseline(stream: &TaskStream, train: &FeatureDataset, test: &FeatureDataset) -> Result<MetricsLedger> {
    let mut clf = PrototypeClassifier::default();
    let mut ledger = MetricsLedger::new(OVERWRITE_METHOD, stream.num_stages);
    for step in &stream.steps {
        if let Some(&i) = step.record_indices.iter().find(|&&i| i >= train.records.len()) {
            return Err(Error::Protocol(format!("step {} references record {i} out of range", step.step_index)));
        }
        for (c, p) in class_means(train, &step.record_indices) {
            clf.prototypes.insert((c, 0), p);
        }
        ledger.steps.push(LedgerStep {
            step: step.step_index,
            task: Some(step.task_index),
            stage: Some(step.stage_index),
            cells: evaluate_cells(&clf, test, &step.seen_class_stages)?,
        });
    }
    Ok(ledger)
}

/// Per-(class, stage) prototypes from all training data, evaluated once on all test cells.
pub fn joint_classifier(train: &FeatureDataset) -> PrototypeClassifier {
    let mut prototypes = BTreeMap::new();
    for ((c, s), idx) in train.index_by_class_stage() {
        let fs: Vec<&[f64]> = idx.iter().map(|&i| train.records[i].features.as_slice()).collect();
        if let Some(m) = mean(&fs) {
            prototypes.insert((c, s), l2_normalize(&m));
        }
    }
    PrototypeClassifier { prototypes }
}

pub fn run_joint_bound(train: &FeatureDataset, test: &FeatureDataset) -> Result<MetricsLedger> {
    let clf = joint_classifier(train);
    let cells: BTreeSet<(u32, u32)> = clf.prototypes.keys().copied().collect();
    let mut ledger = MetricsLedger::new(JOINT_METHOD, train.num_stages);
    ledger.steps.push(LedgerStep {
        step: 0,
        task: None,
        stage: None,
        cells: evaluate_cells(&clf, test, &cells)?,
    });
    Ok(ledger)
}
