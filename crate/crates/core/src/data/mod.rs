//! Stage-annotated feature data and its validation.

mod sfv;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use sfv::{decode_dataset, encode_dataset, read_sfv, write_sfv, SFV_HEADER_LEN, SFV_MAGIC};

/// One labelled feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub class_id: u32,
    pub stage_id: u32,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub dim: usize,
    pub num_stages: u32,
    pub records: Vec<FeatureRecord>,
    /// Text embeddings per class, at least one each.
    pub class_texts: BTreeMap<u32, Vec<Vec<f64>>>,
    pub class_names: BTreeMap<u32, String>,
}

impl FeatureDataset {
    pub fn new(dim: usize, num_stages: u32) -> Self {
        Self {
            dim,
            num_stages,
            records: Vec::new(),
            class_texts: BTreeMap::new(),
            class_names: BTreeMap::new(),
        }
    }

    /// Sorted class ids appearing in the records.
    pub fn class_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.class_id).collect();
        set.into_iter().collect()
    }

    /// Indices of the records of `class_id` at `stage_id`, in stored order.
    pub fn indices_for(&self, class_id: u32, stage_id: u32) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class_id == class_id && r.stage_id == stage_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Record indices grouped by `(class, stage)`.
    pub fn index_by_class_stage(&self) -> BTreeMap<(u32, u32), Vec<usize>> {
        let mut map: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry((r.class_id, r.stage_id)).or_default().push(i);
        }
        map
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Dataset,
    Record(usize),
    Class(u32),
    Step(usize),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Dataset => write!(f, "dataset"),
            Subject::Record(i) => write!(f, "record {i}"),
            Subject::Class(c) => write!(f, "class {c}"),
            Subject::Step(b) => write!(f, "step {b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: Subject,
    pub rule: String,
    pub message: String,
}

/// Outcome of a validation pass. `ok` holds exactly when there are no violations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{} [{}]: {}", v.subject, v.rule, v.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub(crate) fn violation(subject: Subject, rule: &str, message: impl Into<String>) -> Violation {
    Violation {
        subject,
        rule: rule.to_string(),
        message: message.into(),
    }
}

/// Checks every dataset invariant and reports all violations found.
pub fn validate_dataset(ds: &FeatureDataset) -> ValidationReport {
    let mut out = Vec::new();
    if ds.dim == 0 {
        out.push(violation(Subject::Dataset, "dim", "dimension must be at least 1"));
    }
    if ds.num_stages == 0 || ds.num_stages > u32::from(u16::MAX) + 1 {
        out.push(violation(
            Subject::Dataset,
            "num_stages",
            format!("stage count {} outside 1..=65536", ds.num_stages),
        ));
    }
    for (i, r) in ds.records.iter().enumerate() {
        if r.features.len() != ds.dim {
            out.push(violation(
                Subject::Record(i),
                "record_dim",
                format!("record has dimension {}, dataset has {}", r.features.len(), ds.dim),
            ));
        }
        if !r.features.iter().all(|x| x.is_finite()) {
            out.push(violation(Subject::Record(i), "record_finite", "non-finite feature value"));
        }
        if r.stage_id >= ds.num_stages {
            out.push(violation(
                Subject::Record(i),
                "stage_range",
                format!("stage {} not below {}", r.stage_id, ds.num_stages),
            ));
        }
    }
    let record_classes: BTreeSet<u32> = ds.records.iter().map(|r| r.class_id).collect();
    for c in &record_classes {
        if !ds.class_texts.contains_key(c) {
            out.push(violation(
                Subject::Class(*c),
                "class_texts_missing",
                "class appears in records but has no text embeddings",
            ));
        }
    }
    for (c, texts) in &ds.class_texts {
        if texts.is_empty() || texts.len() > usize::from(u16::MAX) {
            out.push(violation(
                Subject::Class(*c),
                "text_count",
                format!("{} text embeddings, need 1..=65535", texts.len()),
            ));
        }
        if texts.iter().any(|t| t.len() != ds.dim) {
            out.push(violation(Subject::Class(*c), "text_dim", "text embedding dimension differs from dataset"));
        }
        if texts.iter().any(|t| !t.iter().all(|x| x.is_finite())) {
            out.push(violation(Subject::Class(*c), "text_finite", "non-finite text embedding value"));
        }
    }
    for (c, name) in &ds.class_names {
        if !ds.class_texts.contains_key(c) {
            out.push(violation(Subject::Class(*c), "name_without_texts", "class name given for a class without texts"));
        }
        if name.len() > usize::from(u16::MAX) {
            out.push(violation(Subject::Class(*c), "name_len", "class name longer than 65535 bytes"));
        }
    }
    ValidationReport::from_violations(out)
}
