//! Task–stage streams for `(B-m, Inc-n) × S^M` protocols.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, violation, FeatureDataset, Subject, ValidationReport};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub const DEFAULT_CLASS_ORDER_SEED: u64 = 1993;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageInterleaving {
    /// All stages of task `t` before task `t + 1`.
    #[default]
    ByTask,
    /// Stage 0 of every task, then stage 1 of every task, ...
    ByStageWave,
}

fn default_seed() -> u64 {
    DEFAULT_CLASS_ORDER_SEED
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub base_classes: usize,
    pub inc_classes: usize,
    pub num_stages: u32,
    #[serde(default = "default_seed")]
    pub class_order_seed: u64,
    #[serde(default)]
    pub stage_interleaving: StageInterleaving,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningStep {
    pub step_index: usize,
    pub task_index: usize,
    pub stage_index: u32,
    pub class_ids: Vec<u32>,
    pub record_indices: Vec<usize>,
    /// Every `(class, stage)` pair trained on up to and including this step.
    pub seen_class_stages: BTreeSet<(u32, u32)>,
}

impl LearningStep {
    pub fn seen_classes(&self) -> BTreeSet<u32> {
        self.seen_class_stages.iter().map(|(c, _)| *c).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub steps: Vec<LearningStep>,
    pub class_order: Vec<u32>,
    pub num_tasks: usize,
    pub num_stages: u32,
}

impl TaskStream {
    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    /// Class sets of each task, in task order.
    pub fn tasks(&self) -> Vec<Vec<u32>> {
        let mut map: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for s in &self.steps {
            map.entry(s.task_index).or_insert_with(|| s.class_ids.clone());
        }
        map.into_values().collect()
    }

    pub fn summary(&self) -> StreamSummary {
        StreamSummary {
            total_steps: self.steps.len(),
            num_tasks: self.num_tasks,
            num_stages: self.num_stages,
            class_order: self.class_order.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| StepSummary {
                    step: s.step_index,
                    task: s.task_index,
                    stage: s.stage_index,
                    class_ids: s.class_ids.clone(),
                    num_records: s.record_indices.len(),
                })
                .collect(),
        }
    }
}

/// Audit view of a stream for JSON export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub total_steps: usize,
    pub num_tasks: usize,
    pub num_stages: u32,
    pub class_order: Vec<u32>,
    pub steps: Vec<StepSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub task: usize,
    pub stage: u32,
    pub class_ids: Vec<u32>,
    pub num_records: usize,
}

/// Partitions the classes of `ds` into tasks and enumerates the (task, stage) steps.
pub fn build_stream(cfg: &ProtocolConfig, ds: &FeatureDataset) -> Result<TaskStream> {
    if cfg.inc_classes == 0 {
        return Err(Error::Protocol("inc_classes must be at least 1".into()));
    }
    if cfg.num_stages == 0 {
        return Err(Error::Protocol("num_stages must be at least 1".into()));
    }
    if cfg.num_stages > ds.num_stages {
        return Err(Error::Protocol(format!(
            "protocol uses {} stages but the dataset has {}",
            cfg.num_stages, ds.num_stages
        )));
    }
    let report = validate_dataset(ds);
    if !report.ok {
        return Err(Error::InvalidDataset(report.summary()));
    }
    let classes = ds.class_ids();
    let n_cls = classes.len();
    let (m, n) = (cfg.base_classes, cfg.inc_classes);
    if n_cls == 0 || n_cls < m || !(n_cls - m).is_multiple_of(n) || (m == 0 && n_cls < n) {
        return Err(Error::Protocol(format!(
            "{n_cls} classes cannot be split into a base session of {m} and sessions of {n}"
        )));
    }

    let mut class_order = classes;
    class_order.shuffle(&mut SeedTree::new(cfg.class_order_seed).rng());

    let mut tasks: Vec<Vec<u32>> = Vec::new();
    let mut rest = &class_order[..];
    if m > 0 {
        tasks.push(rest[..m].to_vec());
        rest = &rest[m..];
    }
    for chunk in rest.chunks(n) {
        tasks.push(chunk.to_vec());
    }

    let by_cs = ds.index_by_class_stage();
    for task in &tasks {
        for &c in task {
            for s in 0..cfg.num_stages {
                if by_cs.get(&(c, s)).is_none_or(|v| v.is_empty()) {
                    return Err(Error::Protocol(format!("class {c} has no training data at stage {s}")));
                }
            }
        }
    }

    let order: Vec<(usize, u32)> = match cfg.stage_interleaving {
        StageInterleaving::ByTask => (0..tasks.len())
            .flat_map(|t| (0..cfg.num_stages).map(move |s| (t, s)))
            .collect(),
        StageInterleaving::ByStageWave => (0..cfg.num_stages)
            .flat_map(|s| (0..tasks.len()).map(move |t| (t, s)))
            .collect(),
    };

    let mut seen = BTreeSet::new();
    let steps = order
        .into_iter()
        .enumerate()
        .map(|(b, (t, s))| {
            let class_ids = tasks[t].clone();
            let wanted: BTreeSet<u32> = class_ids.iter().copied().collect();
            let record_indices = ds
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.stage_id == s && wanted.contains(&r.class_id))
                .map(|(i, _)| i)
                .collect();
            seen.extend(class_ids.iter().map(|&c| (c, s)));
            LearningStep {
                step_index: b,
                task_index: t,
                stage_index: s,
                class_ids,
                record_indices,
                seen_class_stages: seen.clone(),
            }
        })
        .collect();

    Ok(TaskStream {
        steps,
        class_order,
        num_tasks: tasks.len(),
        num_stages: cfg.num_stages,
    })
}

/// Checks stage ordering, task disjointness and slice purity against `ds`.
pub fn verify_stream(stream: &TaskStream, ds: &FeatureDataset) -> ValidationReport {
    let mut out = Vec::new();
    let mut last_stage: BTreeMap<u32, u32> = BTreeMap::new();
    let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
    let mut task_classes: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();

    for (pos, step) in stream.steps.iter().enumerate() {
        let subject = Subject::Step(pos);
        if step.step_index != pos {
            out.push(violation(subject.clone(), "step_index", format!("step at position {pos} claims index {}", step.step_index)));
        }
        let classes: BTreeSet<u32> = step.class_ids.iter().copied().collect();
        if classes.len() != step.class_ids.len() {
            out.push(violation(subject.clone(), "duplicate_class", "class listed twice in one step"));
        }
        match task_classes.get(&step.task_index) {
            Some(prev) if *prev != classes => out.push(violation(
                subject.clone(),
                "task_classes",
                format!("task {} changes its class set between steps", step.task_index),
            )),
            Some(_) => {}
            None => {
                task_classes.insert(step.task_index, classes.clone());
            }
        }
        for &c in &step.class_ids {
            match owner.get(&c) {
                Some(&t) if t != step.task_index => out.push(violation(
                    Subject::Class(c),
                    "task_disjointness",
                    format!("class {c} appears in tasks {t} and {}", step.task_index),
                )),
                Some(_) => {}
                None => {
                    owner.insert(c, step.task_index);
                }
            }
            if let Some(&prev) = last_stage.get(&c) {
                if step.stage_index <= prev {
                    out.push(violation(
                        Subject::Class(c),
                        "stage_order",
                        format!("class {c} sees stage {} at step {pos} after stage {prev}", step.stage_index),
                    ));
                }
            }
            last_stage.insert(c, step.stage_index);
            seen.insert((c, step.stage_index));
        }
        if step.seen_class_stages != seen {
            out.push(violation(subject.clone(), "seen_set", "seen (class, stage) set does not match the stream prefix"));
        }
        for &i in &step.record_indices {
            match ds.records.get(i) {
                None => out.push(violation(subject.clone(), "record_index", format!("record {i} does not exist"))),
                Some(r) if r.stage_id != step.stage_index || !classes.contains(&r.class_id) => out.push(violation(
                    Subject::Record(i),
                    "slice_purity",
                    format!(
                        "record (class {}, stage {}) in step for stage {}",
                        r.class_id, r.stage_id, step.stage_index
                    ),
                )),
                Some(_) => {}
            }
        }
    }
    ValidationReport::from_violations(out)
}
