//! Accuracy bookkeeping and the forgetting metrics.
//!
//! A [`MetricsLedger`] stores raw correct/total counts per `(class, stage)`
//! cell after every step; every reported number is derived from it, so a
//! serialized ledger reproduces a report exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator guard for the intra-class forgetting ratio.
pub const INTRA_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub class_id: u32,
    pub stage: u32,
    pub correct: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerStep {
    pub step: usize,
    pub task: Option<usize>,
    pub stage: Option<u32>,
    pub cells: Vec<CellCount>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub method: String,
    pub num_stages: u32,
    pub steps: Vec<LedgerStep>,
}

fn ratio(correct: u64, total: u64) -> Option<f64> {
    (total > 0).then(|| correct as f64 / total as f64)
}

impl MetricsLedger {
    pub fn new(method: impl Into<String>, num_stages: u32) -> Self {
        Self {
            method: method.into(),
            num_stages,
            steps: Vec::new(),
        }
    }

    /// `A_b` for every step: micro accuracy over all evaluated cells.
    pub fn step_accuracies(&self) -> Result<Vec<f64>> {
        self.steps
            .iter()
            .map(|s| {
                let (c, t) = s.cells.iter().fold((0, 0), |(c, t), x| (c + x.correct, t + x.total));
                ratio(c, t).ok_or_else(|| Error::InvalidArgument(format!("step {} has no evaluated samples", s.step)))
            })
            .collect()
    }

    /// `A_i(b)`: per class, accuracy over its stages evaluated at step `b`; `None` before the class is seen.
    pub fn class_step_table(&self) -> BTreeMap<u32, Vec<Option<f64>>> {
        let n = self.steps.len();
        let mut table: BTreeMap<u32, Vec<(u64, u64)>> = BTreeMap::new();
        for (b, s) in self.steps.iter().enumerate() {
            for cell in &s.cells {
                let row = table.entry(cell.class_id).or_insert_with(|| vec![(0, 0); n]);
                row[b].0 += cell.correct;
                row[b].1 += cell.total;
            }
        }
        table
            .into_iter()
            .map(|(c, row)| (c, row.into_iter().map(|(k, t)| ratio(k, t)).collect()))
            .collect()
    }

    /// `A_{i,s}` at the final step.
    pub fn final_class_stage_table(&self) -> BTreeMap<u32, Vec<Option<f64>>> {
        let m = self.num_stages as usize;
        let mut table: BTreeMap<u32, Vec<(u64, u64)>> = BTreeMap::new();
        if let Some(last) = self.steps.last() {
            for cell in &last.cells {
                let row = table.entry(cell.class_id).or_insert_with(|| vec![(0, 0); m]);
                if let Some(slot) = row.get_mut(cell.stage as usize) {
                    slot.0 += cell.correct;
                    slot.1 += cell.total;
                }
            }
        }
        table
            .into_iter()
            .map(|(c, row)| (c, row.into_iter().map(|(k, t)| ratio(k, t)).collect()))
            .collect()
    }

    /// `A_{B,s}`: overall accuracy per stage at the final step.
    pub fn final_stage_accuracies(&self) -> Vec<Option<f64>> {
        let m = self.num_stages as usize;
        let mut acc = vec![(0u64, 0u64); m];
        if let Some(last) = self.steps.last() {
            for cell in &last.cells {
                if let Some(slot) = acc.get_mut(cell.stage as usize) {
                    slot.0 += cell.correct;
                    slot.1 += cell.total;
                }
            }
        }
        acc.into_iter().map(|(c, t)| ratio(c, t)).collect()
    }
}

pub fn top1_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty prediction/label lists, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `Ā`: mean of the per-step accuracies.
pub fn avg_incremental_accuracy(per_step: &[f64]) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::InvalidArgument("no steps to average".into()));
    }
    Ok(per_step.iter().sum::<f64>() / per_step.len() as f64)
}

/// Mean over classes of best-ever minus final accuracy. Undefined steps are skipped in the max.
pub fn inter_forgetting(table: &BTreeMap<u32, Vec<Option<f64>>>) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty accuracy table".into()));
    }
    let mut total = 0.0;
    for (c, row) in table {
        let best = row
            .iter()
            .flatten()
            .cloned()
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
            .ok_or_else(|| Error::InvalidArgument(format!("class {c} has no defined steps")))?;
        let last = row
            .last()
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidArgument(format!("class {c} has no final-step accuracy")))?;
        total += best - last;
    }
    Ok(total / table.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraMode {
    /// First stage against stage `M − 1`.
    General,
    /// The `M = 2` instance; rows must have exactly two stages.
    TwoStage,
}

/// Mean over classes of `(A_{i,0} − A_{i,M−1}) / max(ε, A_{i,0})`. Not clamped.
pub fn intra_forgetting(table: &BTreeMap<u32, Vec<Option<f64>>>, eps: f64, mode: IntraMode) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty stage table".into()));
    }
    let mut total = 0.0;
    for (c, row) in table {
        if mode == IntraMode::TwoStage && row.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "two-stage mode needs 2 stages, class {c} has {}",
                row.len()
            )));
        }
        let missing = || Error::InvalidArgument(format!("class {c} lacks a first- or last-stage accuracy"));
        let first = row.first().copied().flatten().ok_or_else(missing)?;
        let last = row.last().copied().flatten().ok_or_else(missing)?;
        total += (first - last) / eps.max(first);
    }
    Ok(total / table.len() as f64)
}

/// Headline numbers derived from a ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub per_step_accuracy: Vec<f64>,
    pub avg_incremental_accuracy: f64,
    pub final_accuracy: f64,
    pub final_stage_accuracy: Vec<Option<f64>>,
    pub inter_forgetting: f64,
    pub intra_forgetting: f64,
}

pub fn summarize(ledger: &MetricsLedger) -> Result<MetricSummary> {
    if ledger.steps.is_empty() {
        return Err(Error::InvalidArgument(format!("ledger '{}' has no steps", ledger.method)));
    }
    let per_step = ledger.step_accuracies()?;
    let mode = if ledger.num_stages == 2 { IntraMode::TwoStage } else { IntraMode::General };
    Ok(MetricSummary {
        method: ledger.method.clone(),
        avg_incremental_accuracy: avg_incremental_accuracy(&per_step)?,
        final_accuracy: *per_step.last().unwrap(),
        final_stage_accuracy: ledger.final_stage_accuracies(),
        inter_forgetting: inter_forgetting(&ledger.class_step_table())?,
        intra_forgetting: intra_forgetting(&ledger.final_class_stage_table(), INTRA_EPS, mode)?,
        per_step_accuracy: per_step,
    })
}

/// Per-step top-k selection counts of the pattern pool.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLog {
    pub pool_size: usize,
    pub steps: Vec<UsageStep>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageStep {
    pub step: usize,
    pub counts: Vec<u64>,
}

impl UsageLog {
    pub fn new(pool_size: usize) -> Self {
        Self {
            pool_size,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, step: usize, counts: Vec<u64>) {
        debug_assert_eq!(counts.len(), self.pool_size);
        self.steps.push(UsageStep { step, counts });
    }

    /// Running totals after each logged step.
    pub fn cumulative(&self) -> Vec<Vec<u64>> {
        let mut acc = vec![0u64; self.pool_size];
        self.steps
            .iter()
            .map(|s| {
                for (a, c) in acc.iter_mut().zip(&s.counts) {
                    *a += c;
                }
                acc.clone()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    /// Normalised selection frequencies per logged step; `None` when nothing was selected.
    pub frequencies: Vec<Option<Vec<f64>>>,
    /// Population variance of each frequency vector.
    pub variance: Vec<Option<f64>>,
    /// Five most used patterns by cumulative count at each requested checkpoint.
    pub top5: Vec<(usize, Vec<usize>)>,
}

impl UsageStats {
    /// Variance trajectory restricted to steps that made selections.
    pub fn active_variance(&self) -> Vec<f64> {
        self.variance.iter().flatten().copied().collect()
    }
}

fn normalized(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

fn top_indices(counts: &[u64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `checkpoints` are positions in the log (not step numbers).
pub fn pattern_usage_stats(log: &UsageLog, checkpoints: &[usize]) -> Result<UsageStats> {
    if log.steps.is_empty() || log.pool_size == 0 {
        return Err(Error::InvalidArgument("empty usage log".into()));
    }
    let frequencies: Vec<Option<Vec<f64>>> = log.steps.iter().map(|s| normalized(&s.counts)).collect();
    let variance = frequencies.iter().map(|f| f.as_deref().map(variance)).collect();
    let cumulative = log.cumulative();
    let top5 = checkpoints
        .iter()
        .map(|&i| {
            cumulative
                .get(i)
                .map(|c| (i, top_indices(c, 5)))
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint {i} beyond log of {}", cumulative.len())))
        })
        .collect::<Result<_>>()?;
    Ok(UsageStats {
        frequencies,
        variance,
        top5,
    })
}
