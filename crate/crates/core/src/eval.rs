//! Evaluation of any classifier over the seen (class, stage) test cells.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::FeatureDataset;
use crate::error::Result;
use crate::metrics::CellCount;
use crate::model::StageModel;

pub trait Classifier {
    fn predict(&self, x: &[f64]) -> Result<u32>;
}

impl Classifier for StageModel {
    fn predict(&self, x: &[f64]) -> Result<u32> {
        Ok(self.classify(x)?.class_id)
    }
}

/// Correct/total counts per seen `(class, stage)` cell, in cell order.
/// Cells without test records are omitted.
pub fn evaluate_cells<C: Classifier + ?Sized>(
    clf: &C,
    test: &FeatureDataset,
    seen: &BTreeSet<(u32, u32)>,
) -> Result<Vec<CellCount>> {
    let mut cells: BTreeMap<(u32, u32), (u64, u64)> = BTreeMap::new();
    for r in &test.records {
        let key = (r.class_id, r.stage_id);
        if !seen.contains(&key) {
            continue;
        }
        let hit = clf.predict(&r.features)? == r.class_id;
        let e = cells.entry(key).or_default();
        e.0 += u64::from(hit);
        e.1 += 1;
    }
    Ok(cells
        .into_iter()
        .map(|((class_id, stage), (correct, total))| CellCount {
            class_id,
            stage,
            correct,
            total,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureRecord;

    struct Sign;

    impl Classifier for Sign {
        fn predict(&self, x: &[f64]) -> Result<u32> {
            Ok(u32::from(x[0] > 0.0))
        }
    }

    #[test]
    fn counts_only_seen_cells() {
        let mut ds = FeatureDataset::new(1, 2);
        for (c, s, v) in [(0, 0, -1.0), (0, 0, 1.0), (1, 0, 1.0), (1, 1, -1.0), (0, 1, -1.0)] {
            ds.records.push(FeatureRecord {
                class_id: c,
                stage_id: s,
                features: vec![v],
            });
        }
        let seen: BTreeSet<(u32, u32)> = [(0, 0), (1, 0), (1, 1), (2, 0)].into();
        let cells = evaluate_cells(&Sign, &ds, &seen).unwrap();
        let got: Vec<_> = cells.iter().map(|c| (c.class_id, c.stage, c.correct, c.total)).collect();
        assert_eq!(got, vec![(0, 0, 1, 2), (1, 0, 1, 1), (1, 1, 0, 1)]);
    }
}
