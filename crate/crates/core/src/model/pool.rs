//! Fixed-size pool of transformation patterns with top-k retrieval.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{cosine_sim, Mat};
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternPool {
    /// `K × d`, one pattern per row.
    pub patterns: Mat,
    pub usage_counts: Vec<u64>,
    pub update_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub similarities: Vec<f64>,
}

impl PatternPool {
    pub fn new(patterns: Mat) -> Self {
        let k = patterns.rows();
        Self {
            patterns,
            usage_counts: vec![0; k],
            update_count: 0,
        }
    }

    pub fn gaussian(size: usize, dim: usize, sigma: f64, rng: &mut StreamRng) -> Self {
        Self::new(Mat::gaussian(size, dim, sigma, rng))
    }

    pub fn size(&self) -> usize {
        self.patterns.rows()
    }

    pub fn dim(&self) -> usize {
        self.patterns.cols()
    }

    pub fn pattern(&self, j: usize) -> &[f64] {
        self.patterns.row(j)
    }

    /// The `k` patterns with the highest cosine to `anchor`, best first; ties go to the lower index.
    pub fn select_topk(&self, anchor: &[f64], k: usize) -> Result<Selection> {
        if k == 0 || k > self.size() {
            return Err(Error::InvalidArgument(format!(
                "top-k of {k} from a pool of {}",
                self.size()
            )));
        }
        check_dim(self.dim(), anchor.len())?;
        let sims: Vec<f64> = (0..self.size())
            .map(|j| cosine_sim(anchor, self.pattern(j)))
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        order.truncate(k);
        Ok(Selection {
            similarities: order.iter().map(|&j| sims[j]).collect(),
            indices: order,
        })
    }

    pub fn record_usage(&mut self, indices: &[usize]) {
        for &j in indices {
            self.usage_counts[j] += 1;
        }
    }

    /// `u_j ← (1 − η) u_j + η w_j δ` for each selected `j`.
    pub fn ema_update(&mut self, indices: &[usize], weights: &[f64], delta: &[f64], eta: f64) -> Result<()> {
        check_dim(indices.len(), weights.len())?;
        check_dim(self.dim(), delta.len())?;
        if let Some(&j) = indices.iter().find(|&&j| j >= self.size()) {
            return Err(Error::InvalidArgument(format!(
                "pattern index {j} out of range 0..{}",
                self.size()
            )));
        }
        for (&j, &w) in indices.iter().zip(weights) {
            for (u, d) in self.patterns.row_mut(j).iter_mut().zip(delta) {
                *u = (1.0 - eta) * *u + eta * w * d;
            }
        }
        self.update_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_vec, SeedTree};

    fn pool(rows: &[[f64; 2]]) -> PatternPool {
        PatternPool::new(Mat::from_vec(rows.len(), 2, rows.concat()).unwrap())
    }

    #[test]
    fn picks_highest_cosines() {
        let c = |t: f64| [t, (1.0 - t * t).sqrt()];
        let p = pool(&[c(0.9), c(-0.2), c(0.5)]);
        let sel = p.select_topk(&[1.0, 0.0], 2).unwrap();
        assert_eq!(sel.indices, vec![0, 2]);
        assert!(p.select_topk(&[1.0, 0.0], 4).is_err());
        assert!(p.select_topk(&[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let p = pool(&[[1.0, 1.0]; 4]);
        assert_eq!(p.select_topk(&[0.3, 0.1], 2).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn matches_full_sort() {
        let mut rng = SeedTree::new(8).rng();
        for _ in 0..20 {
            let p = PatternPool::gaussian(12, 5, 1.0, &mut rng);
            let a = gaussian_vec(&mut rng, 5, 1.0);
            let mut all: Vec<(f64, usize)> = (0..12)
                .map(|j| (cosine_sim(&a, p.pattern(j)).unwrap(), j))
                .collect();
            all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
            let expect: Vec<usize> = all.iter().take(4).map(|x| x.1).collect();
            assert_eq!(p.select_topk(&a, 4).unwrap().indices, expect);
        }
    }

    #[test]
    fn ema_single_step() {
        let mut p = pool(&[[0.0, 0.0], [5.0, 5.0]]);
        p.ema_update(&[0], &[1.0], &[1.0, 0.0], 0.1).unwrap();
        assert_eq!(p.pattern(0), &[0.1, 0.0]);
        assert_eq!(p.pattern(1), &[5.0, 5.0]);
        assert_eq!(p.update_count, 1);
        assert!(p.ema_update(&[2], &[1.0], &[1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn ema_zero_rate_is_identity() {
        let mut p = pool(&[[0.3, -0.7]]);
        let before = p.patterns.clone();
        p.ema_update(&[0], &[0.4], &[9.0, 9.0], 0.0).unwrap();
        assert_eq!(p.patterns, before);
    }

    #[test]
    fn ema_geometric_closed_form() {
        let (eta, w) = (0.05, 0.37);
        let delta = [0.8, -0.25];
        let u0 = [0.3, 0.9];
        let mut p = pool(&[u0]);
        for _ in 0..2000 {
            p.ema_update(&[0], &[w], &delta, eta).unwrap();
        }
        let decay = (1.0f64 - eta).powi(2000);
        for i in 0..2 {
            let expect = w * delta[i] + decay * (u0[i] - w * delta[i]);
            assert!((p.pattern(0)[i] - expect).abs() <= 1e-6);
        }
    }
}
