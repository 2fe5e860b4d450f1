//! SGD with momentum under a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `base_lr · ½ (1 + cos(π · step / total))`
pub fn cosine_anneal(base_lr: f64, step_count: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 || step_count > total_steps {
        return Err(Error::InvalidArgument(format!(
            "schedule step {step_count} outside 0..={total_steps}"
        )));
    }
    let progress = step_count as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub buffers: Vec<Vec<f64>>,
    pub base_lr: f64,
    pub momentum: f64,
    pub step_count: u64,
    pub total_steps: u64,
}

impl OptState {
    /// Zeroed momentum buffers for parameter tensors of the given lengths.
    pub fn new(shapes: &[usize], base_lr: f64, momentum: f64, total_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) {
            return Err(Error::InvalidArgument(format!("base_lr must be positive, got {base_lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0,1), got {momentum}")));
        }
        if total_steps == 0 {
            return Err(Error::InvalidArgument("total_steps must be at least 1".into()));
        }
        Ok(Self {
            buffers: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            base_lr,
            momentum,
            step_count: 0,
            total_steps,
        })
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_anneal(self.base_lr, self.step_count, self.total_steps)
    }
}

/// One step: `buf ← μ·buf + g`, `θ ← θ − lr·buf`, with `lr` read from the schedule before the step.
pub fn sgd_update(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptState) -> Result<()> {
    check_dim(state.buffers.len(), params.len())?;
    check_dim(params.len(), grads.len())?;
    for ((p, g), b) in params.iter().zip(grads).zip(&state.buffers) {
        check_dim(b.len(), p.len())?;
        check_dim(p.len(), g.len())?;
    }
    if state.step_count >= state.total_steps {
        return Err(Error::InvalidArgument(format!(
            "optimizer already ran its {} scheduled steps",
            state.total_steps
        )));
    }
    let lr = state.current_lr()?;
    let mu = state.momentum;
    for ((p, g), b) in params.iter_mut().zip(grads).zip(state.buffers.iter_mut()) {
        for ((pi, gi), bi) in p.iter_mut().zip(g.iter()).zip(b.iter_mut()) {
            *bi = mu * *bi + gi;
            *pi -= lr * *bi;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let total = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let s = max_norm / total;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_endpoints() {
        assert_eq!(cosine_anneal(0.001, 0, 10).unwrap(), 0.001);
        assert!(cosine_anneal(0.3, 10, 10).unwrap().abs() < 1e-17);
        assert!((cosine_anneal(0.3, 5, 10).unwrap() - 0.15).abs() < 1e-15);
        assert!(cosine_anneal(0.3, 11, 10).is_err());
        assert!(cosine_anneal(0.3, 0, 0).is_err());
    }

    #[test]
    fn anneal_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=97 {
            let lr = cosine_anneal(0.01, s, 97).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn plain_step() {
        // total_steps large enough that the first step uses the full rate
        let mut st = OptState::new(&[1], 0.1, 0.0, 1_000).unwrap();
        let mut p = [0.0];
        sgd_update(&mut [&mut p], &[&[1.0]], &mut st).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_grads_decay_buffers() {
        let mut st = OptState::new(&[2], 0.1, 0.9, 100).unwrap();
        let mut p = [1.0, -1.0];
        sgd_update(&mut [&mut p], &[&[0.0, 0.0]], &mut st).unwrap();
        assert_eq!(p, [1.0, -1.0]);

        st.buffers[0] = vec![2.0, 4.0];
        let lr = st.current_lr().unwrap();
        sgd_update(&mut [&mut p], &[&[0.0, 0.0]], &mut st).unwrap();
        assert_eq!(st.buffers[0], vec![1.8, 3.6]);
        assert!((p[0] - (1.0 - lr * 1.8)).abs() < 1e-15);
    }

    #[test]
    fn two_step_momentum_unroll() {
        let (lr0, mu, total) = (0.05, 0.9, 4u64);
        let mut st = OptState::new(&[1], lr0, mu, total).unwrap();
        let mut p = [1.0];
        let (g1, g2) = (0.5, -0.25);
        sgd_update(&mut [&mut p], &[&[g1]], &mut st).unwrap();
        sgd_update(&mut [&mut p], &[&[g2]], &mut st).unwrap();

        let lr_a = lr0;
        let lr_b = lr0 * 0.5 * (1.0 + (std::f64::consts::PI / 4.0).cos());
        let b1 = g1;
        let b2 = mu * b1 + g2;
        let expect = 1.0 - lr_a * b1 - lr_b * b2;
        assert!((p[0] - expect).abs() < 1e-15);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn shape_and_schedule_errors() {
        let mut st = OptState::new(&[2], 0.1, 0.0, 1).unwrap();
        let mut p = [0.0];
        assert!(sgd_update(&mut [&mut p], &[&[1.0]], &mut st).is_err());
        let mut p = [0.0, 0.0];
        sgd_update(&mut [&mut p], &[&[1.0, 1.0]], &mut st).unwrap();
        assert!(sgd_update(&mut [&mut p], &[&[1.0, 1.0]], &mut st).is_err());
        assert!(OptState::new(&[1], 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn clipping_bounds_the_joint_norm() {
        let mut a = vec![3.0, 0.0];
        let mut b = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
        let before = a.clone();
        clip_grad_norm(&mut [&mut a], 10.0);
        assert_eq!(a, before);
    }
}
