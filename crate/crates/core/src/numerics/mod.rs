//! Dense numerics on `f64` slices: similarity, softmax, attention, a small
//! perceptron with analytic gradients, and the optimizer.

mod attention;
mod mat;
mod mlp;
pub mod ops;
mod optim;
mod vector;

pub use attention::{attention, attention_backward, AttentionGrads, AttentionOutput};
pub use mat::Mat;
pub use mlp::{mlp_apply, mlp_grad, Activation, MlpCache, MlpParams};
pub use optim::{clip_grad_norm, cosine_anneal, sgd_update, OptState};
pub use vector::{
    add, axpy, cosine_sim, cosine_sim_grad, dot, is_finite, l2_normalize, l2_normalize_backward,
    log_sum_exp, mean, norm, scale, softmax, sub, NORM_EPS,
};

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}
