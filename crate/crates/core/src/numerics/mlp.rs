//! Three-layer perceptron with hand-written backpropagation.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::ops;
use crate::error::{check_dim, Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weights are stored output-major: `w1` is `h × d_in`, `w2` is `h × h`, `w3` is `d_out × h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
    pub activation: Activation,
}

/// Activations retained by [`mlp_apply`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: Mat::zeros(hidden, d_in),
            b1: vec![0.0; hidden],
            w2: Mat::zeros(hidden, hidden),
            b2: vec![0.0; hidden],
            w3: Mat::zeros(d_out, hidden),
            b3: vec![0.0; d_out],
            activation: Activation::Relu,
        }
    }

    /// Gaussian weights with standard deviation `sigma`, zero biases.
    pub fn gaussian(d_in: usize, hidden: usize, d_out: usize, sigma: f64, rng: &mut StreamRng) -> Self {
        Self {
            w1: Mat::gaussian(hidden, d_in, sigma, rng),
            b1: vec![0.0; hidden],
            w2: Mat::gaussian(hidden, hidden, sigma, rng),
            b2: vec![0.0; hidden],
            w3: Mat::gaussian(d_out, hidden, sigma, rng),
            b3: vec![0.0; d_out],
            activation: Activation::Relu,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w3.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_in(), self.hidden(), self.d_out())
    }

    /// Parameter tensors in declaration order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.w3.as_slice(),
            &self.b3,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w3.as_mut_slice(),
            &mut self.b3,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.num_params(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += s * other`
    pub fn accumulate(&mut self, other: &MlpParams, s: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, x) in dst.iter_mut().zip(src) {
                *d += s * x;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden();
        if self.w2.shape() != (h, h) || self.w3.cols() != h || self.b1.len() != h || self.b2.len() != h || self.b3.len() != self.d_out() {
            return Err(Error::InvalidArgument("inconsistent MLP shapes".into()));
        }
        Ok(())
    }
}

fn affine(w: &Mat, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut z = w.matvec(x)?;
    ops::add(z.len());
    for (zi, bi) in z.iter_mut().zip(b) {
        *zi += bi;
    }
    Ok(z)
}

/// `y = W3 σ(W2 σ(W1 x + b1) + b2) + b3`
pub fn mlp_apply(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    params.check_shapes()?;
    check_dim(params.d_in(), x.len())?;
    let act = params.activation;
    let z1 = affine(&params.w1, &params.b1, x)?;
    let a1: Vec<f64> = z1.iter().map(|&z| act.apply(z)).collect();
    let z2 = affine(&params.w2, &params.b2, &a1)?;
    let a2: Vec<f64> = z2.iter().map(|&z| act.apply(z)).collect();
    let y = affine(&params.w3, &params.b3, &a2)?;
    Ok((
        y,
        MlpCache {
            x: x.to_vec(),
            z1,
            a1,
            z2,
            a2,
        },
    ))
}

/// Gradients of `yᵀ·upstream` with respect to every parameter and the input.
pub fn mlp_grad(params: &MlpParams, cache: &MlpCache, upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    params.check_shapes()?;
    let h = params.hidden();
    if cache.x.len() != params.d_in()
        || cache.z1.len() != h
        || cache.a1.len() != h
        || cache.z2.len() != h
        || cache.a2.len() != h
    {
        return Err(Error::InvalidArgument(
            "MLP cache does not match parameter shapes".into(),
        ));
    }
    check_dim(params.d_out(), upstream.len())?;
    let act = params.activation;
    let mut grads = params.zeros_like();

    grads.w3.add_outer(upstream, &cache.a2, 1.0);
    grads.b3.copy_from_slice(upstream);
    let g_a2 = params.w3.matvec_t(upstream)?;
    let g_z2: Vec<f64> = g_a2
        .iter()
        .zip(&cache.z2)
        .map(|(g, &z)| g * act.derivative(z))
        .collect();

    grads.w2.add_outer(&g_z2, &cache.a1, 1.0);
    grads.b2.copy_from_slice(&g_z2);
    let g_a1 = params.w2.matvec_t(&g_z2)?;
    let g_z1: Vec<f64> = g_a1
        .iter()
        .zip(&cache.z1)
        .map(|(g, &z)| g * act.derivative(z))
        .collect();

    grads.w1.add_outer(&g_z1, &cache.x, 1.0);
    grads.b1.copy_from_slice(&g_z1);
    let g_x = params.w1.matvec_t(&g_z1)?;
    Ok((grads, g_x))
}

impl MlpCache {
    /// Smallest absolute pre-activation; distance to the nearest ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        self.z1
            .iter()
            .chain(&self.z2)
            .map(|z| z.abs())
            .fold(f64::INFINITY, f64::min)
    }
}
