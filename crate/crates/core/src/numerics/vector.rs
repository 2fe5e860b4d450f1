use super::ops;
use crate::error::{check_dim, Error, Result};

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    ops::add(2 * a.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    ops::add(a.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    ops::add(a.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    ops::add(a.len());
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    ops::add(2 * x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn mean<V: AsRef<[f64]>>(vs: &[V]) -> Option<Vec<f64>> {
    let first = vs.first()?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        axpy(&mut acc, 1.0, v.as_ref());
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    Some(acc)
}

/// Unit-norm copy of `v`; vectors with norm at most [`NORM_EPS`] pass through unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > NORM_EPS {
        scale(v, 1.0 / n)
    } else {
        v.to_vec()
    }
}

/// Backward pass of [`l2_normalize`] at input `v` for upstream gradient `g`.
pub fn l2_normalize_backward(v: &[f64], g: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n <= NORM_EPS {
        return g.to_vec();
    }
    let u = scale(v, 1.0 / n);
    let proj = dot(&u, g);
    g.iter().zip(&u).map(|(gi, ui)| (gi - proj * ui) / n).collect()
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity with its gradients with respect to both arguments.
///
/// The degenerate case (either norm at most [`NORM_EPS`]) has value 0 and zero gradients.
pub fn cosine_sim_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Ok((0.0, vec![0.0; a.len()], vec![0.0; b.len()]));
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| bi / (na * nb) - c * ai / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| ai / (na * nb) - c * bi / (nb * nb))
        .collect();
    Ok((c, ga, gb))
}

/// Temperature softmax, stabilised by subtracting the maximum scaled score.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    ops::add(4 * scores.len());
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Log-sum-exp of `logits` (no temperature).
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_unit_norm_over_random_vectors() {
        let mut rng = crate::rng::SeedTree::new(7).rng();
        for _ in 0..1000 {
            let v = crate::rng::gaussian_vec(&mut rng, 9, 3.0);
            assert!((norm(&l2_normalize(&v)) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let b = [0.3, -1.2, 0.7, 2.0];
        let x = [1.0, 0.5, -0.4, 0.1];
        let (_, ga, _) = cosine_sim_grad(&x, &b).unwrap();
        let fd = super::super::finite_diff_grad(|v| cosine_sim(v, &b).unwrap(), &x, 1e-5);
        for (a, n) in ga.iter().zip(&fd) {
            assert!((a - n).abs() < 1e-8, "{a} vs {n}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(scores in prop::collection::vec(-1e4f64..1e4, 1..20), t in 0.01f64..10.0) {
            let p = softmax(&scores, t).unwrap();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn cosine_symmetric_scale_invariant_bounded(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
            l in 0.01f64..100.0,
            m in 0.01f64..100.0,
        ) {
            let c = cosine_sim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine_sim(&b, &a).unwrap()).abs() <= 1e-12);
            let c2 = cosine_sim(&scale(&a, l), &scale(&b, m)).unwrap();
            prop_assert!((c - c2).abs() <= 1e-9);
        }
    }
}
