//! Gumbel-softmax and Gumbel-sigmoid relaxations.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Uniform draw from the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.gen::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard Gumbel(0, 1) draw, `-ln(-ln u)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-open_unit(rng).ln()).ln()
}

/// Standard logistic draw, `ln u - ln(1 - u)`; the difference of two Gumbels.
pub fn logistic<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = open_unit(rng);
    u.ln() - (1.0 - u).ln()
}

/// One relaxed one-hot sample: `softmax((logits + s) / tau)` with Gumbel noise `s`.
/// The logits play the role of log-probabilities up to an additive constant.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    ensure!(tau > 0.0, "temperature must be positive, got {tau}");
    ensure!(!logits.is_empty(), "no categories");
    let perturbed: Vec<f64> = logits.iter().map(|l| (l + gumbel(rng)) / tau).collect();
    let max = perturbed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = perturbed.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Tensor of i.i.d. Gumbel noise.
pub(crate) fn gumbel_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| gumbel(rng)).collect())
}

pub(crate) fn logistic_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| logistic(rng)).collect())
}

/// Relaxed categorical samples inside a graph. `logits` has shape (rows, t);
/// the result has shape (samples * rows, t), one block of `rows` per sample,
/// each row `softmax((logits_row + noise) / tau)`.
pub(crate) fn relaxed_categorical<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: NodeId,
    samples: usize,
    tau: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let shape = g.shape(logits).to_vec();
    ensure!(shape.len() == 2, "relaxed_categorical expects (rows, t) logits");
    let (rows, t) = (shape[0], shape[1]);
    let ids: Vec<usize> = (0..samples).flat_map(|_| 0..rows).collect();
    let tiled = g.gather_rows(logits, &ids)?;
    let noise = g.constant(gumbel_noise(&[samples * rows, t], rng));
    let perturbed = g.add(tiled, noise)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    g.softmax(scaled)
}

/// Relaxed Bernoulli samples: `sigmoid((logit + logistic noise) / tau)`,
/// shape (samples, n) for logits of shape (n).
pub(crate) fn relaxed_bernoulli<R: Rng + ?Sized>(
    g: &mut Graph,
    logits: NodeId,
    samples: usize,
    tau: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let n = g.value(logits).numel();
    let row = g.reshape(logits, &[1, n])?;
    let tiled = g.gather_rows(row, &vec![0; samples])?;
    let noise = g.constant(logistic_noise(&[samples, n], rng));
    let perturbed = g.add(tiled, noise)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    g.sigmoid(scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = gumbel_softmax_sample(&[0.3, -1.0, 2.0, 0.0], 0.5, &mut rng).unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn tiny_temperature_is_one_hot_at_perturbed_argmax() {
        let logits = [0.1f64.ln(), 0.6f64.ln(), 0.3f64.ln()];
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = gumbel_softmax_sample(&logits, 1e-6, &mut a).unwrap();
            let perturbed: Vec<f64> = logits.iter().map(|l| l + gumbel(&mut b)).collect();
            let winner = crate::models::argmax(&perturbed);
            for (i, v) in s.iter().enumerate() {
                let expected = if i == winner { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gumbel_softmax_sample(&[0.0, 0.0], 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&[0.0, 0.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn open_unit_never_hits_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let u = open_unit(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
