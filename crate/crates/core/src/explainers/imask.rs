//! Individual word masks: one independent relaxed Bernoulli gate per word.

use rand::Rng;

use super::gmask::{ensure_finite, explainer_error, Objective};
use super::gumbel::relaxed_bernoulli;
use super::ExplainerConfig;
use crate::error::{ensure, FitState, Result};
use crate::models::{PairExample, PairModel};
use crate::tensor::{Adam, Graph, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `mean CE(y, f(x ⊙ r_b)) + λ_s mean(sigmoid(logits))` over relaxed samples
/// `r_b = sigmoid((logits + logistic noise) / τ)`.
pub fn imask_objective<M: PairModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    example: &PairExample,
    y: usize,
    logits: &Tensor,
    cfg: &ExplainerConfig,
    rng: &mut R,
) -> Result<Objective> {
    cfg.validate()?;
    ensure!(
        logits.numel() == example.len(),
        "{} mask logits for {} words",
        logits.numel(),
        example.len()
    );
    let mut g = Graph::new();
    let r = g.param(logits.clone());
    let mask = relaxed_bernoulli(&mut g, r, cfg.samples, cfg.tau, rng)?;
    let out = model.masked_logits(&mut g, example, mask)?;
    let ce = g.cross_entropy(out, &vec![y; cfg.samples])?;
    let keep = g.sigmoid(r)?;
    let keep = g.sum_all(keep)?;
    let sparsity = g.scale(keep, cfg.sparsity / example.len() as f64)?;
    let loss = g.add(ce, sparsity)?;
    Ok(Objective {
        graph: g,
        loss,
        params: vec![r],
    })
}

/// Fits per-word mask logits from 0 (keep probability 1/2) and returns the
/// keep probabilities. Same schedule and stopping rule as group masks.
pub fn fit_imask<M: PairModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    example: &PairExample,
    y: usize,
    cfg: &ExplainerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut logits = Tensor::zeros(&[example.len()]);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut previous: Vec<f64> = logits.data().iter().map(|&v| sigmoid(v)).collect();
    let mut calm = 0;
    for epoch in 1..=cfg.epochs {
        let last = logits.clone();
        let step = (|| {
            let obj = imask_objective(model, example, y, &logits, cfg, rng)?;
            let grads = obj.graph.backward(obj.loss)?;
            let gr = grads.wrt(obj.params[0])?.clone();
            adam.step(&mut [&mut logits], &[&gr])?;
            ensure_finite(&logits)
        })();
        if let Err(e) = step {
            return Err(explainer_error(
                epoch,
                e,
                FitState::Individual(last.into_data()),
            ));
        }
        let current: Vec<f64> = logits.data().iter().map(|&v| sigmoid(v)).collect();
        let moved = current
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < cfg.tolerance {
            calm += 1;
            if calm >= cfg.patience {
                break;
            }
        } else {
            calm = 0;
        }
        previous = current;
    }
    Ok(logits.data().iter().map(|&v| sigmoid(v)).collect())
}
