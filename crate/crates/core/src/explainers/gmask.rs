//! Group masks: words are softly assigned to `t` groups (Φ), one group is
//! selected (Ψ), and a word survives masking iff it sits in the selected group.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gumbel::relaxed_categorical;
use super::ExplainerConfig;
use crate::error::{ensure, Error, FitState, Result};
use crate::models::{PairExample, PairModel};
use crate::tensor::{Adam, Graph, NodeId, Tensor};

/// Learnable categorical parameters over `n` words and `t` groups. Rows of
/// `phi_logits` follow word order, sentence one first; `split` is the number of
/// sentence-one rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMaskParams {
    pub phi_logits: Tensor,
    pub psi_logits: Tensor,
    pub groups: usize,
    pub split: usize,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl GroupMaskParams {
    /// Every categorical at probability `1/t` (all-zero logits).
    pub fn uniform(words: usize, groups: usize, split: usize) -> Result<Self> {
        ensure!(
            groups >= 2 && groups <= words,
            "group count {groups} must lie in [2, {words}]"
        );
        ensure!(
            split >= 1 && split < words,
            "split {split} must leave words in both sentences (n = {words})"
        );
        Ok(GroupMaskParams {
            phi_logits: Tensor::zeros(&[words, groups]),
            psi_logits: Tensor::zeros(&[groups]),
            groups,
            split,
        })
    }

    pub fn words(&self) -> usize {
        self.phi_logits.shape()[0]
    }

    /// Row-softmax of the word-to-group logits.
    pub fn phi(&self) -> Vec<Vec<f64>> {
        self.phi_logits.rows().iter().map(|r| softmax(r)).collect()
    }

    /// Softmax of the group-selection logits.
    pub fn psi(&self) -> Vec<f64> {
        softmax(self.psi_logits.data())
    }

    /// Θ = Φ Ψ: the probability that each word's mask is 1.
    pub fn weighted_attributions(&self) -> Vec<f64> {
        weighted_attributions(&self.phi(), &self.psi())
    }
}

/// `θ_i = Σ_ι Φ[i][ι] Ψ[ι]`.
pub fn weighted_attributions(phi: &[Vec<f64>], psi: &[f64]) -> Vec<f64> {
    phi.iter()
        .map(|row| row.iter().zip(psi).map(|(a, b)| a * b).sum())
        .collect()
}

/// `w = z g` for an assignment matrix `z` (n, t) and a selection vector `g` (t).
pub fn compose_mask(z: &Tensor, g: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        z.rank() == 2 && z.shape()[1] == g.len(),
        "compose_mask: z of shape {:?} with g of length {}",
        z.shape(),
        g.len()
    );
    let on_simplex = |v: &[f64]| v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
    ensure!(on_simplex(g), "compose_mask: g is not a distribution");
    ensure!(
        z.rows().iter().all(|r| on_simplex(r)),
        "compose_mask: a row of z is not a distribution"
    );
    Ok(z.rows()
        .iter()
        .map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum())
        .collect())
}

/// `L_Z = -(H(φ^U) + H(φ^L))` where φ^U, φ^L are the column means of the
/// sentence-one and sentence-two rows of Φ. `phi` holds probabilities (n, t).
pub fn group_balance_penalty(g: &mut Graph, phi: NodeId, split: usize) -> Result<NodeId> {
    let shape = g.shape(phi).to_vec();
    ensure!(shape.len() == 2, "group_balance_penalty: Φ must be (n, t)");
    let n = shape[0];
    ensure!(
        split >= 1 && split < n,
        "group_balance_penalty: split {split} leaves a sentence empty (n = {n})"
    );
    let upper = g.slice(phi, 0, 0, split)?;
    let upper = g.mean(upper, 0)?;
    let lower = g.slice(phi, 0, split, n)?;
    let lower = g.mean(lower, 0)?;
    let hu = g.entropy(upper)?;
    let hl = g.entropy(lower)?;
    let both = g.add(hu, hl)?;
    g.scale(both, -1.0)
}

/// `L_G = H(Ψ)`.
pub fn group_sparsity_penalty(g: &mut Graph, psi: NodeId) -> Result<NodeId> {
    g.entropy(psi)
}

/// A built objective graph with handles to its trainable leaves.
pub struct Objective {
    pub graph: Graph,
    pub loss: NodeId,
    pub params: Vec<NodeId>,
}

/// Constant (k, n) matrix scattering kept-word masks into full-length masks;
/// words outside `kept` receive 0.
fn scatter_matrix(kept: &[usize], total: usize) -> Tensor {
    let mut data = vec![0.0; kept.len() * total];
    for (r, &i) in kept.iter().enumerate() {
        data[r * total + i] = 1.0;
    }
    Tensor::from_parts(vec![kept.len(), total], data)
}

pub(crate) fn check_kept(example: &PairExample, kept: &[usize]) -> Result<()> {
    ensure!(
        kept.windows(2).all(|w| w[0] < w[1]),
        "kept indices must be strictly increasing"
    );
    ensure!(
        kept.last().is_none_or(|&i| i < example.len()),
        "kept index out of range"
    );
    Ok(())
}

/// Builds `mean CE(y, f(x ⊙ w_b)) + γ1 L_Z + γ2 L_G` over `cfg.samples` relaxed
/// mask samples. Words outside `kept` are masked to zero in every sample.
pub fn gmask_objective<M: PairModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    example: &PairExample,
    kept: &[usize],
    y: usize,
    params: &GroupMaskParams,
    cfg: &ExplainerConfig,
    rng: &mut R,
) -> Result<Objective> {
    cfg.validate()?;
    check_kept(example, kept)?;
    let n = params.words();
    let t = params.groups;
    ensure!(
        n == kept.len(),
        "params cover {n} words but {} are kept",
        kept.len()
    );
    let b = cfg.samples;
    let mut g = Graph::new();
    let phi_logits = g.param(params.phi_logits.clone());
    let psi_logits = g.param(params.psi_logits.clone());

    let z = relaxed_categorical(&mut g, phi_logits, b, cfg.tau, rng)?;
    let z = g.reshape(z, &[b, n, t])?;
    let psi_row = g.reshape(psi_logits, &[1, t])?;
    let sel = relaxed_categorical(&mut g, psi_row, b, cfg.tau, rng)?;
    let sel = g.reshape(sel, &[b, t, 1])?;
    let w = g.batch_matmul(z, sel)?;
    let w = g.reshape(w, &[b, n])?;
    let scatter = g.constant(scatter_matrix(kept, example.len()));
    let mask = g.matmul(w, scatter)?;

    let logits = model.masked_logits(&mut g, example, mask)?;
    let ce = g.cross_entropy(logits, &vec![y; b])?;

    let phi = g.softmax(phi_logits)?;
    let psi = g.softmax(psi_logits)?;
    let lz = group_balance_penalty(&mut g, phi, params.split)?;
    let lg = group_sparsity_penalty(&mut g, psi)?;
    let lz = g.scale(lz, cfg.gamma1)?;
    let lg = g.scale(lg, cfg.gamma2)?;
    let reg = g.add(lz, lg)?;
    let loss = g.add(ce, reg)?;
    Ok(Objective {
        graph: g,
        loss,
        params: vec![phi_logits, psi_logits],
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn probabilities(p: &GroupMaskParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.phi().concat();
    v.extend(p.psi());
    v
}

pub(crate) fn explainer_error(epoch: usize, err: Error, last: FitState) -> Error {
    if err.is_numeric() {
        Error::ExplainerDiverged {
            epoch,
            detail: err.to_string(),
            last_finite: Box::new(last),
        }
    } else {
        err
    }
}

/// Fits group-mask parameters from uniform initialisation with Adam, stopping
/// early once no probability moves by more than `cfg.tolerance` for
/// `cfg.patience` consecutive epochs.
#[allow(clippy::too_many_arguments)]
pub fn fit_gmask<M: PairModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    example: &PairExample,
    kept: &[usize],
    y: usize,
    groups: usize,
    split: usize,
    cfg: &ExplainerConfig,
    rng: &mut R,
) -> Result<GroupMaskParams> {
    let mut params = GroupMaskParams::uniform(kept.len(), groups, split)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut previous = probabilities(&params);
    let mut calm = 0;
    for epoch in 1..=cfg.epochs {
        let last = params.clone();
        let step = (|| {
            let obj = gmask_objective(model, example, kept, y, &params, cfg, rng)?;
            let grads = obj.graph.backward(obj.loss)?;
            let gp = grads.wrt(obj.params[0])?.clone();
            let gq = grads.wrt(obj.params[1])?.clone();
            adam.step(&mut [&mut params.phi_logits, &mut params.psi_logits], &[&gp, &gq])?;
            ensure_finite(&params.phi_logits)?;
            ensure_finite(&params.psi_logits)
        })();
        if let Err(e) = step {
            return Err(explainer_error(epoch, e, FitState::Group(last)));
        }
        let current = probabilities(&params);
        if max_abs_diff(&current, &previous) < cfg.tolerance {
            calm += 1;
            if calm >= cfg.patience {
                break;
            }
        } else {
            calm = 0;
        }
        previous = current;
    }
    Ok(params)
}

pub(crate) fn ensure_finite(t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            node: 0,
            op: "adam",
            detail: "parameter update produced a non-finite value".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_mask_one_hot_and_uniform() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(compose_mask(&z, &[1.0, 0.0]).unwrap(), vec![1.0, 1.0, 0.0]);
        let z3 = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let w = compose_mask(&z3, &[1.0 / 3.0; 3]).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(compose_mask(&z, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn weighted_attribution_cases() {
        let theta = weighted_attributions(&[vec![0.0, 1.0, 0.0]], &[0.0, 1.0, 0.0]);
        assert_eq!(theta, vec![1.0]);
        let uniform = vec![vec![0.25; 4]; 3];
        for psi in [vec![0.25; 4], vec![0.7, 0.1, 0.1, 0.1]] {
            for th in weighted_attributions(&uniform, &psi) {
                assert!((th - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn balance_penalty_extremes() {
        let t = 4usize;
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::new(vec![5, t], vec![0.25; 5 * t]).unwrap());
        let lz = group_balance_penalty(&mut g, uniform, 2).unwrap();
        assert!((g.value(lz).item().unwrap() + 2.0 * (t as f64).ln()).abs() < 1e-12);

        let mut rows = vec![vec![1.0, 0.0, 0.0, 0.0]; 2];
        rows.extend(vec![vec![0.25; 4]; 3]);
        let skew = g.constant(Tensor::from_rows(&rows).unwrap());
        let lz = group_balance_penalty(&mut g, skew, 2).unwrap();
        assert!((g.value(lz).item().unwrap() + (t as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn balance_penalty_needs_both_sentences() {
        let mut g = Graph::new();
        let phi = g.constant(Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap());
        assert!(matches!(group_balance_penalty(&mut g, phi, 0), Err(Error::Contract(_))));
        assert!(matches!(group_balance_penalty(&mut g, phi, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn sparsity_penalty_values() {
        let mut g = Graph::new();
        let psi = g.constant(Tensor::vector(vec![0.7, 0.2, 0.1]).unwrap());
        let h = group_sparsity_penalty(&mut g, psi).unwrap();
        assert!((g.value(h).item().unwrap() - 0.801819).abs() < 1e-6);
        let one_hot = g.constant(Tensor::vector(vec![0.0, 0.0, 1.0]).unwrap());
        let h = group_sparsity_penalty(&mut g, one_hot).unwrap();
        assert_eq!(g.value(h).item().unwrap(), 0.0);
    }

    #[test]
    fn uniform_params_respect_bounds() {
        assert!(GroupMaskParams::uniform(5, 1, 2).is_err());
        assert!(GroupMaskParams::uniform(5, 6, 2).is_err());
        assert!(GroupMaskParams::uniform(5, 2, 5).is_err());
        let p = GroupMaskParams::uniform(5, 3, 2).unwrap();
        for th in p.weighted_attributions() {
            assert!((th - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
