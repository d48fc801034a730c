#![allow(dead_code)]

use pairmask::models::{PairExample, PairModel};
use pairmask::tensor::{Graph, NodeId, Tensor};
use pairmask::Result;
use rand::Rng;

/// Ignores its input entirely.
pub struct ConstantModel {
    pub logits: Vec<f64>,
}

impl PairModel for ConstantModel {
    fn num_classes(&self) -> usize {
        self.logits.len()
    }

    fn masked_logits(&self, g: &mut Graph, _example: &PairExample, mask: NodeId) -> Result<NodeId> {
        let s = g.shape(mask)[0];
        let c = self.logits.len();
        let data: Vec<f64> = (0..s).flat_map(|_| self.logits.iter().copied()).collect();
        // keep the mask in the graph so gradients reach it as zeros
        let zero = g.scale(mask, 0.0)?;
        let zero = g.sum(zero, 1)?;
        let zero = g.reshape(zero, &[s, 1])?;
        let zeros = g.concat(&vec![zero; c], 1)?;
        let base = g.constant(Tensor::new(vec![s, c], data)?);
        g.add(base, zeros)
    }
}

/// Two classes; class 0 iff the mask keeps every word in `words`, with logit
/// gap `strength * prod(m_i) - strength / 2`.
pub struct ProductModel {
    pub words: Vec<usize>,
    pub strength: f64,
}

impl ProductModel {
    pub fn single(word: usize) -> Self {
        ProductModel {
            words: vec![word],
            strength: 8.0,
        }
    }

    pub fn and(a: usize, b: usize) -> Self {
        ProductModel {
            words: vec![a, b],
            strength: 8.0,
        }
    }

    /// Closed-form probability of class 0 under a mask.
    pub fn p0(&self, mask: &[f64]) -> f64 {
        let prod: f64 = self.words.iter().map(|&i| mask[i]).product();
        let gap = self.strength * prod - self.strength / 2.0;
        1.0 / (1.0 + (-gap).exp())
    }
}

impl PairModel for ProductModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn masked_logits(&self, g: &mut Graph, _example: &PairExample, mask: NodeId) -> Result<NodeId> {
        let s = g.shape(mask)[0];
        let mut prod = g.slice(mask, 1, self.words[0], self.words[0] + 1)?;
        for &w in &self.words[1..] {
            let col = g.slice(mask, 1, w, w + 1)?;
            prod = g.mul(prod, col)?;
        }
        let gap = g.scale(prod, self.strength)?;
        let shift = g.constant(Tensor::vector(vec![-self.strength / 2.0])?);
        let gap = g.add_bias(gap, shift)?;
        let zero = g.constant(Tensor::zeros(&[s, 1]));
        g.concat(&[gap, zero], 1)
    }
}

pub fn example(n1: usize, n2: usize) -> PairExample {
    PairExample::new((0..n1).map(|i| 30 + i).collect(), (0..n2).map(|i| 60 + i).collect(), 0)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random values in [lo, hi] kept at least `gap` away from zero, for kinked ops.
pub fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], hi: f64, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error with a small floor so that tiny gradients are compared almost
/// absolutely: `|a - b| / max(|a|, |b|, 1e-4)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between backprop and central differences for the
/// scalar built by `build` from parameter leaves holding `inputs`.
pub fn gradient_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &ids).unwrap();
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id).unwrap().data().to_vec();
        for j in 0..inputs[k].numel() {
            let shifted = |delta: f64| {
                let mut vals = inputs.to_vec();
                let mut data = vals[k].data().to_vec();
                data[j] += delta;
                vals[k] = Tensor::new(vals[k].shape().to_vec(), data).unwrap();
                eval(&vals)
            };
            let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Exact entropy of a distribution in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}
