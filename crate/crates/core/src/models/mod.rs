//! Differentiable sentence-pair classifiers and their training loop.
//!
//! Every model is driven through [`PairModel::masked_logits`]: word masks
//! scale embedding rows before the architecture runs, which is the only place
//! masks enter. Explainers and metrics rely on nothing else.

mod architectures;
mod example;
mod train;

pub use architectures::{bow_pair_forward, mini_dattn_forward};
pub use example::PairExample;
pub use train::{accuracy, train_classifier, TrainConfig, TrainSummary};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "bow-pair")]
    BowPair,
    #[serde(rename = "mini-dattn")]
    MiniDattn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::BowPair => "bow-pair",
            Architecture::MiniDattn => "mini-dattn",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow-pair" => Ok(Architecture::BowPair),
            "mini-dattn" => Ok(Architecture::MiniDattn),
            other => Err(Error::contract(format!("unknown architecture '{other}'"))),
        }
    }
}

/// A model that produces class logits for a batch of word masks over one example.
pub trait PairModel: Send + Sync {
    fn num_classes(&self) -> usize;

    /// `mask` has shape (S, n1 + n2); returns logits of shape (S, C).
    fn masked_logits(&self, g: &mut Graph, example: &PairExample, mask: NodeId) -> Result<NodeId>;
}

/// Trained weights of a reference classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ClassifierParams {
    architecture: Architecture,
    dim: usize,
    hidden: usize,
    classes: usize,
    vocab_size: usize,
    weights: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    architecture: Architecture,
    d: usize,
    hidden: usize,
    #[serde(rename = "C")]
    classes: usize,
    #[serde(rename = "V")]
    vocab_size: usize,
    weights: BTreeMap<String, Tensor>,
}

impl TryFrom<Checkpoint> for ClassifierParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        let params = ClassifierParams {
            architecture: c.architecture,
            dim: c.d,
            hidden: c.hidden,
            classes: c.classes,
            vocab_size: c.vocab_size,
            weights: c.weights,
        };
        params.check_shapes()?;
        Ok(params)
    }
}

impl From<ClassifierParams> for Checkpoint {
    fn from(p: ClassifierParams) -> Self {
        Checkpoint {
            architecture: p.architecture,
            d: p.dim,
            hidden: p.hidden,
            classes: p.classes,
            vocab_size: p.vocab_size,
            weights: p.weights,
        }
    }
}

/// Expected weight shapes for an architecture.
fn weight_shapes(arch: Architecture, vocab: usize, d: usize, h: usize, c: usize) -> Vec<(&'static str, Vec<usize>)> {
    let mut shapes = vec![("embedding", vec![vocab, d])];
    match arch {
        Architecture::BowPair => shapes.extend([
            ("hidden_w", vec![4 * d, h]),
            ("hidden_b", vec![h]),
            ("out_w", vec![h, c]),
            ("out_b", vec![c]),
        ]),
        Architecture::MiniDattn => shapes.extend([
            ("attend_w", vec![d, h]),
            ("attend_b", vec![h]),
            ("compare_w", vec![2 * d, h]),
            ("compare_b", vec![h]),
            ("aggregate_w", vec![2 * h, h]),
            ("aggregate_b", vec![h]),
            ("out_w", vec![h, c]),
            ("out_b", vec![c]),
        ]),
    }
    shapes
}

/// Weight tensors bound into one graph, by name.
pub struct BoundWeights(BTreeMap<&'static str, NodeId>);

impl BoundWeights {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("weight '{name}' not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, NodeId)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

impl ClassifierParams {
    /// Random initialisation: embeddings ~ N(0, 1), dense layers Glorot-uniform,
    /// biases zero.
    pub fn init<R: Rng>(
        arch: Architecture,
        vocab_size: usize,
        dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(classes >= 2, "need at least two classes, got {classes}");
        ensure!(vocab_size >= 1 && dim >= 1 && hidden >= 1, "degenerate model size");
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut weights = BTreeMap::new();
        for (name, shape) in weight_shapes(arch, vocab_size, dim, hidden, classes) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name == "embedding" {
                (0..numel).map(|_| normal.sample(rng)).collect()
            } else if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
            };
            weights.insert(name.to_string(), Tensor::new(shape, data)?);
        }
        Ok(ClassifierParams {
            architecture: arch,
            dim,
            hidden,
            classes,
            vocab_size,
            weights,
        })
    }

    /// Rebuilds params from explicit tensors, checking every shape.
    pub fn from_weights(
        arch: Architecture,
        vocab_size: usize,
        dim: usize,
        hidden: usize,
        classes: usize,
        weights: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let p = ClassifierParams {
            architecture: arch,
            dim,
            hidden,
            classes,
            vocab_size,
            weights,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        ensure!(self.classes >= 2, "checkpoint has {} classes", self.classes);
        let expected = weight_shapes(self.architecture, self.vocab_size, self.dim, self.hidden, self.classes);
        ensure!(
            expected.len() == self.weights.len(),
            "{} checkpoint needs {} weight tensors, found {}",
            self.architecture,
            expected.len(),
            self.weights.len()
        );
        for (name, shape) in expected {
            let t = self
                .weights
                .get(name)
                .ok_or_else(|| Error::contract(format!("checkpoint lacks weight '{name}'")))?;
            ensure!(
                t.shape() == shape.as_slice(),
                "weight '{name}' has shape {:?}, expected {:?}",
                t.shape(),
                shape
            );
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name)
    }

    pub(crate) fn weights_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.weights.iter_mut()
    }

    /// Inserts the weights into `g`. The embedding table is skipped when
    /// `with_embedding` is false.
    pub fn bind(&self, g: &mut Graph, trainable: bool, with_embedding: bool) -> BoundWeights {
        let mut map = BTreeMap::new();
        for (name, _) in weight_shapes(self.architecture, self.vocab_size, self.dim, self.hidden, self.classes) {
            if name == "embedding" && !with_embedding {
                continue;
            }
            let t = self.weights[name].clone();
            let id = if trainable { g.param(t) } else { g.constant(t) };
            map.insert(name, id);
        }
        BoundWeights(map)
    }

    /// Runs the architecture on embedded batches of shape (S, n1, d), (S, n2, d).
    pub fn forward(&self, g: &mut Graph, w: &BoundWeights, x1: NodeId, x2: NodeId) -> Result<NodeId> {
        match self.architecture {
            Architecture::BowPair => bow_pair_forward(g, w, x1, x2),
            Architecture::MiniDattn => mini_dattn_forward(g, w, x1, x2),
        }
    }

    /// Embedding rows of a token sequence, as a plain tensor (n, d).
    pub fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        let table = &self.weights["embedding"];
        let d = self.dim;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &tok in tokens {
            ensure!(
                tok < self.vocab_size,
                "token {tok} outside vocabulary of {}",
                self.vocab_size
            );
            data.extend_from_slice(&table.data()[tok * d..(tok + 1) * d]);
        }
        Tensor::new(vec![tokens.len(), d], data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl PairModel for ClassifierParams {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn masked_logits(&self, g: &mut Graph, example: &PairExample, mask: NodeId) -> Result<NodeId> {
        let (n1, n2) = (example.n1(), example.n2());
        let e1 = g.constant(self.embed(&example.tokens1)?);
        let e2 = g.constant(self.embed(&example.tokens2)?);
        let m1 = g.slice(mask, 1, 0, n1)?;
        let m2 = g.slice(mask, 1, n1, n1 + n2)?;
        let x1 = g.mask_rows(m1, e1)?;
        let x2 = g.mask_rows(m2, e2)?;
        let w = self.bind(g, false, false);
        self.forward(g, &w, x1, x2)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_mask(example: &PairExample, mask: &[f64]) -> Result<()> {
    ensure!(
        mask.len() == example.len(),
        "mask of length {} for example with {} words",
        mask.len(),
        example.len()
    );
    ensure!(
        mask.iter().all(|m| (0.0..=1.0).contains(m)),
        "mask entries must lie in [0, 1]"
    );
    Ok(())
}

/// Class probabilities for one example under a word mask (absent = all ones).
pub fn predict_proba<M: PairModel + ?Sized>(model: &M, example: &PairExample, mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let ones;
    let mask = match mask {
        Some(m) => m,
        None => {
            ones = vec![1.0; example.len()];
            &ones
        }
    };
    let mut out = predict_proba_batch(model, example, std::slice::from_ref(&mask.to_vec()))?;
    Ok(out.pop().expect("one row"))
}

/// Class probabilities for several masks over the same example, in one graph.
pub fn predict_proba_batch<M: PairModel + ?Sized>(
    model: &M,
    example: &PairExample,
    masks: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    ensure!(!masks.is_empty(), "no masks given");
    for m in masks {
        check_mask(example, m)?;
    }
    let mut g = Graph::new();
    let mask = g.constant(Tensor::from_rows(masks)?);
    let logits = model.masked_logits(&mut g, example, mask)?;
    let probs = g.softmax(logits)?;
    Ok(g.value(probs).rows())
}

/// Predicted class on the unmasked example.
pub fn predict_label<M: PairModel + ?Sized>(model: &M, example: &PairExample) -> Result<usize> {
    Ok(argmax(&predict_proba(model, example, None)?))
}
