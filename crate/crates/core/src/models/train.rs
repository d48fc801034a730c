use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Architecture, BoundWeights, ClassifierParams, PairExample};
use crate::error::{ensure, Error, Result};
use crate::tensor::{Adam, Graph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training stops after the first epoch whose dev accuracy reaches this.
    pub target_dev_accuracy: f64,
    /// Class count; inferred from the labels when absent.
    pub classes: Option<usize>,
    /// Vocabulary size; inferred from the tokens when absent.
    pub vocab_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            hidden: 64,
            max_epochs: 200,
            batch_size: 32,
            learning_rate: 0.005,
            target_dev_accuracy: 0.95,
            classes: None,
            vocab_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub dev_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Groups example indices into batches whose members share sentence lengths.
fn batches(order: &[usize], data: &[PairExample], size: usize) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for &i in order {
        buckets.entry((data[i].n1(), data[i].n2())).or_default().push(i);
    }
    buckets
        .into_values()
        .flat_map(|idx| idx.chunks(size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

fn batch_logits(
    params: &ClassifierParams,
    g: &mut Graph,
    w: &BoundWeights,
    data: &[PairExample],
    batch: &[usize],
) -> Result<NodeId> {
    let (n1, n2) = (data[batch[0]].n1(), data[batch[0]].n2());
    let ids1: Vec<usize> = batch.iter().flat_map(|&i| data[i].tokens1.iter().copied()).collect();
    let ids2: Vec<usize> = batch.iter().flat_map(|&i| data[i].tokens2.iter().copied()).collect();
    let table = w.get("embedding")?;
    let d = params.dim();
    let e1 = g.gather_rows(table, &ids1)?;
    let e2 = g.gather_rows(table, &ids2)?;
    let x1 = g.reshape(e1, &[batch.len(), n1, d])?;
    let x2 = g.reshape(e2, &[batch.len(), n2, d])?;
    params.forward(g, w, x1, x2)
}

/// Fraction of examples whose unmasked prediction equals the label.
pub fn accuracy(params: &ClassifierParams, data: &[PairExample]) -> Result<f64> {
    ensure!(!data.is_empty(), "accuracy on empty dataset");
    let order: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for batch in batches(&order, data, 256) {
        let mut g = Graph::new();
        let w = params.bind(&mut g, false, true);
        let logits = batch_logits(params, &mut g, &w, data, &batch)?;
        for (row, &i) in g.value(logits).rows().iter().zip(&batch) {
            correct += usize::from(argmax(row) == data[i].label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn diverged(epoch: usize, err: Error) -> Error {
    if err.is_numeric() {
        Error::TrainingDiverged {
            epoch,
            detail: err.to_string(),
        }
    } else {
        err
    }
}

/// Trains a reference classifier with Adam on mean cross-entropy.
///
/// Deterministic for a fixed `seed`. When `dev` is empty the training set is
/// used for the stopping check.
pub fn train_classifier(
    train: &[PairExample],
    dev: &[PairExample],
    arch: Architecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ClassifierParams, TrainSummary)> {
    ensure!(!train.is_empty(), "training set is empty");
    ensure!(cfg.batch_size >= 1, "batch size must be positive");
    let dev = if dev.is_empty() { train } else { dev };
    let max_label = train.iter().chain(dev).map(|e| e.label).max().unwrap_or(0);
    let classes = cfg.classes.unwrap_or(max_label + 1);
    ensure!(classes >= 2, "need at least two classes, found {classes}");
    ensure!(max_label < classes, "label {max_label} outside {classes} classes");
    let max_token = train
        .iter()
        .chain(dev)
        .flat_map(|e| e.tokens1.iter().chain(&e.tokens2))
        .max()
        .copied()
        .unwrap_or(0);
    let vocab = cfg.vocab_size.unwrap_or(max_token + 1);
    for ex in train.iter().chain(dev) {
        ex.validate(Some(vocab))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ClassifierParams::init(arch, vocab, cfg.dim, cfg.hidden, classes, &mut rng)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut summary = TrainSummary {
        epochs: 0,
        dev_accuracy: 0.0,
        epoch_losses: Vec::new(),
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut plan = batches(&order, train, cfg.batch_size);
        plan.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in &plan {
            let mut g = Graph::new();
            let w = params.bind(&mut g, true, true);
            let step = (|| {
                let logits = batch_logits(&params, &mut g, &w, train, batch)?;
                let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
                let loss = g.cross_entropy(logits, &labels)?;
                let grads = g.backward(loss)?;
                Ok::<_, Error>((g.value(loss).item()?, grads))
            })();
            let (loss, grads) = step.map_err(|e| diverged(epoch, e))?;
            epoch_loss += loss * batch.len() as f64;
            let ids: Vec<NodeId> = w.iter().map(|(_, id)| id).collect();
            let grad_refs = ids.iter().map(|&id| grads.wrt(id)).collect::<Result<Vec<_>>>()?;
            let mut slots: Vec<_> = params.weights_mut().map(|(_, t)| t).collect();
            adam.step(&mut slots, &grad_refs)?;
        }
        let mean_loss = epoch_loss / train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: "loss is not finite".into(),
            });
        }
        summary.epoch_losses.push(mean_loss);
        summary.epochs = epoch;
        summary.dev_accuracy = accuracy(&params, dev)?;
        if summary.dev_accuracy >= cfg.target_dev_accuracy {
            break;
        }
    }
    Ok((params, summary))
}
