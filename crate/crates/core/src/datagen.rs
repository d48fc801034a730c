//! Synthetic sentence-pair tasks with planted trigger pairs, and JSONL I/O.
//!
//! Each example carries one trigger token in each sentence; the pair decides
//! the label and its two positions form the gold rationale. Every other slot
//! holds a distractor drawn uniformly from outside the reserved trigger range.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::models::PairExample;

/// One planted rule: `left` in sentence one with `right` in sentence two means `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub left: usize,
    pub right: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTaskConfig {
    pub vocab_size: usize,
    /// Tokens `0..trigger_tokens` are reserved for triggers.
    pub trigger_tokens: usize,
    pub n1: usize,
    pub n2: usize,
    pub classes: usize,
    pub triples: Vec<Triple>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedTaskConfig {
    /// 200-token vocabulary with 20 reserved triggers forming ten fixed pairs,
    /// 8 + 8 words, three classes, 4000/500/500 split, 2% label noise.
    fn default() -> Self {
        PlantedTaskConfig {
            vocab_size: 200,
            trigger_tokens: 20,
            n1: 8,
            n2: 8,
            classes: 3,
            triples: disjoint_pairs(10, 3),
            train: 4000,
            dev: 500,
            test: 500,
            noise: 0.02,
            seed: 0,
        }
    }
}

/// `m` left triggers (`0..m`) and `m` right triggers (`m..2m`); the pair
/// `(i, j)` maps to class `(i + j) mod classes`. Each trigger co-occurs with
/// every class, so no single trigger carries label information on its own.
pub fn latin_square(m: usize, classes: usize) -> Vec<Triple> {
    let mut triples = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            triples.push(Triple {
                left: i,
                right: m + j,
                class: (i + j) % classes,
            });
        }
    }
    triples
}

/// `m` disjoint pairs `(i, m + i)` with class `i mod classes`; either trigger
/// alone determines the label.
pub fn disjoint_pairs(m: usize, classes: usize) -> Vec<Triple> {
    (0..m)
        .map(|i| Triple {
            left: i,
            right: m + i,
            class: i % classes,
        })
        .collect()
}

impl PlantedTaskConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.classes >= 2, "need at least two classes");
        ensure!(self.n1 >= 1 && self.n2 >= 1, "sentence lengths must be positive");
        ensure!(
            self.trigger_tokens < self.vocab_size,
            "trigger range {} leaves no distractors in vocabulary {}",
            self.trigger_tokens,
            self.vocab_size
        );
        ensure!(
            (0.0..0.5).contains(&self.noise),
            "noise rate {} outside [0, 0.5)",
            self.noise
        );
        for t in &self.triples {
            ensure!(
                t.left < self.trigger_tokens && t.right < self.trigger_tokens,
                "triple {t:?} uses tokens outside the trigger range"
            );
            ensure!(t.left != t.right, "triple {t:?} repeats its trigger");
            ensure!(t.class < self.classes, "triple {t:?} names an unknown class");
        }
        for c in 0..self.classes {
            ensure!(
                self.triples.iter().any(|t| t.class == c),
                "class {c} has no triple"
            );
        }
        Ok(())
    }
}

/// Train, dev and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<PairExample>,
    pub dev: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

fn sample_example<R: Rng>(cfg: &PlantedTaskConfig, by_class: &[Vec<Triple>], rng: &mut R) -> PairExample {
    let class = rng.gen_range(0..cfg.classes);
    let rule = by_class[class][rng.gen_range(0..by_class[class].len())];
    let distractor = |rng: &mut R| rng.gen_range(cfg.trigger_tokens..cfg.vocab_size);
    let mut tokens1: Vec<usize> = (0..cfg.n1).map(|_| distractor(rng)).collect();
    let mut tokens2: Vec<usize> = (0..cfg.n2).map(|_| distractor(rng)).collect();
    let p1 = rng.gen_range(0..cfg.n1);
    let p2 = rng.gen_range(0..cfg.n2);
    tokens1[p1] = rule.left;
    tokens2[p2] = rule.right;
    let label = if rng.gen::<f64>() < cfg.noise {
        let other = rng.gen_range(0..cfg.classes - 1);
        if other >= class {
            other + 1
        } else {
            other
        }
    } else {
        class
    };
    PairExample::new(tokens1, tokens2, label).with_rationale(vec![(0, p1), (1, p2)])
}

/// Generates the three splits; deterministic in `cfg.seed`.
pub fn generate_planted_dataset(cfg: &PlantedTaskConfig) -> Result<Splits> {
    cfg.validate()?;
    let by_class: Vec<Vec<Triple>> = (0..cfg.classes)
        .map(|c| cfg.triples.iter().copied().filter(|t| t.class == c).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut take = |n: usize| -> Vec<PairExample> { (0..n).map(|_| sample_example(cfg, &by_class, &mut rng)).collect() };
    let train = take(cfg.train);
    let dev = take(cfg.dev);
    let test = take(cfg.test);
    Ok(Splits { train, dev, test })
}

/// The label a noise-free lookup of the planted pair would give.
pub fn bayes_label(cfg: &PlantedTaskConfig, ex: &PairExample) -> Option<usize> {
    cfg.triples
        .iter()
        .find(|t| ex.tokens1.contains(&t.left) && ex.tokens2.contains(&t.right))
        .map(|t| t.class)
}

/// Canonical one-line JSON for an example.
pub fn to_jsonl_line(ex: &PairExample) -> Result<String> {
    Ok(serde_json::to_string(ex)?)
}

pub fn write_jsonl(path: &Path, data: &[PairExample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for ex in data {
        writeln!(out, "{}", to_jsonl_line(ex)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one example per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<PairExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: PairExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        ex.validate(None).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        data.push(ex);
    }
    Ok(data)
}

/// SHA-256 over the canonical serialisation of a dataset.
pub fn dataset_digest(data: &[PairExample]) -> Result<String> {
    let mut h = Sha256::new();
    for ex in data {
        h.update(to_jsonl_line(ex)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex_string(&h.finalize()))
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
