use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{ensure, Result};

/// A tokenised sentence pair. Word positions are numbered globally: sentence
/// one occupies `0..n1`, sentence two `n1..n1 + n2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub tokens1: Vec<usize>,
    pub tokens2: Vec<usize>,
    pub label: usize,
    /// Gold rationale as `(sentence, position)` pairs, sentence in {0, 1}.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "non_empty"
    )]
    pub rationale: Option<Vec<(usize, usize)>>,
}

fn non_empty<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<(usize, usize)>>, D::Error> {
    let v: Option<Vec<(usize, usize)>> = Option::deserialize(d)?;
    Ok(v.filter(|r| !r.is_empty()))
}

impl PairExample {
    pub fn new(tokens1: Vec<usize>, tokens2: Vec<usize>, label: usize) -> Self {
        PairExample {
            tokens1,
            tokens2,
            label,
            rationale: None,
        }
    }

    pub fn with_rationale(mut self, rationale: Vec<(usize, usize)>) -> Self {
        self.rationale = if rationale.is_empty() {
            None
        } else {
            Some(rationale)
        };
        self
    }

    pub fn n1(&self) -> usize {
        self.tokens1.len()
    }

    pub fn n2(&self) -> usize {
        self.tokens2.len()
    }

    /// Total word count `n1 + n2`.
    pub fn len(&self) -> usize {
        self.tokens1.len() + self.tokens2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sentence index (0 or 1) of a global word position.
    pub fn sentence_of(&self, index: usize) -> usize {
        usize::from(index >= self.n1())
    }

    pub fn token_at(&self, index: usize) -> usize {
        if index < self.n1() {
            self.tokens1[index]
        } else {
            self.tokens2[index - self.n1()]
        }
    }

    /// Gold rationale as sorted global word positions.
    pub fn gold_indices(&self) -> Option<Vec<usize>> {
        self.rationale.as_ref().map(|r| {
            let mut idx: Vec<usize> = r
                .iter()
                .map(|&(s, i)| if s == 0 { i } else { self.n1() + i })
                .collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        })
    }

    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        ensure!(
            self.n1() >= 1 && self.n2() >= 1,
            "both sentences need at least one token (got {} and {})",
            self.n1(),
            self.n2()
        );
        if let Some(v) = vocab_size {
            let max = self.tokens1.iter().chain(&self.tokens2).max().copied().unwrap_or(0);
            ensure!(max < v, "token id {max} outside vocabulary of {v}");
        }
        if let Some(r) = &self.rationale {
            for &(s, i) in r {
                let len = match s {
                    0 => self.n1(),
                    1 => self.n2(),
                    _ => 0,
                };
                ensure!(i < len, "rationale entry ({s}, {i}) out of range");
            }
        }
        Ok(())
    }
}
