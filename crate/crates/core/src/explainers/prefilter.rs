use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Words retained for group-mask fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prefilter {
    /// Global word positions, strictly increasing.
    pub kept: Vec<usize>,
    /// Kept words from sentence one (these come first in `kept`).
    pub k1: usize,
    pub k2: usize,
    /// Group count `max(2, min(k1, k2))`.
    pub groups: usize,
}

/// Positions sorted by descending score; equal scores keep the lower index first.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Positions sorted by ascending score; equal scores keep the lower index first.
pub fn rank_ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Keeps the `k` highest-probability words, making sure each sentence keeps
/// at least one: a starved sentence's best word replaces the weakest kept word.
pub fn prefilter_topk(probabilities: &[f64], k: usize, n1: usize) -> Result<Prefilter> {
    ensure!(k >= 2, "prefilter needs k >= 2, got {k}");
    let n = probabilities.len();
    ensure!(
        n1 >= 1 && n1 < n,
        "split {n1} leaves a sentence empty (n = {n})"
    );
    let mut kept: Vec<usize> = if n <= k {
        (0..n).collect()
    } else {
        let order = rank_descending(probabilities);
        let mut top: Vec<usize> = order[..k].to_vec();
        let starved = if top.iter().all(|&i| i >= n1) {
            Some(0..n1)
        } else if top.iter().all(|&i| i < n1) {
            Some(n1..n)
        } else {
            None
        };
        if let Some(range) = starved {
            let best = order.iter().copied().find(|i| range.contains(i)).expect("non-empty sentence");
            *top.last_mut().expect("k >= 2") = best;
        }
        top
    };
    kept.sort_unstable();
    let k1 = kept.iter().filter(|&&i| i < n1).count();
    let k2 = kept.len() - k1;
    Ok(Prefilter {
        groups: k1.min(k2).max(2),
        kept,
        k1,
        k2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_input_keeps_everything() {
        let p = prefilter_topk(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 10, 2).unwrap();
        assert_eq!(p.kept, (0..6).collect::<Vec<_>>());
        assert_eq!((p.k1, p.k2, p.groups), (2, 4, 2));
    }

    #[test]
    fn starved_sentence_is_forced_in() {
        let mut probs = vec![0.9; 12];
        probs.extend(vec![0.01, 0.02, 0.03, 0.015]);
        let p = prefilter_topk(&probs, 10, 12).unwrap();
        assert_eq!((p.k1, p.k2, p.groups), (9, 1, 2));
        assert!(p.kept.contains(&14));
        // the weakest of the ten (ties: highest index) is the one replaced
        assert!(!p.kept.contains(&9));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let p = prefilter_topk(&[0.5; 6], 3, 3).unwrap();
        assert_eq!(p.kept, vec![0, 1, 3]);
        assert_eq!(rank_descending(&[0.2, 0.5, 0.5, 0.1]), vec![1, 2, 0, 3]);
        assert_eq!(rank_ascending(&[0.2, 0.5, 0.5, 0.1]), vec![3, 0, 1, 2]);
    }

    #[test]
    fn rejects_small_k() {
        assert!(prefilter_topk(&[0.5, 0.5], 1, 1).is_err());
    }
}
