//! Faithfulness metrics for attribution reports.
//!
//! Removing a word always means zero-masking its embedding, so positions stay
//! fixed. Orderings break ties by the lower word index, which makes every
//! metric a deterministic function of the attribution ranking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::explainers::{rank_ascending, rank_descending, AttributionReport};
use crate::models::{argmax, predict_proba_batch, PairExample, PairModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// AOPC removal depth.
    pub depth: usize,
    /// Top-v values for post-hoc accuracy.
    pub v_grid: Vec<usize>,
    /// Degradation proportions in percent.
    pub rho_grid: Vec<u32>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            depth: 10,
            v_grid: (1..=10).collect(),
            rho_grid: (0..=10).map(|i| i * 10).collect(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, "AOPC depth must be at least 1");
        ensure!(
            self.v_grid.windows(2).all(|w| w[0] < w[1]) && self.v_grid.first().is_none_or(|&v| v >= 1),
            "v grid must be strictly increasing and start at 1 or more"
        );
        check_rho_grid(&self.rho_grid)
    }
}

fn check_rho_grid(grid: &[u32]) -> Result<()> {
    ensure!(
        grid.first() == Some(&0) && grid.last() == Some(&100),
        "degradation grid must start at 0 and end at 100"
    );
    ensure!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "degradation grid must be strictly increasing"
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurves {
    pub rho: Vec<u32>,
    /// Most relevant removed first.
    pub morf: Vec<f64>,
    /// Least relevant removed first.
    pub lerf: Vec<f64>,
    /// Averaged `p(y|x)`.
    pub base_probability: f64,
    /// Averaged `p(y|x_o)` with every word removed.
    pub empty_probability: f64,
}

fn pair_up<'a>(
    examples: &'a [PairExample],
    reports: &'a [AttributionReport],
) -> Result<Vec<(&'a PairExample, &'a AttributionReport)>> {
    ensure!(!reports.is_empty(), "no reports to evaluate");
    ensure!(
        examples.len() == reports.len(),
        "{} examples but {} reports",
        examples.len(),
        reports.len()
    );
    for (ex, r) in examples.iter().zip(reports) {
        ensure!(
            r.theta.len() == ex.len(),
            "report {} has {} attributions for {} words",
            r.id,
            r.theta.len(),
            ex.len()
        );
    }
    Ok(examples.iter().zip(reports).collect())
}

/// Runs `f` over every pair in parallel; results come back in input order so
/// that the caller's sequential reduction is independent of the worker count.
fn per_example<'a, T, F>(pairs: &[(&'a PairExample, &'a AttributionReport)], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&'a PairExample, &'a AttributionReport) -> Result<T> + Sync,
{
    pairs.par_iter().map(|&(ex, r)| f(ex, r)).collect()
}

/// Mask keeping every word except `removed`.
fn without(n: usize, removed: &[usize]) -> Vec<f64> {
    let mut m = vec![1.0; n];
    for &i in removed {
        m[i] = 0.0;
    }
    m
}

/// Mask keeping only `kept`.
fn only(n: usize, kept: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for &i in kept {
        m[i] = 1.0;
    }
    m
}

/// `1/(U+1) Σ_{u=1..U} [p(y|x) - p(y|x without top-u words)]`, averaged over
/// examples, with `y` the unmasked prediction and `u` capped at the word count.
pub fn aopc<M: PairModel + ?Sized>(
    model: &M,
    examples: &[PairExample],
    reports: &[AttributionReport],
    depth: usize,
) -> Result<f64> {
    ensure!(depth >= 1, "AOPC depth must be at least 1");
    let pairs = pair_up(examples, reports)?;
    let scores = per_example(&pairs, |ex, r| {
        let n = ex.len();
        let order = rank_descending(&r.theta);
        let mut masks = vec![vec![1.0; n]];
        masks.extend((1..=depth).map(|u| without(n, &order[..u.min(n)])));
        let probs = predict_proba_batch(model, ex, &masks)?;
        let y = argmax(&probs[0]);
        let base = probs[0][y];
        let drop: f64 = probs[1..].iter().map(|p| base - p[y]).sum();
        Ok(drop / (depth + 1) as f64)
    })?;
    Ok(scores.iter().sum::<f64>() / reports.len() as f64)
}

/// Fraction of examples whose prediction survives keeping only the top-`v` words.
pub fn posthoc_accuracy<M: PairModel + ?Sized>(
    model: &M,
    examples: &[PairExample],
    reports: &[AttributionReport],
    v: usize,
) -> Result<f64> {
    Ok(posthoc_curve(model, examples, reports, &[v])?[0])
}

/// Post-hoc accuracy for every `v` in `grid`.
pub fn posthoc_curve<M: PairModel + ?Sized>(
    model: &M,
    examples: &[PairExample],
    reports: &[AttributionReport],
    grid: &[usize],
) -> Result<Vec<f64>> {
    ensure!(grid.iter().all(|&v| v >= 1), "post-hoc v must be at least 1");
    let pairs = pair_up(examples, reports)?;
    let per = per_example(&pairs, |ex, r| {
        let n = ex.len();
        let order = rank_descending(&r.theta);
        let mut masks = vec![vec![1.0; n]];
        masks.extend(grid.iter().map(|&v| only(n, &order[..v.min(n)])));
        let probs = predict_proba_batch(model, ex, &masks)?;
        let y = argmax(&probs[0]);
        Ok(probs[1..].iter().map(|p| argmax(p) == y).collect::<Vec<bool>>())
    })?;
    let mut hits = vec![0usize; grid.len()];
    for row in per {
        for (h, ok) in hits.iter_mut().zip(row) {
            *h += usize::from(ok);
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / reports.len() as f64).collect())
}

/// Words removed at proportion `rho` percent: `floor(rho n / 100)`, at least one
/// when `rho > 0`.
pub fn removal_count(rho: u32, n: usize) -> usize {
    if rho == 0 {
        return 0;
    }
    ((rho as usize * n) / 100).max(1).min(n)
}

/// MoRF and LeRF curves normalised as `(p̄ρ - p̄o) / (p̄ - p̄o)`, with every
/// probability averaged over examples before normalising.
pub fn degradation_curves<M: PairModel + ?Sized>(
    model: &M,
    examples: &[PairExample],
    reports: &[AttributionReport],
    rho_grid: &[u32],
) -> Result<DegradationCurves> {
    check_rho_grid(rho_grid)?;
    let g = rho_grid.len();
    let pairs = pair_up(examples, reports)?;
    // per example: (p(y|x), p(y|x_o), MoRF row, LeRF row)
    let rows = per_example(&pairs, |ex, r| {
        let n = ex.len();
        let most = rank_descending(&r.theta);
        let least = rank_ascending(&r.theta);
        let mut masks = vec![vec![1.0; n], vec![0.0; n]];
        for &rho in rho_grid {
            let c = removal_count(rho, n);
            masks.push(without(n, &most[..c]));
            masks.push(without(n, &least[..c]));
        }
        let probs = predict_proba_batch(model, ex, &masks)?;
        let y = argmax(&probs[0]);
        let (mut m, mut l) = (vec![0.0; g], vec![0.0; g]);
        for (j, &rho) in rho_grid.iter().enumerate() {
            // exact endpoints: nothing removed is x, everything removed is x_o
            (m[j], l[j]) = match removal_count(rho, n) {
                0 => (probs[0][y], probs[0][y]),
                c if c == n => (probs[1][y], probs[1][y]),
                _ => (probs[2 + 2 * j][y], probs[3 + 2 * j][y]),
            };
        }
        Ok((probs[0][y], probs[1][y], m, l))
    })?;
    let (mut morf, mut lerf) = (vec![0.0; g], vec![0.0; g]);
    let (mut base, mut empty) = (0.0, 0.0);
    for (b, e, m, l) in rows {
        base += b;
        empty += e;
        for j in 0..g {
            morf[j] += m[j];
            lerf[j] += l[j];
        }
    }
    let count = reports.len() as f64;
    let (base, empty) = (base / count, empty / count);
    let denom = base - empty;
    if denom.abs() < 1e-9 {
        return Err(Error::contract(format!(
            "degenerate model: averaged p(y|x) = {base} and p(y|x_o) = {empty} coincide"
        )));
    }
    let normalise = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|s| (s / count - empty) / denom).collect() };
    Ok(DegradationCurves {
        rho: rho_grid.to_vec(),
        morf: normalise(morf),
        lerf: normalise(lerf),
        base_probability: base,
        empty_probability: empty,
    })
}

/// Trapezoidal integral of `(S^L - S^M) / 100` over the grid.
pub fn degradation_score(curves: &DegradationCurves) -> Result<f64> {
    let g = curves.rho.len();
    ensure!(
        curves.morf.len() == g && curves.lerf.len() == g,
        "curves do not share the grid"
    );
    let gap: Vec<f64> = curves.lerf.iter().zip(&curves.morf).map(|(l, m)| l - m).collect();
    let mut area = 0.0;
    for j in 1..g {
        let width = f64::from(curves.rho[j] - curves.rho[j - 1]);
        area += 0.5 * (gap[j - 1] + gap[j]) * width;
    }
    Ok(area / 100.0)
}

/// The same report with every attribution negated, which reverses the ranking
/// exactly (ties still break toward the lower index) and so swaps MoRF and LeRF.
pub fn inverted(report: &AttributionReport) -> AttributionReport {
    AttributionReport {
        theta: report.theta.iter().map(|v| -v).collect(),
        ..report.clone()
    }
}

/// Fraction of examples whose top-`topk` words contain the whole gold rationale.
pub fn rationale_recovery(reports: &[AttributionReport], examples: &[PairExample], topk: usize) -> Result<f64> {
    let mut hits = 0usize;
    for (ex, r) in pair_up(examples, reports)? {
        let gold = ex
            .gold_indices()
            .ok_or_else(|| Error::contract(format!("example {} has no gold rationale", r.id)))?;
        let order = rank_descending(&r.theta);
        let top = &order[..topk.min(order.len())];
        hits += usize::from(gold.iter().all(|g| top.contains(g)));
    }
    Ok(hits as f64 / reports.len() as f64)
}
