//! Post-hoc explainers producing per-word attributions.
//!
//! * `gmask`: individual masks prefilter the top-k words, group masks are fit
//!   on those, and each word's attribution is the expectation of its mask.
//! * `imask`: the individual-mask keep probabilities themselves.
//! * `random`: seeded uniform scores.
//! * `loo`: leave-one-out probability drops, mapped to (0, 1) by rank.

mod gmask;
mod gumbel;
mod imask;
mod prefilter;

pub use gmask::{
    compose_mask, fit_gmask, gmask_objective, group_balance_penalty, group_sparsity_penalty,
    weighted_attributions, GroupMaskParams, Objective,
};
pub use gumbel::{gumbel, gumbel_softmax_sample, logistic, open_unit};
pub use imask::{fit_imask, imask_objective};
pub use prefilter::{prefilter_topk, rank_ascending, rank_descending, Prefilter};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::hex_string;
use crate::error::{ensure, Error, Result};
use crate::models::{argmax, predict_proba, predict_proba_batch, PairExample, PairModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gmask,
    Imask,
    Random,
    Loo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gmask, Method::Imask, Method::Random, Method::Loo];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gmask => "gmask",
            Method::Imask => "imask",
            Method::Random => "random",
            Method::Loo => "loo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub method: Method,
    /// Weight of the group-balance term.
    pub gamma1: f64,
    /// Weight of the group-selection entropy.
    pub gamma2: f64,
    /// Relaxation temperature for every Gumbel sample.
    pub tau: f64,
    /// Mask samples drawn per epoch.
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Words kept by the prefilter before group masks are fit.
    pub k: usize,
    /// Weight of the mean keep probability in the individual-mask loss.
    pub sparsity: f64,
    /// Early stop once probabilities move less than this ...
    pub tolerance: f64,
    /// ... for this many consecutive epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            method: Method::Gmask,
            gamma1: 10.0,
            gamma2: 1.0,
            tau: 0.5,
            samples: 32,
            epochs: 100,
            learning_rate: 0.05,
            k: 10,
            sparsity: 1.0,
            tolerance: 1e-3,
            patience: 5,
            seed: 0,
        }
    }
}

impl ExplainerConfig {
    pub fn with_method(method: Method) -> Self {
        ExplainerConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.gamma1 >= 0.0 && self.gamma2 >= 0.0,
            "gamma1 and gamma2 must be non-negative"
        );
        ensure!(self.tau > 0.0, "temperature must be positive");
        ensure!(self.samples >= 1, "need at least one sample per epoch");
        ensure!(self.k >= 2, "prefilter k must be at least 2");
        ensure!(self.sparsity >= 0.0, "sparsity weight must be non-negative");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive"
        );
        Ok(())
    }
}

/// Attributions for one example, with everything needed to re-render them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub id: usize,
    pub method: Method,
    /// Fingerprint of the explained example's tokens.
    pub digest: String,
    pub n1: usize,
    pub n2: usize,
    pub predicted: usize,
    pub theta: Vec<f64>,
    /// Words the attribution is defined over; all others carry θ = 0.
    pub kept: Vec<usize>,
    pub groups: Option<usize>,
    /// Word-to-group probabilities for the kept words (gmask only).
    pub phi: Option<Vec<Vec<f64>>>,
    /// Group selection probabilities (gmask only).
    pub psi: Option<Vec<f64>>,
}

/// Tolerance of the Θ = ΦΨ consistency check.
pub const THETA_TOLERANCE: f64 = 1e-9;

impl AttributionReport {
    pub fn validate(&self) -> Result<()> {
        let n = self.n1 + self.n2;
        ensure!(
            self.theta.len() == n,
            "report {} has {} attributions for {n} words",
            self.id,
            self.theta.len()
        );
        ensure!(
            self.theta.iter().all(|v| v.is_finite()),
            "report {} has non-finite attributions",
            self.id
        );
        ensure!(
            self.kept.windows(2).all(|w| w[0] < w[1]) && self.kept.last().is_none_or(|&i| i < n),
            "report {} has invalid kept indices",
            self.id
        );
        for (i, th) in self.theta.iter().enumerate() {
            if self.kept.binary_search(&i).is_err() {
                ensure!(*th == 0.0, "report {}: word {i} was filtered but has θ = {th}", self.id);
            }
        }
        if self.method == Method::Gmask {
            let (phi, psi) = match (&self.phi, &self.psi) {
                (Some(phi), Some(psi)) => (phi, psi),
                _ => return Err(Error::contract(format!("gmask report {} lacks Φ or Ψ", self.id))),
            };
            ensure!(
                phi.len() == self.kept.len(),
                "report {}: Φ has {} rows for {} kept words",
                self.id,
                phi.len(),
                self.kept.len()
            );
            let expected = weighted_attributions(phi, psi);
            for (&i, e) in self.kept.iter().zip(&expected) {
                ensure!(
                    (self.theta[i] - e).abs() < THETA_TOLERANCE,
                    "report {}: θ[{i}] = {} but ΦΨ gives {e}",
                    self.id,
                    self.theta[i]
                );
            }
        }
        Ok(())
    }

    /// Whether this report was produced for `example`.
    pub fn matches(&self, example: &PairExample) -> bool {
        self.n1 == example.n1() && self.n2 == example.n2() && self.digest == example_digest(example)
    }
}

/// Short SHA-256 fingerprint of an example's tokens.
pub fn example_digest(example: &PairExample) -> String {
    let mut h = Sha256::new();
    for t in &example.tokens1 {
        h.update(t.to_le_bytes());
    }
    h.update(b"|");
    for t in &example.tokens2 {
        h.update(t.to_le_bytes());
    }
    hex_string(&h.finalize()[..8])
}

/// Per-example seed derived from the global seed and the example id.
pub fn example_seed(seed: u64, id: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(id as u64))
}

/// Leave-one-out drops `p(y|x) - p(y|x without word i)`.
pub fn leave_one_out_drops<M: PairModel + ?Sized>(model: &M, example: &PairExample, y: usize) -> Result<Vec<f64>> {
    let n = example.len();
    let mut masks = vec![vec![1.0; n]];
    for i in 0..n {
        let mut m = vec![1.0; n];
        m[i] = 0.0;
        masks.push(m);
    }
    let probs = predict_proba_batch(model, example, &masks)?;
    let base = probs[0][y];
    Ok(probs[1..].iter().map(|p| base - p[y]).collect())
}

/// Maps scores to `(n - r) / (n + 1)` where `r` is the descending rank.
fn rank_scores(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut theta = vec![0.0; n];
    for (r, i) in rank_descending(scores).into_iter().enumerate() {
        theta[i] = (n - r) as f64 / (n + 1) as f64;
    }
    theta
}

/// Explains the model's own prediction on `example`.
pub fn explain<M: PairModel + ?Sized>(
    model: &M,
    example: &PairExample,
    id: usize,
    cfg: &ExplainerConfig,
) -> Result<AttributionReport> {
    cfg.validate()?;
    example.validate(None)?;
    let n = example.len();
    let y = argmax(&predict_proba(model, example, None)?);
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, id));
    let mut report = AttributionReport {
        id,
        method: cfg.method,
        digest: example_digest(example),
        n1: example.n1(),
        n2: example.n2(),
        predicted: y,
        theta: vec![0.0; n],
        kept: (0..n).collect(),
        groups: None,
        phi: None,
        psi: None,
    };
    match cfg.method {
        Method::Gmask => {
            let probs = fit_imask(model, example, y, cfg, &mut rng)?;
            let pre = prefilter_topk(&probs, cfg.k, example.n1())?;
            let params = fit_gmask(model, example, &pre.kept, y, pre.groups, pre.k1, cfg, &mut rng)?;
            let phi = params.phi();
            let psi = params.psi();
            let theta = weighted_attributions(&phi, &psi);
            for (&i, th) in pre.kept.iter().zip(theta) {
                report.theta[i] = th;
            }
            report.kept = pre.kept;
            report.groups = Some(pre.groups);
            report.phi = Some(phi);
            report.psi = Some(psi);
        }
        Method::Imask => report.theta = fit_imask(model, example, y, cfg, &mut rng)?,
        Method::Random => report.theta = (0..n).map(|_| open_unit(&mut rng)).collect(),
        Method::Loo => report.theta = rank_scores(&leave_one_out_drops(model, example, y)?),
    }
    report.validate()?;
    Ok(report)
}
