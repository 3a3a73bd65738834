//! The training objective: negative ELBOs for labeled and unlabeled data,
//! a classification term, entropy regularization and (reported) weight decay.
//!
//! For a labeled pair the per-sample loss is
//!
//! ```text
//! L_l(x, y) = −log p(x|z) + KL(q(z|x,y) ‖ p(z|y)) − log p(y),   z ~ q(z|x,y)
//! ```
//!
//! with a unit-variance Gaussian likelihood and the uniform class prior
//! `p(y) = 1/C`. Unlabeled samples marginalize over every class slot:
//!
//! ```text
//! L_u(x) = Σ_c q(c|x) · L_l(x, c) − H(q(·|x))
//! ```
//!
//! and the batch objective is
//!
//! ```text
//! mean_l [L_l − α·log q(y|x)] + mean_u [L_u − γ·λ·Σ_c q(c|x)·log q(c|x)] + w·Σθ²
//! ```
//!
//! The last term is only reported here; the optimizer applies it as
//! decoupled weight decay.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Array, DiffError, Tape, Var};
use crate::model::{one_hot, ModelError, Network, Parameters};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("label {label} refers to an augmented slot (only {n_known} known classes)")]
    AugmentedLabel { label: usize, n_known: usize },
    #[error("batch mismatch: {0}")]
    Batch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<DiffError> for ObjectiveError {
    fn from(e: DiffError) -> Self {
        ObjectiveError::Model(ModelError::Diff(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub gamma: f64,
    /// Scheduled entropy weight in `[0, 1]`.
    pub lambda: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clipping threshold.
    pub clip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, gamma: 1.0, lambda: 0.0, weight_decay: 0.0, clip: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.alpha, self.gamma, self.lambda, self.weight_decay, self.clip];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("loss weights must be finite and non-negative: {self:?}"));
        }
        if self.lambda > 1.0 {
            return Err(format!("lambda must be at most 1, got {}", self.lambda));
        }
        if self.clip <= 0.0 {
            return Err("clip must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub labeled_elbo_term: f64,
    pub classification_term: f64,
    pub unlabeled_elbo_term: f64,
    pub entropy_term: f64,
    pub weight_decay_term: f64,
}

impl LossBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.labeled_elbo_term
            + self.classification_term
            + self.unlabeled_elbo_term
            + self.entropy_term
            + self.weight_decay_term
    }
}

/// Closed-form `KL(N(mean_q, exp(logvar_q)) ‖ N(mean_p, exp(logvar_p)))` for
/// diagonal Gaussians.
pub fn gaussian_kl(mean_q: &[f64], logvar_q: &[f64], mean_p: &[f64], logvar_p: &[f64]) -> f64 {
    let n = mean_q.len();
    assert!(logvar_q.len() == n && mean_p.len() == n && logvar_p.len() == n, "gaussian_kl: length mismatch");
    0.5 * (0..n)
        .map(|i| {
            let diff = mean_q[i] - mean_p[i];
            logvar_p[i] - logvar_q[i] + (logvar_q[i].exp() + diff * diff) / logvar_p[i].exp() - 1.0
        })
        .sum::<f64>()
}

/// Unit-variance Gaussian log-likelihood of `x` under mean `x_hat`.
pub fn recon_loglik(x: &Array, x_hat: &Array) -> f64 {
    assert_eq!(x.shape(), x_hat.shape(), "recon_loglik: shape mismatch");
    let n = x.len() as f64;
    let sq: f64 = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * sq - 0.5 * n * (2.0 * PI).ln()
}

/// Standard-normal draws for one batch: one matrix for the labeled side and
/// one per class slot for the unlabeled side.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise {
    pub labeled: Option<Array>,
    pub unlabeled: Vec<Array>,
}

impl BatchNoise {
    pub fn sample<R: Rng>(rng: &mut R, n_labeled: usize, n_unlabeled: usize, n_classes: usize, latent: usize) -> Self {
        let mut draw = |rows: usize| {
            let data = (0..rows * latent).map(|_| rng.sample(StandardNormal)).collect();
            Array::new(vec![rows, latent], data).expect("non-empty noise")
        };
        let labeled = (n_labeled > 0).then(|| draw(n_labeled));
        let unlabeled = if n_unlabeled > 0 { (0..n_classes).map(|_| draw(n_unlabeled)).collect() } else { Vec::new() };
        Self { labeled, unlabeled }
    }

    pub fn zeros(n_labeled: usize, n_unlabeled: usize, n_classes: usize, latent: usize) -> Self {
        Self {
            labeled: (n_labeled > 0).then(|| Array::zeros(&[n_labeled, latent])),
            unlabeled: if n_unlabeled > 0 {
                (0..n_classes).map(|_| Array::zeros(&[n_unlabeled, latent])).collect()
            } else {
                Vec::new()
            },
        }
    }
}

/// A labeled batch: `(batch, channels, length)` inputs and one label each.
#[derive(Clone, Copy, Debug)]
pub struct LabeledBatch<'a> {
    pub x: &'a Array,
    pub y: &'a [usize],
}

/// Per-sample labeled quantities on a tape.
pub struct LabeledTerms {
    /// `L_l(x, y)`, shape `(batch)`.
    pub nll: Var,
    /// `−log q(y|x)`, shape `(batch)`.
    pub cross_entropy: Var,
}

/// Per-sample unlabeled quantities on a tape.
pub struct UnlabeledTerms {
    /// `L_u(x)`, shape `(batch)`.
    pub nll: Var,
    /// `Σ_c q(c|x) log q(c|x)`, shape `(batch)`.
    pub neg_entropy: Var,
    /// `L_l(x, c)` for every slot, shape `(batch, n_classes)`.
    pub per_class: Var,
}

/// `L_l(x, c)` per sample for a fixed class assignment given as a one-hot.
fn conditional_nll(
    net: &Network,
    tape: &mut Tape,
    x: Var,
    feats: Var,
    onehot: Var,
    noise: Var,
) -> Result<Var, ObjectiveError> {
    let cfg = net.config();
    let n = tape.shape(x)[0];
    let size = cfg.input_size();

    let (mean, logvar) = net.encode(tape, feats, onehot)?;
    let z = net.reparameterize(tape, mean, logvar, noise)?;
    let x_hat = net.decode(tape, z)?;

    let resid = tape.sub(x, x_hat)?;
    let sq = tape.mul(resid, resid)?;
    let sq = tape.reshape(sq, &[n, size])?;
    let sq = tape.sum_axis(sq, 1)?;
    let half_sq = tape.scale(sq, 0.5)?;
    let recon = tape.shift(half_sq, 0.5 * size as f64 * (2.0 * PI).ln())?;

    let (pm, plv) = net.prior_rows(tape, onehot)?;
    let diff = tape.sub(mean, pm)?;
    let diff2 = tape.mul(diff, diff)?;
    let var_q = tape.exp(logvar)?;
    let numer = tape.add(var_q, diff2)?;
    let neg_plv = tape.scale(plv, -1.0)?;
    let inv_var_p = tape.exp(neg_plv)?;
    let ratio = tape.mul(numer, inv_var_p)?;
    let log_ratio = tape.sub(plv, logvar)?;
    let inner = tape.add(log_ratio, ratio)?;
    let inner = tape.shift(inner, -1.0)?;
    let kl = tape.sum_axis(inner, 1)?;
    let kl = tape.scale(kl, 0.5)?;

    let nll = tape.add(recon, kl)?;
    Ok(tape.shift(nll, (cfg.n_classes() as f64).ln())?)
}

fn check_noise(noise: &Array, rows: usize, latent: usize) -> Result<(), ObjectiveError> {
    if noise.shape() != [rows, latent] {
        return Err(ObjectiveError::Batch(format!("noise shape {:?}, expected [{rows}, {latent}]", noise.shape())));
    }
    Ok(())
}

/// Record the labeled-side loss terms for a batch.
pub fn labeled_terms(
    net: &Network,
    tape: &mut Tape,
    batch: LabeledBatch,
    noise: &Array,
) -> Result<LabeledTerms, ObjectiveError> {
    let cfg = net.config();
    let n = batch.y.len();
    if batch.x.shape().first() != Some(&n) {
        return Err(ObjectiveError::Batch(format!("{} labels for inputs {:?}", n, batch.x.shape())));
    }
    if let Some(&label) = batch.y.iter().find(|&&y| y >= cfg.n_known_classes) {
        return Err(ObjectiveError::AugmentedLabel { label, n_known: cfg.n_known_classes });
    }
    check_noise(noise, n, cfg.latent_dim)?;

    let x = net.input(tape, batch.x.clone())?;
    let feats = net.features(tape, x)?;
    let onehot = tape.constant(one_hot(batch.y, cfg.n_classes()));
    let eps = tape.constant(noise.clone());
    let nll = conditional_nll(net, tape, x, feats, onehot, eps)?;

    let logits = net.logits(tape, feats)?;
    let log_q = tape.log_softmax(logits, 1)?;
    let picked = tape.mul(log_q, onehot)?;
    let picked = tape.sum_axis(picked, 1)?;
    let cross_entropy = tape.scale(picked, -1.0)?;
    Ok(LabeledTerms { nll, cross_entropy })
}

/// Record the unlabeled-side loss terms. `logits_override` replaces the
/// classifier output with fixed logits (one row per sample).
pub fn unlabeled_terms(
    net: &Network,
    tape: &mut Tape,
    x: &Array,
    noise: &[Array],
    logits_override: Option<&Array>,
) -> Result<UnlabeledTerms, ObjectiveError> {
    let cfg = net.config();
    let n_classes = cfg.n_classes();
    let xv = net.input(tape, x.clone())?;
    let n = tape.shape(xv)[0];
    if noise.len() != n_classes {
        return Err(ObjectiveError::Batch(format!("{} noise blocks for {n_classes} classes", noise.len())));
    }
    let feats = net.features(tape, xv)?;

    let mut columns = Vec::with_capacity(n_classes);
    for (c, eps) in noise.iter().enumerate() {
        check_noise(eps, n, cfg.latent_dim)?;
        let onehot = tape.constant(one_hot(&vec![c; n], n_classes));
        let eps = tape.constant(eps.clone());
        let nll = conditional_nll(net, tape, xv, feats, onehot, eps)?;
        columns.push(tape.reshape(nll, &[n, 1])?);
    }
    let per_class = tape.concat(&columns, 1)?;

    let logits = match logits_override {
        Some(l) => {
            if l.shape() != [n, n_classes] {
                return Err(ObjectiveError::Batch(format!("logit override shape {:?}", l.shape())));
            }
            tape.constant(l.clone())
        }
        None => net.logits(tape, feats)?,
    };
    let log_q = tape.log_softmax(logits, 1)?;
    let q = tape.exp(log_q)?;

    let weighted = tape.mul(q, per_class)?;
    let expected = tape.sum_axis(weighted, 1)?;
    let q_log_q = tape.mul(q, log_q)?;
    let neg_entropy = tape.sum_axis(q_log_q, 1)?;
    let nll = tape.add(expected, neg_entropy)?;
    Ok(UnlabeledTerms { nll, neg_entropy, per_class })
}

/// The differentiable part of the objective (everything but weight decay)
/// together with its breakdown.
pub struct ObjectiveGraph {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

/// Record the full batch objective on `tape`. A side passed as `None` (or
/// with no rows) contributes zero.
pub fn record_total_loss(
    net: &Network,
    params: &Parameters,
    tape: &mut Tape,
    labeled: Option<LabeledBatch>,
    unlabeled: Option<&Array>,
    weights: &LossWeights,
    noise: &BatchNoise,
) -> Result<ObjectiveGraph, ObjectiveError> {
    let mut parts: Vec<Var> = Vec::new();
    let mut bd = LossBreakdown::default();

    if let Some(batch) = labeled.filter(|b| !b.y.is_empty()) {
        let eps = noise
            .labeled
            .as_ref()
            .ok_or_else(|| ObjectiveError::Batch("labeled batch without labeled noise".into()))?;
        let terms = labeled_terms(net, tape, batch, eps)?;
        let elbo = tape.mean(terms.nll)?;
        let ce = tape.mean(terms.cross_entropy)?;
        let cls = tape.scale(ce, weights.alpha)?;
        bd.labeled_elbo_term = tape.value(elbo).item();
        bd.classification_term = tape.value(cls).item();
        parts.extend([elbo, cls]);
    }
    if let Some(x) = unlabeled {
        let terms = unlabeled_terms(net, tape, x, &noise.unlabeled, None)?;
        let elbo = tape.mean(terms.nll)?;
        let neg_h = tape.mean(terms.neg_entropy)?;
        let ent = tape.scale(neg_h, -weights.gamma * weights.lambda)?;
        bd.unlabeled_elbo_term = tape.value(elbo).item();
        bd.entropy_term = tape.value(ent).item();
        parts.extend([elbo, ent]);
    }
    if parts.is_empty() {
        return Err(ObjectiveError::Batch("both batch sides are empty".into()));
    }
    let mut loss = parts[0];
    for &p in &parts[1..] {
        loss = tape.add(loss, p)?;
    }
    bd.weight_decay_term = weights.weight_decay * params.decayed_sum_of_squares();
    bd.total = bd.parts_sum();
    Ok(ObjectiveGraph { loss, breakdown: bd })
}

/// Evaluate the batch objective without keeping the graph.
pub fn total_loss(
    params: &Parameters,
    labeled: Option<LabeledBatch>,
    unlabeled: Option<&Array>,
    weights: &LossWeights,
    noise: &BatchNoise,
) -> Result<LossBreakdown, ObjectiveError> {
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, params, false);
    Ok(record_total_loss(&net, params, &mut tape, labeled, unlabeled, weights, noise)?.breakdown)
}

/// `L_l(x, y)` for a single `(channels, length)` series.
pub fn labeled_loss(params: &Parameters, x: &Array, y: usize, noise: &[f64]) -> Result<f64, ObjectiveError> {
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, params, false);
    let xb = single(params, x)?;
    let eps = Array::new(vec![1, noise.len()], noise.to_vec()).map_err(ObjectiveError::from)?;
    let terms = labeled_terms(&net, &mut tape, LabeledBatch { x: &xb, y: &[y] }, &eps)?;
    Ok(tape.value(terms.nll).item())
}

/// `L_u(x)` for a single series; `noise[c]` is the latent draw for class `c`.
pub fn unlabeled_loss(params: &Parameters, x: &Array, noise: &[Vec<f64>]) -> Result<f64, ObjectiveError> {
    unlabeled_loss_with_logits(params, x, noise, None)
}

/// As [`unlabeled_loss`], optionally replacing the classifier logits.
pub fn unlabeled_loss_with_logits(
    params: &Parameters,
    x: &Array,
    noise: &[Vec<f64>],
    logits: Option<&[f64]>,
) -> Result<f64, ObjectiveError> {
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, params, false);
    let xb = single(params, x)?;
    let eps: Vec<Array> = noise
        .iter()
        .map(|v| Array::new(vec![1, v.len()], v.clone()))
        .collect::<Result<_, _>>()
        .map_err(ObjectiveError::from)?;
    let override_logits =
        logits.map(|l| Array::new(vec![1, l.len()], l.to_vec())).transpose().map_err(ObjectiveError::from)?;
    let terms = unlabeled_terms(&net, &mut tape, &xb, &eps, override_logits.as_ref())?;
    Ok(tape.value(terms.nll).item())
}

fn single(params: &Parameters, x: &Array) -> Result<Array, ObjectiveError> {
    let cfg = params.config();
    if x.shape() != [cfg.channels, cfg.length] {
        return Err(
            ModelError::InputShape { channels: cfg.channels, length: cfg.length, got: x.shape().to_vec() }.into()
        );
    }
    Ok(x.reshaped(&[1, cfg.channels, cfg.length])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_identity_and_unit_shift() {
        assert_eq!(gaussian_kl(&[0.3, -1.0], &[0.2, 1.5], &[0.3, -1.0], &[0.2, 1.5]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0], &[0.0], &[0.0]) - 0.5).abs() < 1e-15);
        assert!((gaussian_kl(&[1.0, 1.0, 1.0], &[0.0; 3], &[0.0; 3], &[0.0; 3]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn recon_loglik_cases() {
        let x = Array::vector(vec![0.4, -1.2]);
        let perfect = recon_loglik(&x, &x);
        assert!((perfect - (-(2.0 * PI).ln())).abs() < 1e-12);
        assert!((perfect + 1.837877).abs() < 1e-6);
        let off = Array::vector(vec![1.4, -1.2]);
        assert!((recon_loglik(&off, &x) - (perfect - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossWeights { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { clip: 0.0, ..Default::default() }.validate().is_err());
    }
}
