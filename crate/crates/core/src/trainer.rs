//! Optimization: Adam with decoupled weight decay, a per-step cosine learning
//! rate, the stepped entropy weight λ, global-norm clipping and
//! validation-based checkpoint selection.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{build_regime, make_batches, stack, DataError, DatasetBundle, Regime, RegimeSpec};
use crate::diff::{Array, DiffError, Tape};
use crate::evaluation::{evaluate, EvalError};
use crate::model::{ModelConfig, ModelError, Network, Parameters};
use crate::objective::{record_total_loss, BatchNoise, LabeledBatch, LossBreakdown, LossWeights, ObjectiveError};

const NOISE_STREAM: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("epoch {epoch}, batch {batch}: non-finite gradient in {parameter}")]
    NonFiniteGradient { parameter: String, epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: training diverged ({reason})")]
    Diverged { epoch: usize, batch: usize, reason: String, last_good: Option<Box<Parameters>> },
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::NonFiniteGradient { .. } | TrainError::Diverged { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub lambda_step: f64,
    pub lambda_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            batch_size: 512,
            alpha: 1.0,
            gamma: 1.0,
            weight_decay: 0.0,
            clip: 1.0,
            lambda_step: 0.1,
            lambda_max: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda_step > 0.0 && self.lambda_step <= 1.0) {
            return bad("lambda_step must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda_max) {
            return bad("lambda_max must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        self.weights(0.0).validate().map_err(TrainError::Config)
    }

    /// Loss weights at entropy weight `lambda`.
    pub fn weights(&self, lambda: f64) -> LossWeights {
        LossWeights { alpha: self.alpha, gamma: self.gamma, lambda, weight_decay: self.weight_decay, clip: self.clip }
    }
}

/// `min(lambda_max, lambda_step · epoch)`.
pub fn lambda_at(epoch: usize, lambda_step: f64, lambda_max: f64) -> f64 {
    (lambda_step * epoch as f64).min(lambda_max)
}

/// `½·lr0·(1 + cos(π·step/total))`, clamped at zero.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let s = step.min(total) as f64;
    if step >= total {
        return 0.0;
    }
    (0.5 * lr0 * (1.0 + (std::f64::consts::PI * s / total as f64).cos())).max(0.0)
}

/// First and second moment estimates, one array per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Array> = params.tensors().iter().map(|t| Array::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip: f64,
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &[Array]) -> f64 {
    grads.iter().map(Array::sum_of_squares).sum::<f64>().sqrt()
}

/// Scales `grads` in place so their global norm is at most `clip`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], clip: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip {
        let s = clip / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One Adam update with bias correction. Gradients are clipped to global
/// norm `clip` first; parameters flagged for decay then shrink by
/// `lr·w·θ`, independently of the gradient. Returns the pre-clip norm.
///
/// `batch` and `epoch` only label the error for a non-finite gradient, which
/// leaves parameters and state untouched.
pub fn adam_step(
    params: &mut Parameters,
    state: &mut AdamState,
    mut grads: Vec<Array>,
    hyper: &AdamHyper,
    epoch: usize,
    batch: usize,
) -> Result<f64, TrainError> {
    assert_eq!(grads.len(), params.tensors().len(), "one gradient per parameter tensor");
    for (g, spec) in grads.iter().zip(params.specs()) {
        assert_eq!(g.shape(), spec.shape.as_slice(), "gradient shape for {}", spec.name);
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient { parameter: spec.name.clone(), epoch, batch });
        }
    }
    let norm = clip_global_norm(&mut grads, hyper.clip);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let decay: Vec<bool> = params.specs().iter().map(|s| s.decay).collect();
    for (i, theta) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mk, gk) in m.iter_mut().zip(g) {
            *mk = hyper.beta1 * *mk + (1.0 - hyper.beta1) * gk;
        }
        let v = state.v[i].data_mut();
        for (vk, gk) in v.iter_mut().zip(g) {
            *vk = hyper.beta2 * *vk + (1.0 - hyper.beta2) * gk * gk;
        }
        let shrink = if decay[i] { hyper.lr * hyper.weight_decay } else { 0.0 };
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for (k, p) in theta.data_mut().iter_mut().enumerate() {
            let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + hyper.eps);
            *p -= hyper.lr * update + shrink * *p;
        }
    }
    Ok(norm)
}

/// Per-epoch averages of the batch loss breakdown plus the schedule values
/// and the validation accuracy after the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lambda: f64,
    /// Learning rate of the epoch's last optimizer step.
    pub lr: f64,
    pub val_accuracy: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,total,labeled_elbo,classification,unlabeled_elbo,entropy,weight_decay,lambda,lr,val_accuracy";

/// Comma-separated history with [`HISTORY_HEADER`].
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            l.total,
            l.labeled_elbo_term,
            l.classification_term,
            l.unlabeled_elbo_term,
            l.entropy_term,
            l.weight_decay_term,
            r.lambda,
            r.lr,
            r.val_accuracy
        )
        .unwrap();
    }
    out
}

/// Parameters, optimizer moments and checkpoint bookkeeping between epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: Parameters,
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub best_epoch: Option<usize>,
    pub best_params: Parameters,
}

pub struct FitResult {
    pub best_params: Parameters,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub final_params: Parameters,
    pub history: Vec<EpochRecord>,
}

/// Epoch-by-epoch training driver; [`fit`] runs it to completion.
pub struct Trainer {
    config: TrainConfig,
    regime: Regime,
    anchored: Vec<usize>,
    class_names: Vec<String>,
    batches_per_epoch: usize,
    state: TrainState,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(
        bundle: &DatasetBundle,
        spec: &RegimeSpec,
        model: &ModelConfig,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        model.validate()?;
        if (model.channels, model.length) != (bundle.channels, bundle.length) {
            return Err(TrainError::Config(format!(
                "model input ({}, {}) does not match bundle ({}, {})",
                model.channels, model.length, bundle.channels, bundle.length
            )));
        }
        if model.n_known_classes != bundle.n_classes() || model.n_augmented_classes != spec.n_augmented {
            return Err(TrainError::Config(format!(
                "model has {} known + {} augmented slots, data has {} classes and the regime asks for {} augmented",
                model.n_known_classes,
                model.n_augmented_classes,
                bundle.n_classes(),
                spec.n_augmented
            )));
        }
        let regime = build_regime(bundle, spec)?;
        if regime.validation.is_empty() {
            return Err(TrainError::Config("validation split is empty".into()));
        }
        let n_lead = regime.labeled.len().max(regime.unlabeled.len());
        if n_lead == 0 {
            return Err(DataError::NothingToBatch.into());
        }
        let params = Parameters::init(model.clone(), config.seed)?;
        let state = TrainState {
            adam: AdamState::new(&params),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_val_accuracy: f64::NEG_INFINITY,
            best_epoch: None,
        };
        Ok(Self {
            config: config.clone(),
            anchored: spec.anchored_classes(bundle.n_classes()),
            class_names: bundle.class_names.clone(),
            batches_per_epoch: n_lead.div_ceil(config.batch_size),
            regime,
            state,
            history: vec![],
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    /// Classes whose slots are pinned to their identity when scoring.
    pub fn anchored_classes(&self) -> &[usize] {
        &self.anchored
    }

    pub fn total_steps(&self) -> usize {
        self.batches_per_epoch * self.config.epochs
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn diverged(&self, batch: usize, reason: String) -> TrainError {
        TrainError::Diverged {
            epoch: self.state.epoch,
            batch,
            reason,
            last_good: self.state.best_epoch.map(|_| Box::new(self.state.best_params.clone())),
        }
    }

    /// Runs one epoch, evaluates on validation and updates the checkpoint.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord, TrainError> {
        if self.is_done() {
            return Err(TrainError::Config("all epochs have already run".into()));
        }
        let cfg = self.config.clone();
        let epoch = self.state.epoch;
        let model = self.state.params.config().clone();
        let lambda = lambda_at(epoch, cfg.lambda_step, cfg.lambda_max);
        let weights = cfg.weights(lambda);
        let plans =
            make_batches(self.regime.labeled.len(), self.regime.unlabeled.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(NOISE_STREAM + epoch as u64);

        let mut sum = LossBreakdown::default();
        let mut lr = cfg.lr;
        for (b, plan) in plans.iter().enumerate() {
            let xl = (!plan.labeled.is_empty())
                .then(|| stack(&self.regime.labeled, &plan.labeled, model.channels, model.length));
            let yl: Vec<usize> = plan.labeled.iter().map(|&i| self.regime.labeled[i].label.expect("labeled")).collect();
            let xu = (!plan.unlabeled.is_empty())
                .then(|| stack(&self.regime.unlabeled, &plan.unlabeled, model.channels, model.length));
            let noise = BatchNoise::sample(
                &mut noise_rng,
                plan.labeled.len(),
                plan.unlabeled.len(),
                model.n_classes(),
                model.latent_dim,
            );

            let mut tape = Tape::new();
            let net = Network::bind(&mut tape, &self.state.params, true);
            let labeled = xl.as_ref().map(|x| LabeledBatch { x, y: &yl });
            let graph =
                match record_total_loss(&net, &self.state.params, &mut tape, labeled, xu.as_ref(), &weights, &noise) {
                    Ok(g) => g,
                    Err(ObjectiveError::Model(ModelError::Diff(e @ DiffError::NonFinite { .. }))) => {
                        return Err(self.diverged(b, e.to_string()));
                    }
                    Err(e) => return Err(TrainError::Config(e.to_string())),
                };
            if !graph.breakdown.total.is_finite() {
                return Err(self.diverged(b, "loss is not finite".into()));
            }
            let grads = tape.backward(graph.loss).map_err(|e| self.diverged(b, e.to_string()))?;
            let grads: Vec<Array> = net
                .vars()
                .iter()
                .zip(self.state.params.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
                .collect();
            drop(tape);

            let step = epoch * self.batches_per_epoch + b;
            lr = cosine_lr(step, self.total_steps(), cfg.lr);
            let hyper = AdamHyper {
                lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.eps,
                weight_decay: cfg.weight_decay,
                clip: cfg.clip,
            };
            adam_step(&mut self.state.params, &mut self.state.adam, grads, &hyper, epoch, b)?;
            if !self.state.params.is_finite() {
                return Err(self.diverged(b, "parameters became non-finite".into()));
            }
            add_breakdown(&mut sum, &graph.breakdown);
        }
        let n = plans.len() as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            labeled_elbo_term: sum.labeled_elbo_term / n,
            classification_term: sum.classification_term / n,
            unlabeled_elbo_term: sum.unlabeled_elbo_term / n,
            entropy_term: sum.entropy_term / n,
            weight_decay_term: sum.weight_decay_term / n,
        };

        let report = evaluate(&self.state.params, &self.regime.validation, &self.class_names, &self.anchored)?;
        let val_accuracy = report.accuracy;
        // `>=` keeps the last epoch among equally good ones.
        if val_accuracy >= self.state.best_val_accuracy {
            self.state.best_val_accuracy = val_accuracy;
            self.state.best_epoch = Some(epoch);
            self.state.best_params = self.state.params.clone();
        }
        self.state.epoch += 1;
        log::info!("epoch {epoch}: loss {:.4} val_acc {:.4} lambda {lambda:.2} lr {lr:.3e}", mean.total, val_accuracy);
        self.history.push(EpochRecord { epoch, loss: mean, lambda, lr, val_accuracy });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self) -> FitResult {
        FitResult {
            best_epoch: self.state.best_epoch.unwrap_or(0),
            best_val_accuracy: self.state.best_val_accuracy,
            best_params: self.state.best_params,
            final_params: self.state.params,
            history: self.history,
        }
    }
}

fn add_breakdown(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.total += b.total;
    acc.labeled_elbo_term += b.labeled_elbo_term;
    acc.classification_term += b.classification_term;
    acc.unlabeled_elbo_term += b.unlabeled_elbo_term;
    acc.entropy_term += b.entropy_term;
    acc.weight_decay_term += b.weight_decay_term;
}

/// Trains for `config.epochs` epochs and returns the parameters of the last
/// epoch that reached the best validation accuracy.
pub fn fit(
    bundle: &DatasetBundle,
    spec: &RegimeSpec,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    let mut trainer = Trainer::new(bundle, spec, model, config)?;
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_hit_their_anchor_points() {
        assert_eq!(lambda_at(0, 0.1, 1.0), 0.0);
        assert_eq!(lambda_at(5, 0.1, 1.0), 0.5);
        assert_eq!(lambda_at(15, 0.1, 1.0), 1.0);
        assert_eq!(cosine_lr(0, 100, 0.3), 0.3);
        assert_eq!(cosine_lr(50, 100, 0.3), 0.15);
        assert_eq!(cosine_lr(100, 100, 0.3), 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Array::vector(vec![6.0, 0.0]), Array::vector(vec![8.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 10.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-9);
    }
}
