//! Random hyperparameter search with an optional successive-halving pruner.
//!
//! Trials are ranked by validation accuracy only. The test split, when
//! given, is evaluated once, for the selected trial.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DatasetBundle, RegimeSpec, SeriesSample};
use crate::evaluation::{evaluate, EvalError, EvalReport};
use crate::model::{ModelConfig, Parameters, Variant};
use crate::trainer::{EpochRecord, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search options: {0}")]
    Options(String),
    #[error("no trial finished; failures:\n{}", .0.join("\n"))]
    NoSuccessfulTrial(Vec<String>),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Candidate values per hyperparameter. The learning rate is drawn
/// log-uniformly from `lr`; everything else uniformly from its list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_augmented: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub lr: (f64, f64),
    pub alpha: Vec<f64>,
    pub latent_dim: Vec<usize>,
    pub gamma: Vec<f64>,
    pub layers: Vec<usize>,
    pub filters: Vec<usize>,
    pub units: Vec<usize>,
    pub kernel_size: Vec<usize>,
    pub clip: Vec<f64>,
}

fn powers_of_ten(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 10f64.powi(k)).collect()
}

impl Default for SearchSpace {
    fn default() -> Self {
        let mut weight_decay = vec![0.0];
        weight_decay.extend(powers_of_ten(-10, 0));
        Self {
            n_augmented: (0..=100).step_by(10).collect(),
            weight_decay,
            lr: (1e-6, 1e-1),
            alpha: powers_of_ten(0, 10),
            latent_dim: (10..=100).step_by(10).collect(),
            gamma: powers_of_ten(0, 10),
            layers: vec![1, 2, 3],
            filters: vec![32, 64, 128],
            units: (5..=11).map(|k| 1usize << k).collect(),
            kernel_size: vec![3, 5, 7],
            clip: powers_of_ten(-10, 0),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SearchError> {
        let empty = [
            self.n_augmented.is_empty(),
            self.weight_decay.is_empty(),
            self.alpha.is_empty(),
            self.latent_dim.is_empty(),
            self.gamma.is_empty(),
            self.layers.is_empty(),
            self.filters.is_empty(),
            self.units.is_empty(),
            self.kernel_size.is_empty(),
            self.clip.is_empty(),
        ];
        if empty.iter().any(|&e| e) {
            return Err(SearchError::Options("every search dimension needs at least one value".into()));
        }
        if !(self.lr.0 > 0.0 && self.lr.0 <= self.lr.1) {
            return Err(SearchError::Options(format!("learning-rate range {:?} is not positive", self.lr)));
        }
        Ok(())
    }
}

/// One draw from a [`SearchSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledConfig {
    pub n_augmented: usize,
    pub weight_decay: f64,
    pub lr: f64,
    pub alpha: f64,
    pub latent_dim: usize,
    pub gamma: f64,
    pub layers: usize,
    pub filters: usize,
    pub units: usize,
    pub kernel_size: usize,
    pub clip: f64,
}

fn pick<T: Copy, R: Rng>(values: &[T], rng: &mut R) -> T {
    *values.choose(rng).expect("validated non-empty")
}

/// Draws every hyperparameter independently.
pub fn sample_config<R: Rng>(space: &SearchSpace, rng: &mut R) -> SampledConfig {
    let (lo, hi) = (space.lr.0.log10(), space.lr.1.log10());
    let lr = if lo == hi {
        space.lr.0
    } else {
        10f64.powf(Uniform::new_inclusive(lo, hi).sample(rng)).clamp(space.lr.0, space.lr.1)
    };
    SampledConfig {
        n_augmented: pick(&space.n_augmented, rng),
        weight_decay: pick(&space.weight_decay, rng),
        lr,
        alpha: pick(&space.alpha, rng),
        latent_dim: pick(&space.latent_dim, rng),
        gamma: pick(&space.gamma, rng),
        layers: pick(&space.layers, rng),
        filters: pick(&space.filters, rng),
        units: pick(&space.units, rng),
        kernel_size: pick(&space.kernel_size, rng),
        clip: pick(&space.clip, rng),
    }
}

/// Source of trial configurations. Random search ignores the history; a
/// model-based sampler would use it.
pub trait Sampler: Send {
    fn propose(&mut self, trial: usize, finished: &[TrialResult]) -> SampledConfig;
}

/// Independent draws; trial `i` uses its own RNG stream so proposals do not
/// depend on evaluation order.
pub struct RandomSampler {
    pub space: SearchSpace,
    pub seed: u64,
}

impl Sampler for RandomSampler {
    fn propose(&mut self, trial: usize, _finished: &[TrialResult]) -> SampledConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        sample_config(&self.space, &mut rng)
    }
}

/// Settings shared by every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub n_trials: usize,
    pub seed: u64,
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs after which the weaker half of the live trials is stopped.
    /// Empty disables pruning.
    pub prune_at: Vec<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { n_trials: 60, seed: 0, variant: Variant::Conv, epochs: 100, batch_size: 512, prune_at: vec![] }
    }
}

/// The checkpoints of the successive-halving pruner.
pub const HALVING_EPOCHS: [usize; 3] = [10, 25, 50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum TrialStatus {
    Completed,
    Pruned { after_epoch: usize },
    Failed { message: String },
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialStatus::Completed => f.write_str("completed"),
            TrialStatus::Pruned { after_epoch } => write!(f, "pruned after epoch {after_epoch}"),
            TrialStatus::Failed { message } => write!(f, "failed: {message}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub config: SampledConfig,
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub status: TrialStatus,
    /// Best validation accuracy seen so far; absent when no epoch finished.
    pub val_accuracy: Option<f64>,
    pub history: Vec<EpochRecord>,
}

pub struct SearchOutcome {
    /// Completed trials by validation accuracy, then pruned ones, then
    /// failures; ties keep trial order.
    pub ranked: Vec<TrialResult>,
    pub best_params: Parameters,
    /// Test metrics of the selected trial, computed once.
    pub best_test: Option<EvalReport>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialResult {
        &self.ranked[0]
    }

    /// One JSON object per trial, in trial order.
    pub fn log_lines(&self) -> String {
        let mut by_trial: Vec<&TrialResult> = self.ranked.iter().collect();
        by_trial.sort_by_key(|t| t.trial);
        by_trial
            .iter()
            .map(|t| {
                let record = serde_json::json!({
                    "trial": t.trial,
                    "seed": t.seed,
                    "config": t.config,
                    "status": t.status,
                    "val_accuracy": t.val_accuracy,
                    "epochs_run": t.history.len(),
                });
                format!("{record}\n")
            })
            .collect()
    }
}

/// Builds the model and training configs of one trial.
pub fn trial_configs(
    bundle: &DatasetBundle,
    sampled: &SampledConfig,
    options: &SearchOptions,
    seed: u64,
) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        channels: bundle.channels,
        length: bundle.length,
        n_known_classes: bundle.n_classes(),
        n_augmented_classes: sampled.n_augmented,
        latent_dim: sampled.latent_dim,
        layers: sampled.layers,
        filters: sampled.filters,
        units: sampled.units,
        kernel_size: sampled.kernel_size,
        variant: options.variant,
    };
    let train = TrainConfig {
        lr: sampled.lr,
        epochs: options.epochs,
        batch_size: options.batch_size,
        alpha: sampled.alpha,
        gamma: sampled.gamma,
        weight_decay: sampled.weight_decay,
        clip: sampled.clip,
        seed,
        ..TrainConfig::default()
    };
    (model, train)
}

struct Live {
    result: TrialResult,
    trainer: Option<Trainer>,
    best: Option<Parameters>,
}

impl Live {
    fn advance_to(&mut self, epoch: usize) {
        let Some(trainer) = self.trainer.as_mut() else { return };
        while trainer.state().epoch < epoch && !trainer.is_done() {
            if let Err(e) = trainer.run_epoch() {
                self.result.history = trainer.history().to_vec();
                self.result.status = TrialStatus::Failed { message: e.to_string() };
                self.trainer = None;
                return;
            }
        }
        self.result.history = trainer.history().to_vec();
        let best = trainer.state().best_val_accuracy;
        self.result.val_accuracy = best.is_finite().then_some(best);
    }

    fn is_running(&self) -> bool {
        self.trainer.is_some()
    }
}

fn val_key(t: &TrialResult) -> f64 {
    t.val_accuracy.unwrap_or(f64::NEG_INFINITY)
}

/// Orders trials: completed by validation accuracy, then pruned by
/// validation accuracy, then failed; equal keys keep trial order.
pub fn rank(mut trials: Vec<TrialResult>) -> Vec<TrialResult> {
    let group = |t: &TrialResult| match t.status {
        TrialStatus::Completed => 0,
        TrialStatus::Pruned { .. } => 1,
        TrialStatus::Failed { .. } => 2,
    };
    trials.sort_by(|a, b| group(a).cmp(&group(b)).then(val_key(b).total_cmp(&val_key(a))).then(a.trial.cmp(&b.trial)));
    trials
}

/// Runs `options.n_trials` trials and selects the best by validation
/// accuracy. The regime (and so the data split) is shared by all trials;
/// each trial overrides only the number of augmented slots.
pub fn run_search(
    bundle: &DatasetBundle,
    regime: &RegimeSpec,
    sampler: &mut dyn Sampler,
    options: &SearchOptions,
    test: Option<&[SeriesSample]>,
) -> Result<SearchOutcome, SearchError> {
    if options.n_trials == 0 {
        return Err(SearchError::Options("n_trials must be at least 1".into()));
    }
    let mut live: Vec<Live> = Vec::with_capacity(options.n_trials);
    let mut finished: Vec<TrialResult> = vec![];
    for trial in 0..options.n_trials {
        let config = sampler.propose(trial, &finished);
        let seed = options.seed.wrapping_add(trial as u64);
        let (model, train) = trial_configs(bundle, &config, options, seed);
        let spec = RegimeSpec { n_augmented: config.n_augmented, ..regime.clone() };
        let mut result = TrialResult {
            trial,
            seed,
            config,
            model: Some(model.clone()),
            train: train.clone(),
            status: TrialStatus::Completed,
            val_accuracy: None,
            history: vec![],
        };
        let trainer = match Trainer::new(bundle, &spec, &model, &train) {
            Ok(t) => Some(t),
            Err(e) => {
                result.status = TrialStatus::Failed { message: e.to_string() };
                finished.push(result.clone());
                None
            }
        };
        live.push(Live { result, trainer, best: None });
    }

    let mut checkpoints: Vec<usize> = options.prune_at.iter().copied().filter(|&e| e < options.epochs).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    for &stop in &checkpoints {
        live.par_iter_mut().for_each(|t| t.advance_to(stop));
        let mut running: Vec<usize> = (0..live.len()).filter(|&i| live[i].is_running()).collect();
        running.sort_by(|&a, &b| val_key(&live[b].result).total_cmp(&val_key(&live[a].result)).then(a.cmp(&b)));
        let keep = running.len().div_ceil(2);
        for &i in &running[keep..] {
            live[i].trainer = None;
            live[i].result.status = TrialStatus::Pruned { after_epoch: stop };
        }
    }
    live.par_iter_mut().for_each(|t| {
        t.advance_to(options.epochs);
        if let Some(trainer) = t.trainer.take() {
            t.best = Some(trainer.finish().best_params);
        }
    });

    let failures: Vec<String> = live
        .iter()
        .filter_map(|t| match &t.result.status {
            TrialStatus::Failed { message } => Some(format!("trial {}: {message}", t.result.trial)),
            _ => None,
        })
        .collect();
    let mut best_params: Vec<Option<Parameters>> = live.iter_mut().map(|t| t.best.take()).collect();
    let ranked = rank(live.into_iter().map(|t| t.result).collect());
    if ranked[0].status != TrialStatus::Completed {
        return Err(SearchError::NoSuccessfulTrial(failures));
    }
    let winner = ranked[0].trial;
    let params = best_params[winner].take().expect("completed trial keeps its checkpoint");
    let best_test = match test {
        Some(samples) => {
            let spec = RegimeSpec { n_augmented: ranked[0].config.n_augmented, ..regime.clone() };
            Some(evaluate(&params, samples, &bundle.class_names, &spec.anchored_classes(bundle.n_classes()))?)
        }
        None => None,
    };
    Ok(SearchOutcome { ranked, best_params: params, best_test })
}
