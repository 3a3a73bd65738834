use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use susl_core::datasets::synthetic::{waveforms, WaveformSpec};
use susl_core::datasets::{znormalize, DatasetBundle, RegimeSpec};
use susl_core::hpsearch::{
    rank, run_search, sample_config, RandomSampler, SampledConfig, Sampler, SearchError, SearchOptions, SearchSpace,
    TrialResult, TrialStatus,
};
use susl_core::model::Variant;

#[test]
fn default_space_lists_the_published_grid() {
    let s = SearchSpace::default();
    assert_eq!(s.n_augmented, [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    assert_eq!(s.latent_dim, [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    assert_eq!(s.weight_decay.len(), 12);
    assert_eq!(s.weight_decay[0], 0.0);
    assert_eq!((s.weight_decay[1], s.weight_decay[11]), (1e-10, 1.0));
    assert_eq!((s.alpha[0], s.alpha[10], s.alpha.len()), (1.0, 1e10, 11));
    assert_eq!(s.alpha, s.gamma);
    assert_eq!((s.clip[0], s.clip[10], s.clip.len()), (1e-10, 1.0, 11));
    assert_eq!(s.lr, (1e-6, 1e-1));
    assert_eq!(s.layers, [1, 2, 3]);
    assert_eq!(s.filters, [32, 64, 128]);
    assert_eq!(s.units, [32, 64, 128, 256, 512, 1024, 2048]);
    assert_eq!(s.kernel_size, [3, 5, 7]);
}

fn draws(n: usize) -> Vec<SampledConfig> {
    let space = SearchSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n).map(|_| sample_config(&space, &mut rng)).collect()
}

#[test]
fn samples_cover_every_value_and_nothing_else() {
    let space = SearchSpace::default();
    let d = draws(5000);
    fn seen<T: Ord + Copy>(d: &[SampledConfig], f: impl Fn(&SampledConfig) -> T) -> BTreeSet<T> {
        d.iter().map(f).collect()
    }
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>();
    assert_eq!(seen(&d, |c| c.n_augmented), space.n_augmented.iter().copied().collect());
    assert_eq!(seen(&d, |c| c.latent_dim), space.latent_dim.iter().copied().collect());
    assert_eq!(seen(&d, |c| c.layers), space.layers.iter().copied().collect());
    assert_eq!(seen(&d, |c| c.filters), space.filters.iter().copied().collect());
    assert_eq!(seen(&d, |c| c.units), space.units.iter().copied().collect());
    assert_eq!(seen(&d, |c| c.kernel_size), BTreeSet::from([3, 5, 7]));
    assert_eq!(seen(&d, |c| c.weight_decay.to_bits()), bits(&space.weight_decay));
    assert_eq!(seen(&d, |c| c.alpha.to_bits()), bits(&space.alpha));
    assert_eq!(seen(&d, |c| c.gamma.to_bits()), bits(&space.gamma));
    assert_eq!(seen(&d, |c| c.clip.to_bits()), bits(&space.clip));
    assert!(d.iter().all(|c| (1e-6..=1e-1).contains(&c.lr)));
}

#[test]
fn learning_rate_is_log_uniform() {
    let d = draws(10_000);
    let mut bins = [0usize; 10];
    for c in &d {
        let u = (c.lr.log10() + 6.0) / 5.0;
        bins[((u * 10.0) as usize).min(9)] += 1;
    }
    let expected = d.len() as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi-square {chi2} for bins {bins:?}");
}

#[test]
fn random_proposals_depend_only_on_seed_and_trial() {
    let mut a = RandomSampler { space: SearchSpace::default(), seed: 3 };
    let mut b = RandomSampler { space: SearchSpace::default(), seed: 3 };
    let forward: Vec<_> = (0..5).map(|t| a.propose(t, &[])).collect();
    let backward: Vec<_> = (0..5).rev().map(|t| b.propose(t, &[])).collect();
    assert!(forward.iter().eq(backward.iter().rev()));
    assert_ne!(forward[0], forward[1]);
}

fn result(trial: usize, status: TrialStatus, val: Option<f64>) -> TrialResult {
    let config = draws(1).remove(0);
    TrialResult {
        trial,
        seed: trial as u64,
        config,
        model: None,
        train: Default::default(),
        status,
        val_accuracy: val,
        history: vec![],
    }
}

#[test]
fn ranking_puts_completed_trials_first_by_validation() {
    let pruned = TrialStatus::Pruned { after_epoch: 10 };
    let failed = TrialStatus::Failed { message: "x".into() };
    let ranked = rank(vec![
        result(0, failed, None),
        result(1, pruned.clone(), Some(0.99)),
        result(2, TrialStatus::Completed, Some(0.5)),
        result(3, TrialStatus::Completed, Some(0.7)),
        result(4, TrialStatus::Completed, Some(0.7)),
        result(5, pruned, Some(0.2)),
    ]);
    assert_eq!(ranked.iter().map(|t| t.trial).collect::<Vec<_>>(), [3, 4, 2, 1, 5, 0]);
}

fn bundle() -> DatasetBundle {
    znormalize(waveforms(&WaveformSpec { n_train: 160, n_test: 40, length: 16, ..Default::default() }))
}

fn small_space() -> SearchSpace {
    SearchSpace {
        n_augmented: vec![0, 2],
        weight_decay: vec![0.0, 1e-4],
        lr: (1e-3, 1e-2),
        alpha: vec![1.0, 10.0],
        latent_dim: vec![2, 4],
        gamma: vec![1.0],
        layers: vec![1],
        filters: vec![4],
        units: vec![8],
        kernel_size: vec![3],
        clip: vec![1.0],
    }
}

fn options(n_trials: usize, epochs: usize, prune_at: Vec<usize>) -> SearchOptions {
    SearchOptions { n_trials, seed: 9, variant: Variant::Conv, epochs, batch_size: 32, prune_at }
}

fn regime() -> RegimeSpec {
    RegimeSpec { labeled_fraction: 0.5, hidden_classes: vec![3], n_augmented: 0, seed: 1 }
}

#[test]
fn search_is_reproducible_and_scores_the_test_split_once() {
    let b = bundle();
    let run = |test| {
        let mut sampler = RandomSampler { space: small_space(), seed: 2 };
        run_search(&b, &regime(), &mut sampler, &options(4, 3, vec![]), test).unwrap()
    };
    let with_test = run(Some(b.test.as_slice()));
    let without = run(None);
    assert_eq!(with_test.ranked, without.ranked);
    assert_eq!(with_test.best_params, without.best_params);
    assert!(without.best_test.is_none());
    let report = with_test.best_test.as_ref().unwrap();
    assert_eq!(report.confusion.iter().flatten().sum::<u64>(), b.test.len() as u64);
    assert_eq!(with_test.log_lines().lines().count(), 4);
    assert!(with_test.ranked.iter().all(|t| t.status == TrialStatus::Completed && t.history.len() == 3));
    let best = with_test.best();
    assert!(with_test.ranked.iter().all(|t| t.val_accuracy <= best.val_accuracy));
    assert_eq!(best.model.as_ref().unwrap(), with_test.best_params.config());
}

#[test]
fn pruner_halves_the_field_at_each_checkpoint() {
    let b = bundle();
    let mut sampler = RandomSampler { space: small_space(), seed: 4 };
    let out = run_search(&b, &regime(), &mut sampler, &options(8, 6, vec![2, 4, 50]), None).unwrap();
    let count = |s: &TrialStatus| out.ranked.iter().filter(|t| &t.status == s).count();
    assert_eq!(count(&TrialStatus::Pruned { after_epoch: 2 }), 4);
    assert_eq!(count(&TrialStatus::Pruned { after_epoch: 4 }), 2);
    assert_eq!(count(&TrialStatus::Completed), 2);
    for t in &out.ranked {
        let expected = match t.status {
            TrialStatus::Pruned { after_epoch } => after_epoch,
            _ => 6,
        };
        assert_eq!(t.history.len(), expected, "trial {}", t.trial);
    }
}

struct Broken;

impl Sampler for Broken {
    fn propose(&mut self, _trial: usize, _finished: &[TrialResult]) -> SampledConfig {
        SampledConfig { layers: 0, ..sample_config(&small_space(), &mut ChaCha8Rng::seed_from_u64(0)) }
    }
}

#[test]
fn failed_trials_are_logged_and_reported() {
    let b = bundle();
    let err = run_search(&b, &regime(), &mut Broken, &options(3, 2, vec![]), None).err().unwrap();
    match err {
        SearchError::NoSuccessfulTrial(msgs) => {
            assert_eq!(msgs.len(), 3);
            assert!(msgs[0].starts_with("trial 0:"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn single_trial_is_a_plain_fit() {
    let b = bundle();
    let mut sampler = RandomSampler { space: small_space(), seed: 6 };
    let opts = options(1, 3, vec![]);
    let out = run_search(&b, &regime(), &mut sampler, &opts, Some(&b.test)).unwrap();
    let best = out.best();
    let (model, train) = susl_core::hpsearch::trial_configs(&b, &best.config, &opts, best.seed);
    let spec = RegimeSpec { n_augmented: best.config.n_augmented, ..regime() };
    let r = susl_core::trainer::fit(&b, &spec, &model, &train).unwrap();
    assert_eq!(r.best_params, out.best_params);
    assert_eq!(r.history, best.history);
    let report = susl_core::evaluation::evaluate(&r.best_params, &b.test, &b.class_names, &[0, 1, 2]).unwrap();
    assert_eq!(out.best_test.unwrap().accuracy, report.accuracy);
}

#[test]
fn sampled_configs_are_valid_for_every_dataset_shape() {
    let shapes = [(9, 128, 6), (1, 186, 5), (1, 96, 7)];
    for (channels, length, k) in shapes {
        let b = DatasetBundle {
            name: "shape".into(),
            channels,
            length,
            class_names: (0..k).map(|c| c.to_string()).collect(),
            train: vec![],
            test: vec![],
        };
        for (i, c) in draws(2000).iter().enumerate() {
            let (model, train) = susl_core::hpsearch::trial_configs(&b, c, &SearchOptions::default(), i as u64);
            model.validate().unwrap_or_else(|e| panic!("{c:?}: {e}"));
            train.validate().unwrap_or_else(|e| panic!("{c:?}: {e}"));
        }
    }
}
