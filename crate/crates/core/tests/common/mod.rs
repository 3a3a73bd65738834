#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use susl_core::diff::{Array, Tape};
use susl_core::model::{ModelConfig, Network, Parameters, Variant};
use susl_core::objective::{record_total_loss, BatchNoise, LabeledBatch, LossWeights};

/// C = 3 (two known, one augmented), latent 4, one channel of length 8.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 1,
        length: 8,
        n_known_classes: 2,
        n_augmented_classes: 1,
        latent_dim: 4,
        layers: 1,
        filters: 3,
        units: 6,
        kernel_size: 3,
        variant,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, channels: usize, length: usize) -> Array {
    let data = (0..n * channels * length).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Array::new(vec![n, channels, length], data).unwrap()
}

pub struct Problem {
    pub params: Parameters,
    pub xl: Array,
    pub yl: Vec<usize>,
    pub xu: Array,
    pub weights: LossWeights,
    pub noise: BatchNoise,
}

impl Problem {
    pub fn new(variant: Variant, seed: u64) -> Self {
        let cfg = tiny_config(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::init(cfg.clone(), seed).unwrap();
        // Perturb so no tensor sits at an exact zero or at its init symmetry.
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let xl = random_batch(&mut rng, 3, cfg.channels, cfg.length);
        let yl = vec![0, 1, 1];
        let xu = random_batch(&mut rng, 2, cfg.channels, cfg.length);
        let weights = LossWeights { alpha: 0.7, gamma: 1.3, lambda: 0.4, weight_decay: 0.0, clip: 1.0 };
        let noise = BatchNoise::sample(&mut rng, 3, 2, cfg.n_classes(), cfg.latent_dim);
        Self { params, xl, yl, xu, weights, noise }
    }

    pub fn loss(&self, params: &Parameters) -> f64 {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, params, false);
        let g = record_total_loss(
            &net,
            params,
            &mut tape,
            Some(LabeledBatch { x: &self.xl, y: &self.yl }),
            Some(&self.xu),
            &self.weights,
            &self.noise,
        )
        .unwrap();
        tape.value(g.loss).item()
    }

    pub fn analytic_gradient(&self) -> Vec<Array> {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, &self.params, true);
        let g = record_total_loss(
            &net,
            &self.params,
            &mut tape,
            Some(LabeledBatch { x: &self.xl, y: &self.yl }),
            Some(&self.xu),
            &self.weights,
            &self.noise,
        )
        .unwrap();
        let grads = tape.backward(g.loss).unwrap();
        net.vars().iter().zip(self.params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect()
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step `eps` over every parameter entry. The
    /// denominator is floored at 1e-3 so exact zeros do not divide by zero.
    pub fn max_gradient_error(&self, eps: f64) -> f64 {
        let analytic = self.analytic_gradient();
        let mut worst: f64 = 0.0;
        for (ti, t) in self.params.tensors().iter().enumerate() {
            for j in 0..t.len() {
                let mut plus = self.params.clone();
                plus.tensors_mut()[ti].data_mut()[j] += eps;
                let mut minus = self.params.clone();
                minus.tensors_mut()[ti].data_mut()[j] -= eps;
                let numeric = (self.loss(&plus) - self.loss(&minus)) / (2.0 * eps);
                let a = analytic[ti].data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

/// Monte-Carlo estimate of KL(q ‖ p) for diagonal Gaussians: the mean of
/// log q(z) − log p(z) over draws z ~ q.
pub fn kl_monte_carlo(rng: &mut ChaCha8Rng, mq: &[f64], lvq: &[f64], mp: &[f64], lvp: &[f64], draws: usize) -> f64 {
    use rand_distr::StandardNormal;
    let log_density =
        |z: f64, m: f64, lv: f64| -0.5 * ((z - m).powi(2) / lv.exp() + lv + (2.0 * std::f64::consts::PI).ln());
    let mut total = 0.0;
    for _ in 0..draws {
        for i in 0..mq.len() {
            let e: f64 = rng.sample(StandardNormal);
            let z = mq[i] + (0.5 * lvq[i]).exp() * e;
            total += log_density(z, mq[i], lvq[i]) - log_density(z, mp[i], lvp[i]);
        }
    }
    total / draws as f64
}

pub mod fixtures;
