//! The Gaussian-mixture generative model and its inference networks.
//!
//! Four pieces share one parameter set:
//!
//! * a feature trunk (strided convolutions or dense layers) feeding the
//!   classifier `q(y|x)`, a softmax over every class slot;
//! * an encoder `q(z|x,y)` that reads the trunk features concatenated with a
//!   one-hot class vector and emits a diagonal Gaussian;
//! * a per-class prior table `p(z|y)` (mean and log-variance per slot);
//! * a decoder `p(x|z)` that mirrors the trunk back to `(channels, length)`.
//!
//! Class information reaches the decoder only through the prior, so drawing
//! from a class amounts to sampling its prior row and decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{conv_output_len, Array, DiffError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("class index {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("input shape {got:?} does not match model input ({channels}, {length})")]
    InputShape { channels: usize, length: usize, got: Vec<usize> },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParameterShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Conv,
    Mlp,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(Variant::Conv),
            "mlp" => Ok(Variant::Mlp),
            other => Err(format!("unknown variant {other:?} (expected conv or mlp)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Conv => "conv",
            Variant::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub length: usize,
    pub n_known_classes: usize,
    pub n_augmented_classes: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub filters: usize,
    pub units: usize,
    pub kernel_size: usize,
    pub variant: Variant,
}

impl ModelConfig {
    /// Total class slots: known classes plus augmented ones.
    pub fn n_classes(&self) -> usize {
        self.n_known_classes + self.n_augmented_classes
    }

    pub fn input_size(&self) -> usize {
        self.channels * self.length
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.channels == 0 || self.length == 0 {
            return fail(format!("input must be non-empty, got ({}, {})", self.channels, self.length));
        }
        if self.n_classes() == 0 {
            return fail("at least one class slot is required".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be at least 1".into());
        }
        if !(1..=3).contains(&self.layers) {
            return fail(format!("layers must be 1..=3, got {}", self.layers));
        }
        match self.variant {
            Variant::Conv => {
                if self.filters == 0 {
                    return fail("filters must be positive".into());
                }
                if self.kernel_size.is_multiple_of(2) || !(3..=7).contains(&self.kernel_size) {
                    return fail(format!("kernel_size must be 3, 5 or 7, got {}", self.kernel_size));
                }
            }
            Variant::Mlp => {
                if self.units == 0 {
                    return fail("units must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Series lengths before the trunk and after each strided block.
    pub fn length_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.length];
        if self.variant == Variant::Conv {
            for _ in 0..self.layers {
                let last = *chain.last().unwrap();
                chain.push(conv_output_len(last, self.kernel_size, 2, self.kernel_size / 2));
            }
        }
        chain
    }

    /// Width of the flattened trunk output.
    pub fn feature_dim(&self) -> usize {
        match self.variant {
            Variant::Conv => self.filters * self.length_chain().last().unwrap(),
            Variant::Mlp => self.units,
        }
    }

    pub fn parameter_layout(&self) -> Vec<ParamSpec> {
        plan(self).0
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He-normal, `std = sqrt(2 / fan_in)`; used ahead of a relu.
    He {
        fan_in: usize,
    },
    /// `N(0, 0.02²)`, for linear heads.
    Small,
    Zeros,
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Whether decoupled weight decay applies. Prior-table entries are exempt.
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
struct Slots {
    trunk: Vec<(usize, usize)>,
    classifier: (usize, usize),
    enc_mean: (usize, usize),
    enc_logvar: (usize, usize),
    dec_input: Option<(usize, usize)>,
    dec_blocks: Vec<(usize, usize)>,
    dec_output: (usize, usize),
    prior_mean: usize,
    prior_logvar: usize,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init, decay: bool) -> usize {
        self.specs.push(ParamSpec { name, shape, init, decay });
        self.specs.len() - 1
    }

    /// A weight tensor followed by a zero-initialized bias of width `bias`.
    fn layer(&mut self, prefix: &str, weight: Vec<usize>, init: Init, bias: usize) -> (usize, usize) {
        let w = self.push(format!("{prefix}.weight"), weight, init, true);
        let b = self.push(format!("{prefix}.bias"), vec![bias], Init::Zeros, true);
        (w, b)
    }
}

fn plan(cfg: &ModelConfig) -> (Vec<ParamSpec>, Slots) {
    let mut lb = LayoutBuilder::default();
    let mut slots = Slots::default();
    let c = cfg.n_classes();
    let d = cfg.latent_dim;
    let k = cfg.kernel_size;
    let features = cfg.feature_dim();

    match cfg.variant {
        Variant::Conv => {
            let mut in_ch = cfg.channels;
            for i in 0..cfg.layers {
                let init = Init::He { fan_in: in_ch * k };
                slots.trunk.push(lb.layer(&format!("trunk.{i}"), vec![cfg.filters, in_ch, k], init, cfg.filters));
                in_ch = cfg.filters;
            }
        }
        Variant::Mlp => {
            let mut in_dim = cfg.input_size();
            for i in 0..cfg.layers {
                let init = Init::He { fan_in: in_dim };
                slots.trunk.push(lb.layer(&format!("trunk.{i}"), vec![in_dim, cfg.units], init, cfg.units));
                in_dim = cfg.units;
            }
        }
    }
    slots.classifier = lb.layer("classifier", vec![features, c], Init::Small, c);
    slots.enc_mean = lb.layer("encoder.mean", vec![features + c, d], Init::Small, d);
    slots.enc_logvar = lb.layer("encoder.logvar", vec![features + c, d], Init::Small, d);

    match cfg.variant {
        Variant::Conv => {
            slots.dec_input = Some(lb.layer("decoder.input", vec![d, features], Init::He { fan_in: d }, features));
            for i in 0..cfg.layers {
                let init = Init::He { fan_in: cfg.filters * k };
                slots.dec_blocks.push(lb.layer(
                    &format!("decoder.{i}"),
                    vec![cfg.filters, cfg.filters, k],
                    init,
                    cfg.filters,
                ));
            }
            slots.dec_output =
                lb.layer("decoder.output", vec![cfg.channels, cfg.filters, 1], Init::Small, cfg.channels);
        }
        Variant::Mlp => {
            let mut in_dim = d;
            for i in 0..cfg.layers {
                let init = Init::He { fan_in: in_dim };
                slots.dec_blocks.push(lb.layer(&format!("decoder.{i}"), vec![in_dim, cfg.units], init, cfg.units));
                in_dim = cfg.units;
            }
            slots.dec_output =
                lb.layer("decoder.output", vec![cfg.units, cfg.input_size()], Init::Small, cfg.input_size());
        }
    }
    slots.prior_mean = lb.push("prior.mean".into(), vec![c, d], Init::StandardNormal, false);
    slots.prior_logvar = lb.push("prior.logvar".into(), vec![c, d], Init::Zeros, false);
    (lb.specs, slots)
}

/// All trainable weights for one [`ModelConfig`], in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    tensors: Vec<Array>,
}

impl Parameters {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.parameter_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let std = match spec.init {
                    Init::He { fan_in } => (2.0 / fan_in as f64).sqrt(),
                    Init::Small => 0.02,
                    Init::StandardNormal => 1.0,
                    Init::Zeros => return Array::zeros(&spec.shape),
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Array::new(spec.shape.clone(), data).expect("layout shape")
            })
            .collect();
        Ok(Self { config, specs, tensors })
    }

    /// Rebuild from stored tensors, checking every shape against the layout.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Array>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.parameter_layout();
        if specs.len() != tensors.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(ModelError::ParameterShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, specs, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Array] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Array::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Array::is_finite)
    }

    pub fn tensor(&self, name: &str) -> Option<&Array> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.specs.iter().position(|s| s.name == name).map(move |i| &mut self.tensors[i])
    }

    /// `Σθ²` over the parameters that receive weight decay.
    pub fn decayed_sum_of_squares(&self) -> f64 {
        self.specs.iter().zip(&self.tensors).filter(|(s, _)| s.decay).map(|(_, t)| t.sum_of_squares()).sum()
    }

    fn check_class(&self, class: usize) -> Result<(), ModelError> {
        let n_classes = self.config.n_classes();
        if class < n_classes {
            Ok(())
        } else {
            Err(ModelError::ClassOutOfRange { class, n_classes })
        }
    }

    /// Row `class` of the prior table as `(mean, logvar)`.
    pub fn prior(&self, class: usize) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.check_class(class)?;
        let slots = plan(&self.config).1;
        let mean = self.tensors[slots.prior_mean].row(class).to_vec();
        let logvar = self.tensors[slots.prior_logvar].row(class).to_vec();
        Ok((mean, logvar))
    }

    /// Class-probability vector `q(y|x)` for one `(channels, length)` series.
    pub fn classify(&self, x: &Array) -> Result<Vec<f64>, ModelError> {
        Ok(self.classify_batch(&self.as_batch(x)?)?.row(0).to_vec())
    }

    /// `q(y|x)` for a `(batch, channels, length)` array, one row per series.
    pub fn classify_batch(&self, x: &Array) -> Result<Array, ModelError> {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, self, false);
        let xv = net.input(&mut tape, x.clone())?;
        let feats = net.features(&mut tape, xv)?;
        let logits = net.logits(&mut tape, feats)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(tape.value(probs).clone())
    }

    /// Posterior mean and log-variance of `q(z|x,y)` for one series.
    pub fn encode(&self, x: &Array, class: usize) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let (m, v) = self.encode_batch(&self.as_batch(x)?, &[class])?;
        Ok((m.row(0).to_vec(), v.row(0).to_vec()))
    }

    /// Batched `q(z|x,y)`; `classes[i]` conditions row `i`.
    pub fn encode_batch(&self, x: &Array, classes: &[usize]) -> Result<(Array, Array), ModelError> {
        for &c in classes {
            self.check_class(c)?;
        }
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, self, false);
        let xv = net.input(&mut tape, x.clone())?;
        if classes.len() != tape.shape(xv)[0] {
            return Err(ModelError::InvalidConfig(format!(
                "{} class labels for a batch of {}",
                classes.len(),
                tape.shape(xv)[0]
            )));
        }
        let feats = net.features(&mut tape, xv)?;
        let onehot = tape.constant(one_hot(classes, self.config.n_classes()));
        let (m, v) = net.encode(&mut tape, feats, onehot)?;
        Ok((tape.value(m).clone(), tape.value(v).clone()))
    }

    /// Decode a latent vector to a `(channels, length)` series.
    pub fn decode(&self, z: &[f64]) -> Result<Array, ModelError> {
        let out = self.decode_batch(&Array::new(vec![1, z.len()], z.to_vec())?)?;
        Ok(out.reshaped(&[self.config.channels, self.config.length])?)
    }

    /// Decode `(batch, latent_dim)` to `(batch, channels, length)`.
    pub fn decode_batch(&self, z: &Array) -> Result<Array, ModelError> {
        if z.ndim() != 2 || z.shape()[1] != self.config.latent_dim {
            return Err(ModelError::InvalidConfig(format!(
                "latent batch must be (n, {}), got {:?}",
                self.config.latent_dim,
                z.shape()
            )));
        }
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, self, false);
        let zv = tape.constant(z.clone());
        let out = net.decode(&mut tape, zv)?;
        Ok(tape.value(out).clone())
    }

    fn as_batch(&self, x: &Array) -> Result<Array, ModelError> {
        let (c, l) = (self.config.channels, self.config.length);
        if x.shape() != [c, l] {
            return Err(ModelError::InputShape { channels: c, length: l, got: x.shape().to_vec() });
        }
        Ok(x.reshaped(&[1, c, l])?)
    }
}

/// `z = mean + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize(mean: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    assert!(mean.len() == logvar.len() && mean.len() == noise.len(), "reparameterize: length mismatch");
    mean.iter().zip(logvar).zip(noise).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
}

/// Rows of one-hot indicators, `(labels.len(), n_classes)`.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Array {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &c) in labels.iter().enumerate() {
        data[i * n_classes + c] = 1.0;
    }
    Array::from_parts(vec![labels.len(), n_classes], data)
}

/// The model's parameters bound to a [`Tape`], with the building blocks of
/// the forward pass.
pub struct Network<'p> {
    config: &'p ModelConfig,
    slots: Slots,
    vars: Vec<Var>,
}

impl<'p> Network<'p> {
    /// Place every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(tape: &mut Tape, params: &'p Parameters, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self { config: &params.config, slots: plan(&params.config).1, vars }
    }

    /// Tape handles in layout order, for reading gradients back.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    fn pair(&self, slot: (usize, usize)) -> (Var, Var) {
        (self.vars[slot.0], self.vars[slot.1])
    }

    /// Record a `(batch, channels, length)` input as a constant.
    pub fn input(&self, tape: &mut Tape, x: Array) -> Result<Var, ModelError> {
        let (c, l) = (self.config.channels, self.config.length);
        if x.ndim() != 3 || x.shape()[1] != c || x.shape()[2] != l {
            return Err(ModelError::InputShape { channels: c, length: l, got: x.shape().to_vec() });
        }
        Ok(tape.constant(x))
    }

    fn dense(&self, tape: &mut Tape, x: Var, slot: (usize, usize)) -> Result<Var, DiffError> {
        let (w, b) = self.pair(slot);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }

    /// Shared trunk: `(batch, channels, length)` → `(batch, feature_dim)`.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let n = tape.shape(x)[0];
        let feats = match self.config.variant {
            Variant::Conv => {
                let pad = self.config.kernel_size / 2;
                let mut h = x;
                for &slot in &self.slots.trunk {
                    let (w, b) = self.pair(slot);
                    let conv = tape.conv1d(h, w, Some(b), 2, pad)?;
                    h = tape.relu(conv)?;
                }
                tape.reshape(h, &[n, self.config.feature_dim()])?
            }
            Variant::Mlp => {
                let mut h = tape.reshape(x, &[n, self.config.input_size()])?;
                for &slot in &self.slots.trunk {
                    let pre = self.dense(tape, h, slot)?;
                    h = tape.relu(pre)?;
                }
                h
            }
        };
        Ok(feats)
    }

    /// Unnormalized class scores, `(batch, n_classes)`.
    pub fn logits(&self, tape: &mut Tape, feats: Var) -> Result<Var, ModelError> {
        Ok(self.dense(tape, feats, self.slots.classifier)?)
    }

    /// `q(z|x,y)` from trunk features and a `(batch, n_classes)` one-hot.
    pub fn encode(&self, tape: &mut Tape, feats: Var, onehot: Var) -> Result<(Var, Var), ModelError> {
        let joined = tape.concat(&[feats, onehot], 1)?;
        let mean = self.dense(tape, joined, self.slots.enc_mean)?;
        let logvar = self.dense(tape, joined, self.slots.enc_logvar)?;
        Ok((mean, logvar))
    }

    pub fn reparameterize(&self, tape: &mut Tape, mean: Var, logvar: Var, noise: Var) -> Result<Var, ModelError> {
        let half = tape.scale(logvar, 0.5)?;
        let std = tape.exp(half)?;
        let spread = tape.mul(std, noise)?;
        Ok(tape.add(mean, spread)?)
    }

    /// `(batch, latent_dim)` → `(batch, channels, length)`.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var, ModelError> {
        let n = tape.shape(z)[0];
        let cfg = self.config;
        let out = match cfg.variant {
            Variant::Conv => {
                let chain = cfg.length_chain();
                let pad = cfg.kernel_size / 2;
                let slot = self.slots.dec_input.expect("conv decoder input layer");
                let pre = self.dense(tape, z, slot)?;
                let act = tape.relu(pre)?;
                let mut h = tape.reshape(act, &[n, cfg.filters, *chain.last().unwrap()])?;
                for (i, &slot) in self.slots.dec_blocks.iter().enumerate() {
                    let (len_in, len_out) = (chain[cfg.layers - i], chain[cfg.layers - i - 1]);
                    let output_padding = len_out + 1 - 2 * len_in;
                    let (w, b) = self.pair(slot);
                    let up = tape.conv_transpose1d(h, w, Some(b), 2, pad, output_padding)?;
                    h = tape.relu(up)?;
                }
                let (w, b) = self.pair(self.slots.dec_output);
                tape.conv1d(h, w, Some(b), 1, 0)?
            }
            Variant::Mlp => {
                let mut h = z;
                for &slot in &self.slots.dec_blocks {
                    let pre = self.dense(tape, h, slot)?;
                    h = tape.relu(pre)?;
                }
                let flat = self.dense(tape, h, self.slots.dec_output)?;
                tape.reshape(flat, &[n, cfg.channels, cfg.length])?
            }
        };
        Ok(out)
    }

    /// Prior rows selected by a `(batch, n_classes)` one-hot, as `(mean, logvar)`.
    pub fn prior_rows(&self, tape: &mut Tape, onehot: Var) -> Result<(Var, Var), ModelError> {
        let mean = tape.matmul(onehot, self.vars[self.slots.prior_mean])?;
        let logvar = tape.matmul(onehot, self.vars[self.slots.prior_logvar])?;
        Ok((mean, logvar))
    }
}
