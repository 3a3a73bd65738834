//! The experiment spec: one TOML document, layered as
//! defaults < checkpoint metadata < `--config` file < environment < flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use susl_core::datasets::{
    ingest_har_dir, ingest_mitbih_csv, ingest_ucr_tsv, read_bundle, znormalize, DatasetBundle, RegimeSpec,
};
use susl_core::model::{ModelConfig, Variant};
use susl_core::trainer::TrainConfig;

use crate::error::CliError;

pub const OUTPUT_DIR_ENV: &str = "SUSL_OUTPUT_DIR";
pub const THREADS_ENV: &str = "SUSL_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    UcrTsv,
    MitbihCsv,
    HarDir,
    Bundle,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ucr-tsv" => Ok(Format::UcrTsv),
            "mitbih-csv" => Ok(Format::MitbihCsv),
            "har-dir" => Ok(Format::HarDir),
            "bundle" => Ok(Format::Bundle),
            other => Err(format!("unknown format {other:?} (expected ucr-tsv, mitbih-csv, har-dir or bundle)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::UcrTsv => "ucr-tsv",
            Format::MitbihCsv => "mitbih-csv",
            Format::HarDir => "har-dir",
            Format::Bundle => "bundle",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Seeds parameter init, batching and sampling noise.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub regime: RegimeSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub search: SearchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// A UCR directory, a directory holding `mitbih_train.csv` and
    /// `mitbih_test.csv`, the HAR root, or a bundle directory.
    pub path: PathBuf,
    pub format: Format,
    /// Per-sample, per-channel z-normalization at load time.
    pub znormalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSection {
    pub labeled_fraction: f64,
    /// Class names, or zero-based indices, that never receive labels.
    pub hidden_classes: Vec<String>,
    pub n_augmented: usize,
    /// Seeds the validation/labeled/unlabeled split only.
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub latent_dim: usize,
    pub layers: usize,
    pub filters: usize,
    pub units: usize,
    pub kernel_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
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
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub n_trials: usize,
    /// Successive halving at epochs 10, 25 and 50.
    pub prune: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("susl-out"),
            dataset: DatasetSection::default(),
            regime: RegimeSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            search: SearchSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { path: PathBuf::new(), format: Format::Bundle, znormalize: true }
    }
}

impl Default for RegimeSection {
    fn default() -> Self {
        Self { labeled_fraction: 0.2, hidden_classes: vec![], n_augmented: 0, split_seed: 0 }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { variant: Variant::Conv, latent_dim: 16, layers: 2, filters: 32, units: 128, kernel_size: 5 }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            alpha: t.alpha,
            gamma: t.gamma,
            weight_decay: t.weight_decay,
            clip: t.clip,
            lambda_step: t.lambda_step,
            lambda_max: t.lambda_max,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { n_trials: 60, prune: false }
    }
}

/// Flags that override spec values. Every field maps to one spec key.
#[derive(Args, Clone, Debug, Default)]
pub struct SpecArgs {
    /// TOML experiment spec; see `--print-config` for every key.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the fully resolved spec and exit without running.
    #[arg(long)]
    pub print_config: bool,
    /// [dataset.path]
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// [dataset.format]: ucr-tsv, mitbih-csv, har-dir or bundle.
    #[arg(long)]
    pub format: Option<Format>,
    /// [dataset.znormalize]
    #[arg(long, value_name = "BOOL")]
    pub znormalize: Option<bool>,
    /// [regime.labeled_fraction]
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// [regime.hidden_classes], comma-separated names or indices.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub hidden: Option<Vec<String>>,
    /// [regime.n_augmented]
    #[arg(long)]
    pub augmented: Option<usize>,
    /// [regime.split_seed]
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// [model.variant]: conv or mlp.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// [model.latent_dim]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// [model.layers]
    #[arg(long)]
    pub layers: Option<usize>,
    /// [model.filters]
    #[arg(long)]
    pub filters: Option<usize>,
    /// [model.units]
    #[arg(long)]
    pub units: Option<usize>,
    /// [model.kernel_size]
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// [train.lr]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [train.epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [train.batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [train.alpha]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [train.gamma]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// [train.weight_decay]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// [train.clip]
    #[arg(long)]
    pub clip: Option<f64>,
    /// [search.n_trials]
    #[arg(long)]
    pub trials: Option<usize>,
    /// [search.prune]
    #[arg(long, value_name = "BOOL")]
    pub prune: Option<bool>,
    /// [seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [output_dir]; also settable through SUSL_OUTPUT_DIR.
    #[arg(long, short = 'o', value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

macro_rules! set {
    ($($flag:expr => $slot:expr),* $(,)?) => {
        $(if let Some(v) = $flag.clone() { $slot = v; })*
    };
}

impl SpecArgs {
    fn apply(&self, s: &mut ExperimentSpec) {
        set! {
            self.data => s.dataset.path,
            self.format => s.dataset.format,
            self.znormalize => s.dataset.znormalize,
            self.labeled_fraction => s.regime.labeled_fraction,
            self.hidden => s.regime.hidden_classes,
            self.augmented => s.regime.n_augmented,
            self.split_seed => s.regime.split_seed,
            self.variant => s.model.variant,
            self.latent_dim => s.model.latent_dim,
            self.layers => s.model.layers,
            self.filters => s.model.filters,
            self.units => s.model.units,
            self.kernel_size => s.model.kernel_size,
            self.lr => s.train.lr,
            self.epochs => s.train.epochs,
            self.batch_size => s.train.batch_size,
            self.alpha => s.train.alpha,
            self.gamma => s.train.gamma,
            self.weight_decay => s.train.weight_decay,
            self.clip => s.train.clip,
            self.trials => s.search.n_trials,
            self.prune => s.search.prune,
            self.seed => s.seed,
            self.output_dir => s.output_dir,
        }
    }

    /// Layers the experiment-spec sources. `base` is the experiment spec stored in a checkpoint,
    /// when the command starts from one.
    pub fn resolve(&self, base: Option<&str>) -> Result<ExperimentSpec, CliError> {
        let mut merged = toml::Value::try_from(ExperimentSpec::default()).expect("default spec serializes");
        if let Some(text) = base {
            merge(&mut merged, parse_toml(text, "checkpoint metadata")?);
        }
        if let Some(path) = &self.config {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            merge(&mut merged, parse_toml(&text, &path.display().to_string())?);
        }
        let mut spec: ExperimentSpec =
            merged.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            spec.output_dir = PathBuf::from(dir);
        }
        self.apply(&mut spec);
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_toml(text: &str, origin: &str) -> Result<toml::Value, CliError> {
    text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| CliError::Usage(format!("{origin}: {e}")))
}

/// Tables merge key by key; any other value replaces the old one.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let f = self.regime.labeled_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Usage(format!("labeled_fraction {f} is outside [0, 1]")));
        }
        self.train_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.search.n_trials == 0 {
            return Err(CliError::Usage("search.n_trials must be at least 1".into()));
        }
        Ok(())
    }

    /// The document echoed next to every artifact. A header line records
    /// the build that produced it.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("spec serializes");
        format!("# susl {}\n{body}", env!("CARGO_PKG_VERSION"))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            alpha: t.alpha,
            gamma: t.gamma,
            weight_decay: t.weight_decay,
            clip: t.clip,
            lambda_step: t.lambda_step,
            lambda_max: t.lambda_max,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, bundle: &DatasetBundle) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            channels: bundle.channels,
            length: bundle.length,
            n_known_classes: bundle.n_classes(),
            n_augmented_classes: self.regime.n_augmented,
            latent_dim: m.latent_dim,
            layers: m.layers,
            filters: m.filters,
            units: m.units,
            kernel_size: m.kernel_size,
            variant: m.variant,
        }
    }

    /// Resolves hidden class names against the bundle.
    pub fn regime_spec(&self, class_names: &[String]) -> Result<RegimeSpec, CliError> {
        let hidden = self
            .regime
            .hidden_classes
            .iter()
            .map(|h| {
                class_names
                    .iter()
                    .position(|n| n == h)
                    .or_else(|| h.parse::<usize>().ok().filter(|&i| i < class_names.len()))
                    .ok_or_else(|| CliError::Usage(format!("hidden class {h:?} is not one of {class_names:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let spec = RegimeSpec {
            labeled_fraction: self.regime.labeled_fraction,
            hidden_classes: hidden,
            n_augmented: self.regime.n_augmented,
            seed: self.regime.split_seed,
        };
        spec.validate(class_names.len()).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    /// Short regime label: UL, SuSL, SSL or SL.
    pub fn regime_label(&self) -> &'static str {
        let r = &self.regime;
        if r.labeled_fraction == 0.0 {
            "UL"
        } else if !r.hidden_classes.is_empty() {
            "SuSL"
        } else if r.labeled_fraction == 1.0 {
            "SL"
        } else {
            "SSL"
        }
    }
}

/// Reads the dataset named by the experiment spec, z-normalized when asked.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<DatasetBundle, CliError> {
    let path: &Path = &spec.dataset.path;
    if path.as_os_str().is_empty() {
        return Err(CliError::Usage("no dataset path; set dataset.path or pass --data".into()));
    }
    let bundle = match spec.dataset.format {
        Format::UcrTsv => ingest_ucr_tsv(path)?,
        Format::MitbihCsv => ingest_mitbih_csv(&path.join("mitbih_train.csv"), &path.join("mitbih_test.csv"))?,
        Format::HarDir => ingest_har_dir(path)?,
        Format::Bundle => read_bundle(path)?,
    };
    bundle.validate()?;
    Ok(if spec.dataset.znormalize { znormalize(bundle) } else { bundle })
}
