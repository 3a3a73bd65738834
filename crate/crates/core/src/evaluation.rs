//! Prediction, cluster-to-class mapping, metrics, baselines, latent export
//! and class-conditional sampling.
//!
//! Slots of classes that received labels are anchored: they always mean
//! their own class. Every other slot is a cluster. Clusters are matched one
//! to one against the classes without an anchored slot by maximum-weight
//! bipartite matching on their co-occurrence counts. A matched cluster earns
//! credit for its class; the others are reported under their majority class
//! but scored as errors.
//!
//! ```
//! use susl_core::evaluation::{map_clusters, ClusterAssignment};
//!
//! // Class 0 is anchored; clusters 1 and 2 compete for class 1.
//! let pred = [0, 1, 1, 2, 2, 2];
//! let truth = [0, 1, 1, 1, 1, 1];
//! let map = map_clusters(&pred, &truth, 2, 3, &[0]);
//! assert_eq!(map[0], ClusterAssignment::Anchored(0));
//! assert_eq!(map[2], ClusterAssignment::Matched(1));
//! assert_eq!(map[1], ClusterAssignment::Surplus(Some(1)));
//! ```

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{class_counts, majority_class, stack, DatasetBundle, SeriesSample};
use crate::diff::Array;
use crate::model::{reparameterize, ModelError, Parameters};

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty confusion matrix")]
    EmptyConfusion,
    #[error("sample {id} has no ground-truth label")]
    MissingLabel { id: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted cluster of one `(channels, length)` series.
pub fn predict(params: &Parameters, x: &Array) -> Result<usize, ModelError> {
    Ok(argmax(&params.classify(x)?))
}

/// Predicted clusters of many samples, evaluated in parallel chunks.
pub fn predict_samples(params: &Parameters, samples: &[SeriesSample]) -> Result<Vec<usize>, ModelError> {
    let cfg = params.config();
    let chunks: Vec<Vec<usize>> = (0..samples.len())
        .collect::<Vec<_>>()
        .par_chunks(EVAL_CHUNK)
        .map(|idx| {
            let probs = params.classify_batch(&stack(samples, idx, cfg.channels, cfg.length))?;
            let c = cfg.n_classes();
            Ok(probs.data().chunks(c).map(argmax).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(chunks.concat())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "class")]
pub enum ClusterAssignment {
    /// A slot whose class received labels.
    Anchored(usize),
    /// A cluster credited for a class by the matching.
    Matched(usize),
    /// An unmatched cluster with the majority class of its members, if any.
    Surplus(Option<usize>),
}

impl ClusterAssignment {
    /// The class this cluster earns credit for.
    pub fn credited(&self) -> Option<usize> {
        match *self {
            ClusterAssignment::Anchored(c) | ClusterAssignment::Matched(c) => Some(c),
            ClusterAssignment::Surplus(_) => None,
        }
    }

    /// The class this cluster is reported under.
    pub fn reported(&self) -> Option<usize> {
        match *self {
            ClusterAssignment::Anchored(c) | ClusterAssignment::Matched(c) => Some(c),
            ClusterAssignment::Surplus(c) => c,
        }
    }
}

/// `counts[t][p]`: samples of true class `t` predicted as slot `p`.
pub fn cooccurrence(predictions: &[usize], truths: &[usize], n_classes: usize, n_slots: usize) -> Vec<Vec<u64>> {
    assert_eq!(predictions.len(), truths.len(), "predictions and truths differ in length");
    let mut counts = vec![vec![0u64; n_slots]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        counts[t][p] += 1;
    }
    counts
}

/// Maps every output slot to a class. `anchored` lists classes whose slot
/// keeps its identity; the remaining slots are matched against the
/// remaining classes.
pub fn map_clusters(
    predictions: &[usize],
    truths: &[usize],
    n_classes: usize,
    n_slots: usize,
    anchored: &[usize],
) -> Vec<ClusterAssignment> {
    let counts = cooccurrence(predictions, truths, n_classes, n_slots);
    let is_anchored = |c: usize| anchored.contains(&c) && c < n_slots;
    let free_slots: Vec<usize> = (0..n_slots).filter(|&s| !is_anchored(s)).collect();
    let free_classes: Vec<usize> = (0..n_classes).filter(|&c| !is_anchored(c)).collect();
    let weights: Vec<Vec<f64>> =
        free_slots.iter().map(|&s| free_classes.iter().map(|&c| counts[c][s] as f64).collect()).collect();
    let matching = max_weight_matching(&weights);

    let mut map: Vec<ClusterAssignment> = (0..n_slots)
        .map(|s| {
            if is_anchored(s) {
                return ClusterAssignment::Anchored(s);
            }
            let column: Vec<f64> = (0..n_classes).map(|c| counts[c][s] as f64).collect();
            let majority = column.iter().any(|&v| v > 0.0).then(|| argmax(&column));
            ClusterAssignment::Surplus(majority)
        })
        .collect();
    for (row, col) in matching.into_iter().enumerate() {
        let (slot, class) = (free_slots[row], col.map(|c| free_classes[c]));
        // A zero-weight pairing carries no evidence; leave such clusters unmatched.
        if let Some(class) = class.filter(|&c| counts[c][slot] > 0) {
            map[slot] = ClusterAssignment::Matched(class);
        }
    }
    map
}

/// Hungarian method on a rectangular weight matrix. Returns, for every row,
/// the column it is assigned to (`None` for rows left over when there are
/// more rows than columns). The total weight of the assignment is maximal.
#[allow(clippy::needless_range_loop)]
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let max = weights.iter().flatten().cloned().fold(0.0, f64::max);
    // Square cost matrix, 1-based as in the classic potential formulation.
    let cost = |i: usize, j: usize| -> f64 {
        if i <= rows && j <= cols {
            max - weights[i - 1][j - 1]
        } else {
            max
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assignment[i - 1] = Some(j - 1);
        }
    }
    assignment
}

/// `confusion[t][c]` counts samples of class `t` credited to class `c`; the
/// extra last column counts samples in uncredited clusters.
pub fn mapped_confusion(
    predictions: &[usize],
    truths: &[usize],
    n_classes: usize,
    map: &[ClusterAssignment],
) -> Vec<Vec<u64>> {
    let mut confusion = vec![vec![0u64; n_classes + 1]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        let col = map[p].credited().unwrap_or(n_classes);
        confusion[t][col] += 1;
    }
    confusion
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Accuracy and F1 summaries of a `K × K` confusion matrix (rows are true
/// classes), optionally with one extra column of uncredited predictions.
/// A class that is never predicted correctly has F1 0.
#[allow(clippy::needless_range_loop)]
pub fn score(confusion: &[Vec<u64>]) -> Result<Scores, EvalError> {
    let k = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    if k == 0 || total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    assert!(confusion.iter().all(|r| r.len() == k || r.len() == k + 1), "confusion rows must have K or K + 1 columns");
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let predicted: u64 = (0..k).map(|t| confusion[t][c]).sum();
        let support: u64 = confusion[c].iter().sum();
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (predicted as f64 + support as f64) };
        macro_sum += f1;
        weighted_sum += f1 * support as f64;
    }
    Ok(Scores {
        accuracy: trace as f64 / total as f64,
        macro_f1: macro_sum / k as f64,
        weighted_f1: weighted_sum / total as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Raw `K × C` counts of true class against predicted slot.
    pub cooccurrence: Vec<Vec<u64>>,
    pub cluster_map: Vec<ClusterAssignment>,
    /// `K × (K + 1)` counts after mapping; the last column is uncredited.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

fn truths(samples: &[SeriesSample]) -> Result<Vec<usize>, EvalError> {
    samples.iter().map(|s| s.label.ok_or(EvalError::MissingLabel { id: s.id })).collect()
}

/// Builds a report from predictions. `anchored` lists the classes whose
/// slots keep their identity (the classes that received labels).
pub fn report_from_predictions(
    predictions: &[usize],
    truths: &[usize],
    class_names: &[String],
    n_slots: usize,
    anchored: &[usize],
) -> Result<EvalReport, EvalError> {
    let k = class_names.len();
    let cluster_map = map_clusters(predictions, truths, k, n_slots, anchored);
    let confusion = mapped_confusion(predictions, truths, k, &cluster_map);
    let scores = score(&confusion)?;
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        cooccurrence: cooccurrence(predictions, truths, k, n_slots),
        cluster_map,
        confusion,
        accuracy: scores.accuracy,
        macro_f1: scores.macro_f1,
        weighted_f1: scores.weighted_f1,
    })
}

/// Predicts, maps and scores `samples`, which must carry ground truth.
pub fn evaluate(
    params: &Parameters,
    samples: &[SeriesSample],
    class_names: &[String],
    anchored: &[usize],
) -> Result<EvalReport, EvalError> {
    let truths = truths(samples)?;
    let predictions = predict_samples(params, samples)?;
    report_from_predictions(&predictions, &truths, class_names, params.config().n_classes(), anchored)
}

/// Test accuracy of always predicting the training majority class.
pub fn majority_baseline(bundle: &DatasetBundle) -> f64 {
    let k = bundle.n_classes();
    let majority = majority_class(&bundle.train, k);
    let test = class_counts(&bundle.test, k);
    let total: usize = test.iter().sum();
    if total == 0 {
        return 0.0;
    }
    test[majority] as f64 / total as f64
}

impl EvalReport {
    /// Fixed-width text: the mapped confusion grid, the cluster map and the
    /// three summary metrics.
    pub fn render_text(&self) -> String {
        let k = self.class_names.len();
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        write!(out, "{:>width$}", "true\\pred").unwrap();
        for name in self.class_names.iter().chain(std::iter::once(&"(none)".to_string())) {
            write!(out, " {name:>width$}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            write!(out, "{:>width$}", self.class_names[t]).unwrap();
            for v in row {
                write!(out, " {v:>width$}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("\ncluster map:\n");
        for (slot, a) in self.cluster_map.iter().enumerate() {
            let name = |c: usize| self.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            let text = match *a {
                ClusterAssignment::Anchored(c) => format!("anchored {}", name(c)),
                ClusterAssignment::Matched(c) => format!("matched {}", name(c)),
                ClusterAssignment::Surplus(Some(c)) => format!("surplus (mostly {})", name(c)),
                ClusterAssignment::Surplus(None) => "surplus (empty)".to_string(),
            };
            writeln!(out, "  {slot:>3} -> {text}").unwrap();
        }
        writeln!(out, "\naccuracy    {:.6}", self.accuracy).unwrap();
        writeln!(out, "macro F1    {:.6}", self.macro_f1).unwrap();
        writeln!(out, "weighted F1 {:.6}", self.weighted_f1).unwrap();
        debug_assert_eq!(self.confusion.len(), k);
        out
    }

    /// Comma-separated mapped confusion with a header of class names.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true");
        for name in &self.class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push_str(",(none)\n");
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&self.class_names[t]);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `metric,value` lines.
    pub fn metrics_csv(&self) -> String {
        format!(
            "metric,value\naccuracy,{}\nmacro_f1,{}\nweighted_f1,{}\n",
            self.accuracy, self.macro_f1, self.weighted_f1
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub id: u64,
    pub truth: Option<usize>,
    pub predicted: usize,
    pub mean: Vec<f64>,
}

/// Posterior means `E[z | x, ŷ]` under each sample's predicted cluster.
/// No sampling is involved, so the export is a pure function of the
/// parameters.
pub fn export_embeddings(params: &Parameters, samples: &[SeriesSample]) -> Result<Vec<Embedding>, ModelError> {
    let cfg = params.config();
    let predicted = predict_samples(params, samples)?;
    let d = cfg.latent_dim;
    let means: Vec<Vec<f64>> = (0..samples.len())
        .collect::<Vec<_>>()
        .par_chunks(EVAL_CHUNK)
        .map(|idx| {
            let x = stack(samples, idx, cfg.channels, cfg.length);
            let classes: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
            let (mean, _) = params.encode_batch(&x, &classes)?;
            Ok(mean.into_data())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(means
        .concat()
        .chunks(d)
        .zip(samples.iter().zip(predicted))
        .map(|(m, (s, p))| Embedding { id: s.id, truth: s.label, predicted: p, mean: m.to_vec() })
        .collect())
}

/// Writes `id,true,pred,z_0,…,z_{d−1}` with `-1` for a missing label.
pub fn write_embeddings(path: &Path, embeddings: &[Embedding], latent_dim: usize) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut header = String::from("id,true,pred");
    for i in 0..latent_dim {
        write!(header, ",z_{i}").unwrap();
    }
    writeln!(out, "{header}").map_err(io)?;
    for e in embeddings {
        let truth = e.truth.map_or(-1, |t| t as i64);
        let mut line = format!("{},{truth},{}", e.id, e.predicted);
        for v in &e.mean {
            write!(line, ",{v}").unwrap();
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Draws `count` series from class slot `class`: `z ~ N(μ_c, diag σ²_c)`
/// from the prior table, decoded to `(count, channels, length)`.
pub fn sample_class(params: &Parameters, class: usize, count: usize, seed: u64) -> Result<Array, ModelError> {
    if count == 0 {
        return Err(ModelError::InvalidConfig("sample count must be positive".into()));
    }
    let cfg = params.config();
    let (mean, logvar) = params.prior(class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.latent_dim;
    let mut z = Vec::with_capacity(count * d);
    for _ in 0..count {
        let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        z.extend(reparameterize(&mean, &logvar, &noise));
    }
    let z = Array::new(vec![count, d], z).map_err(ModelError::Diff)?;
    params.decode_batch(&z)
}
