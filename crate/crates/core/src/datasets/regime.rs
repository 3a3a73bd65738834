//! Learning regimes (which labels are visible) and the per-epoch batch plan.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetBundle, SeriesSample};

/// Share of each class of the training split held out for model selection.
pub const VALIDATION_FRACTION: f64 = 0.2;

const VALIDATION_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// Per visible class share of the pool that keeps its label.
    pub labeled_fraction: f64,
    /// Classes whose labels are all withheld.
    pub hidden_classes: Vec<usize>,
    /// Output slots beyond the known classes.
    pub n_augmented: usize,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn validate(&self, n_classes: usize) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(DataError::InvalidRegime(format!("labeled fraction {} outside [0, 1]", self.labeled_fraction)));
        }
        if let Some(&c) = self.hidden_classes.iter().find(|&&c| c >= n_classes) {
            return Err(DataError::InvalidRegime(format!("hidden class {c} outside 0..{n_classes}")));
        }
        let mut hidden = self.hidden_classes.clone();
        hidden.sort_unstable();
        hidden.dedup();
        if self.labeled_fraction > 0.0 && hidden.len() == n_classes {
            return Err(DataError::InvalidRegime("labels requested but every class is hidden".into()));
        }
        Ok(())
    }

    pub fn is_hidden(&self, class: usize) -> bool {
        self.hidden_classes.contains(&class)
    }

    /// Classes that can receive labels: all classes minus the hidden ones,
    /// or none in the fully unsupervised regime.
    pub fn anchored_classes(&self, n_classes: usize) -> Vec<usize> {
        if self.labeled_fraction == 0.0 {
            return vec![];
        }
        (0..n_classes).filter(|c| !self.is_hidden(*c)).collect()
    }
}

/// The three disjoint parts of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    /// Samples with visible labels.
    pub labeled: Vec<SeriesSample>,
    /// Samples with their labels removed.
    pub unlabeled: Vec<SeriesSample>,
    /// Held-out samples with ground-truth labels.
    pub validation: Vec<SeriesSample>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn by_class(samples: &[SeriesSample], n_classes: usize) -> Result<Vec<Vec<usize>>, DataError> {
    let mut groups = vec![vec![]; n_classes];
    for (i, s) in samples.iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| DataError::InvalidRegime(format!("training sample {} has no ground-truth label", s.id)))?;
        groups[label].push(i);
    }
    Ok(groups)
}

/// Splits the training split into labeled, unlabeled and validation parts.
///
/// Validation takes `round(0.2·n_c)` samples of every class `c`. Of the rest,
/// hidden classes go entirely to the unlabeled part, and each visible class
/// keeps the labels of `floor(f·n_c)` samples (at least one when `f > 0`).
pub fn build_regime(bundle: &DatasetBundle, spec: &RegimeSpec) -> Result<Regime, DataError> {
    spec.validate(bundle.n_classes())?;
    let groups = by_class(&bundle.train, bundle.n_classes())?;
    let mut val_rng = stream_rng(spec.seed, VALIDATION_STREAM);
    let mut label_rng = stream_rng(spec.seed, LABEL_STREAM);
    let mut validation = vec![];
    let mut labeled = vec![];
    let mut unlabeled = vec![];
    for (class, mut members) in groups.into_iter().enumerate() {
        members.shuffle(&mut val_rng);
        let n_val = (VALIDATION_FRACTION * members.len() as f64).round() as usize;
        let mut pool = members.split_off(n_val);
        validation.extend(members);
        let n_labeled = if spec.is_hidden(class) || spec.labeled_fraction == 0.0 || pool.is_empty() {
            0
        } else {
            ((spec.labeled_fraction * pool.len() as f64).floor() as usize).max(1)
        };
        pool.shuffle(&mut label_rng);
        let rest = pool.split_off(n_labeled);
        labeled.extend(pool);
        unlabeled.extend(rest);
    }
    // Original order keeps downstream shuffles independent of class layout.
    for part in [&mut validation, &mut labeled, &mut unlabeled] {
        part.sort_unstable();
    }
    let take = |idx: &[usize], keep_label: bool| -> Vec<SeriesSample> {
        idx.iter()
            .map(|&i| {
                let mut s = bundle.train[i].clone();
                if !keep_label {
                    s.label = None;
                }
                s
            })
            .collect()
    };
    Ok(Regime {
        labeled: take(&labeled, true),
        unlabeled: take(&unlabeled, false),
        validation: take(&validation, true),
    })
}

/// Index pairs into the labeled and unlabeled sets for one optimizer step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Plans one epoch of batches.
///
/// The larger side is shuffled and consumed once in chunks of `batch_size`
/// (the final chunk may be short); the smaller side is drawn uniformly with
/// replacement to the same chunk size. Equal sides are both shuffled and
/// consumed once. An empty side yields empty halves.
pub fn make_batches(
    n_labeled: usize,
    n_unlabeled: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<BatchPlan>, DataError> {
    if n_labeled == 0 && n_unlabeled == 0 {
        return Err(DataError::NothingToBatch);
    }
    if batch_size == 0 {
        return Err(DataError::InvalidRegime("batch size must be positive".into()));
    }
    let mut rng = stream_rng(seed, BATCH_STREAM + epoch as u64);
    let labeled_leads = n_labeled >= n_unlabeled;
    let (n_lead, n_follow) = if labeled_leads { (n_labeled, n_unlabeled) } else { (n_unlabeled, n_labeled) };
    let mut lead: Vec<usize> = (0..n_lead).collect();
    lead.shuffle(&mut rng);
    let mut follow_perm: Vec<usize> = (0..n_follow).collect();
    let equal = n_lead == n_follow;
    if equal {
        follow_perm.shuffle(&mut rng);
    }
    let mut plans = Vec::with_capacity(n_lead.div_ceil(batch_size));
    for (k, chunk) in lead.chunks(batch_size).enumerate() {
        let follow: Vec<usize> = if n_follow == 0 {
            vec![]
        } else if equal {
            follow_perm[k * batch_size..k * batch_size + chunk.len()].to_vec()
        } else {
            (0..chunk.len()).map(|_| rng.gen_range(0..n_follow)).collect()
        };
        let chunk = chunk.to_vec();
        plans.push(if labeled_leads {
            BatchPlan { labeled: chunk, unlabeled: follow }
        } else {
            BatchPlan { labeled: follow, unlabeled: chunk }
        });
    }
    Ok(plans)
}
