//! Stratified splitting, surrogate classification, and accuracy metrics.
//!
//! Prototypes are evaluated as a 1-nearest-prototype classifier: an instance
//! is assigned the class of the prototype whose leaf row is closest in
//! tree-space distance. Weighted accuracy (class-frequency-weighted mean of
//! per-class recall) and balanced accuracy (unweighted mean) are both
//! reported; the frequency weighting makes the former algebraically equal to
//! plain accuracy, which is asserted as a property rather than assumed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{ForestModel, LeafAssignment};
use crate::rng::stream_rng;
use crate::selection::{Algorithm, PrototypeSet};

/// Stream offset separating split shuffles from other seeded draws.
const SPLIT_STREAM_BASE: u64 = 1 << 32;

/// A train/validation/test partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Split 60%/20%/20% with per-class proportions preserved within one
/// instance.
///
/// Each class is shuffled by a seed-derived stream and cut by the
/// largest-remainder rule (fractional parts compared as exact fifths; ties
/// favor train, then valid, then test). A class of exactly three instances
/// contributes one instance to every part; smaller classes are rejected.
pub fn stratified_split(data: &Dataset, seed: u64) -> Result<SplitPlan> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for i in 0..data.n_rows() {
        by_class[data.label(i)].push(i);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        let m = members.len();
        if m < 3 {
            return Err(Error::ClassTooSmall {
                class: data.class_names()[c].clone(),
                count: m,
            });
        }
        let mut rng = stream_rng(seed, SPLIT_STREAM_BASE + c as u64);
        shuffle(&mut members, &mut rng);

        // Targets 0.6m / 0.2m / 0.2m in exact fifths: floor parts first,
        // then the remainder goes to the largest fractional parts.
        let mut sizes = [3 * m / 5, m / 5, m / 5];
        let fracs = [(3 * m) % 5, m % 5, m % 5];
        let spare = m - sizes.iter().sum::<usize>();
        // Stable selection of the largest fractions; index order breaks ties
        // in favor of train, then valid.
        let mut order = [0usize, 1, 2];
        order.sort_by_key(|&part| std::cmp::Reverse(fracs[part]));
        for &part in order.iter().take(spare) {
            sizes[part] += 1;
        }
        debug_assert_eq!(sizes.iter().sum::<usize>(), m);

        // A part can only end up empty for tiny classes (m ≤ 4); donate one
        // instance from the largest part so every part sees every class.
        for empty in 0..3 {
            if sizes[empty] == 0 {
                let donor = (0..3)
                    .max_by_key(|&p| (sizes[p], std::cmp::Reverse(p)))
                    .unwrap();
                sizes[donor] -= 1;
                sizes[empty] += 1;
            }
        }

        let (a, rest) = members.split_at(sizes[0]);
        let (b, c_part) = rest.split_at(sizes[1]);
        train.extend_from_slice(a);
        valid.extend_from_slice(b);
        test.extend_from_slice(c_part);
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train,
        valid,
        test,
        seed,
    })
}

/// Fisher–Yates with the given stream.
fn shuffle(items: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

impl SplitPlan {
    /// Check that the three parts partition `0..n` exactly.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, count: n });
            }
            if seen[i] {
                return Err(Error::InvalidHyperparameter(format!(
                    "instance {i} appears in two split parts"
                )));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidHyperparameter(format!(
                "instance {missing} is missing from the split"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Confusion matrix and accuracy metrics
// ---------------------------------------------------------------------------

/// Integer counts of (true class, predicted class) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>, // row-major: rows = true class, columns = predicted
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Tally predictions against true labels.
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Self {
        assert_eq!(truth.len(), predicted.len());
        let q = truth.iter().chain(predicted).max().map_or(0, |&m| m + 1);
        let mut cm = ConfusionMatrix::new(q);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p);
        }
        cm
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of evaluated instances whose true class is `c`.
    pub fn class_total(&self, c: usize) -> u64 {
        self.counts[c * self.n_classes..(c + 1) * self.n_classes]
            .iter()
            .sum()
    }

    /// Fraction of class-`c` instances predicted as `c`; `None` when the
    /// class has no true instances.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let total = self.class_total(c);
        (total > 0).then(|| self.count(c, c) as f64 / total as f64)
    }
}

/// Class-frequency-weighted mean of per-class recall. Classes absent from
/// the evaluation set contribute weight 0.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let mut acc = 0.0;
    for c in 0..cm.n_classes() {
        if let Some(recall) = cm.recall(c) {
            acc += cm.class_total(c) as f64 / total as f64 * recall;
        }
    }
    Ok(acc)
}

/// Unweighted mean of per-class recall. Every class must have at least one
/// true instance.
///
/// Computed as Σ recall·(1/q) — the same term shape as
/// [`weighted_accuracy`] — so that when all class counts are equal the two
/// accuracies agree bit-for-bit, not just within rounding.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let inv_q = 1.0 / cm.n_classes() as f64;
    let mut acc = 0.0;
    for c in 0..cm.n_classes() {
        match cm.recall(c) {
            Some(recall) => acc += recall * inv_q,
            None => return Err(Error::EmptyClassRow(c)),
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Nearest-prototype surrogate
// ---------------------------------------------------------------------------

/// Number of trees routing two leaf rows to different leaves.
pub(crate) fn row_separation(a: &[u32], b: &[u32]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Classify one instance by its nearest prototype in tree space.
///
/// Distance ties break to the earliest-selected prototype; comparisons use
/// integer shared-leaf counts, so ties are exact.
pub fn nearest_prototype_classify(
    model: &ForestModel,
    protos: &PrototypeSet,
    train_leaves: &LeafAssignment,
    instance: &[f64],
) -> Result<usize> {
    if protos.is_empty() {
        return Err(Error::EmptyPrototypeSet);
    }
    let leaf_row = model.leaf_row(instance)?;
    let mut best_sep = u32::MAX;
    let mut best_class = 0;
    for p in &protos.prototypes {
        if p.index >= train_leaves.n_instances() {
            return Err(Error::IndexOutOfRange {
                index: p.index,
                count: train_leaves.n_instances(),
            });
        }
        let sep = row_separation(&leaf_row, train_leaves.row(p.index));
        if sep < best_sep {
            best_sep = sep;
            best_class = p.class_id;
        }
    }
    Ok(best_class)
}

/// Tree-space distance from one instance to every prototype, in selection
/// order. Each distance is the single correctly rounded division
/// separation/t, so values are exactly the matrix entries the selection saw.
pub fn prototype_distances(
    model: &ForestModel,
    protos: &PrototypeSet,
    train_leaves: &LeafAssignment,
    instance: &[f64],
) -> Result<Vec<f64>> {
    if protos.is_empty() {
        return Err(Error::EmptyPrototypeSet);
    }
    let leaf_row = model.leaf_row(instance)?;
    let t = train_leaves.n_trees() as f64;
    protos
        .prototypes
        .iter()
        .map(|p| {
            if p.index >= train_leaves.n_instances() {
                return Err(Error::IndexOutOfRange {
                    index: p.index,
                    count: train_leaves.n_instances(),
                });
            }
            Ok(row_separation(&leaf_row, train_leaves.row(p.index)) as f64 / t)
        })
        .collect()
}

/// Classify every row of `data` by its nearest prototype, in parallel.
pub fn nearest_prototype_classify_batch(
    model: &ForestModel,
    protos: &PrototypeSet,
    train_leaves: &LeafAssignment,
    data: &Dataset,
) -> Result<Vec<usize>> {
    if protos.is_empty() {
        return Err(Error::EmptyPrototypeSet);
    }
    for p in &protos.prototypes {
        if p.index >= train_leaves.n_instances() {
            return Err(Error::IndexOutOfRange {
                index: p.index,
                count: train_leaves.n_instances(),
            });
        }
    }
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| nearest_prototype_classify(model, protos, train_leaves, data.row(i)))
        .collect()
}

/// Fraction of `eval_data` rows where the nearest-prototype surrogate agrees
/// with the forest's own prediction.
pub fn fidelity_to_forest(
    model: &ForestModel,
    protos: &PrototypeSet,
    train_leaves: &LeafAssignment,
    eval_data: &Dataset,
) -> Result<f64> {
    if eval_data.n_rows() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let surrogate = nearest_prototype_classify_batch(model, protos, train_leaves, eval_data)?;
    let forest = model.predict_batch(eval_data)?;
    let agree = surrogate
        .iter()
        .zip(&forest)
        .filter(|(s, f)| s == f)
        .count();
    Ok(agree as f64 / eval_data.n_rows() as f64)
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

/// Hyperparameters a metrics report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub num_trees: usize,
    pub features_per_split: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
}

/// Surrogate quality on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted_accuracy: f64,
    pub balanced_accuracy: f64,
    pub fidelity_to_forest: f64,
    pub prototype_count: usize,
    pub per_class_accuracy: Vec<f64>,
    pub hyperparameters: Hyperparameters,
}

/// Score a prototype set as a surrogate on one evaluation set.
pub fn evaluate_surrogate(
    model: &ForestModel,
    protos: &PrototypeSet,
    train_leaves: &LeafAssignment,
    eval_data: &Dataset,
    hyperparameters: Hyperparameters,
) -> Result<MetricsReport> {
    if eval_data.n_rows() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let predicted = nearest_prototype_classify_batch(model, protos, train_leaves, eval_data)?;
    let forest = model.predict_batch(eval_data)?;
    let cm = {
        let mut cm = ConfusionMatrix::new(eval_data.n_classes());
        for (i, &p) in predicted.iter().enumerate() {
            cm.record(eval_data.label(i), p);
        }
        cm
    };
    let agree = predicted
        .iter()
        .zip(&forest)
        .filter(|(s, f)| s == f)
        .count();
    let per_class_accuracy = (0..eval_data.n_classes())
        .map(|c| cm.recall(c).unwrap_or(0.0))
        .collect();
    Ok(MetricsReport {
        weighted_accuracy: weighted_accuracy(&cm)?,
        balanced_accuracy: balanced_accuracy(&cm)?,
        fidelity_to_forest: agree as f64 / eval_data.n_rows() as f64,
        prototype_count: protos.len(),
        per_class_accuracy,
        hyperparameters,
    })
}
