//! Hyperparameter sweep over feature counts and selection parameters.
//!
//! For every combination of feature-subsample size and algorithm parameter
//! (k for the fixed-size selectors, alpha for the adaptive one), a forest is
//! trained on the train split, prototypes are selected on it, and the
//! surrogate is scored on the validation split. The winning cell per
//! algorithm — best validation weighted accuracy, ties to the earliest cell —
//! is re-scored on the test split. Greedy selection is prefix-stable, so all
//! k values share one selection run per forest instead of re-running the
//! greedy loop per cell.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    row_separation, weighted_accuracy, ConfusionMatrix, Hyperparameters, MetricsReport, SplitPlan,
};
use crate::forest::{train_forest, ForestModel, LeafAssignment};
use crate::proximity::build_distance_matrix;
use crate::rng::mix_seed;
use crate::selection::{select_a_pete, select_sm_a, select_sm_wa, Algorithm, PrototypeSet};

/// Stream offset separating per-forest sweep seeds from other seeded draws.
const SWEEP_STREAM_BASE: u64 = 3 << 32;

/// One entry of the feature-subsample grid, resolved against the feature
/// count p at sweep time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    /// ⌈√p⌉ features per split.
    Sqrt,
    /// A fixed count; skipped when the dataset has fewer features.
    Count(usize),
    /// ⌈fraction·p⌉ features per split, clamped to [1, p].
    Fraction(f64),
}

/// The default grid: √p, 7, and 0.33/0.5/0.7 of p.
pub fn default_feature_grid() -> Vec<FeatureSpec> {
    vec![
        FeatureSpec::Sqrt,
        FeatureSpec::Count(7),
        FeatureSpec::Fraction(0.33),
        FeatureSpec::Fraction(0.5),
        FeatureSpec::Fraction(0.7),
    ]
}

/// Round up, except when `x` sits within 1e-9 of an integer (so that e.g.
/// 0.7·30 computed as 21.000000000000004 resolves to 21, not 22).
fn ceil_snapped(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

impl FeatureSpec {
    /// The per-split feature count for a dataset with `p` features, or
    /// `None` when this entry is skipped.
    pub fn resolve(&self, p: usize) -> Option<usize> {
        match *self {
            FeatureSpec::Sqrt => Some(ceil_snapped((p as f64).sqrt()).clamp(1, p)),
            FeatureSpec::Count(c) => (c <= p).then_some(c.max(1)),
            FeatureSpec::Fraction(f) => Some(ceil_snapped(f * p as f64).clamp(1, p)),
        }
    }
}

/// Resolve a grid against `p` features: skipped and duplicate entries are
/// dropped (first occurrence wins), and an empty result is an error.
pub fn resolve_feature_grid(grid: &[FeatureSpec], p: usize) -> Result<Vec<usize>> {
    let mut counts = Vec::new();
    for spec in grid {
        if let Some(c) = spec.resolve(p) {
            if !counts.contains(&c) {
                counts.push(c);
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::GridExhausted);
    }
    Ok(counts)
}

/// Everything a sweep varies or holds fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub num_trees: usize,
    pub feature_grid: Vec<FeatureSpec>,
    pub k_grid: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    /// Cap on adaptive selection; `None` means the train-split size.
    pub max_prototypes: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            num_trees: 1000,
            feature_grid: default_feature_grid(),
            k_grid: (1..=20).collect(),
            alpha_grid: vec![0.05],
            algorithms: vec![Algorithm::SmA, Algorithm::SmWa, Algorithm::APete],
            seed: 42,
            max_prototypes: None,
        }
    }
}

/// Scores for one (feature count, algorithm parameter) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub algorithm: Algorithm,
    pub feature_count: usize,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub prototype_count: usize,
    pub valid_weighted: f64,
    pub valid_balanced: f64,
    pub valid_fidelity: f64,
    pub test_weighted: f64,
    pub test_balanced: f64,
    pub test_fidelity: f64,
}

/// The forest's own accuracy for one feature-grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestScore {
    pub feature_count: usize,
    pub seed: u64,
    pub valid_weighted: f64,
    pub valid_balanced: f64,
    pub test_weighted: f64,
    pub test_balanced: f64,
}

/// The winning cell for one algorithm, re-scored on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmBest {
    pub algorithm: Algorithm,
    pub cell: SweepCell,
    pub report: MetricsReport,
    pub forest: ForestScore,
}

/// Full sweep output: every cell, every forest, and the per-algorithm bests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub forests: Vec<ForestScore>,
    pub best: Vec<AlgorithmBest>,
}

impl SweepReport {
    /// The forest with the best validation weighted accuracy (ties to the
    /// earliest grid entry).
    pub fn best_forest(&self) -> Option<&ForestScore> {
        self.forests.iter().fold(None, |best, f| match best {
            Some(b) if f.valid_weighted <= b.valid_weighted => Some(b),
            _ => Some(f),
        })
    }
}

/// Tally a confusion matrix over all `q` classes, not just the observed ones.
fn confusion(q: usize, truth: &[usize], predicted: &[usize]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(q);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p);
    }
    cm
}

fn balanced_or_zero(cm: &ConfusionMatrix) -> f64 {
    crate::evaluation::balanced_accuracy(cm).unwrap_or(0.0)
}

/// Separation counts from every row of `data` to every prototype, in
/// selection order.
fn separation_table(
    model: &ForestModel,
    train_leaves: &LeafAssignment,
    protos: &PrototypeSet,
    data: &Dataset,
) -> Result<Vec<Vec<u32>>> {
    use rayon::prelude::*;
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = model.leaf_row(data.row(i))?;
            Ok(protos
                .prototypes
                .iter()
                .map(|p| row_separation(&row, train_leaves.row(p.index)))
                .collect())
        })
        .collect()
}

/// Nearest prototype among the first `k`, ties to the earliest-selected —
/// the same policy as [`crate::evaluation::nearest_prototype_classify`].
fn classify_prefix(table: &[Vec<u32>], protos: &PrototypeSet, k: usize) -> Vec<usize> {
    table
        .iter()
        .map(|row| {
            let mut best = (u32::MAX, 0usize);
            for (j, p) in protos.prototypes.iter().take(k).enumerate() {
                if row[j] < best.0 {
                    best = (row[j], p.class_id);
                }
            }
            best.1
        })
        .collect()
}

struct PartScores {
    weighted: f64,
    balanced: f64,
    fidelity: f64,
}

fn score_part(
    q: usize,
    truth: &[usize],
    predicted: &[usize],
    forest_predicted: &[usize],
) -> Result<PartScores> {
    let cm = confusion(q, truth, predicted);
    let agree = predicted
        .iter()
        .zip(forest_predicted)
        .filter(|(a, b)| a == b)
        .count();
    Ok(PartScores {
        weighted: weighted_accuracy(&cm)?,
        balanced: balanced_or_zero(&cm),
        fidelity: agree as f64 / truth.len().max(1) as f64,
    })
}

/// Run the full sweep. Each feature-grid entry gets its own seeded forest
/// (derived from the sweep seed and the grid position, so results do not
/// depend on evaluation order); selection and scoring are deterministic
/// given that forest.
pub fn run_sweep(data: &Dataset, plan: &SplitPlan, config: &SweepConfig) -> Result<SweepReport> {
    plan.validate(data.n_rows())?;
    if config.num_trees == 0 {
        return Err(Error::InvalidHyperparameter(
            "sweep needs at least one tree".into(),
        ));
    }
    if config.algorithms.is_empty() {
        return Err(Error::InvalidHyperparameter(
            "sweep needs at least one algorithm".into(),
        ));
    }
    let fixed_size = |a: &Algorithm| matches!(a, Algorithm::SmA | Algorithm::SmWa);
    if config.algorithms.iter().any(fixed_size) && config.k_grid.is_empty() {
        return Err(Error::InvalidHyperparameter(
            "k grid is empty but a fixed-size selector is requested".into(),
        ));
    }
    if config
        .algorithms
        .iter()
        .any(|a| matches!(a, Algorithm::APete))
        && config.alpha_grid.is_empty()
    {
        return Err(Error::InvalidHyperparameter(
            "alpha grid is empty but the adaptive selector is requested".into(),
        ));
    }

    let feature_counts = resolve_feature_grid(&config.feature_grid, data.n_features())?;
    let train = data.subset(&plan.train);
    let valid = data.subset(&plan.valid);
    let test = data.subset(&plan.test);
    let q = data.n_classes();

    let mut cells: Vec<SweepCell> = Vec::new();
    let mut forests = Vec::new();
    // Retained per cell so the best can be re-reported without re-running:
    // (cell index) -> (forest index, per-class recall on the test split).
    let mut cell_context: Vec<(usize, Vec<f64>)> = Vec::new();

    for (gi, &feature_count) in feature_counts.iter().enumerate() {
        let forest_seed = mix_seed(config.seed, SWEEP_STREAM_BASE + gi as u64);
        let model = train_forest(&train, config.num_trees, feature_count, forest_seed)?;
        let train_leaves = model.apply_leaves(&train)?;
        let matrix = build_distance_matrix(&train_leaves);

        let valid_forest = model.predict_batch(&valid)?;
        let test_forest = model.predict_batch(&test)?;
        forests.push(ForestScore {
            feature_count,
            seed: forest_seed,
            valid_weighted: weighted_accuracy(&confusion(q, valid.labels(), &valid_forest))?,
            valid_balanced: balanced_or_zero(&confusion(q, valid.labels(), &valid_forest)),
            test_weighted: weighted_accuracy(&confusion(q, test.labels(), &test_forest))?,
            test_balanced: balanced_or_zero(&confusion(q, test.labels(), &test_forest)),
        });

        for algorithm in &config.algorithms {
            // Each (selection run, k-or-alpha) pair becomes one cell.
            let runs: Vec<(PrototypeSet, Option<usize>, Option<f64>)> = match algorithm {
                Algorithm::SmA | Algorithm::SmWa => {
                    let k_max = config
                        .k_grid
                        .iter()
                        .copied()
                        .max()
                        .unwrap()
                        .min(train.n_rows());
                    let (protos, _) = match algorithm {
                        Algorithm::SmA => select_sm_a(&matrix, train.labels(), k_max)?,
                        _ => select_sm_wa(&matrix, train.labels(), k_max)?,
                    };
                    config
                        .k_grid
                        .iter()
                        .filter(|&&k| k <= train.n_rows())
                        .map(|&k| {
                            let mut prefix = protos.clone();
                            prefix.prototypes.truncate(k);
                            (prefix, Some(k), None)
                        })
                        .collect()
                }
                Algorithm::APete => {
                    let cap = config.max_prototypes.unwrap_or(train.n_rows());
                    config
                        .alpha_grid
                        .iter()
                        .map(|&alpha| {
                            let (protos, _) = select_a_pete(&matrix, train.labels(), alpha, cap)?;
                            Ok((protos, None, Some(alpha)))
                        })
                        .collect::<Result<_>>()?
                }
            };
            if runs.is_empty() {
                continue;
            }

            // All runs of one algorithm here share prototypes drawn from one
            // selection order, so one separation table per part suffices,
            // sized to the longest run.
            let widest = runs
                .iter()
                .max_by_key(|(p, _, _)| p.len())
                .map(|(p, _, _)| p.clone())
                .unwrap();
            let valid_table = separation_table(&model, &train_leaves, &widest, &valid)?;
            let test_table = separation_table(&model, &train_leaves, &widest, &test)?;

            for (protos, k, alpha) in runs {
                let len = protos.len();
                let valid_pred = classify_prefix(&valid_table, &widest, len);
                let test_pred = classify_prefix(&test_table, &widest, len);
                let vs = score_part(q, valid.labels(), &valid_pred, &valid_forest)?;
                let ts = score_part(q, test.labels(), &test_pred, &test_forest)?;
                let test_cm = confusion(q, test.labels(), &test_pred);
                cells.push(SweepCell {
                    algorithm: *algorithm,
                    feature_count,
                    k,
                    alpha,
                    prototype_count: len,
                    valid_weighted: vs.weighted,
                    valid_balanced: vs.balanced,
                    valid_fidelity: vs.fidelity,
                    test_weighted: ts.weighted,
                    test_balanced: ts.balanced,
                    test_fidelity: ts.fidelity,
                });
                cell_context.push((
                    gi,
                    (0..q).map(|c| test_cm.recall(c).unwrap_or(0.0)).collect(),
                ));
            }
        }
    }

    // Best cell per algorithm by validation weighted accuracy; ties keep the
    // earliest cell, so the order of the grids is the tie-break.
    let mut best = Vec::new();
    for algorithm in &config.algorithms {
        let winner = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.algorithm == *algorithm)
            .fold(None::<(usize, &SweepCell)>, |acc, (i, c)| match acc {
                Some((_, b)) if c.valid_weighted <= b.valid_weighted => acc,
                _ => Some((i, c)),
            });
        let Some((idx, cell)) = winner else { continue };
        let (gi, test_recalls) = &cell_context[idx];
        let report = MetricsReport {
            weighted_accuracy: cell.test_weighted,
            balanced_accuracy: cell.test_balanced,
            fidelity_to_forest: cell.test_fidelity,
            prototype_count: cell.prototype_count,
            per_class_accuracy: test_recalls.clone(),
            hyperparameters: Hyperparameters {
                num_trees: config.num_trees,
                features_per_split: cell.feature_count,
                seed: config.seed,
                algorithm: *algorithm,
                k: cell.k,
                alpha: cell.alpha,
            },
        };
        best.push(AlgorithmBest {
            algorithm: *algorithm,
            cell: cell.clone(),
            report,
            forest: forests[*gi].clone(),
        });
    }

    Ok(SweepReport {
        cells,
        forests,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::stratified_split;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn default_grid_on_30_features_is_6_7_10_15_21() {
        let grid = resolve_feature_grid(&default_feature_grid(), 30).unwrap();
        assert_eq!(grid, vec![6, 7, 10, 15, 21]);
    }

    #[test]
    fn fixed_count_above_p_is_skipped() {
        let grid = resolve_feature_grid(&default_feature_grid(), 4).unwrap();
        // √4 = 2, 7 skipped, ⌈0.33·4⌉ = 2 (dup), ⌈0.5·4⌉ = 2 (dup), ⌈0.7·4⌉ = 3.
        assert_eq!(grid, vec![2, 3]);
    }

    #[test]
    fn fraction_rounding_snaps_near_integers() {
        // 0.7·30 evaluates to 21.000000000000004 in floats; a plain ceil
        // would produce 22.
        assert_eq!(FeatureSpec::Fraction(0.7).resolve(30), Some(21));
        assert_eq!(FeatureSpec::Fraction(0.33).resolve(30), Some(10));
        assert_eq!(FeatureSpec::Sqrt.resolve(30), Some(6));
        assert_eq!(FeatureSpec::Sqrt.resolve(4), Some(2));
        assert_eq!(FeatureSpec::Fraction(0.5).resolve(1), Some(1));
        assert_eq!(FeatureSpec::Count(7).resolve(6), None);
        assert_eq!(FeatureSpec::Count(7).resolve(7), Some(7));
    }

    #[test]
    fn empty_resolved_grid_is_an_error() {
        assert!(matches!(
            resolve_feature_grid(&[FeatureSpec::Count(50)], 4),
            Err(Error::GridExhausted)
        ));
        assert!(matches!(
            resolve_feature_grid(&[], 4),
            Err(Error::GridExhausted)
        ));
    }

    fn sweep_dataset(seed: u64) -> Dataset {
        // Two well-separated blobs with a little noise, 3 features.
        let mut rng = stream_rng(seed, 5000);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let class = usize::from(i >= 22);
            features.push(class as f64 * 4.0 + rng.gen_range(-1.0..1.0));
            features.push(rng.gen_range(0.0..1.0));
            features.push(class as f64 - rng.gen_range(0.0..0.5));
            labels.push(class);
        }
        Dataset::new(
            features,
            3,
            labels,
            vec!["x".into(), "y".into(), "z".into()],
            vec!["neg".into(), "pos".into()],
        )
        .unwrap()
    }

    fn small_config() -> SweepConfig {
        SweepConfig {
            num_trees: 20,
            feature_grid: vec![FeatureSpec::Sqrt, FeatureSpec::Fraction(0.7)],
            k_grid: vec![1, 2, 4],
            alpha_grid: vec![0.05],
            algorithms: vec![Algorithm::SmA, Algorithm::SmWa, Algorithm::APete],
            seed: 9,
            max_prototypes: None,
        }
    }

    #[test]
    fn sweep_produces_a_cell_per_parameter_and_a_best_per_algorithm() {
        let data = sweep_dataset(1);
        let plan = stratified_split(&data, 3).unwrap();
        let report = run_sweep(&data, &plan, &small_config()).unwrap();
        // 2 grid entries × (3 k-cells + 3 k-cells + 1 alpha-cell).
        assert_eq!(report.cells.len(), 14);
        assert_eq!(report.forests.len(), 2);
        assert_eq!(report.best.len(), 3);
        for best in &report.best {
            assert!(best.cell.valid_weighted >= 0.0);
            assert_eq!(
                best.report.weighted_accuracy, best.cell.test_weighted,
                "report must echo the winning cell's test score"
            );
            assert_eq!(best.report.hyperparameters.num_trees, 20);
        }
        // The best cell really is the max by validation weighted accuracy.
        for best in &report.best {
            let max = report
                .cells
                .iter()
                .filter(|c| c.algorithm == best.algorithm)
                .map(|c| c.valid_weighted)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.cell.valid_weighted, max);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let data = sweep_dataset(2);
        let plan = stratified_split(&data, 4).unwrap();
        let a = run_sweep(&data, &plan, &small_config()).unwrap();
        let b = run_sweep(&data, &plan, &small_config()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn k_cells_match_standalone_selection_runs() {
        // Prefix evaluation must give the same numbers as selecting k
        // prototypes from scratch.
        let data = sweep_dataset(3);
        let plan = stratified_split(&data, 5).unwrap();
        let config = SweepConfig {
            algorithms: vec![Algorithm::SmA],
            feature_grid: vec![FeatureSpec::Sqrt],
            k_grid: vec![2, 3],
            ..small_config()
        };
        let report = run_sweep(&data, &plan, &config).unwrap();

        let train = data.subset(&plan.train);
        let valid = data.subset(&plan.valid);
        let seed = report.forests[0].seed;
        let model = train_forest(
            &train,
            config.num_trees,
            report.forests[0].feature_count,
            seed,
        )
        .unwrap();
        let leaves = model.apply_leaves(&train).unwrap();
        let matrix = build_distance_matrix(&leaves);
        for (cell_idx, k) in [(0usize, 2usize), (1, 3)] {
            let (protos, _) = select_sm_a(&matrix, train.labels(), k).unwrap();
            let pred = crate::evaluation::nearest_prototype_classify_batch(
                &model, &protos, &leaves, &valid,
            )
            .unwrap();
            let cm = confusion(data.n_classes(), valid.labels(), &pred);
            let expected = weighted_accuracy(&cm).unwrap();
            assert_eq!(report.cells[cell_idx].valid_weighted, expected);
            assert_eq!(report.cells[cell_idx].prototype_count, k);
        }
    }

    #[test]
    fn adaptive_cells_echo_alpha_and_emit_counts() {
        let data = sweep_dataset(4);
        let plan = stratified_split(&data, 6).unwrap();
        let config = SweepConfig {
            algorithms: vec![Algorithm::APete],
            feature_grid: vec![FeatureSpec::Sqrt],
            alpha_grid: vec![0.05, 0.2],
            ..small_config()
        };
        let report = run_sweep(&data, &plan, &config).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.cells[0].alpha, Some(0.05));
        assert_eq!(report.cells[1].alpha, Some(0.2));
        for cell in &report.cells {
            assert!(cell.k.is_none());
            assert!(cell.prototype_count >= data.n_classes());
        }
    }

    #[test]
    fn oversized_k_values_are_skipped() {
        let data = sweep_dataset(5);
        let plan = stratified_split(&data, 7).unwrap();
        let n_train = plan.train.len();
        let config = SweepConfig {
            algorithms: vec![Algorithm::SmA],
            feature_grid: vec![FeatureSpec::Sqrt],
            k_grid: vec![2, n_train + 5],
            ..small_config()
        };
        let report = run_sweep(&data, &plan, &config).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.cells[0].k, Some(2));
    }

    #[test]
    fn misconfigured_sweeps_are_rejected() {
        let data = sweep_dataset(6);
        let plan = stratified_split(&data, 8).unwrap();
        let no_k = SweepConfig {
            k_grid: vec![],
            ..small_config()
        };
        assert!(matches!(
            run_sweep(&data, &plan, &no_k),
            Err(Error::InvalidHyperparameter(_))
        ));
        let no_alpha = SweepConfig {
            algorithms: vec![Algorithm::APete],
            alpha_grid: vec![],
            ..small_config()
        };
        assert!(matches!(
            run_sweep(&data, &plan, &no_alpha),
            Err(Error::InvalidHyperparameter(_))
        ));
        let no_algo = SweepConfig {
            algorithms: vec![],
            ..small_config()
        };
        assert!(matches!(
            run_sweep(&data, &plan, &no_algo),
            Err(Error::InvalidHyperparameter(_))
        ));
    }

    #[test]
    fn best_forest_picks_max_validation_accuracy() {
        let data = sweep_dataset(7);
        let plan = stratified_split(&data, 9).unwrap();
        let report = run_sweep(&data, &plan, &small_config()).unwrap();
        let best = report.best_forest().unwrap();
        let max = report
            .forests
            .iter()
            .map(|f| f.valid_weighted)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.valid_weighted, max);
    }
}
