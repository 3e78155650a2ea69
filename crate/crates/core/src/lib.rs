//! Prototype-based explanation of random forests.
//!
//! The pipeline: train a forest ([`train_forest`]), read off which leaf every
//! training instance reaches in every tree ([`ForestModel::apply_leaves`]),
//! turn shared-leaf frequencies into a distance matrix
//! ([`build_distance_matrix`]), and greedily pick per-class prototype
//! instances that minimize a facility-location objective over that distance
//! ([`select_sm_a`], [`select_sm_wa`], [`select_a_pete`]). Prototypes double
//! as a nearest-prototype surrogate classifier whose accuracy and fidelity to
//! the forest are measured by the evaluation module.

pub mod dataset;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod proximity;
pub mod rng;
pub mod selection;
pub mod sweep;
pub mod tree;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use evaluation::{
    balanced_accuracy, evaluate_surrogate, fidelity_to_forest, nearest_prototype_classify,
    nearest_prototype_classify_batch, prototype_distances, stratified_split, weighted_accuracy,
    ConfusionMatrix, Hyperparameters, MetricsReport, SplitPlan,
};
pub use forest::{load_model, save_model, train_forest, ForestModel, LeafAssignment};
pub use proximity::{build_distance_matrix, pair_proximity, DistanceMatrix};
pub use selection::{
    greedy_step, objective_f, select_a_pete, select_sm_a, select_sm_wa, Algorithm, PhantomSet,
    PrototypeRecord, PrototypeSet, SelectionTrace, StopReason, TraceStep,
};
pub use sweep::{
    default_feature_grid, resolve_feature_grid, run_sweep, AlgorithmBest, FeatureSpec, ForestScore,
    SweepCell, SweepConfig, SweepReport,
};
pub use tree::{DecisionTree, Node};
