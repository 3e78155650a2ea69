//! Random-forest training, prediction, and per-tree leaf assignment.
//!
//! Leaf assignments are the forest's interface to the proximity computation:
//! two instances are close when many trees route them to the same leaf.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::digest::short_digest;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tree::DecisionTree;

const MODEL_MAGIC: &str = "proto-forest-model";
const MODEL_VERSION: u64 = 1;

/// A trained random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    n_features: usize,
    features_per_split: usize,
    seed: u64,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

/// Per-tree leaf ids for a set of instances: entry `(i, j)` is the dense leaf
/// id instance `i` reaches in tree `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafAssignment {
    matrix: Vec<u32>, // row-major, n_instances × n_trees
    n_instances: usize,
    n_trees: usize,
    leaves_per_tree: Vec<u32>,
}

impl LeafAssignment {
    /// Assemble an assignment directly, for tests that need hand-built or
    /// randomized leaf layouts without training a forest.
    #[cfg(test)]
    pub(crate) fn from_parts(
        matrix: Vec<u32>,
        n_instances: usize,
        n_trees: usize,
        leaves_per_tree: Vec<u32>,
    ) -> Self {
        assert_eq!(matrix.len(), n_instances * n_trees);
        assert_eq!(leaves_per_tree.len(), n_trees);
        LeafAssignment {
            matrix,
            n_instances,
            n_trees,
            leaves_per_tree,
        }
    }
}

/// Train a forest of `num_trees` trees, each grown on a with-replacement
/// bootstrap of size n with `features_per_split` candidate features per node.
///
/// Trees are grown in parallel; each draws from its own random stream derived
/// from `seed` and the tree index, so the result is independent of worker
/// count and reproducible from the seed alone.
pub fn train_forest(
    data: &Dataset,
    num_trees: usize,
    features_per_split: usize,
    seed: u64,
) -> Result<ForestModel> {
    if num_trees == 0 {
        return Err(Error::InvalidHyperparameter(
            "number of trees must be at least 1".into(),
        ));
    }
    if features_per_split == 0 || features_per_split > data.n_features() {
        return Err(Error::InvalidHyperparameter(format!(
            "features per split must be in [1, {}], got {features_per_split}",
            data.n_features()
        )));
    }

    let n = data.n_rows();
    let trees: Vec<DecisionTree> = (0..num_trees)
        .into_par_iter()
        .map(|tree_index| {
            let mut rng = stream_rng(seed, tree_index as u64);
            let samples: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            DecisionTree::grow(
                data.features(),
                data.n_features(),
                data.labels(),
                data.n_classes(),
                samples,
                features_per_split,
                &mut rng,
            )
        })
        .collect();

    Ok(ForestModel {
        trees,
        n_features: data.n_features(),
        features_per_split,
        seed,
        feature_names: data.feature_names().to_vec(),
        class_names: data.class_names().to_vec(),
    })
}

impl ForestModel {
    /// Assemble a model from pre-built trees, validating every tree.
    pub fn from_parts(
        trees: Vec<DecisionTree>,
        n_features: usize,
        features_per_split: usize,
        seed: u64,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let model = ForestModel {
            trees,
            n_features,
            features_per_split,
            seed,
            feature_names,
            class_names,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::ModelFormat("model has no trees".into()));
        }
        if self.class_names.len() < 2 {
            return Err(Error::ModelFormat("model has fewer than 2 classes".into()));
        }
        if self.feature_names.len() != self.n_features {
            return Err(Error::ModelFormat(
                "feature name count disagrees with feature count".into(),
            ));
        }
        if self.features_per_split == 0 || self.features_per_split > self.n_features {
            return Err(Error::ModelFormat("features per split out of range".into()));
        }
        for tree in &self.trees {
            tree.validate(self.class_names.len(), self.n_features)?;
        }
        Ok(())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features_per_split(&self) -> usize {
        self.features_per_split
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn check_width(&self, len: usize) -> Result<()> {
        if len != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: len,
            });
        }
        Ok(())
    }

    /// Mean of the per-tree leaf class distributions. Sums to 1 within
    /// floating-point error.
    pub fn class_distribution(&self, instance: &[f64]) -> Result<Vec<f64>> {
        self.check_width(instance.len())?;
        let q = self.n_classes();
        let mut acc = vec![0.0f64; q];
        for tree in &self.trees {
            let counts = tree.class_counts_for(instance);
            let total: u32 = counts.iter().sum();
            for (a, &c) in acc.iter_mut().zip(counts) {
                *a += c as f64 / total as f64;
            }
        }
        let t = self.trees.len() as f64;
        for a in &mut acc {
            *a /= t;
        }
        Ok(acc)
    }

    /// Predicted class: argmax of the averaged leaf distributions, with ties
    /// broken to the lowest class id.
    pub fn predict(&self, instance: &[f64]) -> Result<usize> {
        let dist = self.class_distribution(instance)?;
        Ok(argmax_lowest(&dist))
    }

    /// Predict every row of `data` in parallel.
    pub fn predict_batch(&self, data: &Dataset) -> Result<Vec<usize>> {
        self.check_width(data.n_features())?;
        (0..data.n_rows())
            .into_par_iter()
            .map(|i| self.predict(data.row(i)))
            .collect()
    }

    /// Leaf id reached in each tree, in tree order.
    pub fn leaf_row(&self, instance: &[f64]) -> Result<Vec<u32>> {
        self.check_width(instance.len())?;
        Ok(self.trees.iter().map(|t| t.leaf_id_for(instance)).collect())
    }

    /// Leaf ids for every row of `data`.
    pub fn apply_leaves(&self, data: &Dataset) -> Result<LeafAssignment> {
        self.check_width(data.n_features())?;
        let n = data.n_rows();
        let rows: Vec<Vec<u32>> = (0..n)
            .into_par_iter()
            .map(|i| self.leaf_row(data.row(i)))
            .collect::<Result<_>>()?;
        let mut matrix = Vec::with_capacity(n * self.trees.len());
        for row in rows {
            matrix.extend_from_slice(&row);
        }
        Ok(LeafAssignment {
            matrix,
            n_instances: n,
            n_trees: self.trees.len(),
            leaves_per_tree: self.trees.iter().map(|t| t.n_leaves()).collect(),
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

/// Index of the largest value, ties to the lowest index.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl LeafAssignment {
    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    /// Leaf id of instance `i` in tree `j`.
    pub fn leaf(&self, i: usize, j: usize) -> u32 {
        self.matrix[i * self.n_trees + j]
    }

    /// All leaf ids of instance `i`, in tree order.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.matrix[i * self.n_trees..(i + 1) * self.n_trees]
    }

    pub fn leaves_per_tree(&self) -> &[u32] {
        &self.leaves_per_tree
    }

    /// Digest of the full assignment, used to tie distance matrices to the
    /// model and data they came from.
    pub fn digest(&self) -> u64 {
        let mut bytes =
            Vec::with_capacity(16 + 4 * (self.matrix.len() + self.leaves_per_tree.len()));
        bytes.extend_from_slice(&(self.n_instances as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_trees as u64).to_le_bytes());
        for &id in &self.matrix {
            bytes.extend_from_slice(&id.to_le_bytes());
        }
        for &tau in &self.leaves_per_tree {
            bytes.extend_from_slice(&tau.to_le_bytes());
        }
        short_digest(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Model file I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u64,
    model: ForestModel,
}

#[derive(Deserialize)]
struct ModelHeader {
    magic: String,
    version: u64,
}

/// Write the model as versioned JSON.
pub fn save_model(model: &ForestModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let envelope = ModelFile {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    serde_json::to_writer(&mut writer, &envelope)
        .map_err(|e| Error::ModelFormat(format!("serialization failed: {e}")))?;
    writer.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Read a model written by [`save_model`], checking magic, version, and the
/// structural invariants of every tree.
pub fn load_model(path: impl AsRef<Path>) -> Result<ForestModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;

    let envelope: ModelFile = match serde_json::from_slice(&bytes) {
        Ok(envelope) => envelope,
        Err(parse_error) => {
            // A schema mismatch from a newer format version should surface as
            // a version error, not a parse error; probe the header to tell.
            if let Ok(header) = serde_json::from_slice::<ModelHeader>(&bytes) {
                check_header(&header.magic, header.version)?;
            }
            return Err(Error::ModelFormat(format!(
                "unreadable model: {parse_error}"
            )));
        }
    };
    check_header(&envelope.magic, envelope.version)?;
    envelope.model.validate()?;
    Ok(envelope.model)
}

fn check_header(magic: &str, version: u64) -> Result<()> {
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!(
            "not a forest model file (magic {magic:?})"
        )));
    }
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    Ok(())
}
