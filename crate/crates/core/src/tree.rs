//! CART-style decision tree grown to purity with Gini splits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node of a decision tree, stored in a flat array.
///
/// Children are referenced by index into the owning tree's node array and
/// always come after their parent, so traversal terminates by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Dense id in `[0, n_leaves)`, unique within the tree.
        leaf_id: u32,
        /// Majority class of the in-bag samples (ties to the lowest id).
        prediction: usize,
        /// In-bag sample counts per class, with bootstrap multiplicity.
        class_counts: Vec<u32>,
    },
}

/// A single classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_leaves: u32,
}

impl DecisionTree {
    /// Grow a tree on the given bootstrap sample.
    ///
    /// `features` is the full row-major matrix, `samples` the in-bag row
    /// indices (with multiplicity). At each node `features_per_split`
    /// non-constant candidate features are drawn without replacement; features
    /// that are constant within the node are skipped without using up the
    /// budget. The best Gini split is taken, with ties broken to the lowest
    /// feature index, then the lowest threshold. A node becomes a leaf when it
    /// is pure or no feature separates its samples.
    pub(crate) fn grow(
        features: &[f64],
        n_features: usize,
        labels: &[usize],
        n_classes: usize,
        samples: Vec<usize>,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut builder = TreeBuilder {
            features,
            n_features,
            labels,
            n_classes,
            features_per_split,
            rng,
            nodes: Vec::new(),
            n_leaves: 0,
        };
        builder.build(samples);
        DecisionTree {
            nodes: builder.nodes,
            n_leaves: builder.n_leaves,
        }
    }

    /// Assemble a tree from raw nodes. The caller must uphold the structural
    /// invariants; [`DecisionTree::validate`] checks them.
    #[cfg(test)]
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_leaves: u32) -> Self {
        DecisionTree { nodes, n_leaves }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Number of leaves in the tree.
    pub fn n_leaves(&self) -> u32 {
        self.n_leaves
    }

    /// Index of the leaf node reached by `row`.
    fn descend(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { .. } => return at,
            }
        }
    }

    /// Dense leaf id reached by `row`.
    pub fn leaf_id_for(&self, row: &[f64]) -> u32 {
        match &self.nodes[self.descend(row)] {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Internal { .. } => unreachable!("descend stops at a leaf"),
        }
    }

    /// In-bag class counts of the leaf reached by `row`.
    pub fn class_counts_for(&self, row: &[f64]) -> &[u32] {
        match &self.nodes[self.descend(row)] {
            Node::Leaf { class_counts, .. } => class_counts,
            Node::Internal { .. } => unreachable!("descend stops at a leaf"),
        }
    }

    /// Check the structural invariants of a deserialized tree.
    pub(crate) fn validate(&self, n_classes: usize, n_features: usize) -> Result<()> {
        let bad = |msg: String| Error::ModelFormat(msg);
        if self.nodes.is_empty() {
            return Err(bad("tree has no nodes".into()));
        }
        let mut referenced = vec![false; self.nodes.len()];
        let mut leaf_ids = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(bad(format!("node {i} splits on feature {feature}")));
                    }
                    if !threshold.is_finite() {
                        return Err(bad(format!("node {i} has a non-finite threshold")));
                    }
                    for &child in [left, right] {
                        if child <= i || child >= self.nodes.len() {
                            return Err(bad(format!("node {i} has child index {child}")));
                        }
                        if referenced[child] {
                            return Err(bad(format!("node {child} has two parents")));
                        }
                        referenced[child] = true;
                    }
                }
                Node::Leaf {
                    leaf_id,
                    prediction,
                    class_counts,
                } => {
                    if class_counts.len() != n_classes {
                        return Err(bad(format!(
                            "leaf {i} counts {} classes",
                            class_counts.len()
                        )));
                    }
                    if class_counts.iter().all(|&c| c == 0) {
                        return Err(bad(format!("leaf {i} has no samples")));
                    }
                    let argmax = class_counts
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                        .map(|(c, _)| c)
                        .unwrap_or(0);
                    if *prediction != argmax {
                        return Err(bad(format!(
                            "leaf {i} prediction disagrees with its counts"
                        )));
                    }
                    leaf_ids.push(*leaf_id);
                }
            }
        }
        if referenced[0] {
            return Err(bad("root is referenced as a child".into()));
        }
        if referenced.iter().skip(1).any(|&r| !r) {
            return Err(bad("unreachable node".into()));
        }
        leaf_ids.sort_unstable();
        let dense = leaf_ids.iter().enumerate().all(|(i, &id)| id as usize == i);
        if !dense || leaf_ids.len() != self.n_leaves as usize {
            return Err(bad("leaf ids are not dense".into()));
        }
        Ok(())
    }
}

struct TreeBuilder<'a> {
    features: &'a [f64],
    n_features: usize,
    labels: &'a [usize],
    n_classes: usize,
    features_per_split: usize,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    n_leaves: u32,
}

struct Split {
    feature: usize,
    threshold: f64,
    // Sum of child sizes minus sum-of-squared-class-counts over size, i.e.
    // total weighted Gini times the node size. Lower is better.
    score: f64,
}

impl<'a> TreeBuilder<'a> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    fn class_counts(&self, samples: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &s in samples {
            counts[self.labels[s]] += 1;
        }
        counts
    }

    fn build(&mut self, samples: Vec<usize>) -> usize {
        let counts = self.class_counts(&samples);
        let is_pure = counts.iter().filter(|&&c| c > 0).count() <= 1;

        let split = if is_pure {
            None
        } else {
            self.best_split(&samples)
        };
        match split {
            None => self.push_leaf(counts),
            Some(split) => {
                let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&s| self.value(s, split.feature) <= split.threshold);
                debug_assert!(!left_samples.is_empty() && !right_samples.is_empty());

                let at = self.nodes.len();
                self.nodes.push(Node::Internal {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.build(left_samples);
                let right = self.build(right_samples);
                if let Node::Internal {
                    left: l, right: r, ..
                } = &mut self.nodes[at]
                {
                    *l = left;
                    *r = right;
                }
                at
            }
        }
    }

    fn push_leaf(&mut self, class_counts: Vec<u32>) -> usize {
        let prediction = class_counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("at least one class");
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            leaf_id: self.n_leaves,
            prediction,
            class_counts,
        });
        self.n_leaves += 1;
        at
    }

    /// Draw candidate features and return the best valid split, if any.
    fn best_split(&mut self, samples: &[usize]) -> Option<Split> {
        let mut pool: Vec<usize> = (0..self.n_features).collect();
        let mut candidates = Vec::with_capacity(self.features_per_split);
        for slot in 0..pool.len() {
            if candidates.len() == self.features_per_split {
                break;
            }
            let pick = self.rng.gen_range(slot..pool.len());
            pool.swap(slot, pick);
            let feature = pool[slot];
            let first = self.value(samples[0], feature);
            if samples.iter().any(|&s| self.value(s, feature) != first) {
                candidates.push(feature);
            }
        }
        // Candidate order only affects tie-breaking; sorting pins it to the
        // lowest feature index.
        candidates.sort_unstable();

        let mut best: Option<Split> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for feature in candidates {
            column.clear();
            column.extend(
                samples
                    .iter()
                    .map(|&s| (self.value(s, feature), self.labels[s])),
            );
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            self.scan_feature(feature, &column, &mut best);
        }
        best
    }

    /// Sweep the sorted column, scoring the boundary between every pair of
    /// distinct consecutive values.
    fn scan_feature(&self, feature: usize, column: &[(f64, usize)], best: &mut Option<Split>) {
        let m = column.len();
        let mut left_counts = vec![0u32; self.n_classes];
        let mut right_counts = vec![0u32; self.n_classes];
        for &(_, label) in column {
            right_counts[label] += 1;
        }
        let mut left_sq = 0.0f64;
        let mut right_sq: f64 = right_counts.iter().map(|&c| (c as f64) * (c as f64)).sum();

        for i in 0..m - 1 {
            let (value, label) = column[i];
            let c = &mut left_counts[label];
            left_sq += 2.0 * (*c as f64) + 1.0;
            *c += 1;
            let c = &mut right_counts[label];
            right_sq -= 2.0 * (*c as f64) - 1.0;
            *c -= 1;

            let next = column[i + 1].0;
            if value == next {
                continue;
            }
            let n_left = (i + 1) as f64;
            let n_right = (m - i - 1) as f64;
            let score = (n_left - left_sq / n_left) + (n_right - right_sq / n_right);
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mut threshold = value + (next - value) / 2.0;
                if threshold >= next {
                    // Adjacent floats can round the midpoint up; fall back so
                    // both children stay non-empty under `x <= threshold`.
                    threshold = value;
                }
                *best = Some(Split {
                    feature,
                    threshold,
                    score,
                });
            }
        }
    }
}
