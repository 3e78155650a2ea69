//! Fixture builders shared by the benchmark targets, plus a deliberately
//! naive distance builder to race against the inverted-index one.

use protoforest::{Dataset, LeafAssignment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian-ish class blobs: `n_rows` instances spread evenly over
/// `n_classes` classes, each feature centered on the class index.
pub fn blob_dataset(n_rows: usize, n_features: usize, n_classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_rows).map(|i| i % n_classes).collect();
    let mut features = Vec::with_capacity(n_rows * n_features);
    for &label in &labels {
        for _ in 0..n_features {
            features.push(label as f64 * 2.0 + rng.gen_range(-1.0..1.0));
        }
    }
    Dataset::new(
        features,
        n_features,
        labels,
        (0..n_features).map(|j| format!("f{j}")).collect(),
        (0..n_classes).map(|c| format!("c{c}")).collect(),
    )
    .expect("fixture dataset is well formed")
}

/// Labels drawn independently of the features, so trees must grow deep to
/// purify nodes and leaves end up tiny — the regime where leaf bucketing
/// pays off.
pub fn noise_dataset(n_rows: usize, n_features: usize, n_classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_rows).map(|_| rng.gen_range(0..n_classes)).collect();
    let features = (0..n_rows * n_features)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Dataset::new(
        features,
        n_features,
        labels,
        (0..n_features).map(|j| format!("f{j}")).collect(),
        (0..n_classes).map(|c| format!("c{c}")).collect(),
    )
    .expect("fixture dataset is well formed")
}

/// The quadratic all-pairs distance computation: compare every pair's leaf
/// rows tree by tree, then divide the separation count once. Same numbers
/// as the production builder, none of the leaf-bucketing speedup — the
/// benchmark baseline.
pub fn naive_distance_matrix(leaves: &LeafAssignment) -> Vec<f64> {
    let n = leaves.n_instances();
    let t = leaves.n_trees() as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let separated = leaves
                .row(i)
                .iter()
                .zip(leaves.row(j))
                .filter(|(a, b)| a != b)
                .count();
            let d = separated as f64 / t;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use protoforest::{build_distance_matrix, train_forest};

    #[test]
    fn naive_builder_matches_production_builder() {
        let data = blob_dataset(60, 6, 3, 11);
        let model = train_forest(&data, 40, 2, 5).expect("train");
        let leaves = model.apply_leaves(&data).expect("apply");
        let fast = build_distance_matrix(&leaves);
        let naive = naive_distance_matrix(&leaves);
        for i in 0..leaves.n_instances() {
            for j in 0..leaves.n_instances() {
                assert_eq!(
                    fast.get(i, j).to_bits(),
                    naive[i * leaves.n_instances() + j].to_bits(),
                    "entry ({i}, {j}) must be bit-identical"
                );
            }
        }
    }
}
