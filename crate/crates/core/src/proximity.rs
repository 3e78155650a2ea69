//! Tree-space proximity and the distance matrix derived from it.
//!
//! The proximity of two instances is the fraction of trees in which both
//! reach the same leaf; the distance is its complement. Because each tree
//! contributes a partition pseudometric (0 within a leaf, 1 across leaves)
//! and the distance is their average, the result is a pseudometric: symmetric,
//! zero on the diagonal, bounded by [0, 1], and triangle-respecting.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::LeafAssignment;

const MATRIX_MAGIC: &[u8; 4] = b"PFDM";
const MATRIX_VERSION: u8 = 1;
/// magic + version byte + n (u32) + grain (u32) + source hash (u64)
const MATRIX_HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8;

/// Symmetric matrix of pairwise tree-space distances over one instance set.
///
/// Every entry is an integer multiple of `1/grain` (grain = the tree count),
/// stored as the single correctly-rounded division `separated/grain`. The
/// integer separation counts are therefore recoverable exactly, which lets
/// the selection module compare candidate gains in integer arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>, // row-major n×n
    grain: u32,
    source_hash: u64,
}

/// Fraction of trees in which instances `i` and `j` land in the same leaf.
pub fn pair_proximity(leaves: &LeafAssignment, i: usize, j: usize) -> Result<f64> {
    let n = leaves.n_instances();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, count: n });
        }
    }
    let shared = leaves
        .row(i)
        .iter()
        .zip(leaves.row(j))
        .filter(|(a, b)| a == b)
        .count();
    Ok(shared as f64 / leaves.n_trees() as f64)
}

/// Build the full pairwise distance matrix, `1 - proximity` per entry.
///
/// Instead of scanning all O(n²·t) pairs, each tree's instances are bucketed
/// by leaf id once, and each row then counts only its co-residents from the
/// bucket lists. Rows own disjoint slices of the count matrix, so the rayon
/// workers never merge. Counts stay integers until the single division by t,
/// so the result is bit-equal to the naive pairwise computation.
pub fn build_distance_matrix(leaves: &LeafAssignment) -> DistanceMatrix {
    let n = leaves.n_instances();
    let t = leaves.n_trees();
    assert!(
        t > 0 && t <= u32::MAX as usize,
        "tree count must fit in u32"
    );

    // Per-tree bucket lists in CSR form: `starts[l]..starts[l + 1]` indexes
    // the members of leaf `l`, ascending by row (counting sort is stable).
    let trees: Vec<(Vec<u32>, Vec<u32>)> = (0..t)
        .into_par_iter()
        .map(|j| {
            let n_leaves = leaves.leaves_per_tree()[j] as usize;
            let mut starts = vec![0u32; n_leaves + 1];
            for i in 0..n {
                starts[leaves.leaf(i, j) as usize + 1] += 1;
            }
            for l in 0..n_leaves {
                starts[l + 1] += starts[l];
            }
            let mut cursor = starts.clone();
            let mut members = vec![0u32; n];
            for i in 0..n {
                let leaf = leaves.leaf(i, j) as usize;
                members[cursor[leaf] as usize] = i as u32;
                cursor[leaf] += 1;
            }
            (starts, members)
        })
        .collect();

    // Shared-leaf counts for pairs i < j: row i counts every co-resident
    // that comes after it, so each pair is counted exactly once.
    let mut counts = vec![0u32; n * n];
    counts.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, (starts, members)) in trees.iter().enumerate() {
            let leaf = leaves.leaf(i, j) as usize;
            let bucket = &members[starts[leaf] as usize..starts[leaf + 1] as usize];
            let after = bucket.partition_point(|&b| b <= i as u32);
            for &b in &bucket[after..] {
                row[b as usize] += 1;
            }
        }
    });

    // Each entry is (t - shared) / t: one exact integer subtraction and a
    // single correctly-rounded division, so every entry encodes its integer
    // separation count exactly (recoverable as round(d·t) for t < 2^51).
    let mut values = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let separated = t as u32 - counts[i * n + j];
            let d = separated as f64 / t as f64;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DistanceMatrix {
        n,
        values,
        grain: t as u32,
        source_hash: leaves.digest(),
    }
}

impl DistanceMatrix {
    /// Assemble a matrix from raw entries, checking that it is square,
    /// symmetric, zero on the diagonal, within [0, 1], and that every entry
    /// is a multiple of `1/grain` stored as the correctly-rounded division.
    pub fn from_values(values: Vec<f64>, grain: u32, source_hash: u64) -> Result<Self> {
        let matrix = DistanceMatrix {
            n: (values.len() as f64).sqrt() as usize,
            values,
            grain,
            source_hash,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::MatrixFormat(msg);
        if self.n * self.n != self.values.len() {
            return Err(bad(format!(
                "{} entries do not form a square",
                self.values.len()
            )));
        }
        if self.grain == 0 {
            return Err(bad("grain must be at least 1".into()));
        }
        let g = self.grain as f64;
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(bad(format!("nonzero diagonal at {i}")));
            }
            for j in 0..self.n {
                let v = self.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("entry ({i}, {j}) is {v}, outside [0, 1]")));
                }
                if v != self.get(j, i) {
                    return Err(bad(format!("asymmetry at ({i}, {j})")));
                }
                let sep = (v * g).round();
                if sep > g || sep / g != v {
                    return Err(bad(format!(
                        "entry ({i}, {j}) = {v} is not a multiple of 1/{}",
                        self.grain
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Denominator of the entries: the number of trees the matrix was built
    /// over. Every entry is an exact multiple of `1/grain`.
    pub fn grain(&self) -> u32 {
        self.grain
    }

    /// Distance between instances `i` and `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Integer separation count between `i` and `j`: the number of trees
    /// routing them to different leaves, i.e. `distance * grain`. Exact.
    pub fn separation(&self, i: usize, j: usize) -> u32 {
        (self.values[i * self.n + j] * self.grain as f64).round() as u32
    }

    /// All distances from instance `i`, in instance order.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Digest of the leaf assignment this matrix was built from.
    pub fn source_hash(&self) -> u64 {
        self.source_hash
    }

    /// Whether this matrix was built from the given leaf assignment.
    pub fn matches_source(&self, leaves: &LeafAssignment) -> bool {
        self.source_hash == leaves.digest()
    }

    /// Write the matrix in the binary on-disk format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        w.write_all(MATRIX_MAGIC).map_err(io_err)?;
        w.write_all(&[MATRIX_VERSION]).map_err(io_err)?;
        w.write_all(&(self.n as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&self.grain.to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.source_hash.to_le_bytes())
            .map_err(io_err)?;
        for &v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    /// Read a matrix written by [`DistanceMatrix::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;

        if bytes.len() < MATRIX_HEADER_LEN {
            return Err(Error::MatrixFormat("file shorter than the header".into()));
        }
        if &bytes[0..4] != MATRIX_MAGIC {
            return Err(Error::MatrixFormat(
                "bad magic, not a distance matrix".into(),
            ));
        }
        let version = bytes[4];
        if version != MATRIX_VERSION {
            return Err(Error::MatrixVersion {
                found: version,
                supported: MATRIX_VERSION,
            });
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let grain = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
        let source_hash = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let expected = (n * n) as u64;
        let payload = &bytes[MATRIX_HEADER_LEN..];
        if payload.len() as u64 != expected * 8 {
            return Err(Error::MatrixSizeMismatch {
                declared: n,
                expected,
                actual: payload.len() as u64 / 8,
            });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let matrix = DistanceMatrix {
            n,
            values,
            grain,
            source_hash,
        };
        matrix.validate()?;
        Ok(matrix)
    }

    /// Write the matrix as plain CSV (one row per instance), for debugging.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        for i in 0..self.n {
            let row = self
                .row(i)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{row}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }
}
