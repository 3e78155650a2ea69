//! On-disk artifacts owned by the CLI: the prototype file, the run manifest,
//! and the distance-matrix cache.
//!
//! Every pipeline stage consumes the previous stage's files, so each artifact
//! records enough provenance (digests, seeds) for the next stage to refuse
//! mismatched inputs instead of silently producing nonsense.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protoforest::digest::file_digest;
use protoforest::selection::{PrototypeSet, SelectionTrace};
use protoforest::{build_distance_matrix, DistanceMatrix, LeafAssignment};

use crate::{CliError, CliResult};

pub const PROTOTYPE_MAGIC: &str = "proto-forest-prototypes";
pub const PROTOTYPE_VERSION: u64 = 1;

/// Serialized prototype set plus the provenance needed to re-anchor it:
/// which model (by content digest), which train split (by seed and by the
/// leaf-assignment hash), and which original dataset rows the selection
/// indices refer to.
#[derive(Debug, Serialize, Deserialize)]
pub struct PrototypeFile {
    pub magic: String,
    pub version: u64,
    pub seed: u64,
    pub model_digest: String,
    pub source_hash: u64,
    /// Prototype position -> row index in the original dataset.
    pub dataset_rows: Vec<usize>,
    pub set: PrototypeSet,
    pub trace: SelectionTrace,
}

#[derive(Deserialize)]
struct PrototypeHeader {
    magic: String,
    version: u64,
}

pub fn save_prototypes(file: &PrototypeFile, path: &Path) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(file)
        .map_err(|e| CliError::Data(format!("cannot serialize prototypes: {e}")))?;
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_prototypes(path: &Path) -> CliResult<PrototypeFile> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let file: PrototypeFile = match serde_json::from_slice(&bytes) {
        Ok(file) => file,
        Err(parse_err) => {
            // Distinguish "newer format version" from "not a prototype file":
            // the header alone may still parse when the body has moved on.
            if let Ok(header) = serde_json::from_slice::<PrototypeHeader>(&bytes) {
                if header.magic == PROTOTYPE_MAGIC && header.version != PROTOTYPE_VERSION {
                    return Err(CliError::Incompatible(format!(
                        "{} uses prototype format version {} (this build reads version {})",
                        path.display(),
                        header.version,
                        PROTOTYPE_VERSION
                    )));
                }
            }
            return Err(CliError::Incompatible(format!(
                "{} is not a recognized prototype file: {parse_err}",
                path.display()
            )));
        }
    };
    if file.magic != PROTOTYPE_MAGIC {
        return Err(CliError::Incompatible(format!(
            "{} is not a prototype file (magic {:?})",
            path.display(),
            file.magic
        )));
    }
    if file.version != PROTOTYPE_VERSION {
        return Err(CliError::Incompatible(format!(
            "{} uses prototype format version {} (this build reads version {})",
            path.display(),
            file.version,
            PROTOTYPE_VERSION
        )));
    }
    if file.dataset_rows.len() != file.set.len() {
        return Err(CliError::Incompatible(format!(
            "{} maps {} dataset rows for {} prototypes",
            path.display(),
            file.dataset_rows.len(),
            file.set.len()
        )));
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// One manifest record per command run. `created_unix_seconds` is the only
/// timestamp any artifact carries; everything else is reproducible
/// byte-for-byte from the same inputs and seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tool_version: String,
    pub command: String,
    pub created_unix_seconds: u64,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        let created_unix_seconds = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ManifestEntry {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix_seconds,
            seed,
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, value: impl ToString) -> Self {
        self.inputs.insert(name.to_string(), value.to_string());
        self
    }

    pub fn param(mut self, name: &str, value: impl ToString) -> Self {
        self.params.insert(name.to_string(), value.to_string());
        self
    }

    /// Record an output file by name and content digest.
    pub fn output_file(mut self, dir: &Path, name: &str) -> CliResult<Self> {
        let digest = file_digest(&dir.join(name))
            .map_err(|e| CliError::Data(format!("cannot digest {name}: {e}")))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(self)
    }
}

/// Append one entry to `DIR/manifest.json` (an array of run records).
pub fn append_manifest(out_dir: &Path, entry: ManifestEntry) -> CliResult<()> {
    let path = out_dir.join("manifest.json");
    let mut entries: Vec<ManifestEntry> = if path.exists() {
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| {
            CliError::Data(format!(
                "{} exists but is not a manifest this tool wrote: {e}",
                path.display()
            ))
        })?
    } else {
        Vec::new()
    };
    entries.push(entry);
    let bytes = serde_json::to_vec_pretty(&entries)
        .map_err(|e| CliError::Data(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(&path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Distance-matrix cache
// ---------------------------------------------------------------------------

/// Cache file name for a matrix, keyed by the leaf-assignment digest (which
/// covers the model, the dataset, and the split it was applied to).
pub fn matrix_cache_path(out_dir: &Path, source_hash: u64) -> PathBuf {
    out_dir.join(format!("matrix-{source_hash:016x}.pfdm"))
}

/// Load the cached matrix for these leaves or build and cache it.
/// Returns the matrix, its path, and whether the cache was hit.
pub fn ensure_matrix(
    out_dir: &Path,
    leaves: &LeafAssignment,
    no_cache: bool,
) -> CliResult<(DistanceMatrix, PathBuf, bool)> {
    let path = matrix_cache_path(out_dir, leaves.digest());
    if !no_cache && path.exists() {
        let matrix = DistanceMatrix::load(&path).map_err(CliError::from)?;
        if !matrix.matches_source(leaves) {
            return Err(CliError::Incompatible(format!(
                "{} does not match the current model/data/split (source hash differs)",
                path.display()
            )));
        }
        return Ok((matrix, path, true));
    }
    let matrix = build_distance_matrix(leaves);
    matrix.save(&path).map_err(CliError::from)?;
    Ok((matrix, path, false))
}

/// Load an explicitly named matrix and insist it matches these leaves.
pub fn load_matching_matrix(path: &Path, leaves: &LeafAssignment) -> CliResult<DistanceMatrix> {
    let matrix = DistanceMatrix::load(path).map_err(CliError::from)?;
    if !matrix.matches_source(leaves) {
        return Err(CliError::Incompatible(format!(
            "{} was built from a different model, dataset, or split (source hash mismatch)",
            path.display()
        )));
    }
    Ok(matrix)
}
