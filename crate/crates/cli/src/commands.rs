//! The six pipeline commands. Each resolves its inputs (flags beating the
//! config file), does its work through the library crate, writes artifacts
//! under the output directory, and appends a manifest record.

use std::path::{Path, PathBuf};

use serde::Serialize;

use protoforest::digest::file_digest;
use protoforest::evaluation::{
    evaluate_surrogate, nearest_prototype_classify, prototype_distances, weighted_accuracy,
    ConfusionMatrix, Hyperparameters, MetricsReport,
};
use protoforest::selection::{select_a_pete, select_sm_a, select_sm_wa, Algorithm, StopReason};
use protoforest::sweep::{default_feature_grid, run_sweep, SweepConfig, SweepReport};
use protoforest::{
    balanced_accuracy, load_model, save_model, stratified_split, train_forest, Dataset, SplitPlan,
};

use crate::artifacts::{
    append_manifest, ensure_matrix, load_matching_matrix, load_prototypes, save_prototypes,
    ManifestEntry, PrototypeFile, PROTOTYPE_MAGIC, PROTOTYPE_VERSION,
};
use crate::config::{
    parse_algorithm, parse_algorithms, parse_alphas, parse_feature_grid, parse_feature_spec,
    parse_k_grid, pick, require, FileConfig, SplitPart,
};
use crate::{CliError, CliResult, IoArgs};

struct ResolvedIo {
    data_path: PathBuf,
    label: String,
    out: PathBuf,
    seed: Option<u64>,
}

fn resolve_io(io: IoArgs, file: &FileConfig) -> CliResult<ResolvedIo> {
    let data_path = require(pick(io.data, file.data.clone()), "data")?;
    let label = require(pick(io.label, file.label.clone()), "label")?;
    let out = require(pick(io.out, file.out.clone()), "out")?;
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    Ok(ResolvedIo {
        data_path,
        label,
        out,
        seed: pick(io.seed, file.seed),
    })
}

fn load_split(path: &Path, label: &str, seed: u64) -> CliResult<(Dataset, SplitPlan, Dataset)> {
    let data = Dataset::from_csv(path, label)?;
    let plan = stratified_split(&data, seed)?;
    let train = data.subset(&plan.train);
    Ok((data, plan, train))
}

fn data_digest(path: &Path) -> CliResult<String> {
    file_digest(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::SmA => "sm-a",
        Algorithm::SmWa => "sm-wa",
        Algorithm::APete => "a-pete",
    }
}

fn stop_name(stop: &StopReason) -> &'static str {
    match stop {
        StopReason::ReachedK => "reached-k",
        StopReason::RelativeChange => "relative-change",
        StopReason::ExhaustedReduction => "exhausted-reduction",
        StopReason::ReachedCap => "reached-cap",
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(
    io: IoArgs,
    trees: Option<usize>,
    features: Option<String>,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let seed = r.seed.unwrap_or(42);
    let trees = pick(trees, file.trees).unwrap_or(1000);
    let spec_text = pick(features, file.features.clone()).unwrap_or_else(|| "sqrt".into());
    let spec = parse_feature_spec(&spec_text)?;

    let (data, plan, train) = load_split(&r.data_path, &r.label, seed)?;
    let features_per_split = spec.resolve(data.n_features()).ok_or_else(|| {
        CliError::Usage(format!(
            "--features {spec_text} exceeds the dataset's {} features",
            data.n_features()
        ))
    })?;
    let model = train_forest(&train, trees, features_per_split, seed)?;
    save_model(&model, r.out.join("model.json"))?;

    let entry = ManifestEntry::new("train", Some(seed))
        .input("data", r.data_path.display())
        .input("data_digest", data_digest(&r.data_path)?)
        .input("label", &r.label)
        .param("trees", trees)
        .param("features", &spec_text)
        .param("features_per_split", features_per_split)
        .param("train_rows", plan.train.len())
        .output_file(&r.out, "model.json")?;
    append_manifest(&r.out, entry)?;

    println!(
        "trained {trees} trees on {} instances ({} features, {features_per_split} per split) \
         -> {}",
        train.n_rows(),
        data.n_features(),
        r.out.join("model.json").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

pub fn distances(
    io: IoArgs,
    model: Option<PathBuf>,
    no_cache: bool,
    csv: bool,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let seed = r.seed.unwrap_or(42);
    let model_path = pick(model, file.model.clone()).unwrap_or_else(|| r.out.join("model.json"));
    let no_cache = no_cache || file.no_cache.unwrap_or(false);

    let (_data, _plan, train) = load_split(&r.data_path, &r.label, seed)?;
    let model = load_model(&model_path)?;
    let leaves = model.apply_leaves(&train)?;
    let (matrix, matrix_path, cached) = ensure_matrix(&r.out, &leaves, no_cache)?;
    if csv {
        matrix.export_csv(r.out.join("matrix.csv"))?;
    }

    let matrix_name = matrix_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut entry = ManifestEntry::new("distances", Some(seed))
        .input("data", r.data_path.display())
        .input("model", model_path.display())
        .input("model_digest", data_digest(&model_path)?)
        .param("cached", cached)
        .output_file(&r.out, &matrix_name)?;
    if csv {
        entry = entry.output_file(&r.out, "matrix.csv")?;
    }
    append_manifest(&r.out, entry)?;

    println!(
        "distance matrix {n}x{n} over {t} trees ({how}) -> {path}",
        n = matrix.n(),
        t = leaves.n_trees(),
        how = if cached { "cached" } else { "built" },
        path = matrix_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn select(
    io: IoArgs,
    model: Option<PathBuf>,
    algorithm: Option<String>,
    k: Option<usize>,
    alpha: Option<f64>,
    max_prototypes: Option<usize>,
    matrix: Option<PathBuf>,
    no_cache: bool,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let seed = r.seed.unwrap_or(42);
    let model_path = pick(model, file.model.clone()).unwrap_or_else(|| r.out.join("model.json"));
    let algorithm_text = require(pick(algorithm, file.algorithm.clone()), "algorithm")?;
    let algorithm = parse_algorithm(&algorithm_text)?;
    let k = pick(k, file.k);
    let alpha = pick(alpha, file.alpha);
    let max_prototypes = pick(max_prototypes, file.max_prototypes);
    let matrix_path = pick(matrix, file.matrix.clone());
    let no_cache = no_cache || file.no_cache.unwrap_or(false);

    // Parameter exclusivity: k belongs to the fixed-size selectors, alpha
    // and the prototype cap to the adaptive one.
    match algorithm {
        Algorithm::SmA | Algorithm::SmWa => {
            if alpha.is_some() {
                return Err(CliError::Usage(
                    "--alpha applies only to a-pete; sm-a/sm-wa take --k".into(),
                ));
            }
            if max_prototypes.is_some() {
                return Err(CliError::Usage(
                    "--max-prototypes applies only to a-pete".into(),
                ));
            }
            if k.is_none() {
                return Err(CliError::Usage(format!(
                    "{algorithm_text} needs --k (how many prototypes to select)"
                )));
            }
        }
        Algorithm::APete => {
            if k.is_some() {
                return Err(CliError::Usage(
                    "--k applies only to sm-a/sm-wa; a-pete sizes itself (tune --alpha)".into(),
                ));
            }
        }
    }

    let (_data, plan, train) = load_split(&r.data_path, &r.label, seed)?;
    let model = load_model(&model_path)?;
    let leaves = model.apply_leaves(&train)?;
    let matrix = match &matrix_path {
        Some(path) => load_matching_matrix(path, &leaves)?,
        None => ensure_matrix(&r.out, &leaves, no_cache)?.0,
    };

    let (set, trace) = match algorithm {
        Algorithm::SmA => select_sm_a(&matrix, train.labels(), k.unwrap())?,
        Algorithm::SmWa => select_sm_wa(&matrix, train.labels(), k.unwrap())?,
        Algorithm::APete => select_a_pete(
            &matrix,
            train.labels(),
            alpha.unwrap_or(0.05),
            max_prototypes.unwrap_or(train.n_rows()),
        )?,
    };
    let prototype_file = PrototypeFile {
        magic: PROTOTYPE_MAGIC.to_string(),
        version: PROTOTYPE_VERSION,
        seed,
        model_digest: data_digest(&model_path)?,
        source_hash: leaves.digest(),
        dataset_rows: set.prototypes.iter().map(|p| plan.train[p.index]).collect(),
        set,
        trace,
    };
    save_prototypes(&prototype_file, &r.out.join("prototypes.json"))?;

    let entry = ManifestEntry::new("select", Some(seed))
        .input("data", r.data_path.display())
        .input("model", model_path.display())
        .input("model_digest", prototype_file.model_digest.clone())
        .param("algorithm", algorithm_name(algorithm))
        .param(
            "parameter",
            match algorithm {
                Algorithm::APete => format!("alpha={}", alpha.unwrap_or(0.05)),
                _ => format!("k={}", k.unwrap()),
            },
        )
        .output_file(&r.out, "prototypes.json")?;
    append_manifest(&r.out, entry)?;

    println!(
        "selected {} prototypes with {} (stop: {}) -> {}",
        prototype_file.set.len(),
        algorithm_name(algorithm),
        stop_name(&prototype_file.trace.stop),
        r.out.join("prototypes.json").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Everything `evaluate` writes to metrics.json.
#[derive(Serialize)]
struct EvaluationSummary {
    split: String,
    instances: usize,
    forest_weighted_accuracy: f64,
    forest_balanced_accuracy: f64,
    surrogate: MetricsReport,
    /// Accuracy with the prototype count in parentheses, e.g. "0.92 (7)".
    formatted: String,
}

/// Check that the prototypes were produced from exactly this model and
/// train split; a mismatch means the caller is mixing pipeline runs.
fn verify_provenance(
    prototype_file: &PrototypeFile,
    model_path: &Path,
    leaves_digest: u64,
) -> CliResult<()> {
    let model_digest = data_digest(model_path)?;
    if model_digest != prototype_file.model_digest {
        return Err(CliError::Incompatible(format!(
            "prototypes were selected with a different model (digest {}… vs {}…)",
            &prototype_file.model_digest[..12],
            &model_digest[..12]
        )));
    }
    if leaves_digest != prototype_file.source_hash {
        return Err(CliError::Incompatible(
            "prototypes were selected on a different train split \
             (check --data, --label, and --seed match the select run)"
                .into(),
        ));
    }
    Ok(())
}

fn confusion_of(q: usize, truth: &[usize], predicted: &[usize]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(q);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p);
    }
    cm
}

pub fn evaluate(
    io: IoArgs,
    model: Option<PathBuf>,
    prototypes: Option<PathBuf>,
    split: Option<String>,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let model_path = pick(model, file.model.clone()).unwrap_or_else(|| r.out.join("model.json"));
    let proto_path =
        pick(prototypes, file.prototypes.clone()).unwrap_or_else(|| r.out.join("prototypes.json"));
    let prototype_file = load_prototypes(&proto_path)?;
    // Default to the seed the prototypes were selected under, so a plain
    // `evaluate` after `select` scores the matching split.
    let seed = r.seed.unwrap_or(prototype_file.seed);
    let part = SplitPart::parse(&pick(split, file.split.clone()).unwrap_or_else(|| "test".into()))?;

    let (data, plan, train) = load_split(&r.data_path, &r.label, seed)?;
    let model = load_model(&model_path)?;
    let leaves = model.apply_leaves(&train)?;
    verify_provenance(&prototype_file, &model_path, leaves.digest())?;

    let eval_indices = match part {
        SplitPart::Train => &plan.train,
        SplitPart::Valid => &plan.valid,
        SplitPart::Test => &plan.test,
    };
    let eval_data = data.subset(eval_indices);

    let hyperparameters = Hyperparameters {
        num_trees: model.n_trees(),
        features_per_split: model.features_per_split(),
        seed: model.seed(),
        algorithm: prototype_file.set.algorithm,
        k: match prototype_file.set.algorithm {
            Algorithm::APete => None,
            _ => Some(prototype_file.set.len()),
        },
        alpha: prototype_file.set.alpha,
    };
    let surrogate = evaluate_surrogate(
        &model,
        &prototype_file.set,
        &leaves,
        &eval_data,
        hyperparameters,
    )?;
    let forest_predictions = model.predict_batch(&eval_data)?;
    let forest_cm = confusion_of(data.n_classes(), eval_data.labels(), &forest_predictions);
    let summary = EvaluationSummary {
        split: part.name().to_string(),
        instances: eval_data.n_rows(),
        forest_weighted_accuracy: weighted_accuracy(&forest_cm)?,
        forest_balanced_accuracy: balanced_accuracy(&forest_cm)?,
        formatted: format!(
            "{:.2} ({})",
            surrogate.weighted_accuracy, surrogate.prototype_count
        ),
        surrogate,
    };
    let bytes = serde_json::to_vec_pretty(&summary)
        .map_err(|e| CliError::Data(format!("cannot serialize metrics: {e}")))?;
    std::fs::write(r.out.join("metrics.json"), bytes)
        .map_err(|e| CliError::Data(format!("cannot write metrics.json: {e}")))?;

    let entry = ManifestEntry::new("evaluate", Some(seed))
        .input("data", r.data_path.display())
        .input("model", model_path.display())
        .input("prototypes", proto_path.display())
        .param("split", part.name())
        .output_file(&r.out, "metrics.json")?;
    append_manifest(&r.out, entry)?;

    println!(
        "evaluate: {} part, {} instances, {} prototypes ({})",
        summary.split,
        summary.instances,
        summary.surrogate.prototype_count,
        algorithm_name(summary.surrogate.hyperparameters.algorithm)
    );
    println!(
        "  forest    weighted accuracy {:.4}, balanced {:.4}",
        summary.forest_weighted_accuracy, summary.forest_balanced_accuracy
    );
    println!(
        "  surrogate weighted accuracy {}, balanced {:.4}",
        summary.formatted, summary.surrogate.balanced_accuracy
    );
    println!(
        "  fidelity to forest {:.4}",
        summary.surrogate.fidelity_to_forest
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "algorithm,feature_count,k,alpha,prototype_count,valid_weighted,valid_balanced,\
         valid_fidelity,test_weighted,test_balanced,test_fidelity\n",
    );
    for cell in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            algorithm_name(cell.algorithm),
            cell.feature_count,
            cell.k.map(|v| v.to_string()).unwrap_or_default(),
            cell.alpha.map(|v| v.to_string()).unwrap_or_default(),
            cell.prototype_count,
            cell.valid_weighted,
            cell.valid_balanced,
            cell.valid_fidelity,
            cell.test_weighted,
            cell.test_balanced,
            cell.test_fidelity,
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    io: IoArgs,
    trees: Option<usize>,
    feature_grid: Option<String>,
    k_grid: Option<String>,
    alphas: Option<String>,
    algorithms: Option<String>,
    max_prototypes: Option<usize>,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let seed = r.seed.unwrap_or(42);
    let config = SweepConfig {
        num_trees: pick(trees, file.trees).unwrap_or(1000),
        feature_grid: match pick(feature_grid, file.feature_grid.clone()) {
            Some(text) => parse_feature_grid(&text)?,
            None => default_feature_grid(),
        },
        k_grid: match pick(k_grid, file.k_grid.clone()) {
            Some(text) => parse_k_grid(&text)?,
            None => (1..=20).collect(),
        },
        alpha_grid: match pick(alphas, file.alphas.clone()) {
            Some(text) => parse_alphas(&text)?,
            None => vec![0.05],
        },
        algorithms: match pick(algorithms, file.algorithms.clone()) {
            Some(text) => parse_algorithms(&text)?,
            None => vec![Algorithm::SmA, Algorithm::SmWa, Algorithm::APete],
        },
        seed,
        max_prototypes: pick(max_prototypes, file.max_prototypes),
    };

    let data = Dataset::from_csv(&r.data_path, &r.label)?;
    let plan = stratified_split(&data, seed)?;
    let report = run_sweep(&data, &plan, &config)?;

    std::fs::write(r.out.join("sweep.csv"), sweep_csv(&report))
        .map_err(|e| CliError::Data(format!("cannot write sweep.csv: {e}")))?;
    let bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize sweep report: {e}")))?;
    std::fs::write(r.out.join("sweep.json"), bytes)
        .map_err(|e| CliError::Data(format!("cannot write sweep.json: {e}")))?;

    let entry = ManifestEntry::new("sweep", Some(seed))
        .input("data", r.data_path.display())
        .input("data_digest", data_digest(&r.data_path)?)
        .param("trees", config.num_trees)
        .param("cells", report.cells.len())
        .output_file(&r.out, "sweep.csv")?
        .output_file(&r.out, "sweep.json")?;
    append_manifest(&r.out, entry)?;

    if let Some(forest) = report.best_forest() {
        println!(
            "forest: valid weighted {:.4} -> test weighted {:.4} ({} features per split)",
            forest.valid_weighted, forest.test_weighted, forest.feature_count
        );
    }
    for best in &report.best {
        let parameter = match (best.cell.k, best.cell.alpha) {
            (Some(k), _) => format!("k={k}"),
            (_, Some(alpha)) => format!("alpha={alpha}"),
            _ => String::new(),
        };
        println!(
            "{}: valid weighted {:.4} -> test weighted {:.2} ({}) [{} features, {}]",
            algorithm_name(best.algorithm),
            best.cell.valid_weighted,
            best.cell.test_weighted,
            best.cell.prototype_count,
            best.cell.feature_count,
            parameter
        );
    }
    println!(
        "{} cells -> {} and sweep.json",
        report.cells.len(),
        r.out.join("sweep.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

/// One prototype as seen from the explained instance.
#[derive(Serialize)]
struct PrototypeNeighbor {
    /// Position in the selection order (0-based).
    selection_position: usize,
    /// Row in the original dataset.
    dataset_row: usize,
    class: String,
    distance: f64,
}

/// Per-instance explanation: the nearest prototypes of the predicted class
/// and the nearest prototypes of every other class, ascending by distance.
#[derive(Serialize)]
struct LocalExplanation {
    instance: usize,
    true_label: String,
    forest_prediction: String,
    surrogate_prediction: String,
    same_class: Vec<PrototypeNeighbor>,
    other_class: Vec<PrototypeNeighbor>,
}

pub fn explain(
    io: IoArgs,
    model: Option<PathBuf>,
    prototypes: Option<PathBuf>,
    instance: Option<usize>,
    m: Option<usize>,
    file: &FileConfig,
) -> CliResult<()> {
    let r = resolve_io(io, file)?;
    let model_path = pick(model, file.model.clone()).unwrap_or_else(|| r.out.join("model.json"));
    let proto_path =
        pick(prototypes, file.prototypes.clone()).unwrap_or_else(|| r.out.join("prototypes.json"));
    let prototype_file = load_prototypes(&proto_path)?;
    let seed = r.seed.unwrap_or(prototype_file.seed);
    let instance = require(pick(instance, file.instance), "instance")?;
    let m = pick(m, file.m).unwrap_or(3);

    let (data, _plan, train) = load_split(&r.data_path, &r.label, seed)?;
    if instance >= data.n_rows() {
        return Err(CliError::Data(format!(
            "unknown instance {instance}: the dataset has {} rows",
            data.n_rows()
        )));
    }
    let model = load_model(&model_path)?;
    let leaves = model.apply_leaves(&train)?;
    verify_provenance(&prototype_file, &model_path, leaves.digest())?;

    let row = data.row(instance);
    let distances = prototype_distances(&model, &prototype_file.set, &leaves, row)?;
    let surrogate_class = nearest_prototype_classify(&model, &prototype_file.set, &leaves, row)?;
    let forest_class = model.predict(row)?;

    let mut same_class = Vec::new();
    let mut other_class = Vec::new();
    for (position, p) in prototype_file.set.prototypes.iter().enumerate() {
        let neighbor = PrototypeNeighbor {
            selection_position: position,
            dataset_row: prototype_file.dataset_rows[position],
            class: data.class_names()[p.class_id].clone(),
            distance: distances[position],
        };
        if p.class_id == surrogate_class {
            same_class.push(neighbor);
        } else {
            other_class.push(neighbor);
        }
    }
    for group in [&mut same_class, &mut other_class] {
        group.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .expect("distances are finite")
                .then(a.selection_position.cmp(&b.selection_position))
        });
        group.truncate(m);
    }

    let explanation = LocalExplanation {
        instance,
        true_label: data.class_names()[data.label(instance)].clone(),
        forest_prediction: data.class_names()[forest_class].clone(),
        surrogate_prediction: data.class_names()[surrogate_class].clone(),
        same_class,
        other_class,
    };
    let out_name = format!("explanation-{instance}.json");
    let bytes = serde_json::to_vec_pretty(&explanation)
        .map_err(|e| CliError::Data(format!("cannot serialize explanation: {e}")))?;
    std::fs::write(r.out.join(&out_name), bytes)
        .map_err(|e| CliError::Data(format!("cannot write {out_name}: {e}")))?;

    let entry = ManifestEntry::new("explain", Some(seed))
        .input("data", r.data_path.display())
        .input("prototypes", proto_path.display())
        .param("instance", instance)
        .param("m", m)
        .output_file(&r.out, &out_name)?;
    append_manifest(&r.out, entry)?;

    println!(
        "instance {} (true label {}): forest -> {}, surrogate -> {}",
        explanation.instance,
        explanation.true_label,
        explanation.forest_prediction,
        explanation.surrogate_prediction
    );
    println!("  nearest same-class prototypes:");
    for n in &explanation.same_class {
        println!(
            "    row {} ({}) distance {:.4} [selected #{}]",
            n.dataset_row, n.class, n.distance, n.selection_position
        );
    }
    println!("  nearest other-class prototypes:");
    for n in &explanation.other_class {
        println!(
            "    row {} ({}) distance {:.4} [selected #{}]",
            n.dataset_row, n.class, n.distance, n.selection_position
        );
    }
    Ok(())
}
