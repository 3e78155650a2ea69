//! Flag/config-file merging and small value parsers.
//!
//! A JSON config file may supply any long flag's value under the same name
//! (kebab-case flags become snake_case keys). Explicit flags always win;
//! built-in defaults apply last.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use protoforest::selection::Algorithm;
use protoforest::sweep::FeatureSpec;

use crate::{CliError, CliResult};

/// Optional values a JSON config file can contribute. Unknown keys are
/// rejected so typos surface as usage errors instead of silent defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub label: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trees: Option<usize>,
    pub features: Option<String>,
    pub algorithm: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub max_prototypes: Option<usize>,
    pub split: Option<String>,
    pub instance: Option<usize>,
    pub m: Option<usize>,
    pub feature_grid: Option<String>,
    pub k_grid: Option<String>,
    pub alphas: Option<String>,
    pub algorithms: Option<String>,
    pub model: Option<PathBuf>,
    pub prototypes: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub no_cache: Option<bool>,
}

pub fn load_config(path: &Path) -> CliResult<FileConfig> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("config {} is not valid: {e}", path.display())))
}

/// Resolve a value: explicit flag beats config file beats nothing.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Like [`pick`], but the value is mandatory.
pub fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag} (flag or config file)")))
}

/// Parse one feature-subsample token: `sqrt`, a whole count like `7`, or a
/// fraction of the feature count like `0.5`.
pub fn parse_feature_spec(token: &str) -> CliResult<FeatureSpec> {
    let token = token.trim();
    if token.eq_ignore_ascii_case("sqrt") {
        return Ok(FeatureSpec::Sqrt);
    }
    if let Ok(count) = token.parse::<usize>() {
        if count == 0 {
            return Err(CliError::Usage("feature count must be at least 1".into()));
        }
        return Ok(FeatureSpec::Count(count));
    }
    if let Ok(fraction) = token.parse::<f64>() {
        if fraction > 0.0 && fraction < 1.0 {
            return Ok(FeatureSpec::Fraction(fraction));
        }
    }
    Err(CliError::Usage(format!(
        "unrecognized feature spec {token:?}: expected `sqrt`, a count like `7`, \
         or a fraction like `0.5`"
    )))
}

/// Parse a comma-separated feature grid, e.g. `sqrt,7,0.33,0.5,0.7`.
pub fn parse_feature_grid(tokens: &str) -> CliResult<Vec<FeatureSpec>> {
    tokens.split(',').map(parse_feature_spec).collect()
}

pub fn parse_algorithm(token: &str) -> CliResult<Algorithm> {
    match token.trim().to_ascii_lowercase().as_str() {
        "sm-a" => Ok(Algorithm::SmA),
        "sm-wa" => Ok(Algorithm::SmWa),
        "a-pete" => Ok(Algorithm::APete),
        other => Err(CliError::Usage(format!(
            "unknown algorithm {other:?}: expected sm-a, sm-wa, or a-pete"
        ))),
    }
}

pub fn parse_algorithms(tokens: &str) -> CliResult<Vec<Algorithm>> {
    tokens.split(',').map(parse_algorithm).collect()
}

/// Parse a k grid: comma-separated values and/or inclusive ranges, e.g.
/// `1-20` or `1,2,5-8`.
pub fn parse_k_grid(tokens: &str) -> CliResult<Vec<usize>> {
    let mut grid = Vec::new();
    for token in tokens.split(',') {
        let token = token.trim();
        if let Some((lo, hi)) = token.split_once('-') {
            let lo: usize = lo.trim().parse().map_err(|_| bad_k(token))?;
            let hi: usize = hi.trim().parse().map_err(|_| bad_k(token))?;
            if lo == 0 || hi < lo {
                return Err(bad_k(token));
            }
            grid.extend(lo..=hi);
        } else {
            let k: usize = token.parse().map_err(|_| bad_k(token))?;
            if k == 0 {
                return Err(bad_k(token));
            }
            grid.push(k);
        }
    }
    Ok(grid)
}

fn bad_k(token: &str) -> CliError {
    CliError::Usage(format!(
        "invalid k grid entry {token:?}: expected positive values like `5` or ranges like `1-20`"
    ))
}

pub fn parse_alphas(tokens: &str) -> CliResult<Vec<f64>> {
    tokens
        .split(',')
        .map(|token| {
            token.trim().parse::<f64>().map_err(|_| {
                CliError::Usage(format!(
                    "invalid alpha {:?}: expected a number",
                    token.trim()
                ))
            })
        })
        .collect()
}

/// Which split part an evaluation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Valid,
    Test,
}

impl SplitPart {
    pub fn parse(token: &str) -> CliResult<Self> {
        match token.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitPart::Train),
            "valid" | "validation" => Ok(SplitPart::Valid),
            "test" => Ok(SplitPart::Test),
            other => Err(CliError::Usage(format!(
                "unknown split part {other:?}: expected train, valid, or test"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Valid => "valid",
            SplitPart::Test => "test",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_specs_parse_all_three_forms() {
        assert_eq!(parse_feature_spec("sqrt").unwrap(), FeatureSpec::Sqrt);
        assert_eq!(parse_feature_spec("7").unwrap(), FeatureSpec::Count(7));
        assert_eq!(
            parse_feature_spec("0.5").unwrap(),
            FeatureSpec::Fraction(0.5)
        );
        assert!(parse_feature_spec("0").is_err());
        assert!(parse_feature_spec("1.5").is_err());
        assert!(parse_feature_spec("all").is_err());
    }

    #[test]
    fn k_grid_supports_ranges_and_lists() {
        assert_eq!(parse_k_grid("1-4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_k_grid("2,5,9").unwrap(), vec![2, 5, 9]);
        assert_eq!(parse_k_grid("1,3-5").unwrap(), vec![1, 3, 4, 5]);
        assert!(parse_k_grid("0-3").is_err());
        assert!(parse_k_grid("5-2").is_err());
        assert!(parse_k_grid("x").is_err());
    }

    #[test]
    fn algorithms_parse_case_insensitively() {
        assert_eq!(parse_algorithm("SM-A").unwrap(), Algorithm::SmA);
        assert_eq!(
            parse_algorithms("sm-a,a-pete").unwrap(),
            vec![Algorithm::SmA, Algorithm::APete]
        );
        assert!(parse_algorithm("pam").is_err());
    }

    #[test]
    fn flags_beat_config_values() {
        assert_eq!(pick(Some(7), Some(5)), Some(7));
        assert_eq!(pick(None, Some(5)), Some(5));
        assert_eq!(pick::<usize>(None, None), None);
    }
}
