//! Tabular dataset with dense class ids and ordinal-encoded categoricals.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A numeric feature matrix with class labels.
///
/// Features are stored row-major. Labels are dense class ids in `[0, q)`,
/// assigned by first appearance in the source file; `class_names` records
/// the original label strings in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    n_rows: usize,
    n_features: usize,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from parts, validating the structural invariants.
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::NoFeatures);
        }
        assert_eq!(
            features.len() % n_features,
            0,
            "feature buffer length must be a multiple of n_features"
        );
        let n_rows = features.len() / n_features;
        if n_rows < 2 {
            return Err(Error::TooFewRows(n_rows));
        }
        assert_eq!(labels.len(), n_rows, "one label per row");
        assert_eq!(feature_names.len(), n_features, "one name per feature");
        let q = class_names.len();
        if q < 2 {
            return Err(Error::SingleClass(
                class_names.first().cloned().unwrap_or_default(),
            ));
        }
        let mut seen = vec![false; q];
        for &l in &labels {
            assert!(l < q, "class id {l} out of range for {q} classes");
            seen[l] = true;
        }
        assert!(seen.iter().all(|&s| s), "every class id must appear");
        for &v in &features {
            assert!(v.is_finite(), "non-finite feature value");
        }
        Ok(Self {
            features,
            n_rows,
            n_features,
            labels,
            feature_names,
            class_names,
        })
    }

    /// Read a CSV file with a header row, treating `label_column` as the class
    /// label and every other column as a feature.
    ///
    /// Non-numeric columns are ordinal-encoded by first appearance. Labels are
    /// mapped to dense class ids by first appearance. Row order is preserved.
    pub fn from_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);

        let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let label_idx = headers
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, h)| h.clone())
            .collect();
        if feature_names.is_empty() {
            return Err(Error::NoFeatures);
        }

        // First pass: collect raw cells so each column's type can be decided
        // from all of its values.
        let mut raw_rows: Vec<Vec<String>> = Vec::new();
        let mut raw_labels: Vec<String> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let line = idx + 2; // header occupies line 1
            if record.iter().all(|f| f.trim().is_empty()) {
                return Err(Error::EmptyRow(line));
            }
            let mut row = Vec::with_capacity(feature_names.len());
            for (col, field) in record.iter().enumerate() {
                let name = headers
                    .get(col)
                    .cloned()
                    .unwrap_or_else(|| format!("column {col}"));
                if field.trim().is_empty() {
                    return Err(Error::EmptyValue { line, column: name });
                }
                if col == label_idx {
                    raw_labels.push(field.trim().to_owned());
                } else {
                    row.push(field.trim().to_owned());
                }
            }
            raw_rows.push(row);
        }
        if raw_rows.len() < 2 {
            return Err(Error::TooFewRows(raw_rows.len()));
        }

        let n_features = feature_names.len();
        // A column is numeric only if every value parses as f64.
        let mut is_numeric = vec![true; n_features];
        for row in &raw_rows {
            for (c, cell) in row.iter().enumerate() {
                if is_numeric[c] && cell.parse::<f64>().is_err() {
                    is_numeric[c] = false;
                }
            }
        }

        let mut features = Vec::with_capacity(raw_rows.len() * n_features);
        let mut codes: Vec<HashMap<String, f64>> = vec![HashMap::new(); n_features];
        for (idx, row) in raw_rows.iter().enumerate() {
            let line = idx + 2;
            for (c, cell) in row.iter().enumerate() {
                if is_numeric[c] {
                    let v: f64 = cell.parse().expect("column was vetted as numeric");
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            line,
                            column: feature_names[c].clone(),
                            value: cell.clone(),
                        });
                    }
                    features.push(v);
                } else {
                    let next = codes[c].len() as f64;
                    let code = *codes[c].entry(cell.clone()).or_insert(next);
                    features.push(code);
                }
            }
        }

        let mut class_names: Vec<String> = Vec::new();
        let mut labels = Vec::with_capacity(raw_labels.len());
        for raw in &raw_labels {
            let id = match class_names.iter().position(|c| c == raw) {
                Some(id) => id,
                None => {
                    class_names.push(raw.clone());
                    class_names.len() - 1
                }
            };
            labels.push(id);
        }
        if class_names.len() < 2 {
            return Err(Error::SingleClass(class_names.pop().unwrap_or_default()));
        }

        Self::new(features, n_features, labels, feature_names, class_names)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// The full feature matrix, row-major.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Number of instances per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Extract the given rows into a new dataset, preserving the class-id
    /// mapping of the parent. Intended for split parts, which are guaranteed
    /// to keep every class populated.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            n_rows: indices.len(),
            n_features: self.n_features,
            labels,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("temp file");
        f.write_all(content.as_bytes()).expect("write");
        f
    }

    #[test]
    fn ordinal_encoding_by_first_appearance() {
        let f = write_csv("grade,label\nlow,a\nhigh,b\nlow,a\n");
        let d = Dataset::from_csv(f.path(), "label").unwrap();
        let col: Vec<f64> = (0..3).map(|i| d.row(i)[0]).collect();
        assert_eq!(col, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn label_ids_by_first_appearance() {
        let f = write_csv("x,label\n1,B\n2,M\n3,B\n");
        let d = Dataset::from_csv(f.path(), "label").unwrap();
        assert_eq!(d.class_names(), &["B".to_owned(), "M".to_owned()]);
        assert_eq!(d.labels(), &[0, 1, 0]);
    }

    #[test]
    fn single_class_rejected() {
        let f = write_csv("x,label\n1,a\n2,a\n");
        match Dataset::from_csv(f.path(), "label") {
            Err(Error::SingleClass(c)) => assert_eq!(c, "a"),
            other => panic!("expected SingleClass, got {other:?}"),
        }
    }

    #[test]
    fn missing_label_column_rejected() {
        let f = write_csv("x,y\n1,2\n3,4\n");
        assert!(matches!(
            Dataset::from_csv(f.path(), "label"),
            Err(Error::MissingLabelColumn(_))
        ));
    }

    #[test]
    fn missing_file_rejected() {
        assert!(matches!(
            Dataset::from_csv("/definitely/not/here.csv", "label"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn non_finite_numeric_rejected() {
        let f = write_csv("x,label\n1,a\ninf,b\n");
        match Dataset::from_csv(f.path(), "label") {
            Err(Error::NonFinite { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn empty_row_rejected() {
        let f = write_csv("x,label\n1,a\n,\n2,b\n");
        match Dataset::from_csv(f.path(), "label") {
            Err(Error::EmptyRow(line)) => assert_eq!(line, 3),
            other => panic!("expected EmptyRow, got {other:?}"),
        }
    }

    #[test]
    fn empty_value_rejected() {
        let f = write_csv("x,y,label\n1,2,a\n3,,b\n");
        assert!(matches!(
            Dataset::from_csv(f.path(), "label"),
            Err(Error::EmptyValue { line: 3, .. })
        ));
    }

    #[test]
    fn mixed_column_becomes_categorical() {
        // "1.5" parses as a number but the column holds "abc" too, so the
        // whole column is encoded ordinally.
        let f = write_csv("x,label\n1.5,a\nabc,b\n1.5,a\n");
        let d = Dataset::from_csv(f.path(), "label").unwrap();
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.row(1)[0], 1.0);
        assert_eq!(d.row(2)[0], 0.0);
    }

    #[test]
    fn wdbc_shape() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/wdbc.csv");
        let d = Dataset::from_csv(path, "diagnosis").unwrap();
        assert_eq!(d.n_rows(), 569);
        assert_eq!(d.n_features(), 30);
        assert_eq!(d.n_classes(), 2);
    }

    #[test]
    fn subset_preserves_rows_and_mapping() {
        let f = write_csv("x,label\n1,a\n2,b\n3,a\n4,b\n");
        let d = Dataset::from_csv(f.path(), "label").unwrap();
        let s = d.subset(&[2, 1]);
        assert_eq!(s.n_rows(), 2);
        assert_eq!(s.row(0)[0], 3.0);
        assert_eq!(s.labels(), &[0, 1]);
        assert_eq!(s.class_names(), d.class_names());
    }
}
