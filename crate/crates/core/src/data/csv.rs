use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How label columns are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub labels: LabelSpec,
    pub task: Task,
    /// Feature columns in order; every non-label column when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl CsvOptions {
    pub fn new(labels: &[&str], task: Task) -> Self {
        Self { labels: LabelSpec { columns: labels.iter().map(|s| s.to_string()).collect() }, task, features: None }
    }
}

/// Reads a headered CSV file.
///
/// A single label column under a classification task is treated as categorical and one-hot
/// encoded over its sorted distinct values (numerically sorted when every value parses).
/// Any other label layout is read as numeric columns. Errors name the 1-based data row.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let label_cols = opts.labels.columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    if label_cols.is_empty() {
        return Err(Error::Data("at least one label column is required".into()));
    }
    let feature_cols = match &opts.features {
        Some(names) => names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?,
        None => (0..header.len()).filter(|i| !label_cols.contains(i)).collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let categorical = opts.task == Task::Classification && label_cols.len() == 1;

    let mut features = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut numeric_labels = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data(format!("{}: row {row}: {e}", path.display())))?;
        let cell = |col: usize| -> Result<f64> {
            let text = rec.get(col).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| {
                Error::Data(format!("{}: row {row}, column `{}`: non-numeric value `{text}`", path.display(), header[col]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: row {row}, column `{}`: non-finite value", path.display(), header[col])));
            }
            Ok(v)
        };
        for &c in &feature_cols {
            features.push(T::lit(cell(c)?));
        }
        if categorical {
            raw_labels.push(rec.get(label_cols[0]).unwrap_or("").to_string());
        } else {
            for &c in &label_cols {
                numeric_labels.push(T::lit(cell(c)?));
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let labels = if categorical {
        let classes = sorted_classes(&raw_labels);
        let k = classes.len();
        let mut data = vec![T::zero(); rows * k];
        for (r, v) in raw_labels.iter().enumerate() {
            let c = classes.iter().position(|x| x == v).expect("class collected above");
            data[r * k + c] = T::one();
        }
        Array::matrix(rows, k, data)?
    } else {
        Array::matrix(rows, label_cols.len(), numeric_labels)?
    };
    let features = Array::matrix(rows, feature_cols.len(), features)?;
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Dataset::new(features, labels, opts.task)?.with_feature_names(names)
}

fn sorted_classes(values: &[String]) -> Vec<String> {
    let unique: BTreeSet<&String> = values.iter().collect();
    let mut classes: Vec<String> = unique.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = classes.iter().map(|c| c.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(classes).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        classes = pairs.into_iter().map(|p| p.1).collect();
    }
    classes
}
