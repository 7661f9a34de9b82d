//! Datasets: CSV and IDX ingestion, standardization, seeded splits and synthetic targets.

mod csv;
mod idx;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use self::csv::{load_csv, CsvOptions, LabelSpec};
pub use idx::{load_idx, read_idx, write_idx, IdxTensor, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::{synth_generate, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Per-feature affine preprocessing `(x − mean) / std`; features with `std = 0` map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics of each column.
    pub fn fit<T: Scalar>(features: &Array<T>) -> Self {
        let (n, d) = (features.rows(), features.cols());
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (j, &v) in features.row(r).iter().enumerate() {
                mean[j] += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            for (j, &v) in features.row(r).iter().enumerate() {
                let c = v.as_f64() - mean[j];
                var[j] += c * c;
            }
        }
        let std = var
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / n as f64).sqrt();
                if s == 0.0 {
                    log::warn!("feature {j} is constant; it will standardize to 0");
                }
                s
            })
            .collect();
        Self { mean, std }
    }

    /// Scale applied to feature `j`; 0 for constant features.
    pub fn scale(&self, j: usize) -> f64 {
        if self.std[j] == 0.0 {
            0.0
        } else {
            1.0 / self.std[j]
        }
    }

    pub fn apply<T: Scalar>(&self, features: &Array<T>) -> Result<Array<T>> {
        if features.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardization has {} features, data has {}",
                self.mean.len(),
                features.cols()
            )));
        }
        let d = self.mean.len();
        let data = features
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % d;
                T::lit((v.as_f64() - self.mean[j]) * self.scale(j))
            })
            .collect();
        Array::new(features.shape().to_vec(), data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    /// `N × n_input`
    pub features: Array<T>,
    /// `N × n_output`
    pub labels: Array<T>,
    pub feature_names: Option<Vec<String>>,
    pub task: Task,
    pub standardization: Option<Standardization>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Array<T>, labels: Array<T>, task: Task) -> Result<Self> {
        if features.shape().len() != 2 || labels.shape().len() != 2 {
            return Err(Error::Shape("features and labels must be 2-D".into()));
        }
        if features.rows() != labels.rows() {
            return Err(Error::Shape(format!("{} feature rows vs {} label rows", features.rows(), labels.rows())));
        }
        if features.rows() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if !features.is_finite() || !labels.is_finite() {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Self { features, labels, feature_names: None, task, standardization: None })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_input() {
            return Err(Error::Data(format!("{} feature names for {} features", names.len(), self.n_input())));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_input(&self) -> usize {
        self.features.cols()
    }

    pub fn n_output(&self) -> usize {
        self.labels.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: self.labels.select_rows(idx),
            feature_names: self.feature_names.clone(),
            task: self.task,
            standardization: self.standardization.clone(),
        }
    }

    /// Class index of each row (argmax of the one-hot label).
    pub fn class_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|r| argmax(self.labels.row(r))).collect()
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Train/validation/test partition of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Splits<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}

impl<T: Scalar> Splits<T> {
    /// Fits statistics on the training split and applies them to all three.
    pub fn standardize(mut self) -> Result<Self> {
        let st = Standardization::fit(&self.train.features);
        for ds in [&mut self.train, &mut self.val, &mut self.test] {
            ds.features = st.apply(&ds.features)?;
            ds.standardization = Some(st.clone());
        }
        Ok(self)
    }
}

/// Shuffled index partition with `round(f·N)` rows for validation and test and the remainder
/// for training.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 rows to split, got {n}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n_val = (ratios[1] * n as f64).round() as usize;
    let n_test = (ratios[2] * n as f64).round() as usize;
    if n_val + n_test >= n {
        return Err(Error::Data(format!("split of {n} rows leaves no training data")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(n - n_test - n_val);
    Ok([idx, val, test])
}

pub fn split<T: Scalar>(ds: &Dataset<T>, ratios: [f64; 3], seed: u64) -> Result<Splits<T>> {
    let [a, b, c] = split_indices(ds.len(), ratios, seed)?;
    Ok(Splits { train: ds.subset(&a), val: ds.subset(&b), test: ds.subset(&c) })
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];
