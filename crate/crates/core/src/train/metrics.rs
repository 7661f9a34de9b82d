use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::{argmax, Dataset, Task};
use crate::error::{Error, Result};
use crate::loss::mse;
use crate::net::Network;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// Argmax agreement with the one-hot labels (classification only).
    pub accuracy: Option<f64>,
    /// One-vs-rest AUC per output (classification only; `None` when a class is absent).
    pub auc: Option<Vec<Option<f64>>>,
}

/// Rank-based AUC: (concordant + ½·ties) / (P·N) over all positive–negative pairs.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument("AUC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tied groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of rows whose argmax output matches the argmax label.
pub fn accuracy<T: Scalar>(predictions: &Array<T>, labels: &Array<T>) -> Result<f64> {
    if predictions.shape() != labels.shape() {
        return Err(Error::Shape(format!("predictions {:?} vs labels {:?}", predictions.shape(), labels.shape())));
    }
    let n = predictions.rows();
    let hits = (0..n).filter(|&r| argmax(predictions.row(r)) == argmax(labels.row(r))).count();
    Ok(hits as f64 / n as f64)
}

pub fn evaluate_predictions<T: Scalar>(predictions: &Array<T>, data: &Dataset<T>) -> Result<Metrics> {
    if predictions.shape() != data.labels.shape() {
        return Err(Error::Shape(format!(
            "{} outputs for {} label columns",
            predictions.cols(),
            data.n_output()
        )));
    }
    let m = mse(predictions, &data.labels)?.as_f64();
    if data.task == Task::Regression {
        return Ok(Metrics { mse: m, accuracy: None, auc: None });
    }
    let acc = accuracy(predictions, &data.labels)?;
    let aucs = (0..data.n_output())
        .map(|k| {
            let scores: Vec<f64> = predictions.column(k).into_iter().map(|v| v.as_f64()).collect();
            let labels: Vec<bool> = data.labels.column(k).into_iter().map(|v| v > T::lit(0.5)).collect();
            auc(&scores, &labels).ok()
        })
        .collect();
    Ok(Metrics { mse: m, accuracy: Some(acc), auc: Some(aucs) })
}

pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<Metrics> {
    if net.output_dim() != data.n_output() {
        return Err(Error::Shape(format!("network has {} outputs, data has {}", net.output_dim(), data.n_output())));
    }
    evaluate_predictions(&net.forward_masked(&data.features)?, data)
}
