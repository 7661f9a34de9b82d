use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 0 for the evaluation before the first update.
    pub epoch: usize,
    /// Stage number for staged (equation-learner) training.
    pub stage: Option<u8>,
    pub loss: LossBreakdown,
    /// Scaled weight penalty, when the objective has one.
    pub penalty: Option<f64>,
    /// Pruned fraction per category (weight, input, unary, binary).
    pub sparsity: [f64; 4],
    pub mean_thresholds: [f64; 4],
    pub val_mse: f64,
    pub val_accuracy: Option<f64>,
}

impl HistoryRow {
    pub fn is_finite(&self) -> bool {
        let l = &self.loss;
        [l.l_error, l.total, self.val_mse].iter().chain(&l.sparse_terms()).chain(&self.sparsity).chain(&self.mean_thresholds).all(|v| v.is_finite())
            && self.penalty.is_none_or(f64::is_finite)
            && self.val_accuracy.is_none_or(f64::is_finite)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    /// CSV with columns
    /// `epoch[,stage],l_error,l_sparse_weight,l_sparse_input,l_sparse_unary,l_sparse_binary[,penalty],total,`
    /// `s_weight,s_input,s_unary,s_binary,t_weight,t_input,t_unary,t_binary,val_mse[,val_accuracy]`.
    /// Optional columns appear when the first row has them.
    pub fn to_csv(&self) -> Result<String> {
        let first = self.rows.first();
        let staged = first.is_some_and(|r| r.stage.is_some());
        let penalized = first.is_some_and(|r| r.penalty.is_some());
        let classify = first.is_some_and(|r| r.val_accuracy.is_some());

        let mut header = vec!["epoch"];
        if staged {
            header.push("stage");
        }
        header.extend(["l_error", "l_sparse_weight", "l_sparse_input", "l_sparse_unary", "l_sparse_binary"]);
        if penalized {
            header.push("penalty");
        }
        header.extend(["total", "s_weight", "s_input", "s_unary", "s_binary", "t_weight", "t_input", "t_unary", "t_binary", "val_mse"]);
        if classify {
            header.push("val_accuracy");
        }

        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Data(format!("writing history: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.epoch.to_string()];
            if staged {
                rec.push(r.stage.map(|s| s.to_string()).unwrap_or_default());
            }
            rec.push(r.loss.l_error.to_string());
            rec.extend(r.loss.sparse_terms().iter().map(f64::to_string));
            if penalized {
                rec.push(r.penalty.unwrap_or(0.0).to_string());
            }
            rec.push(r.loss.total.to_string());
            rec.extend(r.sparsity.iter().chain(&r.mean_thresholds).map(f64::to_string));
            rec.push(r.val_mse.to_string());
            if classify {
                rec.push(r.val_accuracy.map(|a| a.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("writing history: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}
