//! Training objective: MSE plus four self-adaptive sparsity terms.
//!
//! Each sparse term is `l_error · D(s; α, d) · reg`, where `reg` pulls thresholds upward and
//! the decay factor `D` switches the pull off once the measured sparsity `s` reaches its
//! target `α`. The coefficient `l_error · D` is held constant during differentiation.

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::diff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::net::{Network, SparsityReport, SparsityTargets, ThresholdNodes};
use crate::scalar::Scalar;

/// `exp[−(α / (α − min(s, α)))^d + 1]`, defined as 0 for `s ≥ α` and for `α = 0`.
pub fn decay_factor(s: f64, alpha: f64, d: f64) -> f64 {
    if alpha <= 0.0 || s >= alpha {
        return 0.0;
    }
    let ratio = alpha / (alpha - s.min(alpha));
    (-ratio.powf(d) + 1.0).exp()
}

/// `(1/n) Σ exp(−tᵢ)` over weight thresholds; 0 when there are none.
pub fn weight_threshold_reg<T: Scalar>(thresholds: &[T]) -> T {
    if thresholds.is_empty() {
        return T::zero();
    }
    thresholds.iter().map(|&t| (-t).exp()).sum::<T>() / T::lit(thresholds.len() as f64)
}

/// `exp(−(1/n) Σ tᵢ)` over bounded auxiliary thresholds; 0 when there are none.
pub fn aux_threshold_reg<T: Scalar>(thresholds: &[T]) -> T {
    if thresholds.is_empty() {
        return T::zero();
    }
    let mean = thresholds.iter().copied().sum::<T>() / T::lit(thresholds.len() as f64);
    (-mean).exp()
}

/// Mean squared error over all `N × n_out` entries.
pub fn mse<T: Scalar>(predictions: &Array<T>, labels: &Array<T>) -> Result<T> {
    if predictions.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs labels {:?}",
            predictions.shape(),
            labels.shape()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("mse of an empty batch".into()));
    }
    let sum: T = predictions.data().iter().zip(labels.data()).map(|(&p, &y)| (y - p) * (y - p)).sum();
    Ok(sum / T::lit(predictions.len() as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_error: f64,
    pub l_sparse_weight: f64,
    pub l_sparse_input: f64,
    pub l_sparse_unary: f64,
    pub l_sparse_binary: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn sparse_terms(&self) -> [f64; 4] {
        [self.l_sparse_weight, self.l_sparse_input, self.l_sparse_unary, self.l_sparse_binary]
    }
}

/// Coefficients `l_error · D(s_cat; α_cat, d)` multiplying each regularizer.
pub fn sparse_coefficients(l_error: f64, report: &SparsityReport, targets: &SparsityTargets, d: f64) -> [f64; 4] {
    let s = report.as_array();
    let a = [targets.weight, targets.input, targets.unary, targets.binary];
    [0, 1, 2, 3].map(|i| l_error * decay_factor(s[i], a[i], d))
}

/// Assembles the full objective from its parts; `regs` is (weight, input, unary, binary).
pub fn total_loss(l_error: f64, report: &SparsityReport, regs: [f64; 4], targets: &SparsityTargets, d: f64) -> LossBreakdown {
    let c = sparse_coefficients(l_error, report, targets, d);
    let terms = [0, 1, 2, 3].map(|i| c[i] * regs[i]);
    LossBreakdown {
        l_error,
        l_sparse_weight: terms[0],
        l_sparse_input: terms[1],
        l_sparse_unary: terms[2],
        l_sparse_binary: terms[3],
        total: l_error + terms.iter().sum::<f64>(),
    }
}

/// Regularizer values computed from a network's current thresholds.
pub fn network_regs<T: Scalar>(net: &Network<T>) -> [f64; 4] {
    let weights: Vec<T> =
        net.linear.iter().flat_map(|l| l.weight.thresholds.data().iter().chain(l.bias.thresholds.data())).copied().collect();
    let unary: Vec<T> = net.unary_gates.iter().flat_map(|g| g.thresholds.data()).copied().collect();
    let binary: Vec<T> = net.binary_gates.iter().flat_map(|g| g.thresholds.data()).copied().collect();
    [
        weight_threshold_reg(&weights).as_f64(),
        aux_threshold_reg(net.input_gate.thresholds.data()).as_f64(),
        aux_threshold_reg(&unary).as_f64(),
        aux_threshold_reg(&binary).as_f64(),
    ]
}

/// Full loss breakdown of a gated network on a labelled batch.
pub fn network_loss<T: Scalar>(net: &Network<T>, features: &Array<T>, labels: &Array<T>) -> Result<LossBreakdown> {
    let pred = net.forward_masked(features)?;
    let l_error = mse(&pred, labels)?.as_f64();
    let report = net.sparsity();
    Ok(total_loss(l_error, &report, network_regs(net), &net.spec.targets, net.spec.decay_rate))
}

/// Regularizer nodes on a tape, `None` for empty categories.
#[derive(Clone, Copy, Debug)]
pub struct RegNodes {
    pub nodes: [Option<NodeId>; 4],
}

/// Records the four threshold regularizers over the recorded threshold nodes.
pub fn record_regularizers<T: Scalar>(tape: &mut Tape<T>, thresholds: &ThresholdNodes, counts: [usize; 4]) -> Result<RegNodes> {
    let weight = if counts[0] == 0 {
        None
    } else {
        let mut sums = Vec::with_capacity(thresholds.weight.len());
        for &t in &thresholds.weight {
            let e = tape.apply1("neg", t)?;
            let e = tape.apply1("exp", e)?;
            sums.push(tape.sum(e));
        }
        Some(sum_scaled(tape, &sums, counts[0])?)
    };
    let mut aux = |nodes: &[NodeId], n: usize| -> Result<Option<NodeId>> {
        if n == 0 {
            return Ok(None);
        }
        let sums: Vec<NodeId> = nodes.iter().map(|&t| tape.sum(t)).collect();
        let mean = sum_scaled(tape, &sums, n)?;
        let neg = tape.apply1("neg", mean)?;
        Ok(Some(tape.apply1("exp", neg)?))
    };
    let input = aux(&thresholds.input, counts[1])?;
    let unary = aux(&thresholds.unary, counts[2])?;
    let binary = aux(&thresholds.binary, counts[3])?;
    Ok(RegNodes { nodes: [weight, input, unary, binary] })
}

fn sum_scaled<T: Scalar>(tape: &mut Tape<T>, parts: &[NodeId], n: usize) -> Result<NodeId> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.apply2("add", acc, p)?;
    }
    Ok(tape.scale(acc, T::one() / T::lit(n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(s: [f64; 4]) -> SparsityReport {
        SparsityReport { s_weight: s[0], s_input: s[1], s_unary: s[2], s_binary: s[3], pruned: [0; 4], total: [1; 4] }
    }

    #[test]
    fn decay_factor_values() {
        for d in [0.01, 0.1, 1.0, 3.0] {
            assert_eq!(decay_factor(0.0, 0.8, d), 1.0);
            assert_eq!(decay_factor(0.8, 0.8, d), 0.0);
            assert_eq!(decay_factor(0.95, 0.8, d), 0.0);
        }
        assert_eq!(decay_factor(0.0, 0.0, 1.0), 0.0);
        assert!((decay_factor(0.5, 0.8, 1.0) - (-5.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((decay_factor(0.5, 0.8, 1.0) - 0.18888).abs() < 1e-5);
    }

    #[test]
    fn decay_factor_is_continuous_at_target() {
        for d in [0.01, 0.1, 1.0] {
            let near = decay_factor(0.8 - 1e-12, 0.8, d);
            assert!(near <= decay_factor(0.8 - 1e-3, 0.8, d));
        }
        // the limit is reached quickly for d = 1
        assert!(decay_factor(0.8 - 1e-9, 0.8, 1.0) < 1e-6);
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(weight_threshold_reg(&[0.0f64, 0.0, 0.0]), 1.0);
        assert!((weight_threshold_reg(&[0.0f64, 2f64.ln()]) - 0.75).abs() < 1e-15);
        assert!(weight_threshold_reg(&[50.0f64; 4]) < 1e-20);
        assert_eq!(weight_threshold_reg::<f64>(&[]), 0.0);
        assert_eq!(aux_threshold_reg(&[0.0f64, 0.0]), 1.0);
        assert!((aux_threshold_reg(&[1.0f64, 1.0]) - 0.36788).abs() < 1e-5);
        assert!((aux_threshold_reg(&[0.0f64, 1.0]) - 0.60653).abs() < 1e-5);
        assert_eq!(aux_threshold_reg::<f64>(&[]), 0.0);
    }

    #[test]
    fn mse_values() {
        let a = Array::from_rows(&[vec![1.0f64, 0.0]]);
        let b = Array::from_rows(&[vec![0.0f64, 1.0]]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(mse(&Array::from_rows(&[vec![0.0f64]]), &Array::from_rows(&[vec![1.0]])).unwrap(), 1.0);
        assert!(matches!(mse(&a, &Array::from_rows(&[vec![1.0f64]])), Err(Error::Shape(_))));
    }

    #[test]
    fn total_loss_cases() {
        let t = SparsityTargets { weight: 0.8, input: 0.5, unary: 0.5, binary: 0.5 };
        let init = total_loss(0.3, &report([0.0; 4]), [1.0; 4], &t, 0.01);
        assert!((init.total - 5.0 * 0.3).abs() < 1e-15);
        let done = total_loss(0.3, &report([0.9, 0.5, 0.6, 1.0]), [0.4; 4], &t, 0.01);
        assert_eq!(done.total, 0.3);
        let mixed = total_loss(0.1, &report([0.5, 0.5, 0.5, 0.5]), [1.0; 4], &t, 1.0);
        assert!((mixed.total - (0.1 + 0.1 * (-5.0f64 / 3.0).exp())).abs() < 1e-12);
        assert!((mixed.total - 0.11889).abs() < 1e-5);
        let parts = mixed.l_error + mixed.sparse_terms().iter().sum::<f64>();
        assert!((mixed.total - parts).abs() < 1e-12);
    }
}
