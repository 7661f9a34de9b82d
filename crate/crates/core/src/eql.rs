//! Equation-learner baseline: an ungated network trained in three stages with a smoothed
//! square-root penalty, then magnitude-pruned and fine-tuned.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::Splits;
use crate::diff::{Kernel, Registry};
use crate::error::{Error, Result};
use crate::expr::{simplify, unroll};
use crate::net::{Gating, Network, NetworkSpec};
use crate::scalar::Scalar;
use crate::train::{cell_seed, evaluate, Aborted, Metrics, Objective, Run, TrainConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqlConfig {
    pub lambda: f64,
    /// Knee below which the penalty is replaced by a quartic.
    pub a: f64,
    pub hard_threshold: f64,
    /// Epochs per stage; `None` splits the trainer's budget 40/40/20.
    pub stage_epochs: Option<[usize; 3]>,
}

impl Default for EqlConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, a: 0.01, hard_threshold: 1e-2, stage_epochs: None }
    }
}

impl EqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidArgument(format!("a must be positive, got {}", self.a)));
        }
        if self.hard_threshold.is_nan() || self.hard_threshold < 0.0 {
            return Err(Error::InvalidArgument(format!("hard_threshold must be ≥ 0, got {}", self.hard_threshold)));
        }
        if self.stage_epochs.is_some_and(|s| s.contains(&0)) {
            return Err(Error::InvalidArgument("every stage needs at least one epoch".into()));
        }
        Ok(())
    }

    /// Epochs for stages 1, 2 and 3.
    pub fn stages(&self, total: usize) -> Result<[usize; 3]> {
        if let Some(s) = self.stage_epochs {
            return Ok(s);
        }
        if total < 3 {
            return Err(Error::InvalidArgument(format!("{total} epochs cannot be split into three stages")));
        }
        let s1 = ((total as f64 * 0.4).round() as usize).max(1);
        let s2 = ((total as f64 * 0.4).round() as usize).max(1);
        Ok([s1, s2, total.saturating_sub(s1 + s2).max(1)])
    }
}

/// `|w|^½` above the knee `a`, `(−w⁴/8a³ + 3w²/4a + 3a/8)^½` below it.
pub fn l05_star<T: Scalar>(w: T, a: T) -> T {
    if w.abs() >= a {
        w.abs().sqrt()
    } else {
        knee(w, a).sqrt()
    }
}

/// Derivative of [`l05_star`] with respect to `w`.
pub fn l05_star_grad<T: Scalar>(w: T, a: T) -> T {
    let half = T::lit(0.5);
    if w.abs() >= a {
        let s = if w > T::zero() { T::one() } else { -T::one() };
        half * s / w.abs().sqrt()
    } else {
        let inner = -w * w * w / (T::lit(2.0) * a * a * a) + T::lit(1.5) * w / a;
        half * inner / knee(w, a).sqrt()
    }
}

fn knee<T: Scalar>(w: T, a: T) -> T {
    let w2 = w * w;
    -w2 * w2 / (T::lit(8.0) * a * a * a) + T::lit(0.75) * w2 / a + T::lit(0.375) * a
}

/// The standard operators plus `l05` with knee `a`.
pub fn eql_registry<T: Scalar>(a: f64) -> Registry<T> {
    let mut r = Registry::standard();
    let a = T::lit(a);
    r.register("l05", 1, Kernel::unary(move |w| l05_star(w, a), move |w| l05_star_grad(w, a)), false)
        .expect("l05 is not a standard primitive");
    r
}

/// Builds the ungated network for `spec` on the baseline registry.
pub fn build_eql_network<T: Scalar>(spec: &NetworkSpec, a: f64) -> Result<Network<T>> {
    Network::build_with(spec, Gating::None, Arc::new(eql_registry(a)))
}

#[derive(Clone, Debug)]
pub struct EqlOutcome<T> {
    pub network: Network<T>,
    pub history: TrainHistory,
    /// 0/1 masks over (weights, biases) applied during stage 3.
    pub masks: Vec<(Array<T>, Array<T>)>,
    /// Every weight was pruned, so the model is a constant.
    pub degenerate: bool,
}

/// Stage 1 fits freely, stage 2 adds `λ·Σ l05_star(w)` over weights and biases, then every
/// parameter with `|w| < hard_threshold` is zeroed and held there while stage 3 fine-tunes.
/// Adam restarts at each stage. History rows carry the stage number.
pub fn train_three_stage<T: Scalar>(
    net: Network<T>,
    train: &crate::data::Dataset<T>,
    val: Option<&crate::data::Dataset<T>>,
    eql: &EqlConfig,
    cfg: &TrainConfig,
) -> std::result::Result<EqlOutcome<T>, Box<Aborted<T>>> {
    let early = |net: &Network<T>, error| {
        Box::new(Aborted { error, last_good: net.clone(), history: TrainHistory::default(), epoch: 0 })
    };
    if let Err(e) = eql.validate() {
        return Err(early(&net, e));
    }
    if net.is_gated() {
        return Err(early(&net, Error::InvalidArgument("the baseline expects a network without thresholds".into())));
    }
    let stages = eql.stages(cfg.epochs).map_err(|e| early(&net, e))?;
    let mut net = net;
    if !net.registry().contains("l05") {
        net.set_registry(Arc::new(eql_registry(eql.a))).map_err(|e| early(&net, e))?;
    }
    let registry = Arc::clone(net.registry());
    let mut observer = |_: &Network<T>, _: &crate::train::HistoryRow| Ok(());
    let mut run = Run::new(net, train, val, cfg, registry, &mut observer)?;

    run.stage(stages[0], Objective::Penalty { lambda: 0.0 }, None, Some(1))?;
    run.stage(stages[1], Objective::Penalty { lambda: eql.lambda }, None, Some(2))?;

    let thr = T::lit(eql.hard_threshold);
    let mut masks = Vec::with_capacity(run.net.linear.len());
    for lin in &mut run.net.linear {
        let mask_for = |values: &mut Array<T>| {
            let mask = values.map(|w| if w.abs() < thr { T::zero() } else { T::one() });
            for (v, m) in values.data_mut().iter_mut().zip(mask.data()) {
                if *m == T::zero() {
                    *v = T::zero();
                }
            }
            mask
        };
        let mw = mask_for(&mut lin.weight.weights);
        let mb = mask_for(&mut lin.bias.weights);
        masks.push((mw, mb));
    }
    let degenerate = masks.iter().all(|(mw, _)| mw.data().iter().all(|&m| m == T::zero()));
    if degenerate {
        log::warn!("hard threshold {} pruned every weight; the model is constant", eql.hard_threshold);
    }

    let last = run.stage(stages[2], Objective::Penalty { lambda: 0.0 }, Some(&masks), Some(3));
    let trained = run.finish(last)?;
    Ok(EqlOutcome { network: trained.network, history: trained.history, masks, degenerate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqlGrid {
    pub lambdas: Vec<f64>,
    pub hard_thresholds: Vec<f64>,
}

/// One trained cell of a baseline scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub cell: usize,
    pub lambda: f64,
    pub hard_threshold: f64,
    pub seed: u64,
    /// Mean over outputs of the simplified expression complexity.
    pub complexity: f64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

impl ScanPoint {
    /// Accuracy for classification, negated MSE for regression; `None` for failed cells.
    pub fn score(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.accuracy.unwrap_or(-m.mse))
    }
}

/// Mean simplified complexity over the network's outputs.
pub fn mean_complexity<T: Scalar>(net: &Network<T>) -> f64 {
    let exprs = unroll(net);
    exprs.iter().map(|e| simplify(e).complexity() as f64).sum::<f64>() / exprs.len() as f64
}

/// Trains one baseline per (λ, hard threshold) cell and scores it on the test split.
/// Cell seeds derive from `cfg.seed` and the cell index. Failed cells are kept with their error.
/// Points come back sorted by complexity, failures last.
pub fn scan_grid(spec: &NetworkSpec, grid: &EqlGrid, splits: &Splits<f64>, base: &EqlConfig, cfg: &TrainConfig) -> Result<Vec<ScanPoint>> {
    if grid.lambdas.is_empty() || grid.hard_thresholds.is_empty() {
        return Err(Error::InvalidArgument("scan grid has an empty axis".into()));
    }
    let mut points = Vec::new();
    for &lambda in &grid.lambdas {
        for &hard_threshold in &grid.hard_thresholds {
            let cell = points.len();
            let seed = cell_seed(cfg.seed, cell as u64);
            let eql = EqlConfig { lambda, hard_threshold, ..base.clone() };
            let tcfg = TrainConfig { seed, ..cfg.clone() };
            let result = build_eql_network::<f64>(&NetworkSpec { seed, ..spec.clone() }, eql.a)
                .and_then(|net| train_three_stage(net, &splits.train, Some(&splits.val), &eql, &tcfg).map_err(Error::from))
                .and_then(|out| Ok((mean_complexity(&out.network), evaluate(&out.network, &splits.test)?)));
            let (complexity, metrics, error) = match result {
                Ok((c, m)) => (c, Some(m), None),
                Err(e) => {
                    log::warn!("cell {cell} (lambda {lambda}, threshold {hard_threshold}) failed: {e}");
                    (f64::NAN, None, Some(e.to_string()))
                }
            };
            points.push(ScanPoint { cell, lambda, hard_threshold, seed, complexity, metrics, error });
        }
    }
    points.sort_by(|a, b| a.error.is_some().cmp(&b.error.is_some()).then(a.complexity.total_cmp(&b.complexity)));
    Ok(points)
}
