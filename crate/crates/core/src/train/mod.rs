//! Mini-batch Adam training with per-step sparsity feedback.

mod adam;
mod history;
mod metrics;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::Dataset;
use crate::diff::{Bindings, NodeId, Registry, SurrogateMode, Tape};
use crate::error::{Error, Result};
use crate::loss::{mse, network_loss, record_regularizers, sparse_coefficients, LossBreakdown};
use crate::net::{GraphOptions, Network, ParamSlot};
use crate::scalar::Scalar;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use history::{HistoryRow, TrainHistory};
pub use metrics::{accuracy, auc, evaluate, evaluate_predictions, Metrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 1024, learning_rate: 0.0015, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

/// Seed for scan cell `index`: a splitmix64 step over the master seed, so cells are
/// independent of scan order and of each other.
pub fn cell_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What the optimizer minimizes besides the data term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// The four self-adaptive sparsity terms (gated networks only).
    Sparse,
    /// `λ · Σ L0.5*(w)` over weights and biases, using the registered `l05` primitive.
    Penalty { lambda: f64 },
}

/// Completed training run.
#[derive(Clone, Debug)]
pub struct Trained<T> {
    pub network: Network<T>,
    pub history: TrainHistory,
}

/// A run stopped by a non-finite value, with the network as of the last completed epoch.
#[derive(Debug)]
pub struct Aborted<T> {
    pub error: Error,
    pub last_good: Network<T>,
    pub history: TrainHistory,
    pub epoch: usize,
}

impl<T: Scalar> From<Box<Aborted<T>>> for Error {
    fn from(a: Box<Aborted<T>>) -> Self {
        a.error
    }
}

pub type TrainResult<T> = std::result::Result<Trained<T>, Box<Aborted<T>>>;

/// Called after every history row is appended.
pub type Observer<'a, T> = dyn FnMut(&Network<T>, &HistoryRow) -> Result<()> + 'a;

/// Trains `net` on `train`, recording one history row at initialization and one per epoch.
///
/// Loss terms in each row are measured on the whole training split with end-of-epoch
/// parameters; the metric columns use `val` (or the training split when absent).
pub fn train<T: Scalar>(net: Network<T>, train: &Dataset<T>, val: Option<&Dataset<T>>, cfg: &TrainConfig) -> TrainResult<T> {
    train_observed(net, train, val, cfg, &mut |_, _| Ok(()))
}

pub fn train_observed<T: Scalar>(
    net: Network<T>,
    train: &Dataset<T>,
    val: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    observer: &mut Observer<'_, T>,
) -> TrainResult<T> {
    let registry = Arc::clone(net.registry());
    let mut run = Run::new(net, train, val, cfg, registry, observer)?;
    let last = run.stage(cfg.epochs, Objective::Sparse, None, None);
    run.finish(last)
}

/// State shared by consecutive training stages.
pub(crate) struct Run<'a, 'o, T: Scalar> {
    pub net: Network<T>,
    pub history: TrainHistory,
    train: &'a Dataset<T>,
    val: &'a Dataset<T>,
    cfg: &'a TrainConfig,
    registry: Arc<Registry<T>>,
    master: ChaCha8Rng,
    epoch: usize,
    last_good: Network<T>,
    observer: &'a mut Observer<'o, T>,
}

impl<'a, 'o, T: Scalar> Run<'a, 'o, T> {
    pub fn new(
        net: Network<T>,
        train: &'a Dataset<T>,
        val: Option<&'a Dataset<T>>,
        cfg: &'a TrainConfig,
        registry: Arc<Registry<T>>,
        observer: &'a mut Observer<'o, T>,
    ) -> std::result::Result<Self, Box<Aborted<T>>> {
        let abort = |net: &Network<T>, error| {
            Box::new(Aborted { error, last_good: net.clone(), history: TrainHistory::default(), epoch: 0 })
        };
        if let Err(e) = cfg.validate() {
            return Err(abort(&net, e));
        }
        if train.is_empty() {
            return Err(abort(&net, Error::Data("training split is empty".into())));
        }
        if train.n_input() != net.input_dim() || train.n_output() != net.output_dim() {
            let e = Error::Shape(format!(
                "network is {}→{}, data is {}→{}",
                net.input_dim(),
                net.output_dim(),
                train.n_input(),
                train.n_output()
            ));
            return Err(abort(&net, e));
        }
        Ok(Self {
            last_good: net.clone(),
            net,
            history: TrainHistory::default(),
            train,
            val: val.unwrap_or(train),
            cfg,
            registry,
            master: ChaCha8Rng::seed_from_u64(cfg.seed),
            epoch: 0,
            observer,
        })
    }

    fn abort(&self, error: Error) -> Box<Aborted<T>> {
        Box::new(Aborted { error, last_good: self.last_good.clone(), history: self.history.clone(), epoch: self.epoch })
    }

    pub fn finish(self, last: std::result::Result<(), Box<Aborted<T>>>) -> TrainResult<T> {
        last?;
        Ok(Trained { network: self.net, history: self.history })
    }

    /// Appends a history row describing the current parameters.
    fn record(&mut self, objective: Objective, stage: Option<u8>) -> Result<()> {
        let loss = if self.net.is_gated() {
            network_loss(&self.net, &self.train.features, &self.train.labels)?
        } else {
            let pred = self.net.forward_masked(&self.train.features)?;
            let l = mse(&pred, &self.train.labels)?.as_f64();
            LossBreakdown { l_error: l, total: l, ..Default::default() }
        };
        let penalty = match objective {
            Objective::Penalty { lambda } => Some(lambda * self.penalty_value()?),
            Objective::Sparse => None,
        };
        let mut loss = loss;
        if let Some(p) = penalty {
            loss.total += p;
        }
        let m = evaluate(&self.net, self.val)?;
        let row = HistoryRow {
            epoch: self.epoch,
            stage,
            loss,
            penalty,
            sparsity: self.net.sparsity().as_array(),
            mean_thresholds: self.net.mean_thresholds(),
            val_mse: m.mse,
            val_accuracy: m.accuracy,
        };
        if !row.is_finite() {
            return Err(Error::NonFinite(format!("history row for epoch {}", self.epoch)));
        }
        (self.observer)(&self.net, &row)?;
        self.history.rows.push(row);
        Ok(())
    }

    /// `Σ L0.5*(w)` over all weights and biases, via the registered `l05` primitive.
    fn penalty_value(&self) -> Result<f64> {
        let p = self.registry.lookup("l05").ok_or_else(|| Error::UnknownPrimitive("l05".into()))?;
        Ok(self
            .net
            .linear
            .iter()
            .flat_map(|l| l.weight.weights.data().iter().chain(l.bias.weights.data()))
            .map(|&w| p.apply1(w).as_f64())
            .sum())
    }

    /// Runs `epochs` epochs with a fresh optimizer. The initial row is written on the first
    /// stage only.
    pub fn stage(
        &mut self,
        epochs: usize,
        objective: Objective,
        frozen: Option<&[(Array<T>, Array<T>)]>,
        stage: Option<u8>,
    ) -> std::result::Result<(), Box<Aborted<T>>> {
        if self.history.rows.is_empty() {
            self.record(objective, stage).map_err(|e| self.abort(e))?;
        }
        let mut adam = Adam::new(self.cfg.adam());
        let n = self.train.len();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let epoch_seed = self.master.next_u64();
            if self.cfg.shuffle {
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
            }
            for batch in order.chunks(self.cfg.batch_size) {
                self.step(batch, objective, frozen, &mut adam).map_err(|e| self.abort(e))?;
            }
            self.epoch += 1;
            self.record(objective, stage).map_err(|e| self.abort(e))?;
            self.last_good = self.net.clone();
        }
        Ok(())
    }

    fn step(
        &mut self,
        batch: &[usize],
        objective: Objective,
        frozen: Option<&[(Array<T>, Array<T>)]>,
        adam: &mut Adam<T>,
    ) -> Result<()> {
        let x = self.train.features.select_rows(batch);
        let y = self.train.labels.select_rows(batch);
        let mut tape = Tape::new(Arc::clone(&self.registry));
        let (xv, xn) = tape.input("x");
        let opts = GraphOptions { frozen: frozen.map(|f| f.to_vec()), constant_params: false };
        let rec = self.net.record(&mut tape, xn, &opts)?;
        let gated = self.net.is_gated();
        let regs = if gated && objective == Objective::Sparse {
            Some(record_regularizers(&mut tape, &rec.thresholds, self.net.counts())?)
        } else {
            None
        };
        let penalty = match objective {
            Objective::Penalty { lambda } if lambda > 0.0 => Some((penalty_node(&mut tape, &rec.params)?, lambda)),
            _ => None,
        };
        let mut bindings = Bindings::new();
        bindings.bind(xv, x);
        rec.bind_params(&self.net, &mut bindings);
        tape.forward(bindings)?;

        let pred = tape.value(rec.output)?;
        let l_error = mse(pred, &y)?.as_f64();
        if !l_error.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", self.epoch + 1)));
        }
        let scale = T::lit(2.0 / pred.len() as f64);
        let mut seeds = vec![(rec.output, pred.zip_map(&y, |p, t| (p - t) * scale)?)];
        if let Some(regs) = regs {
            let report = self.net.sparsity();
            let coef = sparse_coefficients(l_error, &report, &self.net.spec.targets, self.net.spec.decay_rate);
            for (node, c) in regs.nodes.iter().zip(coef) {
                if let (Some(node), true) = (node, c != 0.0) {
                    seeds.push((*node, Array::scalar(T::lit(c))));
                }
            }
        }
        if let Some((node, lambda)) = penalty {
            seeds.push((node, Array::scalar(T::lit(lambda))));
        }
        let mut grads = tape.backward_many(&seeds, SurrogateMode::Registered)?;
        let list: Vec<(ParamSlot, Array<T>)> = rec
            .params
            .iter()
            .map(|&(slot, var)| {
                let g = grads.take(var).unwrap_or_else(|| Array::zeros(self.net.param(slot).shape().to_vec()));
                (slot, g)
            })
            .collect();
        adam.step(&mut self.net, &list)?;
        self.net.clip_thresholds();
        if let Some(masks) = frozen {
            check_frozen(&self.net, masks)?;
        }
        Ok(())
    }
}

fn penalty_node<T: Scalar>(tape: &mut Tape<T>, params: &[(ParamSlot, crate::diff::VarId)]) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for &(slot, var) in params {
        if slot.is_threshold() {
            continue;
        }
        let node = tape.var_node(var);
        let l = tape.apply1("l05", node)?;
        let s = tape.sum(l);
        total = Some(match total {
            Some(t) => tape.apply2("add", t, s)?,
            None => s,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("network has no weights".into()))
}

/// Weights under a zero mask must stay exactly zero.
fn check_frozen<T: Scalar>(net: &Network<T>, masks: &[(Array<T>, Array<T>)]) -> Result<()> {
    for (l, (mw, mb)) in masks.iter().enumerate() {
        let lin = &net.linear[l];
        for (values, mask) in [(&lin.weight.weights, mw), (&lin.bias.weights, mb)] {
            if values.data().iter().zip(mask.data()).any(|(&v, &m)| m == T::zero() && v != T::zero()) {
                return Err(Error::InvalidArgument(format!("frozen weight in linear map {l} moved off zero")));
            }
        }
    }
    Ok(())
}
