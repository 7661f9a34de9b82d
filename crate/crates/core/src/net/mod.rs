//! Symbolic-layer networks with trainable pruning thresholds.
//!
//! A hidden layer is a linear map to `u + 2b` pre-activations followed by `u` unary and
//! `b` binary operators (binary operator `k` consumes slots `u + 2k` and `u + 2k + 1`).
//! The output layer is linear. Four things are pruned by a step mask
//! θ(x) = 1 if x > 0 else 0:
//!
//! * weights and biases: `w · θ(|w| − t)`, thresholds clipped to `[0, ∞)`;
//! * inputs: `x · θ(1 − t)`, thresholds clipped to `[0, 1]`;
//! * unary operators: `f(z) θ(1 − t) + z (1 − θ(1 − t))`;
//! * binary operators: `g(a, b) θ(1 − t) + (a + b)(1 − θ(1 − t))`.

mod checkpoint;
mod graph;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::diff::Registry;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use graph::{GraphOptions, Recorded, ThresholdNodes};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSet {
    #[serde(default)]
    pub unary: Vec<String>,
    #[serde(default)]
    pub binary: Vec<String>,
}

impl OperatorSet {
    pub fn new(unary: &[&str], binary: &[&str]) -> Self {
        Self {
            unary: unary.iter().map(|s| s.to_string()).collect(),
            binary: binary.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Width of the linear map feeding this layer's operators.
    pub fn input_width(&self) -> usize {
        self.unary.len() + 2 * self.binary.len()
    }

    pub fn output_width(&self) -> usize {
        self.unary.len() + self.binary.len()
    }
}

/// Target pruned fractions per category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityTargets {
    pub weight: f64,
    pub input: f64,
    pub unary: f64,
    pub binary: f64,
}

impl SparsityTargets {
    pub fn uniform(alpha: f64) -> Self {
        Self { weight: alpha, input: alpha, unary: alpha, binary: alpha }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<OperatorSet>,
    pub targets: SparsityTargets,
    pub decay_rate: f64,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate<T: Scalar>(&self, registry: &Registry<T>) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidSpec("output_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("at least one symbolic layer is required".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.output_width() == 0 {
                return Err(Error::InvalidSpec(format!("layer {i} has no operators")));
            }
            for (names, arity) in [(&layer.unary, 1), (&layer.binary, 2)] {
                for name in names {
                    let p = registry
                        .lookup(name)
                        .ok_or_else(|| Error::InvalidSpec(format!("layer {i}: unknown operator `{name}`")))?;
                    if p.arity != arity {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: operator `{name}` has arity {}, expected {arity}",
                            p.arity
                        )));
                    }
                }
            }
        }
        let t = &self.targets;
        for (name, a) in [("weight", t.weight), ("input", t.input), ("unary", t.unary), ("binary", t.binary)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidSpec(format!("alpha_{name} = {a} is outside [0, 1]")));
            }
        }
        if !(self.decay_rate > 0.0) {
            return Err(Error::InvalidSpec(format!("decay_rate must be positive, got {}", self.decay_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bounds {
    /// `[0, ∞)`
    NonNegative,
    /// `[0, 1]`
    Unit,
}

/// Weight array paired one-to-one with a threshold array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrunableTensor<T> {
    pub weights: Array<T>,
    pub thresholds: Array<T>,
    pub bounds: Bounds,
    /// Auxiliary gates keep their weights fixed at 1.
    pub trainable_weights: bool,
}

impl<T: Scalar> PrunableTensor<T> {
    fn trainable(weights: Array<T>) -> Self {
        let thresholds = Array::zeros(weights.shape().to_vec());
        Self { weights, thresholds, bounds: Bounds::NonNegative, trainable_weights: true }
    }

    fn gate(n: usize) -> Self {
        Self {
            weights: Array::filled(vec![n], T::one()),
            thresholds: Array::zeros(vec![n]),
            bounds: Bounds::Unit,
            trainable_weights: false,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Number of entries whose mask is closed, i.e. `w − t ≤ 0` (gates) or `|w| − t ≤ 0`.
    pub fn pruned(&self) -> usize {
        self.weights.data().iter().zip(self.thresholds.data()).filter(|(&w, &t)| !self.is_open(w, t)).count()
    }

    #[inline]
    fn is_open(&self, w: T, t: T) -> bool {
        let w = if self.trainable_weights { w.abs() } else { w };
        w - t > T::zero()
    }

    /// Per-entry open/closed state of the mask.
    pub fn open_mask(&self) -> Vec<bool> {
        self.weights.data().iter().zip(self.thresholds.data()).map(|(&w, &t)| self.is_open(w, t)).collect()
    }

    /// Weights after masking: `w · θ(|w| − t)`.
    pub fn effective(&self) -> Array<T> {
        let data = self
            .weights
            .data()
            .iter()
            .zip(self.thresholds.data())
            .map(|(&w, &t)| if self.is_open(w, t) { w } else { T::zero() })
            .collect();
        Array::new(self.weights.shape().to_vec(), data).expect("same shape")
    }

    pub fn clip(&mut self) {
        let hi = match self.bounds {
            Bounds::NonNegative => T::infinity(),
            Bounds::Unit => T::one(),
        };
        for t in self.thresholds.data_mut() {
            *t = t.max(T::zero()).min(hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Linear<T> {
    /// `fan_in × fan_out`
    pub weight: PrunableTensor<T>,
    /// `fan_out`
    pub bias: PrunableTensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.weights.cols()
    }
}

/// Whether thresholds participate in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gating {
    /// Step masks on weights, inputs and operators.
    Dynamic,
    /// Plain forward pass without thresholds (equation-learner baseline).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamSlot {
    Weight(usize),
    Bias(usize),
    WeightThreshold(usize),
    BiasThreshold(usize),
    InputThreshold,
    UnaryThreshold(usize),
    BinaryThreshold(usize),
}

impl ParamSlot {
    pub fn name(&self) -> String {
        match self {
            ParamSlot::Weight(l) => format!("linear{l}.weight"),
            ParamSlot::Bias(l) => format!("linear{l}.bias"),
            ParamSlot::WeightThreshold(l) => format!("linear{l}.weight_threshold"),
            ParamSlot::BiasThreshold(l) => format!("linear{l}.bias_threshold"),
            ParamSlot::InputThreshold => "input.threshold".into(),
            ParamSlot::UnaryThreshold(l) => format!("layer{l}.unary_threshold"),
            ParamSlot::BinaryThreshold(l) => format!("layer{l}.binary_threshold"),
        }
    }

    pub fn is_threshold(&self) -> bool {
        !matches!(self, ParamSlot::Weight(_) | ParamSlot::Bias(_))
    }
}

/// Pruned fraction per category; empty categories report 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub s_weight: f64,
    pub s_input: f64,
    pub s_unary: f64,
    pub s_binary: f64,
    pub pruned: [usize; 4],
    pub total: [usize; 4],
}

impl SparsityReport {
    fn from_counts(pruned: [usize; 4], total: [usize; 4]) -> Self {
        let ratio = |p: usize, t: usize| if t == 0 { 1.0 } else { p as f64 / t as f64 };
        Self {
            s_weight: ratio(pruned[0], total[0]),
            s_input: ratio(pruned[1], total[1]),
            s_unary: ratio(pruned[2], total[2]),
            s_binary: ratio(pruned[3], total[3]),
            pruned,
            total,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s_weight, self.s_input, self.s_unary, self.s_binary]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub gating: Gating,
    pub input_gate: PrunableTensor<T>,
    /// Hidden linear maps followed by the output map.
    pub linear: Vec<Linear<T>>,
    pub unary_gates: Vec<PrunableTensor<T>>,
    pub binary_gates: Vec<PrunableTensor<T>>,
    #[serde(skip)]
    registry: Arc<Registry<T>>,
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.gating == other.gating
            && self.input_gate == other.input_gate
            && self.linear == other.linear
            && self.unary_gates == other.unary_gates
            && self.binary_gates == other.binary_gates
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a gated network: weights and biases ~ Normal(0, 1/√fan_in), thresholds 0,
    /// auxiliary gate weights 1.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        Self::build_with(spec, Gating::Dynamic, Arc::new(Registry::standard()))
    }

    /// Builds the same architecture without any threshold path.
    pub fn build_ungated(spec: &NetworkSpec) -> Result<Self> {
        Self::build_with(spec, Gating::None, Arc::new(Registry::standard()))
    }

    pub fn build_with(spec: &NetworkSpec, gating: Gating, registry: Arc<Registry<T>>) -> Result<Self> {
        spec.validate(&registry)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut linear = Vec::with_capacity(spec.layers.len() + 1);
        let mut fan_in = spec.input_dim;
        let outs: Vec<(usize, usize)> = spec
            .layers
            .iter()
            .map(|l| (l.input_width(), l.output_width()))
            .chain(std::iter::once((spec.output_dim, spec.output_dim)))
            .collect();
        for (fan_out, next_in) in outs {
            let std = 1.0 / (fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let w: Vec<T> = (0..fan_in * fan_out).map(|_| T::lit(normal.sample(&mut rng))).collect();
            let b: Vec<T> = (0..fan_out).map(|_| T::lit(normal.sample(&mut rng))).collect();
            linear.push(Linear {
                weight: PrunableTensor::trainable(Array::matrix(fan_in, fan_out, w)?),
                bias: PrunableTensor::trainable(Array::vector(b)),
            });
            fan_in = next_in;
        }
        Ok(Self {
            spec: spec.clone(),
            gating,
            input_gate: PrunableTensor::gate(spec.input_dim),
            linear,
            unary_gates: spec.layers.iter().map(|l| PrunableTensor::gate(l.unary.len())).collect(),
            binary_gates: spec.layers.iter().map(|l| PrunableTensor::gate(l.binary.len())).collect(),
            registry,
        })
    }

    pub fn registry(&self) -> &Arc<Registry<T>> {
        &self.registry
    }

    pub fn set_registry(&mut self, registry: Arc<Registry<T>>) -> Result<()> {
        self.spec.validate(&registry)?;
        self.registry = registry;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn hidden_layers(&self) -> usize {
        self.spec.layers.len()
    }

    pub fn is_gated(&self) -> bool {
        self.gating == Gating::Dynamic
    }

    /// (n_weight, n_input, n_unary, n_binary)
    pub fn counts(&self) -> [usize; 4] {
        [
            self.linear.iter().map(|l| l.weight.len() + l.bias.len()).sum(),
            self.input_gate.len(),
            self.unary_gates.iter().map(|g| g.len()).sum(),
            self.binary_gates.iter().map(|g| g.len()).sum(),
        ]
    }

    pub fn sparsity(&self) -> SparsityReport {
        let total = self.counts();
        let weights = self.linear.iter().map(|l| l.weight.pruned() + l.bias.pruned()).sum();
        let pruned = [
            weights,
            self.input_gate.pruned(),
            self.unary_gates.iter().map(|g| g.pruned()).sum(),
            self.binary_gates.iter().map(|g| g.pruned()).sum(),
        ];
        SparsityReport::from_counts(pruned, total)
    }

    /// Mean threshold per category (weights, inputs, unary, binary); 0 for empty categories.
    pub fn mean_thresholds(&self) -> [f64; 4] {
        fn mean<'a, T: Scalar>(it: impl Iterator<Item = &'a PrunableTensor<T>>) -> f64 {
            let (s, n) = it.fold((0.0, 0usize), |(s, n), p| {
                (s + p.thresholds.data().iter().map(|t| t.as_f64()).sum::<f64>(), n + p.len())
            });
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        }
        [
            mean(self.linear.iter().flat_map(|l| [&l.weight, &l.bias])),
            mean(std::iter::once(&self.input_gate)),
            mean(self.unary_gates.iter()),
            mean(self.binary_gates.iter()),
        ]
    }

    /// Projects every threshold into its bounds.
    pub fn clip_thresholds(&mut self) {
        self.input_gate.clip();
        for l in &mut self.linear {
            l.weight.clip();
            l.bias.clip();
        }
        for g in self.unary_gates.iter_mut().chain(self.binary_gates.iter_mut()) {
            g.clip();
        }
    }

    /// Trainable arrays: weights and biases always, thresholds only when gated.
    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for l in 0..self.linear.len() {
            slots.push(ParamSlot::Weight(l));
            slots.push(ParamSlot::Bias(l));
        }
        if self.is_gated() {
            for l in 0..self.linear.len() {
                slots.push(ParamSlot::WeightThreshold(l));
                slots.push(ParamSlot::BiasThreshold(l));
            }
            slots.push(ParamSlot::InputThreshold);
            for l in 0..self.hidden_layers() {
                slots.push(ParamSlot::UnaryThreshold(l));
                slots.push(ParamSlot::BinaryThreshold(l));
            }
        }
        slots
    }

    pub fn param(&self, slot: ParamSlot) -> &Array<T> {
        match slot {
            ParamSlot::Weight(l) => &self.linear[l].weight.weights,
            ParamSlot::Bias(l) => &self.linear[l].bias.weights,
            ParamSlot::WeightThreshold(l) => &self.linear[l].weight.thresholds,
            ParamSlot::BiasThreshold(l) => &self.linear[l].bias.thresholds,
            ParamSlot::InputThreshold => &self.input_gate.thresholds,
            ParamSlot::UnaryThreshold(l) => &self.unary_gates[l].thresholds,
            ParamSlot::BinaryThreshold(l) => &self.binary_gates[l].thresholds,
        }
    }

    pub fn param_mut(&mut self, slot: ParamSlot) -> &mut Array<T> {
        match slot {
            ParamSlot::Weight(l) => &mut self.linear[l].weight.weights,
            ParamSlot::Bias(l) => &mut self.linear[l].bias.weights,
            ParamSlot::WeightThreshold(l) => &mut self.linear[l].weight.thresholds,
            ParamSlot::BiasThreshold(l) => &mut self.linear[l].bias.thresholds,
            ParamSlot::InputThreshold => &mut self.input_gate.thresholds,
            ParamSlot::UnaryThreshold(l) => &mut self.unary_gates[l].thresholds,
            ParamSlot::BinaryThreshold(l) => &mut self.binary_gates[l].thresholds,
        }
    }

    /// Masked weights and biases of linear map `l` (raw values when ungated).
    pub fn effective_linear(&self, l: usize) -> (Array<T>, Array<T>) {
        let lin = &self.linear[l];
        if self.is_gated() {
            (lin.weight.effective(), lin.bias.effective())
        } else {
            (lin.weight.weights.clone(), lin.bias.weights.clone())
        }
    }

    pub fn input_open(&self) -> Vec<bool> {
        self.gate_state(&self.input_gate)
    }

    pub fn unary_open(&self, layer: usize) -> Vec<bool> {
        self.gate_state(&self.unary_gates[layer])
    }

    pub fn binary_open(&self, layer: usize) -> Vec<bool> {
        self.gate_state(&self.binary_gates[layer])
    }

    fn gate_state(&self, g: &PrunableTensor<T>) -> Vec<bool> {
        if self.is_gated() {
            g.open_mask()
        } else {
            vec![true; g.len()]
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        fn pt<T: Scalar, U: Scalar>(p: &PrunableTensor<T>) -> PrunableTensor<U> {
            PrunableTensor {
                weights: p.weights.cast(),
                thresholds: p.thresholds.cast(),
                bounds: p.bounds,
                trainable_weights: p.trainable_weights,
            }
        }
        Network {
            spec: self.spec.clone(),
            gating: self.gating,
            input_gate: pt(&self.input_gate),
            linear: self.linear.iter().map(|l| Linear { weight: pt(&l.weight), bias: pt(&l.bias) }).collect(),
            unary_gates: self.unary_gates.iter().map(pt).collect(),
            binary_gates: self.binary_gates.iter().map(pt).collect(),
            registry: Arc::new(Registry::standard()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(input: usize, layers: Vec<OperatorSet>, output: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: input,
            output_dim: output,
            layers,
            targets: SparsityTargets::uniform(0.5),
            decay_rate: 0.01,
            seed: 11,
        }
    }

    #[test]
    fn layer_dimensions() {
        let s = spec(4, vec![OperatorSet::new(&["sin", "cos", "tanh"], &["mul"])], 1);
        let net = Network::<f64>::build(&s).unwrap();
        assert_eq!(net.linear[0].weight.weights.shape(), &[4, 5]);
        assert_eq!(net.linear[0].bias.weights.shape(), &[5]);
        assert_eq!(net.linear[1].weight.weights.shape(), &[4, 1]);
        assert_eq!(net.counts(), [4 * 5 + 5 + 4 + 1, 4, 3, 1]);
    }

    #[test]
    fn fresh_network_is_unpruned() {
        let s = spec(3, vec![OperatorSet::new(&["sin"], &["mul", "add"]), OperatorSet::new(&["tanh", "exp"], &[])], 2);
        let net = Network::<f64>::build(&s).unwrap();
        for l in &net.linear {
            assert!(l.weight.thresholds.data().iter().all(|&t| t == 0.0));
        }
        assert!(net.input_gate.weights.data().iter().all(|&w| w == 1.0));
        let r = net.sparsity();
        assert_eq!((r.s_weight, r.s_input, r.s_unary), (0.0, 0.0, 0.0));
        // second layer has no binary operators but the first does
        assert_eq!(r.s_binary, 0.0);
    }

    #[test]
    fn empty_category_reports_one() {
        let s = spec(3, vec![OperatorSet::new(&["sin", "cos"], &[])], 1);
        let net = Network::<f64>::build(&s).unwrap();
        assert_eq!(net.sparsity().s_binary, 1.0);
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let s = spec(5, vec![OperatorSet::new(&["sin", "gauss"], &["mul"])], 3);
        let a = Network::<f64>::build(&s).unwrap();
        let b = Network::<f64>::build(&s).unwrap();
        assert_eq!(a, b);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(a, Network::<f64>::build(&s2).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0, vec![OperatorSet::new(&["sin"], &[])], 1);
        assert!(Network::<f64>::build(&s).is_err());
        s.input_dim = 2;
        s.layers.clear();
        assert!(matches!(Network::<f64>::build(&s), Err(Error::InvalidSpec(_))));
        s.layers = vec![OperatorSet::new(&["mul"], &[])];
        assert!(Network::<f64>::build(&s).is_err());
        s.layers = vec![OperatorSet::new(&["nope"], &[])];
        assert!(Network::<f64>::build(&s).is_err());
        s.layers = vec![OperatorSet::new(&["sin"], &[])];
        s.targets.weight = 1.2;
        assert!(Network::<f64>::build(&s).is_err());
        s.targets.weight = 0.5;
        s.decay_rate = 0.0;
        assert!(Network::<f64>::build(&s).is_err());
    }

    #[test]
    fn sparsity_counts_weights_at_threshold_as_pruned() {
        let mut p = PrunableTensor::trainable(Array::vector((1..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>()));
        // 9 of 10 weights have |w| ≤ t
        p.thresholds = Array::filled(vec![10], 0.9);
        assert_eq!(p.pruned(), 9);
        let mut s = spec(1, vec![OperatorSet::new(&["sin"], &[])], 1);
        s.seed = 3;
        let mut net = Network::<f64>::build(&s).unwrap();
        // 1x1 + 1 + 1x1 + 1 = 4 weights
        net.linear[0].weight.thresholds = Array::filled(vec![1, 1], 100.0);
        assert_eq!(net.sparsity().s_weight, 0.25);
    }

    #[test]
    fn clipping_projects_into_bounds() {
        let s = spec(2, vec![OperatorSet::new(&["sin"], &["mul"])], 1);
        let mut net = Network::<f64>::build(&s).unwrap();
        net.linear[0].weight.thresholds.data_mut()[0] = -0.3;
        net.input_gate.thresholds.data_mut()[1] = 1.4;
        net.unary_gates[0].thresholds.data_mut()[0] = 0.6;
        net.binary_gates[0].thresholds.data_mut()[0] = -2.0;
        net.linear[1].bias.thresholds.data_mut()[0] = 7.5;
        net.clip_thresholds();
        assert_eq!(net.linear[0].weight.thresholds.data()[0], 0.0);
        assert_eq!(net.input_gate.thresholds.data()[1], 1.0);
        assert_eq!(net.unary_gates[0].thresholds.data()[0], 0.6);
        assert_eq!(net.binary_gates[0].thresholds.data()[0], 0.0);
        assert_eq!(net.linear[1].bias.thresholds.data()[0], 7.5);
    }
}
