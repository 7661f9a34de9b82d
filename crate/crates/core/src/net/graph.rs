use std::sync::Arc;

use crate::array::Array;
use crate::diff::{Bindings, NodeId, Tape, VarId};
use crate::error::{Error, Result};
use crate::net::{Network, ParamSlot, PrunableTensor};
use crate::scalar::Scalar;

/// Extra forward-pass settings.
#[derive(Clone, Debug, Default)]
pub struct GraphOptions<T> {
    /// Constant 0/1 masks multiplied into each linear map's (weights, biases); used to
    /// keep hard-pruned weights frozen at zero.
    pub frozen: Option<Vec<(Array<T>, Array<T>)>>,
    /// Record weights as constants rather than parameters (evaluation only).
    pub constant_params: bool,
}

/// Threshold nodes grouped by pruning category.
#[derive(Clone, Debug, Default)]
pub struct ThresholdNodes {
    pub weight: Vec<NodeId>,
    pub input: Vec<NodeId>,
    pub unary: Vec<NodeId>,
    pub binary: Vec<NodeId>,
}

/// Handles into a tape holding one network forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub output: NodeId,
    /// Parameter variables in the same order as `Network::param_slots`.
    pub params: Vec<(ParamSlot, VarId)>,
    pub thresholds: ThresholdNodes,
}

impl Recorded {
    /// Binds the network's current parameter values.
    pub fn bind_params<T: Scalar>(&self, net: &Network<T>, bindings: &mut Bindings<T>) {
        for &(slot, var) in &self.params {
            bindings.bind(var, net.param(slot).clone());
        }
    }
}

struct Recorder<'a, T> {
    net: &'a Network<T>,
    tape: &'a mut Tape<T>,
    opts: &'a GraphOptions<T>,
    params: Vec<(ParamSlot, VarId)>,
    thresholds: ThresholdNodes,
}

impl<'a, T: Scalar> Recorder<'a, T> {
    fn array(&mut self, slot: ParamSlot) -> NodeId {
        if self.opts.constant_params {
            return self.tape.constant(self.net.param(slot).clone());
        }
        let (var, node) = self.tape.param(&slot.name());
        self.params.push((slot, var));
        node
    }

    /// `w · θ(|w| − t)` for trainable tensors.
    fn masked_weights(&mut self, value: ParamSlot, threshold: ParamSlot) -> Result<NodeId> {
        let w = self.array(value);
        let t = self.array(threshold);
        self.thresholds.weight.push(t);
        let a = self.tape.apply1("abs", w)?;
        let d = self.tape.apply2("sub", a, t)?;
        let m = self.tape.apply1("step", d)?;
        self.tape.apply2("mul", w, m)
    }

    /// `θ(w_aux − t)` for a fixed-weight gate.
    fn gate(&mut self, gate: &PrunableTensor<T>, threshold: ParamSlot) -> Result<NodeId> {
        let w = self.tape.constant(gate.weights.clone());
        let t = self.array(threshold);
        let d = self.tape.apply2("sub", w, t)?;
        match threshold {
            ParamSlot::InputThreshold => self.thresholds.input.push(t),
            ParamSlot::UnaryThreshold(_) => self.thresholds.unary.push(t),
            _ => self.thresholds.binary.push(t),
        }
        self.tape.apply1("step", d)
    }

    /// `on · g + off · (1 − g)` with a row of gates `g`.
    fn blend(&mut self, on: NodeId, off: NodeId, g: NodeId) -> Result<NodeId> {
        let neg = self.tape.scale(g, -T::one());
        let closed = self.tape.offset(neg, T::one());
        let a = self.tape.mul_row(on, g);
        let b = self.tape.mul_row(off, closed);
        self.tape.apply2("add", a, b)
    }

    fn linear(&mut self, l: usize, h: NodeId) -> Result<NodeId> {
        let gated = self.net.is_gated();
        let (w, b) = if gated {
            (
                self.masked_weights(ParamSlot::Weight(l), ParamSlot::WeightThreshold(l))?,
                self.masked_weights(ParamSlot::Bias(l), ParamSlot::BiasThreshold(l))?,
            )
        } else {
            (self.array(ParamSlot::Weight(l)), self.array(ParamSlot::Bias(l)))
        };
        let (w, b) = match self.opts.frozen.as_ref().map(|f| f[l].clone()) {
            Some((mw, mb)) => {
                let mw = self.tape.constant(mw);
                let mb = self.tape.constant(mb);
                (self.tape.apply2("mul", w, mw)?, self.tape.apply2("mul", b, mb)?)
            }
            None => (w, b),
        };
        let xw = self.tape.matmul(h, w);
        Ok(self.tape.add_row(xw, b))
    }

    fn record(mut self, x: NodeId) -> Result<Recorded> {
        let net = self.net;
        let gated = net.is_gated();
        let mut h = if gated {
            let g = self.gate(&net.input_gate, ParamSlot::InputThreshold)?;
            self.tape.mul_row(x, g)
        } else {
            x
        };
        for (l, ops) in net.spec.layers.iter().enumerate() {
            let z = self.linear(l, h)?;
            let u = ops.unary.len();
            let mut parts = Vec::new();
            if u > 0 {
                let mut applied = Vec::with_capacity(u);
                for (j, op) in ops.unary.iter().enumerate() {
                    let c = self.tape.columns(z, j, 1);
                    applied.push(self.tape.apply1(op, c)?);
                }
                let f = self.tape.concat(applied);
                parts.push(if gated {
                    let g = self.gate(&net.unary_gates[l], ParamSlot::UnaryThreshold(l))?;
                    let id = self.tape.columns(z, 0, u);
                    self.blend(f, id, g)?
                } else {
                    f
                });
            }
            if !ops.binary.is_empty() {
                let mut applied = Vec::with_capacity(ops.binary.len());
                let mut sums = Vec::with_capacity(ops.binary.len());
                for (k, op) in ops.binary.iter().enumerate() {
                    let a = self.tape.columns(z, u + 2 * k, 1);
                    let b = self.tape.columns(z, u + 2 * k + 1, 1);
                    applied.push(self.tape.apply2(op, a, b)?);
                    if gated {
                        sums.push(self.tape.apply2("add", a, b)?);
                    }
                }
                let g_out = self.tape.concat(applied);
                parts.push(if gated {
                    let g = self.gate(&net.binary_gates[l], ParamSlot::BinaryThreshold(l))?;
                    let s = self.tape.concat(sums);
                    self.blend(g_out, s, g)?
                } else {
                    g_out
                });
            }
            h = if parts.len() == 1 { parts[0] } else { self.tape.concat(parts) };
        }
        let output = self.linear(net.linear.len() - 1, h)?;
        let order = net.param_slots();
        let mut params = self.params;
        params.sort_by_key(|(slot, _)| order.iter().position(|s| s == slot));
        Ok(Recorded { output, params, thresholds: self.thresholds })
    }
}

impl<T: Scalar> Network<T> {
    /// Records the masked forward pass of the batch held by node `x` onto `tape`.
    pub fn record(&self, tape: &mut Tape<T>, x: NodeId, opts: &GraphOptions<T>) -> Result<Recorded> {
        Recorder { net: self, tape, opts, params: Vec::new(), thresholds: ThresholdNodes::default() }.record(x)
    }

    /// Network output for an `N × input_dim` batch, masks evaluated at current thresholds.
    pub fn forward_masked(&self, batch: &Array<T>) -> Result<Array<T>> {
        self.forward_with(batch, None)
    }

    pub fn forward_with(&self, batch: &Array<T>, frozen: Option<Vec<(Array<T>, Array<T>)>>) -> Result<Array<T>> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch of shape {:?} does not match input_dim {}",
                batch.shape(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new(Arc::clone(self.registry()));
        let (xv, x) = tape.input("x");
        let opts = GraphOptions { frozen, constant_params: true };
        let rec = self.record(&mut tape, x, &opts)?;
        tape.forward(Bindings::new().with(xv, batch.clone()))?;
        Ok(tape.value(rec.output)?.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use crate::net::{NetworkSpec, OperatorSet, SparsityTargets};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(layers: Vec<OperatorSet>, input: usize, output: usize, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_dim: input,
            output_dim: output,
            layers,
            targets: SparsityTargets::uniform(0.5),
            decay_rate: 0.01,
            seed,
        }
    }

    fn batch(n: usize, d: usize, seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Straight-line evaluation of an ungated network, written independently of the tape.
    fn reference(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
        let reg = net.registry();
        let mut h = x.to_vec();
        for (l, ops) in net.spec.layers.iter().enumerate() {
            let (w, b) = (&net.linear[l].weight.weights, &net.linear[l].bias.weights);
            let z: Vec<f64> =
                (0..w.cols()).map(|j| (0..w.rows()).fold(0.0, |acc, i| acc + h[i] * w.at(i, j)) + b.data()[j]).collect();
            let u = ops.unary.len();
            let mut next: Vec<f64> = ops.unary.iter().enumerate().map(|(j, op)| reg.lookup(op).unwrap().apply1(z[j])).collect();
            for (k, op) in ops.binary.iter().enumerate() {
                next.push(reg.lookup(op).unwrap().apply2(z[u + 2 * k], z[u + 2 * k + 1]));
            }
            h = next;
        }
        let out = net.linear.last().unwrap();
        (0..out.fan_out())
            .map(|j| (0..out.fan_in()).fold(0.0, |acc, i| acc + h[i] * out.weight.weights.at(i, j)) + out.bias.weights.data()[j])
            .collect()
    }

    #[test]
    fn zero_thresholds_match_straight_line_evaluation() {
        let s = spec(
            vec![OperatorSet::new(&["sin", "tanh", "gauss"], &["mul", "add"]), OperatorSet::new(&["cos", "exp"], &["mul"])],
            4,
            2,
            5,
        );
        let net = Network::<f64>::build(&s).unwrap();
        let x = batch(16, 4, 1);
        let y = net.forward_masked(&x).unwrap();
        for r in 0..16 {
            let expect = reference(&net, x.row(r));
            for (a, b) in y.row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let ungated = Network { gating: crate::net::Gating::None, ..net.clone() };
        assert_eq!(ungated.forward_masked(&x).unwrap(), y);
    }

    #[test]
    fn closed_input_gate_ignores_column() {
        let s = spec(vec![OperatorSet::new(&["sin", "cos"], &["mul"])], 3, 1, 9);
        let mut net = Network::<f64>::build(&s).unwrap();
        net.input_gate.thresholds.data_mut()[1] = 1.0;
        let x = batch(8, 3, 2);
        let mut x2 = x.clone();
        for r in 0..8 {
            x2.data_mut()[r * 3 + 1] = 1e3 * (r as f64 - 3.5);
        }
        assert_eq!(net.forward_masked(&x).unwrap(), net.forward_masked(&x2).unwrap());
    }

    #[test]
    fn closed_operator_gates_become_identity_and_addition() {
        // one input, one layer with sin and mul; identity output map
        let s = spec(vec![OperatorSet::new(&["sin"], &["mul"])], 1, 1, 0);
        let mut net = Network::<f64>::build(&s).unwrap();
        net.linear[0].weight.weights = Array::matrix(1, 3, vec![0.7, 2.0, 3.0]).unwrap();
        net.linear[0].bias.weights = Array::vector(vec![0.0, 0.0, 0.0]);
        net.linear[0].bias.thresholds = Array::vector(vec![0.0, 0.0, 0.0]);
        net.linear[1].weight.weights = Array::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        net.linear[1].bias.weights = Array::vector(vec![0.0]);
        let x = Array::matrix(1, 1, vec![1.0]).unwrap();
        let open = net.forward_masked(&x).unwrap().item();
        assert_eq!(open, 0.7f64.sin() + 6.0);
        net.unary_gates[0].thresholds.data_mut()[0] = 1.0;
        net.binary_gates[0].thresholds.data_mut()[0] = 1.0;
        let closed = net.forward_masked(&x).unwrap().item();
        assert_eq!(closed, 0.7 + 5.0);
    }

    #[test]
    fn masking_does_not_mutate_weights() {
        let s = spec(vec![OperatorSet::new(&["sin", "tanh"], &["mul"])], 3, 2, 4);
        let mut net = Network::<f64>::build(&s).unwrap();
        let x = batch(10, 3, 3);
        let before = net.forward_masked(&x).unwrap();
        for l in &mut net.linear {
            l.weight.thresholds = Array::filled(l.weight.thresholds.shape().to_vec(), 10.0);
        }
        let pruned = net.forward_masked(&x).unwrap();
        assert_ne!(pruned, before);
        for l in &mut net.linear {
            l.weight.thresholds = Array::zeros(l.weight.thresholds.shape().to_vec());
        }
        assert_eq!(net.forward_masked(&x).unwrap(), before);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let s = spec(vec![OperatorSet::new(&["sin"], &[])], 3, 1, 4);
        let net = Network::<f64>::build(&s).unwrap();
        assert!(matches!(net.forward_masked(&batch(2, 4, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn smooth_paths_pass_gradient_check() {
        let s = spec(
            vec![OperatorSet::new(&["sin", "tanh", "gauss", "cos"], &["mul", "add"]), OperatorSet::new(&["sin", "exp"], &["mul"])],
            3,
            2,
            8,
        );
        let mut net = Network::<f64>::build(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for l in &mut net.linear {
            // thresholds well inside or outside |w| so finite differences do not cross a step
            let w = l.weight.weights.clone();
            l.weight.thresholds = w.map(|v| if v.abs() > 0.3 { 0.5 * v.abs() } else { 2.0 * v.abs() });
        }
        net.unary_gates[0].thresholds.data_mut()[1] = 1.0;
        net.binary_gates[1].thresholds.data_mut()[0] = rng.random_range(0.0..0.9);
        let mut tape = Tape::new(Arc::clone(net.registry()));
        let (xv, x) = tape.input("x");
        let rec = net.record(&mut tape, x, &GraphOptions::default()).unwrap();
        let mut b = Bindings::new();
        b.bind(xv, batch(6, 3, 5));
        rec.bind_params(&net, &mut b);
        tape.forward(b).unwrap();
        // the closed unary gate sits exactly on its step, so its threshold is left out
        let params: Vec<VarId> = rec.params.iter().filter(|p| p.0 != ParamSlot::UnaryThreshold(0)).map(|p| p.1).collect();
        let report = grad_check(&mut tape, rec.output, &params, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        assert!(report.excluded_surrogates > 0);
    }

    #[test]
    fn mask_gradients_follow_product_rule() {
        // single weight w = 0.5 with threshold t = 0.2 feeding an identity-like path
        let s = spec(vec![OperatorSet::new(&["id"], &[])], 1, 1, 0);
        let mut net = Network::<f64>::build(&s).unwrap();
        net.linear[0].weight.weights = Array::matrix(1, 1, vec![0.5]).unwrap();
        net.linear[0].weight.thresholds = Array::matrix(1, 1, vec![0.2]).unwrap();
        net.linear[0].bias.weights = Array::vector(vec![0.0]);
        net.linear[1].weight.weights = Array::matrix(1, 1, vec![1.0]).unwrap();
        net.linear[1].bias.weights = Array::vector(vec![0.0]);
        let mut tape = Tape::new(Arc::clone(net.registry()));
        let (xv, x) = tape.input("x");
        let rec = net.record(&mut tape, x, &GraphOptions::default()).unwrap();
        let mut b = Bindings::new();
        b.bind(xv, Array::matrix(1, 1, vec![1.0]).unwrap());
        rec.bind_params(&net, &mut b);
        tape.forward(b).unwrap();
        let g = tape.backward(rec.output, &Array::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let var = |slot| rec.params.iter().find(|p| p.0 == slot).unwrap().1;
        let sur = crate::diff::step_surrogate(0.3, 5.0);
        let gw = g.get(var(ParamSlot::Weight(0))).unwrap().item();
        let gt = g.get(var(ParamSlot::WeightThreshold(0))).unwrap().item();
        assert!((gw - (1.0 + 0.5 * sur)).abs() < 1e-15);
        assert!((gt - (-0.5 * sur)).abs() < 1e-15);
    }
}
