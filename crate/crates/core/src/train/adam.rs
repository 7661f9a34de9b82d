use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::net::{Network, ParamSlot};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.0015, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for one array.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Array<T>,
    pub v: Array<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { m: Array::zeros(shape.to_vec()), v: Array::zeros(shape.to_vec()) }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step number.
pub fn adam_step<T: Scalar>(param: &mut Array<T>, grad: &Array<T>, state: &mut Moments<T>, t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let c1 = one - T::lit(cfg.beta1.powi(t as i32));
    let c2 = one - T::lit(cfg.beta2.powi(t as i32));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    let g = grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, p) in param.data_mut().iter_mut().enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Adam over the parameters of a network, keyed by slot.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    state: Vec<(ParamSlot, Moments<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, state: Vec::new() }
    }

    /// Applies one update. Fails before touching any parameter if a gradient is non-finite.
    pub fn step(&mut self, net: &mut Network<T>, grads: &[(ParamSlot, Array<T>)]) -> Result<()> {
        for (slot, g) in grads {
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at index {i}", slot.name())));
            }
            g.expect_shape(net.param(*slot).shape())?;
        }
        self.t += 1;
        for (slot, g) in grads {
            let idx = match self.state.iter().position(|(s, _)| s == slot) {
                Some(i) => i,
                None => {
                    self.state.push((*slot, Moments::zeros(g.shape())));
                    self.state.len() - 1
                }
            };
            adam_step(net.param_mut(*slot), g, &mut self.state[idx].1, self.t, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { learning_rate: 0.001, ..Default::default() };
        let mut w = Array::vector(vec![0.0f64, 0.0, 1.0]);
        let g = Array::vector(vec![1.0, -3.0, 0.0]);
        let mut st = Moments::zeros(&[3]);
        adam_step(&mut w, &g, &mut st, 1, &cfg);
        assert!((w.data()[0] + 0.001).abs() < 1e-10);
        assert!((w.data()[1] - 0.001).abs() < 1e-10);
        assert_eq!(w.data()[2], 1.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut w = Array::vector(vec![0.5f64, -2.0]);
        let mut st = Moments::zeros(&[2]);
        for t in 1..=5 {
            adam_step(&mut w, &Array::zeros(vec![2]), &mut st, t, &cfg);
        }
        assert_eq!(w.data(), &[0.5, -2.0]);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let cfg = AdamConfig::default();
        let run = || {
            let mut w = Array::vector(vec![0.3f64, -0.1]);
            let mut st = Moments::zeros(&[2]);
            for t in 1..=50 {
                let g = w.map(|x| 2.0 * x - 0.7 + (t as f64).sin());
                adam_step(&mut w, &g, &mut st, t, &cfg);
            }
            (w, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
