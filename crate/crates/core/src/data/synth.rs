use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::{Dataset, Task};
use crate::diff::Registry;
use crate::error::{Error, Result};
use crate::expr::{parse_text, Expr};
use crate::scalar::Scalar;

/// Ground-truth regression task described in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub formula_text: String,
    pub n_input: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn generate<T: Scalar>(&self, registry: &Registry<T>) -> Result<Dataset<T>> {
        let formula = parse_text(&self.formula_text, None)?;
        synth_generate(&formula, registry, self.n_input, self.n_samples, self.noise_std, self.seed)
    }
}

/// Features ~ Uniform(−1, 1); labels = formula(x) + Normal(0, noise_std).
///
/// Features are drawn row by row first, then the noise, from one seeded stream.
pub fn synth_generate<T: Scalar>(
    formula: &Expr<T>,
    registry: &Registry<T>,
    n_input: usize,
    n_samples: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if n_samples == 0 || n_input == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs samples and inputs".into()));
    }
    if let Some(v) = formula.max_variable() {
        if v >= n_input {
            return Err(Error::InvalidArgument(format!("formula uses x{v} but n_input = {n_input}")));
        }
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<T> = (0..n_samples * n_input).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
    let features = Array::matrix(n_samples, n_input, x)?;
    let clean = formula.eval_batch(registry, &features)?;
    let labels = if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        clean.into_iter().map(|y| y + T::lit(normal.sample(&mut rng))).collect()
    } else {
        clean
    };
    Dataset::new(features, Array::matrix(n_samples, 1, labels)?, Task::Regression)
}
