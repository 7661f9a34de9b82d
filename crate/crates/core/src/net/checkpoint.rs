use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::diff::Registry;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "symbolnet-checkpoint/1";

/// Self-describing JSON dump of a network plus the preprocessing needed to use it.
///
/// Floats are written with shortest round-trip formatting, so loading is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format: String,
    pub epoch: usize,
    pub network: Network<T>,
    #[serde(default)]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub feature_names: Option<Vec<String>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(network: Network<T>, epoch: usize) -> Self {
        Self { format: CHECKPOINT_FORMAT.to_string(), epoch, network, standardization: None, feature_names: None }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format `{}`", c.format)));
        }
        c.network.set_registry(Arc::new(Registry::standard()))?;
        for (l, lin) in c.network.linear.iter().enumerate() {
            if lin.weight.weights.shape() != lin.weight.thresholds.shape()
                || lin.bias.weights.shape() != lin.bias.thresholds.shape()
            {
                return Err(Error::Data(format!("checkpoint linear {l}: weight/threshold shapes differ")));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}
