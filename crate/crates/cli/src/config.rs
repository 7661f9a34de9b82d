use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symbolnet::data::{self, load_csv, load_idx, CsvOptions, LabelSpec, Splits, SynthSpec, Task, DEFAULT_SPLIT};
use symbolnet::diff::Registry;
use symbolnet::eql::EqlConfig;
use symbolnet::net::{NetworkSpec, OperatorSet, SparsityTargets};
use symbolnet::train::TrainConfig;

use crate::error::{CliError, CliResult};

/// Where the rows come from. Relative paths are resolved against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        formula_text: String,
        n_input: usize,
        n_samples: usize,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        labels: Vec<String>,
        task: Task,
        #[serde(default)]
        features: Option<Vec<String>>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only these digit labels (one-hot over them, in this order).
        #[serde(default)]
        classes: Option<Vec<u8>>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Symbolnet,
    Eql,
}

/// Scan axes. An absent axis keeps the base value; cells are the cartesian product in
/// field order, last axis fastest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub alpha_weight: Option<Vec<f64>>,
    pub alpha_input: Option<Vec<f64>>,
    pub alpha_unary: Option<Vec<f64>>,
    pub alpha_binary: Option<Vec<f64>>,
    pub eql_lambda: Option<Vec<f64>>,
    pub eql_hard_threshold: Option<Vec<f64>>,
}

impl GridConfig {
    fn axes(&self) -> [(&'static str, Option<&Vec<f64>>); 6] {
        [
            ("alpha_weight", self.alpha_weight.as_ref()),
            ("alpha_input", self.alpha_input.as_ref()),
            ("alpha_unary", self.alpha_unary.as_ref()),
            ("alpha_binary", self.alpha_binary.as_ref()),
            ("eql_lambda", self.eql_lambda.as_ref()),
            ("eql_hard_threshold", self.eql_hard_threshold.as_ref()),
        ]
    }
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}
fn default_decay() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    0.5
}

/// Everything one run needs, as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Seed of the train/val/test shuffle; the run seed when absent.
    #[serde(default)]
    pub split_seed: Option<u64>,
    /// Fit per-feature standardization on the training split. Defaults to on for CSV data
    /// only; synthetic features are already in [-1, 1] and images in [0, 1].
    #[serde(default)]
    pub standardize: Option<bool>,

    pub layers: Vec<OperatorSet>,
    #[serde(default = "default_alpha")]
    pub alpha_weight: f64,
    #[serde(default = "default_alpha")]
    pub alpha_input: f64,
    #[serde(default = "default_alpha")]
    pub alpha_unary: f64,
    #[serde(default = "default_alpha")]
    pub alpha_binary: f64,
    #[serde(default = "default_decay")]
    pub decay_rate: f64,

    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub shuffle: Option<bool>,

    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub eql_lambda: Option<f64>,
    #[serde(default)]
    pub eql_a: Option<f64>,
    #[serde(default)]
    pub eql_hard_threshold: Option<f64>,
    #[serde(default)]
    pub eql_stage_epochs: Option<[usize; 3]>,

    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridConfig>,

    /// Directory of the config file; relative data paths are resolved against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Splits of the configured dataset plus what is needed to map back to raw features.
pub struct Prepared {
    pub splits: Splits<f64>,
    pub raw_test: data::Dataset<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn targets(&self) -> SparsityTargets {
        SparsityTargets {
            weight: self.alpha_weight,
            input: self.alpha_input,
            unary: self.alpha_unary,
            binary: self.alpha_binary,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            seed: self.seed(),
            shuffle: self.shuffle.unwrap_or(d.shuffle),
        }
    }

    pub fn eql_config(&self) -> EqlConfig {
        let d = EqlConfig::default();
        EqlConfig {
            lambda: self.eql_lambda.unwrap_or(d.lambda),
            a: self.eql_a.unwrap_or(d.a),
            hard_threshold: self.eql_hard_threshold.unwrap_or(d.hard_threshold),
            stage_epochs: self.eql_stage_epochs.or(d.stage_epochs),
        }
    }

    pub fn network_spec(&self, input_dim: usize, output_dim: usize, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            output_dim,
            layers: self.layers.clone(),
            targets: self.targets(),
            decay_rate: self.decay_rate,
            seed,
        }
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> CliResult<PathBuf> {
        match (cli, &self.output_dir) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(CliError::Config("no output directory: set `output_dir` or pass --out".into())),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn standardize_enabled(&self) -> bool {
        self.standardize.unwrap_or(matches!(self.dataset, DatasetConfig::Csv { .. }))
    }

    /// Every check that does not need the data.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        // operator names, arities, targets and decay rate, on a placeholder shape
        self.network_spec(1, 1, 0).validate(&Registry::<f64>::standard()).map_err(CliError::config)?;
        self.train_config().validate().map_err(CliError::config)?;
        if self.mode == Mode::Eql {
            let eql = self.eql_config();
            eql.validate().map_err(CliError::config)?;
            eql.stages(self.train_config().epochs).map_err(CliError::config)?;
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|&r| !(r >= 0.0)) {
            return bad(format!("split {:?} must be nonnegative and sum to 1", self.split));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { n_input, n_samples, noise_std, formula_text, .. } => {
                if *n_input == 0 || *n_samples < 3 {
                    return bad("synthetic dataset needs n_input >= 1 and n_samples >= 3".into());
                }
                if !(*noise_std >= 0.0) {
                    return bad(format!("noise_std must be nonnegative, got {noise_std}"));
                }
                let f = symbolnet::expr::parse_text::<f64>(formula_text, None).map_err(|e| CliError::Config(format!("formula_text: {e}")))?;
                if f.max_variable().is_some_and(|v| v >= *n_input) {
                    return bad(format!("formula uses x{} but n_input is {n_input}", f.max_variable().unwrap_or(0)));
                }
            }
            DatasetConfig::Csv { labels, .. } => {
                if labels.is_empty() {
                    return bad("csv dataset needs at least one label column".into());
                }
            }
            DatasetConfig::Idx { classes, .. } => {
                if classes.as_ref().is_some_and(|c| c.len() < 2) {
                    return bad("idx `classes` needs at least two digits".into());
                }
            }
        }
        if let Some(grid) = &self.grid {
            for (name, axis) in grid.axes() {
                let Some(values) = axis else { continue };
                if values.is_empty() {
                    return bad(format!("grid axis `{name}` is empty"));
                }
                let eql_axis = name.starts_with("eql_");
                if eql_axis != (self.mode == Mode::Eql) {
                    return bad(format!("grid axis `{name}` does not apply to mode {:?}", self.mode));
                }
                for &v in values {
                    let ok = match name {
                        "eql_lambda" => v >= 0.0 && v.is_finite(),
                        "eql_hard_threshold" => v >= 0.0,
                        _ => (0.0..=1.0).contains(&v),
                    };
                    if !ok {
                        return bad(format!("grid axis `{name}` has invalid value {v}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Loads the dataset and splits it; standardization statistics come from the training rows.
    pub fn prepare(&self) -> CliResult<Prepared> {
        let registry = Registry::<f64>::standard();
        let ds = match &self.dataset {
            DatasetConfig::Synthetic { formula_text, n_input, n_samples, noise_std, seed } => SynthSpec {
                formula_text: formula_text.clone(),
                n_input: *n_input,
                n_samples: *n_samples,
                noise_std: *noise_std,
                seed: *seed,
            }
            .generate(&registry)?,
            DatasetConfig::Csv { path, labels, task, features } => {
                let opts = CsvOptions { labels: LabelSpec { columns: labels.clone() }, task: *task, features: features.clone() };
                load_csv(self.resolve(path), &opts)?
            }
            DatasetConfig::Idx { images, labels, classes } => {
                load_idx(self.resolve(images), self.resolve(labels), classes.as_deref())?
            }
        };
        let feature_names = ds.feature_names.clone();
        let splits = data::split(&ds, self.split, self.split_seed.unwrap_or(self.seed()))?;
        let raw_test = splits.test.clone();
        let splits = if self.standardize_enabled() { splits.standardize()? } else { splits };
        Ok(Prepared { splits, raw_test, feature_names })
    }
}
