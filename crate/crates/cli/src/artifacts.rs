use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use symbolnet::diff::Registry;
use symbolnet::expr::{parse_text, simplify, unroll, unroll_standardized, Expr, TextOptions};
use symbolnet::net::Checkpoint;

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EXPRESSIONS_JSON: &str = "expressions.json";
pub const EXPRESSIONS_TEXT: &str = "expressions.txt";
pub const METRICS_FILE: &str = "metrics.json";

/// Which inputs the expressions expect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    /// Features exactly as stored in the dataset.
    Raw,
    /// Features after the training-split standardization.
    Standardized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionEntry {
    pub output: usize,
    /// Full-precision infix text; parses back to the same function.
    pub text: String,
    /// Constants rounded to two significant figures.
    pub display: String,
    pub complexity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFile {
    pub feature_space: FeatureSpace,
    pub feature_names: Option<Vec<String>>,
    pub expressions: Vec<ExpressionEntry>,
}

impl ExpressionFile {
    pub fn mean_complexity(&self) -> f64 {
        if self.expressions.is_empty() {
            return 0.0;
        }
        self.expressions.iter().map(|e| e.complexity as f64).sum::<f64>() / self.expressions.len() as f64
    }

    /// The expression trees, re-parsed from the full-precision text.
    pub fn parse(&self) -> CliResult<Vec<Expr<f64>>> {
        let names = self.feature_names.as_deref().filter(|n| usable_names(n));
        self.expressions
            .iter()
            .map(|e| parse_text(&e.text, names).map_err(|err| CliError::Runtime(format!("expression {}: {err}", e.output))))
            .collect()
    }
}

/// Feature names can stand in for `x<k>` only if each reads back as a single variable.
pub fn usable_names(names: &[String]) -> bool {
    let registry = Registry::<f64>::standard();
    let mut seen = std::collections::HashSet::new();
    names.iter().all(|n| {
        let mut chars = n.chars();
        let starts_ok = chars.next().is_some_and(|c| c.is_alphabetic() || c == '_');
        starts_ok
            && n.chars().all(|c| c.is_alphanumeric() || c == '_')
            && !registry.contains(n)
            && seen.insert(n.as_str())
    })
}

/// Unrolls and simplifies a checkpointed network, optionally folding its standardization
/// into the first layer so the result reads raw features.
pub fn expressions_from_checkpoint(ck: &Checkpoint<f64>, raw_features: bool) -> CliResult<ExpressionFile> {
    let (exprs, space) = match (&ck.standardization, raw_features) {
        (Some(st), true) => (unroll_standardized(&ck.network, st)?, FeatureSpace::Raw),
        (Some(_), false) => (unroll(&ck.network), FeatureSpace::Standardized),
        (None, _) => (unroll(&ck.network), FeatureSpace::Raw),
    };
    Ok(expression_file(exprs.iter().map(simplify).collect(), space, ck.feature_names.clone()))
}

pub fn expression_file(exprs: Vec<Expr<f64>>, space: FeatureSpace, feature_names: Option<Vec<String>>) -> ExpressionFile {
    let names = feature_names.as_deref().filter(|n| usable_names(n));
    let expressions = exprs
        .iter()
        .enumerate()
        .map(|(output, e)| ExpressionEntry {
            output,
            text: e.to_text_with(&TextOptions { sig_figs: None, feature_names: names }),
            display: e.to_text_with(&TextOptions { sig_figs: Some(2), feature_names: names }),
            complexity: e.complexity(),
        })
        .collect();
    ExpressionFile { feature_space: space, feature_names, expressions }
}

/// Writes `expressions.json` and `expressions.txt` (one full-precision expression per line).
pub fn write_expressions(dir: &Path, file: &ExpressionFile) -> CliResult<()> {
    write_json(&dir.join(EXPRESSIONS_JSON), file)?;
    let mut text = String::new();
    for e in &file.expressions {
        text.push_str(&e.text);
        text.push('\n');
    }
    write(&dir.join(EXPRESSIONS_TEXT), &text)
}

/// Reads either an expressions JSON file or plain text with one expression per line
/// (blank lines and `#` comments skipped).
pub fn read_expressions(path: &Path, feature_names: Option<&[String]>) -> CliResult<(Vec<Expr<f64>>, Option<FeatureSpace>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|x| x == "json") {
        let file: ExpressionFile = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        return Ok((file.parse()?, Some(file.feature_space)));
    }
    let exprs = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            parse_text(l.trim(), feature_names).map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((exprs, None))
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    write(path, &text)
}
