use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symbolnet::array::Array;
use symbolnet::data::{Dataset, Task};
use symbolnet::diff::Registry;
use symbolnet::eql::{build_eql_network, train_three_stage};
use symbolnet::expr::{pareto_front, ParetoPoint};
use symbolnet::net::{Checkpoint, Network};
use symbolnet::train::{cell_seed, evaluate, evaluate_predictions, train_observed, HistoryRow, Metrics, TrainHistory};
use symbolnet::Network64;

use crate::artifacts::{self, ExpressionFile, FeatureSpace};
use crate::config::{Mode, Prepared, RunConfig};
use crate::error::{CliError, CliResult};

/// Contents of `metrics.json`, measured on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_test: usize,
    pub mse: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<Vec<Option<f64>>>,
    pub complexity: Vec<usize>,
    pub mean_complexity: f64,
}

impl RunMetrics {
    fn new(m: Metrics, n_test: usize, exprs: &ExpressionFile) -> Self {
        Self {
            n_test,
            mse: m.mse,
            accuracy: m.accuracy,
            auc: m.auc,
            complexity: exprs.expressions.iter().map(|e| e.complexity).collect(),
            mean_complexity: exprs.mean_complexity(),
        }
    }

    /// Accuracy for classification, negated MSE otherwise; higher is better.
    pub fn score(&self) -> f64 {
        self.accuracy.unwrap_or(-self.mse)
    }
}

/// A finished single run, before anything is written.
pub struct RunOutput {
    pub checkpoint: Checkpoint<f64>,
    pub history: TrainHistory,
    pub expressions: ExpressionFile,
    pub metrics: RunMetrics,
}

fn log_progress(total: usize) -> impl FnMut(&Network64, &HistoryRow) -> symbolnet::Result<()> {
    let every = (total / 10).max(1);
    move |_, row| {
        if row.epoch % every == 0 || row.epoch == total {
            let s = row.sparsity;
            log::info!(
                "epoch {:>5}  loss {:.6e}  val_mse {:.6e}  sparsity w {:.3} in {:.3} un {:.3} bin {:.3}",
                row.epoch,
                row.loss.total,
                row.val_mse,
                s[0],
                s[1],
                s[2],
                s[3]
            );
        }
        Ok(())
    }
}

fn checkpoint_for(net: Network64, epoch: usize, data: &Prepared) -> Checkpoint<f64> {
    let mut ck = Checkpoint::new(net, epoch);
    ck.standardization = data.splits.train.standardization.clone();
    ck.feature_names = data.feature_names.clone();
    ck
}

/// Trains one network under `cfg` on already prepared data.
///
/// A run that stops on a non-finite value still writes its last good checkpoint and the
/// history so far when `dir` is given.
pub fn run_once(cfg: &RunConfig, data: &Prepared, dir: Option<&Path>) -> CliResult<RunOutput> {
    let train = &data.splits.train;
    let spec = cfg.network_spec(train.n_input(), train.n_output(), cfg.seed());
    let tcfg = cfg.train_config();
    let result = match cfg.mode {
        Mode::Symbolnet => {
            let net = Network::build(&spec)?;
            train_observed(net, train, Some(&data.splits.val), &tcfg, &mut log_progress(tcfg.epochs)).map(|t| (t.network, t.history))
        }
        Mode::Eql => {
            let net = build_eql_network(&spec, cfg.eql_config().a)?;
            train_three_stage(net, train, Some(&data.splits.val), &cfg.eql_config(), &tcfg).map(|o| (o.network, o.history))
        }
    };
    let (net, history) = match result {
        Ok(r) => r,
        Err(aborted) => {
            if let Some(dir) = dir {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                checkpoint_for(aborted.last_good, aborted.epoch, data).save(dir.join(artifacts::CHECKPOINT_FILE))?;
                artifacts::write(&dir.join(artifacts::HISTORY_FILE), &aborted.history.to_csv()?)?;
            }
            return Err(CliError::Runtime(format!("training aborted after epoch {}: {}", aborted.epoch, aborted.error)));
        }
    };
    let epoch = history.last().map_or(0, |r| r.epoch);
    let m = evaluate(&net, &data.splits.test)?;
    let checkpoint = checkpoint_for(net, epoch, data);
    let expressions = artifacts::expressions_from_checkpoint(&checkpoint, false)?;
    let metrics = RunMetrics::new(m, data.splits.test.len(), &expressions);
    Ok(RunOutput { checkpoint, history, expressions, metrics })
}

/// `train`: one run, five files in the output directory.
pub fn train(cfg: &RunConfig, out: Option<&Path>) -> CliResult<(PathBuf, RunMetrics)> {
    let dir = cfg.output_dir(out)?;
    let data = cfg.prepare()?;
    let run = run_once(cfg, &data, Some(&dir))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    run.checkpoint.save(dir.join(artifacts::CHECKPOINT_FILE))?;
    artifacts::write(&dir.join(artifacts::HISTORY_FILE), &run.history.to_csv()?)?;
    artifacts::write_expressions(&dir, &run.expressions)?;
    artifacts::write_json(&dir.join(artifacts::METRICS_FILE), &run.metrics)?;
    for e in &run.expressions.expressions {
        println!("y{} = {}", e.output, e.display);
    }
    Ok((dir, run.metrics))
}

/// One cell of a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub cell: usize,
    pub seed: u64,
    /// Grid values of this cell, by axis name.
    pub params: Vec<(String, f64)>,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub mode: Mode,
    /// `accuracy` or `neg_mse`.
    pub score: String,
    pub cells: Vec<ScanCell>,
    /// Non-dominated cells over (rounded mean complexity, score), simplest first.
    pub front: Vec<ParetoPoint>,
}

/// Expands the grid into per-cell configs in row-major order.
pub fn grid_cells(cfg: &RunConfig) -> Vec<(Vec<(String, f64)>, RunConfig)> {
    let grid = cfg.grid.clone().unwrap_or_default();
    let axes: Vec<(&str, Vec<f64>)> = [
        ("alpha_weight", grid.alpha_weight),
        ("alpha_input", grid.alpha_input),
        ("alpha_unary", grid.alpha_unary),
        ("alpha_binary", grid.alpha_binary),
        ("eql_lambda", grid.eql_lambda),
        ("eql_hard_threshold", grid.eql_hard_threshold),
    ]
    .into_iter()
    .filter_map(|(n, v)| v.map(|v| (n, v)))
    .collect();
    let mut cells: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (name, values) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((name.to_string(), v));
                    p
                })
            })
            .collect();
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(i, params)| {
            let mut c = cfg.clone();
            for (name, v) in &params {
                match name.as_str() {
                    "alpha_weight" => c.alpha_weight = *v,
                    "alpha_input" => c.alpha_input = *v,
                    "alpha_unary" => c.alpha_unary = *v,
                    "alpha_binary" => c.alpha_binary = *v,
                    "eql_lambda" => c.eql_lambda = Some(*v),
                    _ => c.eql_hard_threshold = Some(*v),
                }
            }
            c.set_seed(cell_seed(cfg.seed(), i as u64));
            (params, c)
        })
        .collect()
}

/// Runs every grid cell on one shared split. Failed cells are logged and reported, not fatal.
pub fn scan_report(cfg: &RunConfig) -> CliResult<ScanReport> {
    let data = cfg.prepare()?;
    let mut cells = Vec::new();
    for (i, (params, c)) in grid_cells(cfg).into_iter().enumerate() {
        log::info!("cell {i}: {params:?}");
        let (metrics, error) = match run_once(&c, &data, None) {
            Ok(run) => (Some(run.metrics), None),
            Err(e) => {
                log::warn!("cell {i} failed: {e}");
                (None, Some(e.to_string()))
            }
        };
        cells.push(ScanCell { cell: i, seed: c.seed(), params, metrics, error });
    }
    let points: Vec<ParetoPoint> = cells
        .iter()
        .filter_map(|c| c.metrics.as_ref().map(|m| ParetoPoint::new(m.mean_complexity.round() as usize, m.score(), c.cell)))
        .collect();
    let score = if data.splits.test.task == Task::Classification { "accuracy" } else { "neg_mse" };
    Ok(ScanReport { mode: cfg.mode, score: score.into(), cells, front: pareto_front(&points) })
}

/// `scan`: writes `scan.json` and a `scan.csv` table.
pub fn scan(cfg: &RunConfig, out: Option<&Path>) -> CliResult<(PathBuf, ScanReport)> {
    let dir = cfg.output_dir(out)?;
    let report = scan_report(cfg)?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    artifacts::write_json(&dir.join("scan.json"), &report)?;
    artifacts::write(&dir.join("scan.csv"), &scan_table(&report))?;
    for p in &report.front {
        println!("front: cell {} complexity {} {} {}", p.id, p.complexity, report.score, p.score);
    }
    Ok((dir, report))
}

fn scan_table(report: &ScanReport) -> String {
    let names: Vec<&str> = report.cells.first().map(|c| c.params.iter().map(|p| p.0.as_str()).collect()).unwrap_or_default();
    let mut s = format!("cell,seed,{}mean_complexity,mse,accuracy,on_front,error\n", names.iter().map(|n| format!("{n},")).collect::<String>());
    for c in &report.cells {
        let on_front = report.front.iter().any(|p| p.id == c.cell);
        let params: String = c.params.iter().map(|p| format!("{},", p.1)).collect();
        let (mc, mse, acc) = match &c.metrics {
            Some(m) => (m.mean_complexity.to_string(), m.mse.to_string(), m.accuracy.map(|a| a.to_string()).unwrap_or_default()),
            None => Default::default(),
        };
        let err = c.error.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
        s.push_str(&format!("{},{},{params}{mc},{mse},{acc},{on_front},{err}\n", c.cell, c.seed));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMetrics {
    pub output: usize,
    pub complexity: usize,
    pub mse: f64,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_rows: usize,
    pub feature_space: FeatureSpace,
    pub mse: f64,
    /// Argmax over the expressions against the class labels.
    pub accuracy: Option<f64>,
    pub expressions: Vec<ExpressionMetrics>,
    pub mean_complexity: f64,
}

/// Scores expressions on a dataset, one expression per label column.
pub fn evaluate_expressions(exprs: &[symbolnet::Expr64], data: &Dataset<f64>, space: FeatureSpace) -> CliResult<EvalReport> {
    if exprs.len() != data.n_output() {
        return Err(CliError::Runtime(format!(
            "{} expression(s) for {} label column(s)",
            exprs.len(),
            data.n_output()
        )));
    }
    let registry = Registry::<f64>::standard();
    let n = data.len();
    let mut columns = Vec::with_capacity(exprs.len());
    for (k, e) in exprs.iter().enumerate() {
        if e.max_variable().is_some_and(|v| v >= data.n_input()) {
            return Err(CliError::Runtime(format!("expression {k} reads x{} but the data has {} features", e.max_variable().unwrap_or(0), data.n_input())));
        }
        columns.push(e.eval_batch(&registry, &data.features)?);
    }
    let mut flat = Vec::with_capacity(n * exprs.len());
    for r in 0..n {
        flat.extend(columns.iter().map(|c| c[r]));
    }
    let predictions = Array::new(vec![n, exprs.len()], flat)?;
    let m = evaluate_predictions(&predictions, data)?;
    let per_output = exprs
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mse = columns[k].iter().zip(data.labels.column(k)).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
            ExpressionMetrics { output: k, complexity: e.complexity(), mse, auc: m.auc.as_ref().and_then(|a| a[k]) }
        })
        .collect::<Vec<_>>();
    let mean_complexity = per_output.iter().map(|e| e.complexity as f64).sum::<f64>() / per_output.len().max(1) as f64;
    Ok(EvalReport { n_rows: n, feature_space: space, mse: m.mse, accuracy: m.accuracy, expressions: per_output, mean_complexity })
}

/// `eval`: expressions from a file against the test split of the configured dataset.
///
/// The feature space comes from `space`, else from the JSON file, else raw.
pub fn eval(cfg: &RunConfig, expressions: &Path, space: Option<FeatureSpace>, out: Option<&Path>) -> CliResult<EvalReport> {
    let data = cfg.prepare()?;
    let (exprs, declared) = artifacts::read_expressions(expressions, data.feature_names.as_deref())?;
    let space = space.or(declared).unwrap_or(FeatureSpace::Raw);
    let test = match space {
        FeatureSpace::Raw => &data.raw_test,
        FeatureSpace::Standardized => &data.splits.test,
    };
    let report = evaluate_expressions(&exprs, test, space)?;
    let text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
    match out {
        Some(p) => artifacts::write(p, &(text + "\n"))?,
        None => println!("{text}"),
    }
    Ok(report)
}

/// `export`: expressions of a checkpoint, in both formats.
pub fn export(checkpoint: &Path, out: &Path, raw_features: bool) -> CliResult<ExpressionFile> {
    let ck = Checkpoint::<f64>::load(checkpoint).map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    let file = artifacts::expressions_from_checkpoint(&ck, raw_features)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    artifacts::write_expressions(out, &file)?;
    for e in &file.expressions {
        println!("y{} = {}", e.output, e.display);
    }
    Ok(file)
}
