//! Run configuration, training loops for the three tasks, and the
//! scalability-study driver.

pub mod graph_cls;
pub mod link;
pub mod node_cls;
pub mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricBlock;
use crate::model::ModelConfig;
use crate::scoring::ScoreFn;

pub use graph_cls::{train_graph_classification_on, FoldSplit, GraphClassData, GraphClassOutcome};
pub use link::{train_link_prediction, train_link_prediction_on, LinkOutcome};
pub use node_cls::{train_node_classification_on, LabeledNodes, NodeClassOutcome};
pub use sweep::{scalability_sweep, write_sweep_csv, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LinkPrediction,
    NodeClassification,
    GraphClassification,
}

/// Grid domains for hyperparameter enumeration. Values outside the
/// supported domains are rejected: layers ∈ {1,2,3}, lr ∈ {1e-3, 1e-4},
/// batch ∈ {128, 256}, dropout ∈ {0.0, 0.1, 0.2, 0.3}.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GridSpec {
    #[serde(default)]
    pub num_layers: Vec<usize>,
    #[serde(default)]
    pub lr: Vec<f64>,
    #[serde(default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub dropout: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for &k in &self.num_layers {
            if !(1..=3).contains(&k) {
                return Err(Error::Config(format!("grid layer count {k} not in {{1,2,3}}")));
            }
        }
        for &lr in &self.lr {
            if lr != 1e-3 && lr != 1e-4 {
                return Err(Error::Config(format!(
                    "grid learning rate {lr} not in {{0.001, 0.0001}}"
                )));
            }
        }
        for &b in &self.batch_size {
            if b != 128 && b != 256 {
                return Err(Error::Config(format!("grid batch size {b} not in {{128, 256}}")));
            }
        }
        for &d in &self.dropout {
            if ![0.0, 0.1, 0.2, 0.3].contains(&d) {
                return Err(Error::Config(format!(
                    "grid dropout {d} not in {{0.0, 0.1, 0.2, 0.3}}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.num_layers.is_empty()
            && self.lr.is_empty()
            && self.batch_size.is_empty()
            && self.dropout.is_empty()
    }
}

/// One training run, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    /// Dataset directory; may be empty for in-memory runs.
    #[serde(default)]
    pub dataset: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub score_fn: ScoreFn,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default = "default_label_smoothing")]
    pub label_smoothing: f64,
    /// Early stopping patience, counted in evaluations.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

fn default_eval_every() -> usize {
    20
}

fn default_label_smoothing() -> f64 {
    0.1
}

fn default_patience() -> usize {
    25
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if let Some(grid) = &self.grid {
            grid.validate()?;
        }
        Ok(())
    }

    /// Parses and validates a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Expands the grid into concrete configs (grid field cleared). An
    /// empty dimension keeps the base value.
    pub fn expand_grid(&self) -> Result<Vec<RunConfig>> {
        let Some(grid) = &self.grid else {
            return Ok(vec![self.clone()]);
        };
        grid.validate()?;
        let pick = |v: &Vec<usize>, base: usize| -> Vec<usize> {
            if v.is_empty() {
                vec![base]
            } else {
                v.clone()
            }
        };
        let pick_f = |v: &Vec<f64>, base: f64| -> Vec<f64> {
            if v.is_empty() {
                vec![base]
            } else {
                v.clone()
            }
        };
        let layer_counts = pick(&grid.num_layers, self.model.num_layers().max(1));
        let lrs = pick_f(&grid.lr, self.lr);
        let batches = pick(&grid.batch_size, self.batch_size);
        let dropouts = pick_f(&grid.dropout, self.model.dropout);
        let mut configs = Vec::new();
        for &k in &layer_counts {
            for &lr in &lrs {
                for &batch in &batches {
                    for &dropout in &dropouts {
                        let mut cfg = self.clone();
                        cfg.grid = None;
                        cfg.lr = lr;
                        cfg.batch_size = batch;
                        cfg.model.dropout = dropout;
                        // repeat the last configured width out to k layers
                        let width = cfg
                            .model
                            .layer_dims
                            .last()
                            .copied()
                            .unwrap_or(cfg.model.embed_dim);
                        cfg.model.layer_dims = vec![width; k];
                        configs.push(cfg);
                    }
                }
            }
        }
        Ok(configs)
    }
}

/// One row of the per-epoch metric history.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub valid: Option<MetricBlock>,
}

/// Writes `metrics.csv`: epoch, loss, and the validation metrics on
/// epochs where evaluation ran.
pub fn write_metrics_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "epoch,loss,valid_mrr,valid_mr,valid_hits1,valid_hits3,valid_hits10"
    )?;
    for row in rows {
        match &row.valid {
            Some(m) => writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.epoch, row.loss, m.mrr, m.mr, m.hits1, m.hits3, m.hits10
            )?,
            None => writeln!(out, "{},{},,,,,", row.epoch, row.loss)?,
        }
    }
    Ok(())
}
