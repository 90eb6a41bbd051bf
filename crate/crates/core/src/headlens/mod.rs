//! Leave-one-out head importance: mask each attention head alone, re-run the
//! dev evaluation and record how far the metric moves.

mod io;
mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{
    cell_color, importance_csv, parse_importance_csv, read_importance_csv, render_heatmap_svg, write_importance_csv,
    CSV_HEADER,
};
pub use report::{compare_tasks, layer_summary, percentile, spearman, top_heads, Comparison, FiveNumber, LayerSummary};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics};
use crate::model::{checkpoint_id, HeadMask, Model, ModelConfig};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    F1,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
        }
    }

    pub fn task(self) -> Task {
        match self {
            MetricKind::Accuracy => Task::Boolean,
            MetricKind::F1 => Task::Extractive,
        }
    }

    /// Metric points (percent) from `metrics`, on the grid of [`quantize`].
    pub fn points(self, metrics: &Metrics) -> Result<f64> {
        let value = match self {
            MetricKind::Accuracy => metrics.accuracy,
            MetricKind::F1 => metrics.f1,
        };
        value
            .map(|v| quantize(100.0 * v))
            .ok_or_else(|| Error::Usage(format!("no {:?} samples to compute {}", self.task(), self.name())))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "f1" => Ok(MetricKind::F1),
            other => Err(Error::Usage(format!("unknown metric {other:?} (expected accuracy or f1)"))),
        }
    }
}

const GRID: f64 = (1u64 << 40) as f64;

/// Rounds to a multiple of 2^-40. Differences of two grid values below 2^12
/// are exact, so `baseline + delta == masked` holds bit-for-bit.
pub fn quantize(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub metric: MetricKind,
    pub baseline: f64,
    /// `masked[l][h]`: metric with only head `(l, h)` masked.
    pub masked: Matrix,
    /// `masked - baseline`; negative means the head matters.
    pub deltas: Matrix,
    pub checkpoint_id: Option<String>,
    pub dataset_id: Option<String>,
}

impl ImportanceMatrix {
    pub fn from_masked(metric: MetricKind, baseline: f64, masked: Matrix) -> Self {
        let mut deltas = masked.clone();
        for d in deltas.data_mut() {
            *d -= baseline;
        }
        Self {
            metric,
            baseline,
            masked,
            deltas,
            checkpoint_id: None,
            dataset_id: None,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.deltas.rows()
    }

    pub fn n_heads(&self) -> usize {
        self.deltas.cols()
    }

    pub fn delta(&self, layer: usize, head: usize) -> f64 {
        self.deltas.get(layer, head)
    }
}

/// Baseline plus one evaluation per head, each with exactly that head masked.
/// `eval` maps a mask to metric points. Evaluations run on `workers` threads
/// and are gathered in (layer, head) order.
pub fn rank_with<F>(
    config: &ModelConfig,
    metric: MetricKind,
    workers: usize,
    eval: F,
) -> Result<ImportanceMatrix>
where
    F: Fn(&HeadMask) -> Result<f64> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {workers} workers: {e}")))?;
    let (n_layers, n_heads) = (config.n_layers, config.n_heads);
    pool.install(|| {
        let baseline = quantize(eval(&HeadMask::all_keep(config))?);
        let masked: Vec<f64> = (0..n_layers * n_heads)
            .into_par_iter()
            .map(|i| eval(&HeadMask::single(config, i / n_heads, i % n_heads)?).map(quantize))
            .collect::<Result<_>>()?;
        Ok(ImportanceMatrix::from_masked(
            metric,
            baseline,
            Matrix::from_vec(n_layers, n_heads, masked)?,
        ))
    })
}

pub fn rank_heads(model: &Model, dataset: &Dataset, metric: MetricKind, workers: usize) -> Result<ImportanceMatrix> {
    if dataset.count_task(metric.task()) == 0 {
        return Err(Error::Usage(format!(
            "metric {metric} needs {:?} samples but dataset {} has none",
            metric.task(),
            dataset.name
        )));
    }
    if !model.regime().accepts(metric.task()) {
        return Err(Error::Usage(format!(
            "a {:?} model cannot be scored by {metric}",
            model.regime()
        )));
    }
    let mut m = rank_with(&model.config, metric, workers, |mask| {
        metric.points(&evaluate(model, dataset, Some(mask))?)
    })?;
    m.checkpoint_id = Some(checkpoint_id(model));
    m.dataset_id = Some(dataset.name.clone());
    Ok(m)
}

#[cfg(test)]
mod tests;
