use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ImportanceMatrix;
use crate::error::{Error, Result};

/// The `k` most important heads: ascending delta, ties by (layer, head).
pub fn top_heads(m: &ImportanceMatrix, k: usize) -> Vec<(usize, usize, f64)> {
    let mut all: Vec<(usize, usize, f64)> = (0..m.n_layers())
        .flat_map(|l| (0..m.n_heads()).map(move |h| (l, h)))
        .map(|(l, h)| (l, h, m.delta(l, h)))
        .collect();
    all.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    all.truncate(k);
    all
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side has no variation.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub spearman: Option<f64>,
    pub top1_a: (usize, usize),
    pub top1_b: (usize, usize),
    pub top1_distinct: bool,
    /// Size of each top-10% set: `max(1, ceil(0.1 · L · H))`.
    pub top10pct_k: usize,
    /// Shared fraction of the two top-10% sets.
    pub top10pct_overlap: f64,
    /// 1-based position of A's top head in B's ordering.
    pub cross_rank: usize,
    /// Delta of A's top head under B.
    pub cross_delta: f64,
}

pub fn compare_tasks(a: &ImportanceMatrix, b: &ImportanceMatrix) -> Result<Comparison> {
    if a.deltas.shape() != b.deltas.shape() {
        return Err(Error::Usage(format!(
            "importance shapes differ: {:?} vs {:?}",
            a.deltas.shape(),
            b.deltas.shape()
        )));
    }
    if let (Some(x), Some(y)) = (&a.checkpoint_id, &b.checkpoint_id) {
        if x != y {
            return Err(Error::Usage(format!("importance matrices come from different checkpoints {x} and {y}")));
        }
    }
    let n = a.n_layers() * a.n_heads();
    if n == 0 {
        return Err(Error::Usage("empty importance matrix".into()));
    }
    let order_a = top_heads(a, n);
    let order_b = top_heads(b, n);
    let k = ((0.1 * n as f64).ceil() as usize).max(1);
    let shared = order_a[..k]
        .iter()
        .filter(|x| order_b[..k].iter().any(|y| (x.0, x.1) == (y.0, y.1)))
        .count();
    let top1_a = (order_a[0].0, order_a[0].1);
    let top1_b = (order_b[0].0, order_b[0].1);
    let cross_rank = order_b
        .iter()
        .position(|y| (y.0, y.1) == top1_a)
        .expect("orderings cover every head")
        + 1;
    Ok(Comparison {
        spearman: spearman(a.deltas.data(), b.deltas.data()),
        top1_a,
        top1_b,
        top1_distinct: top1_a != top1_b,
        top10pct_k: k,
        top10pct_overlap: shared as f64 / k as f64,
        cross_rank,
        cross_delta: b.delta(top1_a.0, top1_a.1),
    })
}

/// Percentile `p ∈ [0, 1]` of sorted data by linear interpolation at
/// position `p · (n − 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub layer: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub metric: super::MetricKind,
    pub layers: Vec<FiveNumber>,
}

pub fn layer_summary(m: &ImportanceMatrix) -> LayerSummary {
    let layers = (0..m.n_layers())
        .map(|layer| {
            let mut row = m.deltas.row(layer).to_vec();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            FiveNumber {
                layer,
                min: row[0],
                p25: percentile(&row, 0.25),
                median: percentile(&row, 0.5),
                p75: percentile(&row, 0.75),
                max: row[row.len() - 1],
            }
        })
        .collect();
    LayerSummary {
        metric: m.metric,
        layers,
    }
}
