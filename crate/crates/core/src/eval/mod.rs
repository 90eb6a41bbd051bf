//! Answer decoding, accuracy / token-overlap F1, and dataset evaluation
//! under an optional head mask.

mod f1;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use f1::{normalize_answer, token_f1};

use crate::data::{Category, Dataset, EncodedSample, Task};
use crate::error::{Error, Result};
use crate::model::{HeadMask, Model, ModelOutputs, Regime};

pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAPrediction {
    pub category: Category,
    pub category_prob: f64,
    /// Inclusive token range, present iff `category` is `Span`.
    pub span: Option<(usize, usize)>,
    pub text: Option<String>,
    /// `f_s[start] · f_e[end]` of the chosen span.
    pub span_score: Option<f64>,
    /// Set when the classifier chose `Span` but no admissible span existed.
    pub fell_back: bool,
}

/// Highest `f_s[s] · f_e[e]` over `s ≤ e < s + max_len` inside `[cs, ce)`.
/// Ties keep the earliest start, then the earliest end.
pub fn best_span(
    f_s: &[f64],
    f_e: &[f64],
    context: (usize, usize),
    max_len: usize,
) -> Option<(usize, usize, f64)> {
    let (cs, ce) = context;
    let mut best: Option<(usize, usize, f64)> = None;
    for s in cs..ce {
        for e in s..ce.min(s + max_len) {
            let score = f_s[s] * f_e[e];
            if best.map_or(true, |(_, _, b)| score > b) {
                best = Some((s, e, score));
            }
        }
    }
    best
}

/// Index of the largest probability; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn decode(outputs: &ModelOutputs, sample: &EncodedSample, regime: Regime) -> QAPrediction {
    decode_with(outputs, sample, regime, DEFAULT_MAX_ANSWER_LEN)
}

pub fn decode_with(
    outputs: &ModelOutputs,
    sample: &EncodedSample,
    regime: Regime,
    max_answer_len: usize,
) -> QAPrediction {
    let idx = argmax(&outputs.f_a);
    let category = regime.categories()[idx];
    let mut pred = QAPrediction {
        category,
        category_prob: outputs.f_a[idx],
        span: None,
        text: None,
        span_score: None,
        fell_back: false,
    };
    if category != Category::Span {
        return pred;
    }
    let enc = &sample.encoding;
    let found = match (&outputs.f_s, &outputs.f_e) {
        (Some(f_s), Some(f_e)) => best_span(f_s, f_e, (enc.context_start, enc.context_end), max_answer_len),
        _ => None,
    };
    match found {
        Some((s, e, score)) => {
            pred.span = Some((s, e));
            pred.text = Some(enc.span_text(s, e));
            pred.span_score = Some(score);
        }
        None => {
            pred.category = Category::NoAnswer;
            pred.fell_back = true;
        }
    }
    pred
}

/// Score of one prediction against one sample: correctness for boolean
/// samples, F1 for extractive ones. Predictions from the other task's answer
/// space score 0.
pub fn score_prediction(pred: &QAPrediction, sample: &EncodedSample) -> f64 {
    match sample.task {
        Task::Boolean => f64::from(u8::from(pred.category == sample.label.category())),
        Task::Extractive => match pred.category {
            Category::No | Category::Yes => 0.0,
            Category::NoAnswer => token_f1("", &sample.gold_answers),
            Category::Span => token_f1(pred.text.as_deref().unwrap_or(""), &sample.gold_answers),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: String,
    pub n: usize,
    /// Fraction of boolean samples answered correctly; `None` without any.
    pub accuracy: Option<f64>,
    /// Mean F1 over extractive samples; `None` without any.
    pub f1: Option<f64>,
    pub n_boolean: usize,
    pub n_extractive: usize,
    /// `confusion[gold][predicted]` counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub task: Task,
    pub gold: Category,
    pub predicted: Category,
    pub text: Option<String>,
    pub score: f64,
}

/// Eval-mode metrics of `model` on `dataset` under `mask`.
pub fn evaluate(model: &Model, dataset: &Dataset, mask: Option<&HeadMask>) -> Result<Metrics> {
    evaluate_detailed(model, dataset, mask).map(|(m, _)| m)
}

pub fn evaluate_detailed(
    model: &Model,
    dataset: &Dataset,
    mask: Option<&HeadMask>,
) -> Result<(Metrics, Vec<SampleOutcome>)> {
    if dataset.is_empty() {
        return Err(Error::Usage(format!("dataset {} is empty", dataset.name)));
    }
    let regime = model.regime();
    let outcomes: Vec<SampleOutcome> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let outputs = model.predict(sample.into(), mask)?;
            let pred = decode(&outputs, sample, regime);
            Ok(SampleOutcome {
                id: sample.id.clone(),
                task: sample.task,
                gold: sample.label.category(),
                predicted: pred.category,
                score: score_prediction(&pred, sample),
                text: pred.text,
            })
        })
        .collect::<Result<_>>()?;
    let task = serde_json::to_value(dataset.provenance)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    Ok((aggregate(task, &outcomes), outcomes))
}

/// Folds per-sample outcomes into metrics. Extractive scores are summed in
/// ascending order so the result does not depend on sample order.
pub fn aggregate(task: String, outcomes: &[SampleOutcome]) -> Metrics {
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut correct = 0usize;
    let mut n_boolean = 0usize;
    let mut f1_scores = Vec::new();
    for o in outcomes {
        *confusion
            .entry(o.gold.name().to_string())
            .or_default()
            .entry(o.predicted.name().to_string())
            .or_default() += 1;
        match o.task {
            Task::Boolean => {
                n_boolean += 1;
                correct += usize::from(o.score == 1.0);
            }
            Task::Extractive => f1_scores.push(o.score),
        }
    }
    f1_scores.sort_by(f64::total_cmp);
    let n_extractive = f1_scores.len();
    Metrics {
        task,
        n: outcomes.len(),
        accuracy: (n_boolean > 0).then(|| correct as f64 / n_boolean as f64),
        f1: (n_extractive > 0).then(|| f1_scores.iter().sum::<f64>() / n_extractive as f64),
        n_boolean,
        n_extractive,
        confusion,
    }
}

pub fn write_outcomes_tsv(path: &Path, outcomes: &[SampleOutcome]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "id\ttask\tgold\tpredicted\tscore\ttext").expect("vec write");
    for o in outcomes {
        let text = o.text.as_deref().unwrap_or("").replace(['\t', '\n'], " ");
        writeln!(
            out,
            "{}\t{:?}\t{}\t{}\t{}\t{}",
            o.id,
            o.task,
            o.gold.name(),
            o.predicted.name(),
            o.score,
            text
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
