//! Joint answer/span loss, Adam with warmup-then-linear-decay, global norm
//! clipping, and the training loops.

mod discriminator;
mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use discriminator::{train_discriminator, DiscriminatorReport, QuestionSample};
pub use optim::{clip_global_norm, lr_at, Adam};

use crate::data::{AnswerLabel, Dataset, EncodedSample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics};
use crate::model::{save_checkpoint, Mode, Model, ModelConfig, ModelInput, ModelOutputs, Regime, Target};
use crate::numerics::{cross_entropy, Matrix, RngState};

// Keys that derive independent random streams from the run seed.
const INIT_KEY: u64 = 1;
const SHUFFLE_KEY: u64 = 2;
const DROPOUT_KEY: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    #[serde(default = "default_adam_epsilon")]
    pub adam_epsilon: f64,
    pub max_grad_norm: f64,
    pub dropout: f64,
    #[serde(rename = "sequence_length")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_adam_epsilon() -> f64 {
    1e-8
}

impl Hyperparameters {
    /// Small-model defaults for training from scratch.
    pub fn toy() -> Self {
        Self {
            epochs: 5,
            warmup_ratio: 0.06,
            batch_size: 32,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_grad_norm: 1.0,
            dropout: 0.1,
            max_seq_len: 64,
            seed: 0,
        }
    }

    /// Published fine-tuning settings for the boolean model.
    pub fn reference_boolq() -> Self {
        Self {
            epochs: 5,
            warmup_ratio: 0.0,
            batch_size: 32,
            learning_rate: 1e-5,
            max_seq_len: 256,
            ..Self::toy()
        }
    }

    /// Published fine-tuning settings for the extractive model.
    pub fn reference_squad() -> Self {
        Self {
            epochs: 3,
            warmup_ratio: 0.06,
            batch_size: 16,
            learning_rate: 1.5e-5,
            max_seq_len: 384,
            ..Self::toy()
        }
    }

    /// Published fine-tuning settings for the all-purpose model.
    pub fn reference_all_purpose() -> Self {
        Self {
            epochs: 5,
            ..Self::reference_squad()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let hp: Self = serde_json::from_str(&text)?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_epsilon", self.adam_epsilon),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Usage("Adam betas must be below 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Usage("epochs, batch_size and sequence_length must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Usage(format!("warmup_ratio {} outside [0, 1)", self.warmup_ratio)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Converts a label into category indices for `regime`.
pub fn label_target(label: &AnswerLabel, regime: Regime) -> Result<Target> {
    let category = regime.category_index(label.category()).ok_or_else(|| {
        Error::Regime(format!("label {:?} is not part of the {regime:?} answer space", label.category()))
    })?;
    Ok(Target {
        category,
        span: label.span(),
    })
}

/// Loss of `outputs` against `target`, plus whether the probability floor
/// was hit.
pub fn target_loss(outputs: &ModelOutputs, target: &Target) -> Result<(f64, bool)> {
    let answer = cross_entropy(&outputs.f_a, target.category);
    let mut loss = answer.loss;
    let mut floored = answer.floored;
    if let Some((s, e)) = target.span {
        let (Some(f_s), Some(f_e)) = (&outputs.f_s, &outputs.f_e) else {
            return Err(Error::Regime("span label for a model without span heads".into()));
        };
        let start = cross_entropy(f_s, s);
        let end = cross_entropy(f_e, e);
        loss += 0.5 * start.loss;
        loss += 0.5 * end.loss;
        floored |= start.floored || end.floored;
    }
    Ok((loss, floored))
}

/// Per-sample loss: answer cross-entropy, plus half of the start and half of
/// the end cross-entropies when the label is a span.
pub fn sample_loss(outputs: &ModelOutputs, label: &AnswerLabel, regime: Regime) -> Result<f64> {
    target_loss(outputs, &label_target(label, regime)?).map(|(l, _)| l)
}

/// Anything the training loop can consume.
pub trait TrainingExample: Sync {
    fn input(&self) -> ModelInput<'_>;
    fn target(&self, regime: Regime) -> Result<Target>;
}

impl TrainingExample for EncodedSample {
    fn input(&self) -> ModelInput<'_> {
        self.into()
    }

    fn target(&self, regime: Regime) -> Result<Target> {
        if !regime.accepts(self.task) {
            return Err(Error::Regime(format!(
                "{:?} sample {} in a {regime:?} run",
                self.task, self.id
            )));
        }
        label_target(&self.label, regime)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
    /// Training samples whose span was cut off by truncation.
    pub downgraded: usize,
    /// Samples whose target probability fell under the loss floor.
    pub floor_hits: usize,
    /// Task-head tensors re-initialised when starting from a checkpoint of a
    /// different regime.
    pub reinitialized: Vec<String>,
}

/// Runs mini-batch Adam over `examples`. Per-sample gradients are computed
/// in parallel and summed in batch order, so results do not depend on the
/// number of threads.
pub fn fit<E: TrainingExample>(
    model: &mut Model,
    examples: &[E],
    hp: &Hyperparameters,
    mut on_epoch: impl FnMut(usize, &Model) -> Result<Option<Metrics>>,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    hp.validate()?;
    if examples.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let regime = model.regime();
    let targets: Vec<Target> = examples.iter().map(|e| e.target(regime)).collect::<Result<_>>()?;

    model.config.dropout_rate = hp.dropout;
    let started = Instant::now();
    let root = RngState::new(hp.seed);
    let dropout_rng = root.split(DROPOUT_KEY);
    let shuffle_rng = root.split(SHUFFLE_KEY);
    let steps_per_epoch = examples.len().div_ceil(hp.batch_size);
    let total_steps = steps_per_epoch * hp.epochs;
    let mut adam = Adam::new(model, hp);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(hp.epochs);
    let mut floor_hits = 0;

    for epoch in 0..hp.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng.stream(epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let model_ref: &Model = model;
            let results: Vec<Result<(f64, bool, Vec<Matrix>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = dropout_rng.stream((step * hp.batch_size + j) as u64);
                    let target = &targets[i];
                    let (outputs, grads) =
                        model_ref.forward_backward(examples[i].input(), target, None, Mode::Train, &mut rng)?;
                    let (loss, floored) = target_loss(&outputs, target)?;
                    Ok((loss, floored, grads))
                })
                .collect();

            model.zero_grad();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, floored, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, step {step}"
                    )));
                }
                floor_hits += usize::from(floored);
                batch_loss += loss;
                model.accumulate(&grads)?;
            }
            loss_sum += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            for p in model.params_mut() {
                p.grad.scale(inv);
            }
            clip_global_norm(model.params_mut().iter_mut().map(|p| &mut p.grad), hp.max_grad_norm)?;
            adam.step(model, lr_at(step, total_steps, hp));
            step += 1;
        }
        let mean_loss = loss_sum / examples.len() as f64;
        let dev = on_epoch(epoch, model)?;
        info!("epoch {} mean loss {mean_loss:.6}", epoch + 1);
        if let Some(dir) = checkpoint {
            save_checkpoint(dir, model, hp.seed)?;
        }
        epochs.push(EpochReport {
            epoch: epoch + 1,
            mean_loss,
            dev,
        });
    }

    Ok(TrainReport {
        regime,
        seed: hp.seed,
        epochs,
        steps: step,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: checkpoint.map(Path::to_path_buf),
        downgraded: 0,
        floor_hits,
        reinitialized: Vec::new(),
    })
}

/// Where training starts from.
pub enum Init<'a> {
    Random(ModelConfig),
    /// Continue from a trained model; task heads are re-initialised when its
    /// regime differs from the requested one.
    Transfer(&'a Model),
}

/// Trains a model for `regime` on `train`, evaluating on `dev` after every
/// epoch and writing a checkpoint to `out` when given.
pub fn train(
    regime: Regime,
    train: &Dataset,
    dev: Option<&Dataset>,
    hp: &Hyperparameters,
    init: Init<'_>,
    out: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let root = RngState::new(hp.seed);
    let mut init_rng = root.split(INIT_KEY).stream(0);
    let (mut model, reinitialized) = match init {
        Init::Random(config) => {
            let config = config.with_regime(regime);
            (Model::new(config, &mut init_rng)?, Vec::new())
        }
        Init::Transfer(source) => Model::transfer_from(source, regime, &mut init_rng)?,
    };
    let longest = train.samples.iter().map(|s| s.encoding.len()).max().unwrap_or(0);
    if longest > model.config.max_seq_len {
        return Err(Error::Usage(format!(
            "samples of {longest} tokens exceed the model's max_seq_len {}",
            model.config.max_seq_len
        )));
    }
    let mut report = fit(
        &mut model,
        &train.samples,
        hp,
        |_, m| dev.map(|d| evaluate(m, d, None)).transpose(),
        out,
    )?;
    report.downgraded = train.downgraded;
    report.reinitialized = reinitialized;
    Ok((model, report))
}

#[cfg(test)]
mod tests;
