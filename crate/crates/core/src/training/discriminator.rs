//! Question-type classifier trained on question text alone.

use serde::{Deserialize, Serialize};

use super::{fit, Hyperparameters, TrainingExample, INIT_KEY};
use crate::data::QuestionKind;
use crate::error::Result;
use crate::model::{Model, ModelConfig, ModelInput, Regime, Target};
use crate::numerics::RngState;
use crate::tokenizer::{encode_question, TokenId};

/// `[CLS] question [SEP]` with its kind. Category 0 is wh-, 1 is boolean.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSample {
    pub tokens: Vec<TokenId>,
    pub kind: QuestionKind,
}

impl QuestionSample {
    pub fn new(question: &str, kind: QuestionKind, max_seq_len: usize) -> Result<Self> {
        Ok(Self {
            tokens: encode_question(question, max_seq_len)?,
            kind,
        })
    }

    fn category(&self) -> usize {
        match self.kind {
            QuestionKind::Wh => 0,
            QuestionKind::Boolean => 1,
        }
    }
}

impl TrainingExample for QuestionSample {
    fn input(&self) -> ModelInput<'_> {
        ModelInput {
            tokens: &self.tokens,
            context: None,
        }
    }

    fn target(&self, _regime: Regime) -> Result<Target> {
        Ok(Target {
            category: self.category(),
            span: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorReport {
    pub train_loss: Vec<f64>,
    pub heldout_accuracy: f64,
    pub n_heldout: usize,
}

/// Trains a two-way classifier on `train` and reports accuracy on `heldout`.
pub fn train_discriminator(
    config: ModelConfig,
    train: &[QuestionSample],
    heldout: &[QuestionSample],
    hp: &Hyperparameters,
) -> Result<(Model, DiscriminatorReport)> {
    let config = config.with_regime(Regime::Boolean);
    let mut model = Model::new(config, &mut RngState::new(hp.seed).split(INIT_KEY).stream(0))?;
    let report = fit(&mut model, train, hp, |_, _| Ok(None), None)?;
    let mut correct = 0;
    for q in heldout {
        let out = model.predict(q.input(), None)?;
        let predicted = usize::from(out.f_a[1] > out.f_a[0]);
        correct += usize::from(predicted == q.category());
    }
    let heldout_accuracy = if heldout.is_empty() {
        0.0
    } else {
        correct as f64 / heldout.len() as f64
    };
    Ok((
        model,
        DiscriminatorReport {
            train_loss: report.epochs.iter().map(|e| e.mean_loss).collect(),
            heldout_accuracy,
            n_heldout: heldout.len(),
        },
    ))
}
