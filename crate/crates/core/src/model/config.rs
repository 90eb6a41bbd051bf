use serde::{Deserialize, Serialize};

use crate::data::{Category, Task};
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Which answer space a model is trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// No / Yes, no span scorers.
    Boolean,
    /// NoAnswer / Span with span scorers.
    Extractive,
    /// No / Yes / NoAnswer / Span with span scorers.
    AllPurpose,
}

impl Regime {
    pub fn categories(self) -> &'static [Category] {
        match self {
            Regime::Boolean => &[Category::No, Category::Yes],
            Regime::Extractive => &[Category::NoAnswer, Category::Span],
            Regime::AllPurpose => &Category::ALL,
        }
    }

    pub fn category_index(self, category: Category) -> Option<usize> {
        self.categories().iter().position(|&c| c == category)
    }

    pub fn span_heads(self) -> bool {
        !matches!(self, Regime::Boolean)
    }

    pub fn accepts(self, task: Task) -> bool {
        match self {
            Regime::Boolean => task == Task::Boolean,
            Regime::Extractive => task == Task::Extractive,
            Regime::AllPurpose => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub answer_categories: usize,
    pub span_heads_enabled: bool,
}

impl ModelConfig {
    pub fn new(
        regime: Regime,
        n_layers: usize,
        hidden_dim: usize,
        n_heads: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            n_layers,
            hidden_dim,
            n_heads,
            ffn_dim: 4 * hidden_dim,
            vocab_size: Vocabulary::SIZE,
            max_seq_len,
            dropout_rate: 0.1,
            answer_categories: regime.categories().len(),
            span_heads_enabled: regime.span_heads(),
        }
    }

    /// 2 layers, 128 hidden dimensions, 2 heads.
    pub fn tiny(regime: Regime, max_seq_len: usize) -> Self {
        Self::new(regime, 2, 128, 2, max_seq_len)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn regime(&self) -> Result<Regime> {
        match (self.answer_categories, self.span_heads_enabled) {
            (2, false) => Ok(Regime::Boolean),
            (2, true) => Ok(Regime::Extractive),
            (4, true) => Ok(Regime::AllPurpose),
            (c, s) => Err(Error::Regime(format!(
                "{c} answer categories with span heads {} is not a known regime",
                if s { "enabled" } else { "disabled" }
            ))),
        }
    }

    pub fn with_regime(&self, regime: Regime) -> Self {
        Self {
            answer_categories: regime.categories().len(),
            span_heads_enabled: regime.span_heads(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(format!("invalid model config: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return bad("layers, heads and dimensions must be positive".into());
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.vocab_size < Vocabulary::SIZE {
            return bad(format!("vocab_size {} < {}", self.vocab_size, Vocabulary::SIZE));
        }
        if self.max_seq_len < 3 {
            return bad("max_seq_len must be at least 3".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        self.regime().map(|_| ())
    }
}

pub fn count_heads(config: &ModelConfig) -> usize {
    config.n_layers * config.n_heads
}
