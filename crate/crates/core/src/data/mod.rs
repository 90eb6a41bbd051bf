//! Labels, encoded samples, datasets and their loaders.

mod boolq;
mod squad;
pub mod synthetic;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use boolq::load_boolq;
pub use squad::load_squad;
pub use synthetic::{
    generate_question_kinds, generate_synthetic, load_synthetic, synthetic_records,
    write_synthetic, QuestionKind, SyntheticRecord, SyntheticSpec, SyntheticTask,
};

use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::tokenizer::Encoding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Boolean,
    Extractive,
}

/// The four answer categories of the joint label space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    No,
    Yes,
    NoAnswer,
    Span,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::No, Category::Yes, Category::NoAnswer, Category::Span];

    pub fn task(self) -> Task {
        match self {
            Category::No | Category::Yes => Task::Boolean,
            Category::NoAnswer | Category::Span => Task::Extractive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::No => "No",
            Category::Yes => "Yes",
            Category::NoAnswer => "NoAnswer",
            Category::Span => "Span",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerLabel {
    No,
    Yes,
    NoAnswer,
    /// Inclusive token range inside the context region.
    Span { token_start: usize, token_end: usize },
}

impl AnswerLabel {
    pub fn category(&self) -> Category {
        match self {
            AnswerLabel::No => Category::No,
            AnswerLabel::Yes => Category::Yes,
            AnswerLabel::NoAnswer => Category::NoAnswer,
            AnswerLabel::Span { .. } => Category::Span,
        }
    }

    /// The answerability indicator that gates the span loss terms.
    pub fn has_answer(&self) -> bool {
        matches!(self, AnswerLabel::Span { .. })
    }

    pub fn span(&self) -> Option<(usize, usize)> {
        match *self {
            AnswerLabel::Span {
                token_start,
                token_end,
            } => Some((token_start, token_end)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub id: String,
    pub encoding: Encoding,
    pub label: AnswerLabel,
    pub task: Task,
    /// Every reference answer used when scoring; empty for unanswerable and
    /// boolean samples.
    pub gold_answers: Vec<String>,
}

impl EncodedSample {
    pub fn new(
        id: impl Into<String>,
        encoding: Encoding,
        label: AnswerLabel,
        task: Task,
        gold_answers: Vec<String>,
    ) -> Result<Self> {
        let id = id.into();
        if label.category().task() != task {
            return Err(Error::Schema(format!(
                "{id}: label {:?} is not legal for a {task:?} sample",
                label.category()
            )));
        }
        if let Some((s, e)) = label.span() {
            if !(encoding.context_start <= s && s <= e && e < encoding.context_end) {
                return Err(Error::Schema(format!(
                    "{id}: span ({s}, {e}) outside context [{}, {})",
                    encoding.context_start, encoding.context_end
                )));
            }
        }
        Ok(Self {
            id,
            encoding,
            label,
            task,
            gold_answers,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Boolq,
    Squad,
    Mixed,
    SyntheticA,
    SyntheticB,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<EncodedSample>,
    pub split: Split,
    pub provenance: Provenance,
    /// Human-readable identifier, e.g. the source file name.
    pub name: String,
    /// Answerable samples whose span fell outside the window and were
    /// relabelled as unanswerable.
    pub downgraded: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count_task(&self, task: Task) -> usize {
        self.samples.iter().filter(|s| s.task == task).count()
    }

    pub fn count_category(&self, category: Category) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label.category() == category)
            .count()
    }

    pub fn is_disjoint(&self, other: &Dataset) -> bool {
        let ids: HashSet<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        other.samples.iter().all(|s| !ids.contains(s.id.as_str()))
    }

    /// Keeps the samples of one task.
    pub fn filter_task(&self, task: Task) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.task == task).cloned().collect(),
            split: self.split,
            provenance: self.provenance,
            name: format!("{}[{task:?}]", self.name),
            downgraded: self.downgraded,
        }
    }
}

/// Concatenates two datasets of the same split and applies a seeded
/// Fisher–Yates shuffle. The natural size ratio is kept.
pub fn mix_and_shuffle(a: Dataset, b: Dataset, rng: &RngState) -> Result<Dataset> {
    if a.split != b.split {
        return Err(Error::Usage(format!(
            "cannot mix a {:?} split with a {:?} split",
            a.split, b.split
        )));
    }
    let name = format!("{}+{}", a.name, b.name);
    let downgraded = a.downgraded + b.downgraded;
    let split = a.split;
    let mut samples = a.samples;
    samples.extend(b.samples);
    samples.shuffle(&mut rng.stream(0));
    Ok(Dataset {
        samples,
        split,
        provenance: Provenance::Mixed,
        name,
        downgraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::encode;

    fn boolean(id: &str, yes: bool) -> EncodedSample {
        let label = if yes { AnswerLabel::Yes } else { AnswerLabel::No };
        EncodedSample::new(id, encode("Q?", "ctx", 32).unwrap(), label, Task::Boolean, vec![]).unwrap()
    }

    fn dataset(ids: &[&str], split: Split) -> Dataset {
        Dataset {
            samples: ids.iter().map(|id| boolean(id, true)).collect(),
            split,
            provenance: Provenance::Boolq,
            name: "t".into(),
            downgraded: 0,
        }
    }

    #[test]
    fn mixing_conserves_samples() {
        let a = dataset(&["a0", "a1"], Split::Train);
        let b = dataset(&["b0", "b1", "b2"], Split::Train);
        let mixed = mix_and_shuffle(a, b, &RngState::new(3)).unwrap();
        let mut ids: Vec<_> = mixed.samples.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["a0", "a1", "b0", "b1", "b2"]);
        assert_eq!(mixed.provenance, Provenance::Mixed);
    }

    #[test]
    fn mixing_is_deterministic() {
        let ids: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let run = || {
            mix_and_shuffle(
                dataset(&refs[..10], Split::Dev),
                dataset(&refs[10..], Split::Dev),
                &RngState::new(42),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mixing_rejects_split_mismatch() {
        let err = mix_and_shuffle(
            dataset(&["a"], Split::Train),
            dataset(&["b"], Split::Dev),
            &RngState::new(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn label_task_pairing_is_enforced() {
        let enc = encode("Q?", "ctx", 32).unwrap();
        assert!(EncodedSample::new("x", enc.clone(), AnswerLabel::NoAnswer, Task::Boolean, vec![]).is_err());
        assert!(EncodedSample::new("x", enc.clone(), AnswerLabel::Yes, Task::Extractive, vec![]).is_err());
        let bad_span = AnswerLabel::Span {
            token_start: 1,
            token_end: 2,
        };
        assert!(EncodedSample::new("x", enc, bad_span, Task::Extractive, vec![]).is_err());
    }

    #[test]
    fn disjointness() {
        let a = dataset(&["a", "b"], Split::Train);
        let b = dataset(&["c"], Split::Dev);
        let c = dataset(&["b"], Split::Dev);
        assert!(a.is_disjoint(&b));
        assert!(!a.is_disjoint(&c));
    }
}
