//! Toy question answering tasks that are solvable exactly from the input.
//!
//! Task A ("needle span") is extractive: the context is filler with at most
//! one marker byte, the question names the marker, and the answer is the
//! `answer_len` bytes that follow it. Task B ("containment") is boolean: the
//! question asks whether a byte occurs in the context.

use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AnswerLabel, Dataset, EncodedSample, Provenance, Split, Task};
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::tokenizer::{encode, preprocess_question};

/// Bytes that may serve as a needle marker. They never appear as filler.
pub const MARKERS: &[u8] = b"#@$%&*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticTask {
    A,
    B,
}

impl SyntheticTask {
    pub fn task(self) -> Task {
        match self {
            SyntheticTask::A => Task::Extractive,
            SyntheticTask::B => Task::Boolean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub context_len: usize,
    pub filler: Vec<u8>,
    pub answerable_fraction: f64,
    pub answer_len: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            context_len: 24,
            filler: b"abcdefghijklmnopqrstuvwxyz".to_vec(),
            answerable_fraction: 0.8,
            answer_len: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.answerable_fraction) {
            return Err(Error::Spec(format!(
                "answerable_fraction {} outside [0, 1]",
                self.answerable_fraction
            )));
        }
        if self.context_len < 8 {
            return Err(Error::Spec(format!("context_len {} < 8", self.context_len)));
        }
        if self.answer_len == 0 || self.context_len < self.answer_len + 1 {
            return Err(Error::Spec(format!(
                "context_len {} cannot hold a marker and a {}-byte answer",
                self.context_len, self.answer_len
            )));
        }
        if self.filler.len() < 2 {
            return Err(Error::Spec("filler needs at least two distinct bytes".into()));
        }
        if self.filler.iter().any(|b| MARKERS.contains(b) || !b.is_ascii_graphic()) {
            return Err(Error::Spec("filler must be printable ASCII without marker bytes".into()));
        }
        Ok(())
    }
}

/// One generated example, in its on-disk JSON-lines shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub question: String,
    pub context: String,
    pub task: SyntheticTask,
    pub label: String,
    pub span_char_start: Option<usize>,
    pub span_text: Option<String>,
}

fn filler_string(rng: &mut impl rand::Rng, filler: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|_| *filler.choose(rng).unwrap()).collect()
}

/// Raw records for `task`; a pure function of `spec`.
pub fn synthetic_records(spec: &SyntheticSpec, task: SyntheticTask) -> Result<Vec<SyntheticRecord>> {
    spec.validate()?;
    let stream = match task {
        SyntheticTask::A => 0xA,
        SyntheticTask::B => 0xB,
    };
    let mut rng = RngState::new(spec.seed).stream(stream);
    let mut records = Vec::with_capacity(spec.n_samples);
    match task {
        SyntheticTask::A => {
            for _ in 0..spec.n_samples {
                let marker = *MARKERS.choose(&mut rng).unwrap();
                let question = format!("What follows {}?", marker as char);
                let mut context = filler_string(&mut rng, &spec.filler, spec.context_len);
                let answerable = rng.random::<f64>() < spec.answerable_fraction;
                let record = if answerable {
                    let pos = rng.random_range(0..spec.context_len - spec.answer_len);
                    context[pos] = marker;
                    let start = pos + 1;
                    let answer = &context[start..start + spec.answer_len];
                    SyntheticRecord {
                        question,
                        span_text: Some(String::from_utf8(answer.to_vec()).unwrap()),
                        context: String::from_utf8(context).unwrap(),
                        task,
                        label: "Span".into(),
                        span_char_start: Some(start),
                    }
                } else {
                    SyntheticRecord {
                        question,
                        context: String::from_utf8(context).unwrap(),
                        task,
                        label: "NoAnswer".into(),
                        span_char_start: None,
                        span_text: None,
                    }
                };
                records.push(record);
            }
        }
        SyntheticTask::B => {
            let n_yes = spec.n_samples / 2;
            for i in 0..spec.n_samples {
                let target = *spec.filler.choose(&mut rng).unwrap();
                let yes = i < n_yes;
                let context = if yes {
                    let mut c = filler_string(&mut rng, &spec.filler, spec.context_len);
                    let pos = rng.random_range(0..spec.context_len);
                    c[pos] = target;
                    c
                } else {
                    let others: Vec<u8> = spec.filler.iter().copied().filter(|&b| b != target).collect();
                    filler_string(&mut rng, &others, spec.context_len)
                };
                records.push(SyntheticRecord {
                    question: format!("Is there {}?", target as char),
                    context: String::from_utf8(context).unwrap(),
                    task,
                    label: if yes { "Yes" } else { "No" }.into(),
                    span_char_start: None,
                    span_text: None,
                });
            }
            records.shuffle(&mut rng);
        }
    }
    Ok(records)
}

fn encode_record(record: &SyntheticRecord, id: String, max_seq_len: usize) -> Result<(EncodedSample, bool)> {
    let question = preprocess_question(&record.question)?;
    let encoding = encode(&question, &record.context, max_seq_len)?;
    let task = record.task.task();
    let mut downgraded = false;
    let (label, gold) = match (record.task, record.label.as_str()) {
        (SyntheticTask::B, "Yes") => (AnswerLabel::Yes, vec![]),
        (SyntheticTask::B, "No") => (AnswerLabel::No, vec![]),
        (SyntheticTask::A, "NoAnswer") => (AnswerLabel::NoAnswer, vec![]),
        (SyntheticTask::A, "Span") => {
            let (start, text) = record
                .span_char_start
                .zip(record.span_text.as_ref())
                .ok_or_else(|| Error::Schema(format!("{id}: Span label without span fields")))?;
            match encoding.align_char_span(start, text) {
                Ok((token_start, token_end)) => (
                    AnswerLabel::Span {
                        token_start,
                        token_end,
                    },
                    vec![text.clone()],
                ),
                Err(Error::SpanTruncated { .. }) => {
                    downgraded = true;
                    (AnswerLabel::NoAnswer, vec![])
                }
                Err(e) => return Err(e),
            }
        }
        (t, l) => return Err(Error::Schema(format!("{id}: label {l:?} is not legal for task {t:?}"))),
    };
    Ok((EncodedSample::new(id, encoding, label, task, gold)?, downgraded))
}

fn provenance_of(records: &[SyntheticRecord]) -> Provenance {
    let a = records.iter().any(|r| r.task == SyntheticTask::A);
    let b = records.iter().any(|r| r.task == SyntheticTask::B);
    match (a, b) {
        (true, false) => Provenance::SyntheticA,
        (false, true) => Provenance::SyntheticB,
        _ => Provenance::Mixed,
    }
}

fn encode_records(
    records: &[SyntheticRecord],
    prefix: &str,
    split: Split,
    max_seq_len: usize,
    name: String,
) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(records.len());
    let mut downgraded = 0;
    for (i, r) in records.iter().enumerate() {
        let (sample, cut) = encode_record(r, format!("{prefix}-{i}"), max_seq_len)?;
        downgraded += usize::from(cut);
        samples.push(sample);
    }
    Ok(Dataset {
        samples,
        split,
        provenance: provenance_of(records),
        name,
        downgraded,
    })
}

/// Generates and encodes a synthetic dataset.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    task: SyntheticTask,
    split: Split,
    max_seq_len: usize,
) -> Result<Dataset> {
    let records = synthetic_records(spec, task)?;
    let prefix = format!("syn{task:?}-{}", spec.seed);
    encode_records(&records, &prefix, split, max_seq_len, prefix.clone())
}

pub fn write_synthetic(path: &Path, records: &[SyntheticRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a synthetic JSON-lines file written by [`write_synthetic`].
pub fn load_synthetic(path: &Path, split: Split, max_seq_len: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    encode_records(&records, &stem, split, max_seq_len, path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionKind {
    Boolean,
    Wh,
}

const BOOLEAN_OPENERS: &[&str] = &["is", "does", "did", "can", "was", "are", "has", "will", "do", "could"];
const WH_OPENERS: &[&str] = &["what", "when", "where", "who", "which", "how many", "why", "whose", "how"];
const WORDS: &[&str] = &[
    "the", "river", "france", "team", "game", "season", "coach", "city", "broncos", "panthers",
    "president", "oil", "crisis", "title", "league", "stadium", "bowl", "war", "king", "book",
    "film", "song", "company", "island", "school", "bridge", "law", "army", "planet", "tower",
];

/// Questions from boolean and wh- templates with random content words, in
/// roughly equal numbers. Used to check that question type is trivially
/// recognisable.
pub fn generate_question_kinds(n: usize, seed: u64) -> Vec<(String, QuestionKind)> {
    let mut rng = RngState::new(seed).stream(0x0d15c);
    (0..n)
        .map(|_| {
            let kind = if rng.random::<bool>() {
                QuestionKind::Boolean
            } else {
                QuestionKind::Wh
            };
            let opener = match kind {
                QuestionKind::Boolean => BOOLEAN_OPENERS.choose(&mut rng).unwrap(),
                QuestionKind::Wh => WH_OPENERS.choose(&mut rng).unwrap(),
            };
            let n_words = rng.random_range(2..6);
            let mut q = opener.to_string();
            for _ in 0..n_words {
                q.push(' ');
                q.push_str(WORDS.choose(&mut rng).unwrap());
            }
            (preprocess_question(&q).unwrap(), kind)
        })
        .collect()
}
