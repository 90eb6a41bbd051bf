use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::{AnswerLabel, Dataset, EncodedSample, Provenance, Split, Task};
use crate::error::{Error, Result};
use crate::tokenizer::{encode, preprocess_question};

#[derive(Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: Option<String>,
    question: Option<String>,
    #[serde(default)]
    answers: Vec<Answer>,
    is_impossible: Option<bool>,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

/// Reads a SQuAD 2.0 file. The first listed answer becomes the training
/// label; every listed answer is kept for scoring. Answers that fall outside
/// the encoding window turn the sample into an unanswerable one and are
/// counted in [`Dataset::downgraded`].
pub fn load_squad(path: &Path, split: Split, max_seq_len: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if let Some(v) = &file.version {
        if !v.starts_with("v2") {
            warn!("{}: version {v:?} is not SQuAD 2.0", path.display());
        }
    }

    let mut samples = Vec::new();
    let mut downgraded = 0;
    for (a, article) in file.data.iter().enumerate() {
        for (p, paragraph) in article.paragraphs.iter().enumerate() {
            let context_chars = paragraph.context.chars().count();
            for (q, qa) in paragraph.qas.iter().enumerate() {
                let id = qa.id.clone().unwrap_or_else(|| format!("{a}.{p}.{q}"));
                let schema = |msg: String| Error::Schema(format!("qa {id}: {msg}"));

                let question = qa
                    .question
                    .as_deref()
                    .ok_or_else(|| schema("missing `question`".into()))?;
                let impossible = qa
                    .is_impossible
                    .ok_or_else(|| schema("missing `is_impossible`".into()))?;
                for ans in &qa.answers {
                    if ans.answer_start + ans.text.chars().count() > context_chars {
                        return Err(schema(format!(
                            "answer_start {} + length exceeds context of {context_chars} chars",
                            ans.answer_start
                        )));
                    }
                }
                if !impossible && qa.answers.is_empty() {
                    return Err(schema("answerable question without answers".into()));
                }

                let question = preprocess_question(question).map_err(|e| schema(e.to_string()))?;
                let encoding = encode(&question, &paragraph.context, max_seq_len)
                    .map_err(|e| schema(e.to_string()))?;

                let (label, gold) = if impossible {
                    (AnswerLabel::NoAnswer, Vec::new())
                } else {
                    let first = &qa.answers[0];
                    match encoding.align_char_span(first.answer_start, &first.text) {
                        Ok((token_start, token_end)) => (
                            AnswerLabel::Span {
                                token_start,
                                token_end,
                            },
                            qa.answers.iter().map(|a| a.text.clone()).collect(),
                        ),
                        Err(Error::SpanTruncated { .. }) => {
                            downgraded += 1;
                            (AnswerLabel::NoAnswer, Vec::new())
                        }
                        Err(e) => return Err(schema(e.to_string())),
                    }
                };
                samples.push(EncodedSample::new(id, encoding, label, Task::Extractive, gold)?);
            }
        }
    }
    if downgraded > 0 {
        warn!(
            "{}: {downgraded} answerable questions relabelled as unanswerable after truncation",
            path.display()
        );
    }
    Ok(Dataset {
        samples,
        split,
        provenance: Provenance::Squad,
        name: path.display().to_string(),
        downgraded,
    })
}
