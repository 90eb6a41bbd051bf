use std::path::Path;

use serde_json::Value;

use super::{AnswerLabel, Dataset, EncodedSample, Provenance, Split, Task};
use crate::error::{Error, Result};
use crate::tokenizer::{encode, preprocess_question};

/// Reads a BoolQ JSON-lines file (`question`, `passage`, `answer`; `title`
/// is ignored).
pub fn load_boolq(path: &Path, split: Split, max_seq_len: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let field = |key: &str| {
            value
                .get(key)
                .ok_or_else(|| Error::Schema(format!("{}:{line_no}: missing field `{key}`", path.display())))
        };
        let question = field("question")?
            .as_str()
            .ok_or_else(|| Error::Schema(format!("{}:{line_no}: `question` is not a string", path.display())))?;
        let passage = field("passage")?
            .as_str()
            .ok_or_else(|| Error::Schema(format!("{}:{line_no}: `passage` is not a string", path.display())))?;
        let answer = field("answer")?
            .as_bool()
            .ok_or_else(|| Error::Schema(format!("{}:{line_no}: `answer` is not a boolean", path.display())))?;

        let question = preprocess_question(question)
            .map_err(|e| Error::Schema(format!("{}:{line_no}: {e}", path.display())))?;
        let encoding = encode(&question, passage, max_seq_len)
            .map_err(|e| Error::Schema(format!("{}:{line_no}: {e}", path.display())))?;
        let label = if answer { AnswerLabel::Yes } else { AnswerLabel::No };
        let split_tag = match split {
            Split::Train => "train",
            Split::Dev => "dev",
        };
        samples.push(EncodedSample::new(
            format!("boolq-{split_tag}-{line_no}"),
            encoding,
            label,
            Task::Boolean,
            Vec::new(),
        )?);
    }
    Ok(Dataset {
        samples,
        split,
        provenance: Provenance::Boolq,
        name: path.display().to_string(),
        downgraded: 0,
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn maps_fields() {
        let f = write(
            "{\"question\":\"is x true\",\"passage\":\"x is true.\",\"answer\":true,\"title\":\"X\"}\n\
             {\"question\":\"is y true\",\"passage\":\"y is not.\",\"answer\":false}\n",
        );
        let ds = load_boolq(f.path(), Split::Dev, 64).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].label, AnswerLabel::Yes);
        assert_eq!(ds.samples[1].label, AnswerLabel::No);
        assert_eq!(ds.samples[0].encoding.question, "Is x true?");
        assert_eq!(ds.samples[0].encoding.context_bytes(), b"x is true.");
    }

    #[test]
    fn truncated_line_names_line() {
        let f = write("{\"question\":\"a\",\"passage\":\"b\",\"answer\":true}\n{\"question\":\"q\",\"pass");
        match load_boolq(f.path(), Split::Train, 64) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let f = write("{\"question\":\"a\",\"answer\":true}\n");
        let err = load_boolq(f.path(), Split::Train, 64).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("passage")), "{err}");
    }
}
