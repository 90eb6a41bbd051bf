//! Merge-free byte-level tokenization and `[CLS] question [SEP] context`
//! sequence assembly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Fixed vocabulary: byte `b` is token `b`, followed by three specials.
pub struct Vocabulary;

impl Vocabulary {
    pub const CLS: TokenId = 256;
    pub const SEP: TokenId = 257;
    pub const PAD: TokenId = 258;
    pub const SIZE: usize = 259;

    pub fn is_special(id: TokenId) -> bool {
        id >= 256
    }
}

/// Trims, upper-cases the first alphabetic character and makes sure the
/// question ends with `?`.
pub fn preprocess_question(q: &str) -> Result<String> {
    let trimmed = q.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let mut out = String::with_capacity(trimmed.len() + 1);
    let mut seen_alpha = false;
    for c in trimmed.chars() {
        if !seen_alpha && c.is_alphabetic() {
            seen_alpha = true;
            out.extend(c.to_uppercase());
        } else {
            out.push(c);
        }
    }
    if !out.ends_with('?') {
        out.push('?');
    }
    Ok(out)
}

/// A tokenized question/context pair with its context boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub token_ids: Vec<TokenId>,
    pub context_start: usize,
    /// Exclusive.
    pub context_end: usize,
    pub question: String,
    pub context: String,
    /// Token index of the first byte of every context character that
    /// survived truncation intact.
    pub char_to_token: Vec<usize>,
}

/// Encodes `question` and `context` as `[CLS] q [SEP] c`, cutting the tail of
/// the context so the sequence fits in `max_seq_len`.
pub fn encode(question: &str, context: &str, max_seq_len: usize) -> Result<Encoding> {
    if question.trim().is_empty() {
        return Err(Error::EmptyQuestion);
    }
    if context.is_empty() {
        return Err(Error::Schema("context is empty".into()));
    }
    let q = question.as_bytes();
    let needed = q.len() + 2;
    if needed >= max_seq_len {
        return Err(Error::QuestionTooLong {
            needed,
            max_seq_len,
        });
    }
    let budget = max_seq_len - needed;
    let kept = &context.as_bytes()[..context.len().min(budget)];

    let mut token_ids = Vec::with_capacity(needed + kept.len());
    token_ids.push(Vocabulary::CLS);
    token_ids.extend(q.iter().map(|&b| TokenId::from(b)));
    token_ids.push(Vocabulary::SEP);
    let context_start = token_ids.len();
    token_ids.extend(kept.iter().map(|&b| TokenId::from(b)));
    let context_end = token_ids.len();

    let char_to_token = context
        .char_indices()
        .take_while(|&(offset, c)| offset + c.len_utf8() <= kept.len())
        .map(|(offset, _)| context_start + offset)
        .collect();

    Ok(Encoding {
        token_ids,
        context_start,
        context_end,
        question: question.to_string(),
        context: context.to_string(),
        char_to_token,
    })
}

/// `[CLS] q [SEP]` without a context segment.
pub fn encode_question(question: &str, max_seq_len: usize) -> Result<Vec<TokenId>> {
    if question.trim().is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let needed = question.len() + 2;
    if needed > max_seq_len {
        return Err(Error::QuestionTooLong {
            needed,
            max_seq_len,
        });
    }
    let mut ids = Vec::with_capacity(needed);
    ids.push(Vocabulary::CLS);
    ids.extend(question.bytes().map(TokenId::from));
    ids.push(Vocabulary::SEP);
    Ok(ids)
}

/// Bytes of the non-special tokens in `ids`.
pub fn decode_bytes(ids: &[TokenId]) -> Vec<u8> {
    ids.iter()
        .filter(|&&id| !Vocabulary::is_special(id))
        .map(|&id| id as u8)
        .collect()
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Bytes of the (possibly truncated) context region.
    pub fn context_bytes(&self) -> Vec<u8> {
        decode_bytes(&self.token_ids[self.context_start..self.context_end])
    }

    /// Text of the inclusive token range `[start, end]`.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        String::from_utf8_lossy(&decode_bytes(&self.token_ids[start..=end])).into_owned()
    }

    pub fn was_truncated(&self) -> bool {
        self.context_end - self.context_start < self.context.len()
    }

    /// Maps an answer given as a character offset into the context to the
    /// inclusive token range covering its bytes.
    pub fn align_char_span(&self, char_start: usize, answer_text: &str) -> Result<(usize, usize)> {
        let n_chars = answer_text.chars().count();
        if n_chars == 0 {
            return Err(Error::Schema("answer text is empty".into()));
        }
        let source: String = self.context.chars().skip(char_start).take(n_chars).collect();
        if source != answer_text {
            return Err(Error::Schema(format!(
                "answer {answer_text:?} does not occur at char {char_start} (found {source:?})"
            )));
        }
        let last_char = char_start + n_chars - 1;
        if last_char >= self.char_to_token.len() {
            return Err(Error::SpanTruncated { char_start });
        }
        let token_start = self.char_to_token[char_start];
        let last_len = answer_text.chars().last().map_or(1, char::len_utf8);
        let token_end = self.char_to_token[last_char] + last_len - 1;
        debug_assert!(token_end < self.context_end);
        Ok((token_start, token_end))
    }
}
