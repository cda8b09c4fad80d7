use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token and where it came from. Offsets count Unicode scalar values, the
/// same unit SQuAD-style `answer_start` fields use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub offset: usize,
    pub len: usize,
}

/// Inclusive token span inside a paragraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub end: usize,
}

impl AnswerSpan {
    pub fn new(start: usize, end: usize) -> Self {
        AnswerSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.start > self.end || self.end >= n {
            return Err(Error::Bounds(format!(
                "span ({}, {}) invalid for a paragraph of {n} tokens",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace, then detaches leading and trailing punctuation
/// characters as single-character tokens. A trailing period stays attached
/// when the remaining word already holds a period, so `p.m.` and `U.S.`
/// survive intact. Interior punctuation (`1,000`, `don't`) is never split.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars[start..i], start, &mut tokens);
    }
    tokens
}

fn split_chunk(chunk: &[char], base: usize, out: &mut Vec<Token>) {
    let single = |k: usize| Token { text: chunk[k].to_string(), offset: base + k, len: 1 };
    let mut lo = 0;
    while lo < chunk.len() && is_punct(chunk[lo]) {
        out.push(single(lo));
        lo += 1;
    }
    let mut hi = chunk.len();
    while hi > lo && is_punct(chunk[hi - 1]) {
        hi -= 1;
    }
    if hi > lo && hi < chunk.len() && chunk[hi] == '.' && chunk[lo..hi].contains(&'.') {
        hi += 1;
    }
    if hi > lo {
        out.push(Token { text: chunk[lo..hi].iter().collect(), offset: base + lo, len: hi - lo });
    }
    for k in hi.max(lo)..chunk.len() {
        out.push(single(k));
    }
}

/// Token ranges of sentences, split after `.`, `!` and `?` tokens.
pub fn sentence_ranges<S: AsRef<str>>(tokens: &[S]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(t.as_ref(), "." | "!" | "?") {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(start..tokens.len());
    }
    out
}

/// Smallest token span covering characters `[char_start, char_start + char_len)`.
pub fn char_span_to_token_span(
    tokens: &[Token],
    text_len: usize,
    char_start: usize,
    char_len: usize,
    id: &str,
) -> Result<AnswerSpan> {
    let fail = |reason: String| Error::Alignment { id: id.to_string(), reason };
    let char_end = char_start + char_len;
    if char_len == 0 || char_end > text_len {
        return Err(fail(format!(
            "character span [{char_start}, {char_end}) outside text of {text_len} characters"
        )));
    }
    let first = tokens.iter().position(|t| t.offset + t.len > char_start);
    let last = tokens.iter().rposition(|t| t.offset < char_end);
    match (first, last) {
        (Some(s), Some(e)) if s <= e => Ok(AnswerSpan::new(s, e)),
        _ => Err(fail(format!("no token overlaps characters [{char_start}, {char_end})"))),
    }
}
