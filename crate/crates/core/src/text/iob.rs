use serde::{Deserialize, Serialize};

use super::AnswerSpan;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IobTag {
    Start,
    Mid,
    End,
    None,
}

impl IobTag {
    pub const ALL: [IobTag; 4] = [IobTag::Start, IobTag::Mid, IobTag::End, IobTag::None];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> IobTag {
        Self::ALL[i]
    }
}

/// One tag per paragraph token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IobLabels(pub Vec<IobTag>);

impl IobLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[IobTag] {
        &self.0
    }
}

/// Sorts spans and fuses any that overlap or touch.
pub fn merge_spans(spans: &[AnswerSpan]) -> Vec<AnswerSpan> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    let mut out: Vec<AnswerSpan> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match out.last_mut() {
            Some(last) if s.start <= last.end + 1 => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

/// Renders spans as tags: `START` opens every span, `END` closes spans of two
/// or more tokens, `MID` fills the rest. Overlapping or adjacent spans are
/// merged first.
pub fn derive_iob_labels(n: usize, spans: &[AnswerSpan]) -> Result<IobLabels> {
    for s in spans {
        s.validate(n)?;
    }
    let mut tags = vec![IobTag::None; n];
    for s in merge_spans(spans) {
        tags[s.start] = IobTag::Start;
        for t in &mut tags[s.start + 1..=s.end] {
            *t = IobTag::Mid;
        }
        if s.end > s.start {
            tags[s.end] = IobTag::End;
        }
    }
    Ok(IobLabels(tags))
}

/// Maximal runs of non-`NONE` tags, in order. Malformed runs (a run opening
/// with `MID`, say) still form one span.
pub fn extract_candidate_spans(tags: &[IobTag]) -> Vec<AnswerSpan> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match (t, open) {
            (IobTag::None, Some(s)) => {
                out.push(AnswerSpan::new(s, i - 1));
                open = None;
            }
            (IobTag::None, None) => {}
            (_, None) => open = Some(i),
            (_, Some(_)) => {}
        }
    }
    if let Some(s) = open {
        out.push(AnswerSpan::new(s, tags.len() - 1));
    }
    out
}

/// Union of the spans already present in `labels` with `extra`, re-rendered.
pub fn merge_external_answer_annotations(labels: &IobLabels, extra: &[AnswerSpan]) -> Result<IobLabels> {
    let n = labels.len();
    for s in extra {
        s.validate(n)?;
    }
    if extra.is_empty() {
        return Ok(labels.clone());
    }
    let mut spans = extract_candidate_spans(labels.tags());
    spans.extend_from_slice(extra);
    derive_iob_labels(n, &spans)
}
