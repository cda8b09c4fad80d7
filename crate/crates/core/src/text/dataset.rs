//! SQuAD-schema ingestion.
//!
//! ```text
//! { "data": [ { "title"?: str,
//!               "paragraphs": [ { "id"?: str, "context": str,
//!                                 "qas": [ { "id": str, "question": str,
//!                                            "answers": [ { "text": str, "answer_start": int } ] } ] } ] } ] }
//! ```
//!
//! `qas` may be empty or absent, which is how unlabeled target-domain
//! paragraphs are supplied. Paragraphs without an `id` are named
//! `p{article}_{paragraph}`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{char_span_to_token_span, tokenize, AnswerSpan, Token};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub data: Vec<SquadArticle>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquadArticle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquadParagraph {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub context: String,
    #[serde(default)]
    pub qas: Vec<SquadQa>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquadQa {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<SquadAnswer>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquadAnswer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paragraph {
    pub id: String,
    pub context: String,
    pub tokens: Vec<Token>,
}

impl Paragraph {
    pub fn new(id: impl Into<String>, context: impl Into<String>) -> Self {
        let context = context.into();
        let tokens = tokenize(&context);
        Paragraph { id: id.into(), context, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// The original text covered by a token span.
    pub fn span_text(&self, span: AnswerSpan) -> String {
        let first = &self.tokens[span.start];
        let last = &self.tokens[span.end];
        self.context.chars().skip(first.offset).take(last.offset + last.len - first.offset).collect()
    }
}

/// A (paragraph, question, answer) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct QaExample {
    pub id: String,
    pub paragraph: Arc<Paragraph>,
    pub question: Vec<String>,
    pub question_text: String,
    pub answer: AnswerSpan,
    /// Every gold answer string, for scoring.
    pub gold_answers: Vec<String>,
}

impl QaExample {
    pub fn validate(&self) -> Result<()> {
        self.answer.validate(self.paragraph.len())?;
        if self.question.is_empty() {
            return Err(Error::Input(format!("example {} has an empty question", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub paragraphs: usize,
    pub questions: usize,
    pub examples: usize,
    /// `(question id, reason)` for every question that was dropped.
    pub skipped: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub paragraphs: Vec<Arc<Paragraph>>,
    pub examples: Vec<QaExample>,
    pub report: LoadReport,
}

impl Dataset {
    pub fn paragraph(&self, id: &str) -> Option<&Arc<Paragraph>> {
        self.paragraphs.iter().find(|p| p.id == id)
    }

    /// All aligned answer spans per paragraph id.
    pub fn spans_by_paragraph(&self) -> HashMap<String, Vec<AnswerSpan>> {
        let mut out: HashMap<String, Vec<AnswerSpan>> = HashMap::new();
        for ex in &self.examples {
            out.entry(ex.paragraph.id.clone()).or_default().push(ex.answer);
        }
        out
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::Schema(format!("{}: {e}", path.display())),
        _ => Error::Parse { path: path.to_path_buf(), source: e },
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file: SquadFile = read_json(path)?;
    Ok(build_dataset(&file))
}

/// Tokenizes and aligns every QA pair. Answers whose text is not found at
/// `answer_start`, or whose covering tokens do not reproduce the answer text,
/// are skipped and listed in the report.
pub fn build_dataset(file: &SquadFile) -> Dataset {
    let mut ds = Dataset::default();
    for (ai, article) in file.data.iter().enumerate() {
        for (pi, para) in article.paragraphs.iter().enumerate() {
            let id = para.id.clone().unwrap_or_else(|| format!("p{ai}_{pi}"));
            let paragraph = Arc::new(Paragraph::new(id, para.context.clone()));
            ds.paragraphs.push(paragraph.clone());
            for qa in &para.qas {
                ds.report.questions += 1;
                match align_qa(&paragraph, qa) {
                    Ok(ex) => ds.examples.push(ex),
                    Err(reason) => ds.report.skipped.push((qa.id.clone(), reason)),
                }
            }
        }
    }
    ds.report.paragraphs = ds.paragraphs.len();
    ds.report.examples = ds.examples.len();
    ds
}

fn align_qa(paragraph: &Arc<Paragraph>, qa: &SquadQa) -> std::result::Result<QaExample, String> {
    let first = qa.answers.first().ok_or("no answers")?;
    let chars: Vec<char> = paragraph.context.chars().collect();
    let len = first.text.chars().count();
    let at: String = chars.iter().skip(first.answer_start).take(len).collect();
    if at != first.text {
        return Err(format!("answer {:?} not found at offset {}", first.text, first.answer_start));
    }
    let span = char_span_to_token_span(&paragraph.tokens, chars.len(), first.answer_start, len, &qa.id)
        .map_err(|e| e.to_string())?;
    let covered = paragraph.span_text(span);
    if normalize_ws(&covered) != normalize_ws(&first.text) {
        return Err(format!("answer {:?} covers partial tokens {covered:?}", first.text));
    }
    let question: Vec<String> = tokenize(&qa.question).into_iter().map(|t| t.text).collect();
    if question.is_empty() {
        return Err("empty question".into());
    }
    Ok(QaExample {
        id: qa.id.clone(),
        paragraph: paragraph.clone(),
        question,
        question_text: qa.question.clone(),
        answer: span,
        gold_answers: qa.answers.iter().map(|a| a.text.clone()).collect(),
    })
}

/// One record of the external answer-annotation file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub paragraph_id: String,
    pub spans: Vec<AnnotationSpan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSpan {
    pub start_token: usize,
    pub end_token: usize,
}

/// Loads `[ { paragraph_id, spans: [ { start_token, end_token } ] } ]`.
pub fn load_annotations(path: &Path) -> Result<HashMap<String, Vec<AnswerSpan>>> {
    let records: Vec<AnnotationRecord> = read_json(path)?;
    let mut out: HashMap<String, Vec<AnswerSpan>> = HashMap::new();
    for r in records {
        out.entry(r.paragraph_id)
            .or_default()
            .extend(r.spans.iter().map(|s| AnswerSpan::new(s.start_token, s.end_token)));
    }
    Ok(out)
}
