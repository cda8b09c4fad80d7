//! Exact match and token F1 with the usual SQuAD answer normalization,
//! question-type breakdowns, and a context-overlap diagnostic.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::AnswerSpan;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Function words ignored by [`context_overlap_stat`], in addition to the
/// articles.
pub const STOPWORDS: [&str; 40] = [
    "is", "are", "was", "were", "be", "been", "did", "do", "does", "has", "have", "had", "of", "in", "on", "at", "to",
    "for", "by", "with", "from", "and", "or", "as", "that", "this", "it", "its", "what", "which", "who", "whom",
    "whose", "where", "when", "why", "how", "many", "much", "?",
];

/// Lowercases, drops ASCII and Unicode punctuation, drops articles and
/// splits on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let cleaned: String = lower.chars().filter(|c| !is_punct(*c)).collect();
    cleaned.split_whitespace().filter(|w| !ARTICLES.contains(w)).map(str::to_string).collect()
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

fn check_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::Input("no gold answers".into()));
    }
    Ok(())
}

pub fn exact_match(pred: &str, golds: &[String]) -> Result<f64> {
    check_golds(golds)?;
    let p = normalize_answer(pred);
    Ok(if golds.iter().any(|g| normalize_answer(g) == p) { 1.0 } else { 0.0 })
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut common = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = c/|pred| and R = c/|gold|, as one rounding
    (2 * common) as f64 / (pred.len() + gold.len()) as f64
}

/// Max over golds of token-multiset F1.
pub fn f1_score(pred: &str, golds: &[String]) -> Result<f64> {
    check_golds(golds)?;
    let p = normalize_answer(pred);
    Ok(golds.iter().map(|g| token_f1(&p, &normalize_answer(g))).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentages.
    pub em: f64,
    pub f1: f64,
    pub count: usize,
    /// Gold questions with no prediction; they score zero.
    pub missing: usize,
    pub records: Vec<EvalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_type: Option<BTreeMap<String, TypeStats>>,
}

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>, missing: usize) -> Self {
        let n = records.len();
        let (em, f1) = mean_scores(&records);
        EvalReport { em, f1, count: n, missing, records, by_type: None }
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>6} {:>7} {:>7}\n", "type", "count", "EM", "F1");
        out += &format!("{:<10} {:>6} {:>7.2} {:>7.2}\n", "all", self.count, self.em, self.f1);
        if let Some(types) = &self.by_type {
            for (k, s) in types {
                out += &format!("{:<10} {:>6} {:>7.2} {:>7.2}\n", k, s.count, s.em, s.f1);
            }
        }
        out
    }
}

fn mean_scores(records: &[EvalRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (0.0, 0.0);
    }
    let n = records.len() as f64;
    (
        100.0 * records.iter().map(|r| r.em).sum::<f64>() / n,
        100.0 * records.iter().map(|r| r.f1).sum::<f64>() / n,
    )
}

/// Scores predicted answer text per question id against gold answers.
/// Gold questions without a prediction score zero.
pub fn evaluate(golds: &[(String, Vec<String>)], preds: &HashMap<String, String>) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(golds.len());
    let mut missing = 0;
    for (id, answers) in golds {
        let pred = match preds.get(id) {
            Some(p) => p.as_str(),
            None => {
                missing += 1;
                ""
            }
        };
        let (em, f1) = if preds.contains_key(id) {
            (exact_match(pred, answers)?, f1_score(pred, answers)?)
        } else {
            check_golds(answers)?;
            (0.0, 0.0)
        };
        records.push(EvalRecord { id: id.clone(), em, f1 });
    }
    Ok(EvalReport::from_records(records, missing))
}

/// Bucket for a question: a few leading bigrams take precedence over the
/// leading wh-word.
pub fn question_type(question: &str) -> &'static str {
    let words: Vec<String> = question.split_whitespace().take(2).map(|w| w.to_lowercase()).collect();
    let first = words.first().map(String::as_str).unwrap_or("");
    let second = words.get(1).map(String::as_str).unwrap_or("");
    match (first, second) {
        ("how", "many") => "how many",
        ("what", "was") => "what was",
        ("what", "did") => "what did",
        ("who", _) => "who",
        ("what", _) => "what",
        ("where", _) => "where",
        ("when", _) => "when",
        _ => "other",
    }
}

/// Per-bucket EM/F1 percentages. Records whose id has no question text are
/// skipped.
pub fn question_type_breakdown(records: &[EvalRecord], questions: &HashMap<String, String>) -> BTreeMap<String, TypeStats> {
    let mut buckets: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        if let Some(q) = questions.get(&r.id) {
            buckets.entry(question_type(q).to_string()).or_default().push(r.clone());
        }
    }
    buckets
        .into_iter()
        .map(|(k, rs)| {
            let (em, f1) = mean_scores(&rs);
            (k, TypeStats { count: rs.len(), em, f1 })
        })
        .collect()
}

/// Distinct non-stopword question tokens that occur within `window`
/// tokens to the left or right of the answer span. The span itself is not
/// part of the window. Matching is case-insensitive.
pub fn context_overlap_stat<S: AsRef<str>, T: AsRef<str>>(
    question: &[S],
    paragraph: &[T],
    answer: AnswerSpan,
    window: usize,
) -> Result<usize> {
    answer.validate(paragraph.len())?;
    let left = answer.start.saturating_sub(window)..answer.start;
    let right = answer.end + 1..(answer.end + 1 + window).min(paragraph.len());
    let context: HashSet<String> = left.chain(right).map(|i| paragraph[i].as_ref().to_lowercase()).collect();
    let distinct: HashSet<String> = question
        .iter()
        .map(|w| w.as_ref().to_lowercase())
        .filter(|w| !ARTICLES.contains(&w.as_str()) && !STOPWORDS.contains(&w.as_str()))
        .collect();
    Ok(distinct.iter().filter(|w| context.contains(*w)).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Cat!"), g(&["cat"]));
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("a b the c"), g(&["b", "c"]));
        assert_eq!(normalize_answer("  An   apple, sir. "), g(&["apple", "sir"]));
    }

    #[test]
    fn em_and_f1_examples() {
        assert_eq!(exact_match("cat", &g(&["cat"])).unwrap(), 1.0);
        assert_eq!(exact_match("The cat", &g(&["cat"])).unwrap(), 1.0);
        assert_eq!(exact_match("cat", &g(&["dog"])).unwrap(), 0.0);
        assert_eq!(f1_score("the cat", &g(&["cat sat"])).unwrap(), 2.0 / 3.0);
        assert_eq!(f1_score("cat sat", &g(&["cat sat"])).unwrap(), 1.0);
        assert_eq!(f1_score("the", &g(&["a"])).unwrap(), 1.0);
        assert!(matches!(exact_match("x", &[]), Err(Error::Input(_))));
        assert!(matches!(f1_score("x", &[]), Err(Error::Input(_))));
    }

    #[test]
    fn multiset_counting() {
        // two "x" in the prediction match only one in the gold
        assert!((f1_score("x x y", &g(&["x z"])).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn types() {
        assert_eq!(question_type("How many victims were there ?"), "how many");
        assert_eq!(question_type("What was the score ?"), "what was");
        assert_eq!(question_type("what did they win ?"), "what did");
        assert_eq!(question_type("Who won ?"), "who");
        assert_eq!(question_type("What team won ?"), "what");
        assert_eq!(question_type("Why ?"), "other");
        assert_eq!(question_type(""), "other");
        let recs = vec![EvalRecord { id: "1".into(), em: 1.0, f1: 1.0 }, EvalRecord { id: "2".into(), em: 0.0, f1: 0.5 }];
        let qs: HashMap<String, String> = [("1", "Who won ?"), ("2", "Who lost ?")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let t = question_type_breakdown(&recs, &qs);
        assert_eq!(t.len(), 1);
        assert_eq!(t["who"], TypeStats { count: 2, em: 50.0, f1: 75.0 });
        assert!(question_type_breakdown(&[], &qs).is_empty());
    }

    #[test]
    fn overlap() {
        let p = g(&["a", "b", "c", "ans", "d", "e"]);
        let span = AnswerSpan::new(3, 3);
        assert_eq!(context_overlap_stat(&g(&["x", "y"]), &p, span, 10).unwrap(), 0);
        assert_eq!(context_overlap_stat(&g(&["ans"]), &p, span, 10).unwrap(), 0);
        assert_eq!(context_overlap_stat(&g(&["b", "e", "e", "ans"]), &p, span, 10).unwrap(), 2);
        assert_eq!(context_overlap_stat(&g(&["b", "e"]), &p, span, 1).unwrap(), 0);
        assert_eq!(context_overlap_stat(&g(&["c", "d", "the", "in"]), &p, span, 1).unwrap(), 2);
        assert!(matches!(context_overlap_stat(&g(&["b"]), &p, AnswerSpan::new(5, 6), 1), Err(Error::Bounds(_))));
    }

    #[test]
    fn aggregate_is_mean_and_missing_scores_zero() {
        let golds = vec![("q1".to_string(), g(&["cat"])), ("q2".to_string(), g(&["dog"])), ("q3".to_string(), g(&["x y"]))];
        let preds: HashMap<String, String> = [("q1", "cat"), ("q3", "x")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let r = evaluate(&golds, &preds).unwrap();
        assert_eq!(r.missing, 1);
        assert!((r.em - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 100.0 * (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn self_match_and_symmetry(a in "[a-zA-Z ,.!]{0,30}", b in "[a-zA-Z ,.!]{0,30}") {
            prop_assert_eq!(exact_match(&a, &[a.clone()]).unwrap(), 1.0);
            prop_assert_eq!(f1_score(&a, &[a.clone()]).unwrap(), 1.0);
            let ab = f1_score(&a, &[b.clone()]).unwrap();
            prop_assert!((ab - f1_score(&b, &[a.clone()]).unwrap()).abs() < 1e-12);
            prop_assert!(ab >= exact_match(&a, &[b.clone()]).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
