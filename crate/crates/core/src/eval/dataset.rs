//! QA dataset loading: HotpotQA-style, MuSiQue-style and native JSON lines.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extraction::{validate_documents, Document};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub item_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub documents: Vec<Document>,
}

impl QaItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.item_id.trim().is_empty() {
            return Err("item_id is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.gold_answers.is_empty() {
            return Err("gold_answers is empty".into());
        }
        validate_documents(&self.documents).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Hotpot,
    Musique,
    Native,
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Hotpot => "hotpot",
            DatasetFormat::Musique => "musique",
            DatasetFormat::Native => "native",
        })
    }
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hotpot" | "hotpotqa" => Ok(DatasetFormat::Hotpot),
            "musique" => Ok(DatasetFormat::Musique),
            "native" => Ok(DatasetFormat::Native),
            other => Err(format!(
                "unknown dataset format {other:?} (expected hotpot, musique or native)"
            )),
        }
    }
}

/// Where a malformed record sits: a 1-based line for JSON-lines input, a
/// 0-based element index for a top-level JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Record(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Record(n) => write!(f, "record {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("{at}: {message}")]
    Format { at: Location, message: String },
    #[error("dataset has no items")]
    Empty,
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
) -> Result<Vec<QaItem>, DatasetError> {
    parse_dataset(&std::fs::read_to_string(path)?, format)
}

/// Parses a dataset body. Hotpot input may be a JSON array or JSON lines;
/// the other formats are JSON lines. Blank lines are ignored.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<QaItem>, DatasetError> {
    let records = records(text, format)?;
    let mut items = Vec::with_capacity(records.len());
    for (at, v) in records {
        let item = match format {
            DatasetFormat::Hotpot => hotpot_item(&v),
            DatasetFormat::Musique => musique_item(&v),
            DatasetFormat::Native => serde_json::from_value::<QaItem>(v).map_err(|e| e.to_string()),
        }
        .and_then(|item| item.validate().map(|_| item))
        .map_err(|message| DatasetError::Format { at, message })?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(items)
}

fn records(text: &str, format: DatasetFormat) -> Result<Vec<(Location, Value)>, DatasetError> {
    if format == DatasetFormat::Hotpot && text.trim_start().starts_with('[') {
        let arr: Vec<Value> = serde_json::from_str(text).map_err(|e| DatasetError::Format {
            at: Location::Line(e.line()),
            message: e.to_string(),
        })?;
        return Ok(arr
            .into_iter()
            .enumerate()
            .map(|(i, v)| (Location::Record(i), v))
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| DatasetError::Format {
            at: Location::Line(i + 1),
            message: e.to_string(),
        })?;
        out.push((Location::Line(i + 1), v));
    }
    Ok(out)
}

fn str_field<'a>(v: &'a Value, names: &[&str]) -> Result<&'a str, String> {
    names
        .iter()
        .find_map(|n| v.get(*n).and_then(Value::as_str))
        .ok_or_else(|| format!("missing string field {:?}", names[0]))
}

/// Context as (title, sentences) pairs, accepting both the list-of-pairs
/// layout and the column layout `{"title": [...], "sentences": [[...]]}`.
fn hotpot_context(v: &Value) -> Result<Vec<(String, Vec<String>)>, String> {
    let ctx = v.get("context").ok_or("missing field \"context\"")?;
    let strings = |a: &Value| -> Vec<String> {
        a.as_array()
            .map(|s| {
                s.iter()
                    .filter_map(|x| x.as_str().map(String::from))
                    .collect()
            })
            .unwrap_or_default()
    };
    if let Some(list) = ctx.as_array() {
        return list
            .iter()
            .map(|pair| {
                let title = pair
                    .get(0)
                    .and_then(Value::as_str)
                    .ok_or("context entry without title")?;
                Ok((
                    title.to_string(),
                    strings(pair.get(1).unwrap_or(&Value::Null)),
                ))
            })
            .collect();
    }
    let titles = strings(ctx.get("title").unwrap_or(&Value::Null));
    let sentences = ctx
        .get("sentences")
        .and_then(Value::as_array)
        .ok_or("context has no sentences")?;
    if titles.len() != sentences.len() {
        return Err("context titles and sentences differ in length".into());
    }
    Ok(titles
        .into_iter()
        .zip(sentences.iter().map(strings))
        .collect())
}

fn hotpot_supporting_titles(v: &Value) -> BTreeSet<String> {
    match v.get("supporting_facts") {
        Some(Value::Array(facts)) => facts
            .iter()
            .filter_map(|f| f.get(0).and_then(Value::as_str).map(String::from))
            .collect(),
        Some(Value::Object(cols)) => cols
            .get("title")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|t| t.as_str().map(String::from))
                    .collect()
            })
            .unwrap_or_default(),
        _ => BTreeSet::new(),
    }
}

fn join_sentences(sentences: &[String]) -> String {
    let mut out = String::new();
    for s in sentences {
        if !out.is_empty() && !s.starts_with(char::is_whitespace) {
            out.push(' ');
        }
        out.push_str(s);
    }
    out.trim().to_string()
}

/// Documents are the context paragraphs named by the supporting facts, in
/// context order; every paragraph is used when no supporting facts exist.
fn hotpot_item(v: &Value) -> Result<QaItem, String> {
    let id = str_field(v, &["_id", "id"])?;
    let question = str_field(v, &["question"])?;
    let answer = str_field(v, &["answer"])?;
    let support = hotpot_supporting_titles(v);
    let documents: Vec<Document> = hotpot_context(v)?
        .into_iter()
        .filter(|(t, _)| support.is_empty() || support.contains(t))
        .map(|(t, s)| Document::new(t, join_sentences(&s)))
        .collect();
    Ok(QaItem {
        item_id: id.to_string(),
        question: question.to_string(),
        gold_answers: vec![answer.to_string()],
        documents,
    })
}

/// Documents are the supporting paragraphs, identified as `idx:title`.
/// Gold answers are the answer followed by its aliases.
fn musique_item(v: &Value) -> Result<QaItem, String> {
    let id = str_field(v, &["id"])?;
    let question = str_field(v, &["question"])?;
    let answer = str_field(v, &["answer"])?;
    let mut gold_answers = vec![answer.to_string()];
    if let Some(aliases) = v.get("answer_aliases").and_then(Value::as_array) {
        gold_answers.extend(aliases.iter().filter_map(|a| a.as_str().map(String::from)));
    }
    let paragraphs = v
        .get("paragraphs")
        .and_then(Value::as_array)
        .ok_or("missing field \"paragraphs\"")?;
    let mut documents = Vec::new();
    for (pos, p) in paragraphs.iter().enumerate() {
        if !p
            .get("is_supporting")
            .and_then(Value::as_bool)
            .unwrap_or(false)
        {
            continue;
        }
        let idx = p.get("idx").and_then(Value::as_u64).unwrap_or(pos as u64);
        let title = p.get("title").and_then(Value::as_str).unwrap_or_default();
        let text = str_field(p, &["paragraph_text"])?;
        documents.push(Document::new(format!("{idx}:{title}"), text));
    }
    Ok(QaItem {
        item_id: id.to_string(),
        question: question.to_string(),
        gold_answers,
        documents,
    })
}

/// `n` items drawn without replacement by a seeded generator, kept in
/// their original order. Returns everything when `n >= items.len()`.
pub fn sample_items(items: Vec<QaItem>, n: usize, seed: u64) -> Vec<QaItem> {
    if n >= items.len() {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    let mut slots: Vec<Option<QaItem>> = items.into_iter().map(Some).collect();
    picked
        .into_iter()
        .map(|i| slots[i].take().expect("indices are distinct"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOTPOT: &str = r#"[{"_id":"h1","question":"Which magazine came first?","answer":"Arthur's Magazine",
        "supporting_facts":[["Arthur's Magazine",0],["First for Women",0]],
        "context":[["Arthur's Magazine",["Arthur's Magazine was a monthly."," It began in 1844."]],
                   ["Unrelated",["Noise."]],
                   ["First for Women",["First for Women is a magazine.","It began in 1989."]]]}]"#;

    #[test]
    fn hotpot_restricts_to_supporting_titles() {
        let items = parse_dataset(HOTPOT, DatasetFormat::Hotpot).unwrap();
        assert_eq!(items.len(), 1);
        let docs = &items[0].documents;
        assert_eq!(
            docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(),
            ["Arthur's Magazine", "First for Women"]
        );
        assert_eq!(
            docs[0].text,
            "Arthur's Magazine was a monthly. It began in 1844."
        );
        assert_eq!(
            docs[1].text,
            "First for Women is a magazine. It began in 1989."
        );
        assert_eq!(items[0].gold_answers, vec!["Arthur's Magazine"]);
    }

    #[test]
    fn hotpot_column_layout() {
        let line = r#"{"id":"h2","question":"q?","answer":"x","supporting_facts":{"title":["B"],"sent_id":[0]},"context":{"title":["A","B"],"sentences":[["a."],["b."]]}}"#;
        let items = parse_dataset(line, DatasetFormat::Hotpot).unwrap();
        assert_eq!(items[0].documents, vec![Document::new("B", "b.")]);
    }

    #[test]
    fn musique_supporting_paragraphs() {
        let line = r#"{"id":"m1","question":"q?","answer":"x","answer_aliases":["ex"],"paragraphs":[{"idx":0,"title":"T0","paragraph_text":"p0","is_supporting":false},{"idx":1,"title":"T1","paragraph_text":"p1","is_supporting":true}]}"#;
        let items = parse_dataset(line, DatasetFormat::Musique).unwrap();
        assert_eq!(items[0].documents, vec![Document::new("1:T1", "p1")]);
        assert_eq!(items[0].gold_answers, vec!["x", "ex"]);
    }

    #[test]
    fn native_round_trip() {
        let item = QaItem {
            item_id: "n1".into(),
            question: "q?".into(),
            gold_answers: vec!["a".into()],
            documents: vec![Document::new("d", "t")],
        };
        let text = format!(
            "{}\n\n{}\n",
            serde_json::to_string(&item).unwrap(),
            serde_json::to_string(&item).unwrap()
        );
        assert_eq!(
            parse_dataset(&text, DatasetFormat::Native).unwrap(),
            vec![item.clone(), item]
        );
    }

    #[test]
    fn malformed_line_is_named() {
        let good = r#"{"item_id":"n1","question":"q","gold_answers":["a"],"documents":[{"doc_id":"d","text":"t"}]}"#;
        let text = format!("{good}\n{{oops\n");
        match parse_dataset(&text, DatasetFormat::Native).unwrap_err() {
            DatasetError::Format { at, .. } => assert_eq!(at, Location::Line(2)),
            e => panic!("{e}"),
        }
        let no_gold = r#"{"item_id":"n1","question":"q","gold_answers":[],"documents":[{"doc_id":"d","text":"t"}]}"#;
        let err = parse_dataset(no_gold, DatasetFormat::Native).unwrap_err();
        assert_eq!(err.to_string(), "line 1: gold_answers is empty");
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(
            parse_dataset("\n\n", DatasetFormat::Native),
            Err(DatasetError::Empty)
        ));
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let items: Vec<QaItem> = (0..20)
            .map(|i| QaItem {
                item_id: format!("i{i:02}"),
                question: "q".into(),
                gold_answers: vec!["a".into()],
                documents: vec![Document::new("d", "t")],
            })
            .collect();
        let a = sample_items(items.clone(), 5, 7);
        let b = sample_items(items.clone(), 5, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0].item_id < w[1].item_id));
        assert_eq!(sample_items(items.clone(), 50, 7).len(), 20);
    }
}
