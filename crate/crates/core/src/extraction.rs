//! Schema-constrained triple extraction: prompt rendering, the LLM call and
//! the pipe-delimited line parser.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::providers::{GenerationRequest, Generator, ProviderError};

const REASONING_TEMPLATE: &str = include_str!("../assets/extraction_reasoning_v1.txt");
const SPO_TEMPLATE: &str = include_str!("../assets/extraction_spo_v1.txt");
const TEXT_SLOT: &str = "{text}";

/// Pronouns that may not stand alone as a triple endpoint.
pub const BANNED_PRONOUNS: [&str; 6] = ["he", "she", "it", "this", "that", "they"];

/// A retrieved text unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, serde_json::Value>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            source_meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    #[error("document set is empty")]
    Empty,
    #[error("document {0:?} has empty text")]
    EmptyText(String),
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

/// Checks the per-request document invariants: unique ids, non-empty text.
pub fn validate_documents(docs: &[Document]) -> Result<(), DocumentError> {
    if docs.is_empty() {
        return Err(DocumentError::Empty);
    }
    let mut seen = HashSet::new();
    for d in docs {
        if d.text.trim().is_empty() {
            return Err(DocumentError::EmptyText(d.doc_id.clone()));
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(DocumentError::DuplicateId(d.doc_id.clone()));
        }
    }
    Ok(())
}

/// One extracted assertion, with document-level provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub cause: String,
    pub relation: String,
    pub effect: String,
    pub doc_id: String,
    /// 0-based line number within the raw LLM output.
    pub line_index: usize,
}

impl Triple {
    /// Renders the triple as an extraction output line.
    pub fn to_line(&self) -> String {
        format!("{} | {} | {}", self.cause, self.relation, self.effect)
    }
}

/// Which extraction prompt to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// Cause | relation | effect, restricted to causal, spatial and temporal links.
    #[default]
    Reasoning,
    /// Unconstrained subject | predicate | object.
    Spo,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Reasoning => "reasoning",
            Schema::Spo => "spo",
        })
    }
}

impl std::str::FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reasoning" => Ok(Schema::Reasoning),
            "spo" => Ok(Schema::Spo),
            other => Err(format!("unknown schema {other:?} (expected reasoning|spo)")),
        }
    }
}

pub fn prompt_template(schema: Schema) -> &'static str {
    match schema {
        Schema::Reasoning => REASONING_TEMPLATE,
        Schema::Spo => SPO_TEMPLATE,
    }
}

/// Fills the template's text slot with the raw document text.
pub fn render_extraction_prompt(doc: &Document, schema: Schema) -> String {
    prompt_template(schema).replacen(TEXT_SLOT, &doc.text, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Not exactly three non-empty fields.
    Arity,
    /// Cause or effect is a bare pronoun.
    Pronoun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line_index: usize,
    pub reason: SkipReason,
    pub line: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub doc_id: String,
    pub non_blank_lines: usize,
    pub accepted: usize,
    pub skipped: Vec<SkippedLine>,
}

impl ParseReport {
    pub fn skip_count(&self, reason: SkipReason) -> usize {
        self.skipped.iter().filter(|s| s.reason == reason).count()
    }
}

/// Strips leading list markers: `-`, `*`, `•`, `+`, or `12.` / `12)`.
fn strip_bullets(line: &str) -> &str {
    let mut cur = line;
    loop {
        let next = strip_bullet(cur);
        if next.len() == cur.len() {
            return next;
        }
        cur = next;
    }
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    if matches!(t, "-" | "*" | "•" | "+") {
        return "";
    }
    let rest = ["- ", "* ", "• ", "+ "]
        .iter()
        .find_map(|m| t.strip_prefix(m))
        .or_else(|| {
            let digits = t.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let r = t[digits..]
                .strip_prefix('.')
                .or_else(|| t[digits..].strip_prefix(')'))?;
            (r.is_empty() || r.starts_with(char::is_whitespace)).then_some(r)
        });
    match rest {
        // "1950. | precedes | 1960" starts with a field, not a bullet.
        Some(r) if !r.trim_start().starts_with('|') => r,
        _ => t,
    }
}

/// Drops one pair of enclosing square brackets, which the prompt uses as
/// placeholder notation ("[It] | caused | [the crash]").
fn unbracket(field: &str) -> &str {
    match field.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        Some(inner) => inner.trim(),
        None => field,
    }
}

fn split_fields(body: &str) -> Option<[&str; 3]> {
    for delim in [" | ", "|"] {
        let parts: Vec<&str> = body.split(delim).map(str::trim).collect();
        if let [c, r, e] = parts[..] {
            if !c.is_empty() && !r.is_empty() && !e.is_empty() {
                return Some([c, r, e]);
            }
        }
    }
    None
}

fn is_banned_pronoun(field: &str) -> bool {
    let f = unbracket(field);
    BANNED_PRONOUNS.iter().any(|p| f.eq_ignore_ascii_case(p))
}

/// Parses pipe-delimited extraction output. Total: every non-blank line
/// either becomes a triple or is recorded in the report as a skip.
pub fn parse_triples(raw: &str, doc_id: &str) -> (Vec<Triple>, ParseReport) {
    let mut triples = Vec::new();
    let mut report = ParseReport {
        doc_id: doc_id.to_string(),
        ..Default::default()
    };
    for (line_index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.non_blank_lines += 1;
        let skip = |reason| SkippedLine {
            line_index,
            reason,
            line: line.to_string(),
        };
        let Some([cause, relation, effect]) = split_fields(strip_bullets(line)) else {
            report.skipped.push(skip(SkipReason::Arity));
            continue;
        };
        if is_banned_pronoun(cause) || is_banned_pronoun(effect) {
            report.skipped.push(skip(SkipReason::Pronoun));
            continue;
        }
        triples.push(Triple {
            cause: cause.to_string(),
            relation: relation.to_string(),
            effect: effect.to_string(),
            doc_id: doc_id.to_string(),
            line_index,
        });
    }
    report.accepted = triples.len();
    (triples, report)
}

/// Result of extracting one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub triples: Vec<Triple>,
    pub report: ParseReport,
}

pub const EXTRACTION_MAX_TOKENS: u32 = 2048;

/// Renders the prompt, calls the generator once and parses the output.
pub fn extract_triples(
    doc: &Document,
    llm: &dyn Generator,
    schema: Schema,
) -> Result<Extraction, ProviderError> {
    let prompt = render_extraction_prompt(doc, schema);
    let req = GenerationRequest::new("", prompt, 0.0, EXTRACTION_MAX_TOKENS)?;
    let raw = llm.generate(&req)?;
    let (triples, report) = parse_triples(&raw, &doc.doc_id);
    Ok(Extraction { triples, report })
}
