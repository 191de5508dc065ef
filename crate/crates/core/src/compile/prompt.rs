//! Evidence selection and generation-prompt assembly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::extraction::Document;
use crate::graph::ReasoningGraph;
use crate::traversal::ReasoningChain;

pub const DEFAULT_INSTRUCTION: &str = include_str!("../../assets/instruction_v1.txt");

pub const INSTRUCTION_MARKER: &str = "### INSTRUCTION";
pub const QUESTION_MARKER: &str = "### QUESTION";
pub const CHAINS_MARKER: &str = "### REASONING CHAINS";
pub const EVIDENCE_MARKER: &str = "### EVIDENCE";
pub const NO_CHAINS_SENTENCE: &str = "No reasoning chains were found.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub doc_id: String,
    pub text: String,
}

/// How selected content is presented to the generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Serialization {
    #[default]
    Chains,
    /// Evidence only; the chains section is left out entirely.
    Flat,
}

impl fmt::Display for Serialization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Serialization::Chains => "chains",
            Serialization::Flat => "flat",
        })
    }
}

impl FromStr for Serialization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "chains" => Ok(Serialization::Chains),
            "flat" => Ok(Serialization::Flat),
            other => Err(format!(
                "unknown serialization mode {other:?} (expected chains or flat)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPrompt {
    pub instruction: String,
    pub query: String,
    /// Chain lines joined by newlines; empty when no chains were compiled.
    pub serialized_chains: String,
    pub evidence: Vec<Evidence>,
    pub serialization: Serialization,
    pub rendered: String,
}

/// Documents cited by any edge of `chains`, each once, in order of first
/// appearance (chain order, then hop order, then provenance order).
pub fn gather_evidence(
    chains: &[ReasoningChain],
    g: &ReasoningGraph,
    docs: &[Document],
) -> Result<Vec<Evidence>, CompileError> {
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for chain in chains {
        for step in &chain.steps {
            let edge = g
                .edge(step.edge)
                .ok_or(CompileError::DanglingEdge(step.edge))?;
            for p in &edge.provenance {
                if !seen.insert(p.doc_id.as_str()) {
                    continue;
                }
                let doc = by_id
                    .get(p.doc_id.as_str())
                    .ok_or_else(|| CompileError::UnknownDocId(p.doc_id.clone()))?;
                out.push(Evidence {
                    doc_id: doc.doc_id.clone(),
                    text: doc.text.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Text given to stand-in documents when only a saved graph is available.
pub const PLACEHOLDER_TEXT: &str = "(source text not provided)";

/// One stand-in document per doc_id cited by the graph, sorted by id, so
/// evidence selection still resolves without the original corpus.
pub fn placeholder_documents(g: &ReasoningGraph) -> Vec<Document> {
    let mut ids: Vec<&str> = g
        .edges()
        .iter()
        .flat_map(|e| e.provenance.iter().map(|p| p.doc_id.as_str()))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| Document::new(id, PLACEHOLDER_TEXT))
        .collect()
}

pub fn all_evidence(docs: &[Document]) -> Vec<Evidence> {
    docs.iter()
        .map(|d| Evidence {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
        })
        .collect()
}

/// Renders the four-section prompt. With no chain lines in chains mode the
/// chains section carries [`NO_CHAINS_SENTENCE`]; in flat mode it is absent.
/// Choosing the evidence (cited documents, or all of them as a fallback) is
/// the caller's job.
pub fn compile_prompt(
    instruction: &str,
    query: &str,
    chain_lines: &[String],
    evidence: Vec<Evidence>,
    serialization: Serialization,
) -> CompiledPrompt {
    let serialized_chains = chain_lines.join("\n");
    let mut r = String::new();
    section(&mut r, INSTRUCTION_MARKER, instruction.trim_end());
    section(&mut r, QUESTION_MARKER, query.trim());
    if serialization == Serialization::Chains {
        let body = if chain_lines.is_empty() {
            NO_CHAINS_SENTENCE
        } else {
            serialized_chains.as_str()
        };
        section(&mut r, CHAINS_MARKER, body);
    }
    let body: Vec<String> = evidence
        .iter()
        .map(|e| format!("[{}] {}", e.doc_id, e.text.trim()))
        .collect();
    section(&mut r, EVIDENCE_MARKER, &body.join("\n\n"));
    CompiledPrompt {
        instruction: instruction.trim_end().to_string(),
        query: query.trim().to_string(),
        serialized_chains,
        evidence,
        serialization,
        rendered: r,
    }
}

fn section(out: &mut String, marker: &str, body: &str) {
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str(marker);
    out.push('\n');
    out.push_str(body);
    out.push('\n');
}

/// Rendered text with the chains section (marker through the blank line
/// that follows it) cut out.
pub fn without_chains_section(rendered: &str) -> String {
    let Some(start) = rendered.find(&format!("{CHAINS_MARKER}\n")) else {
        return rendered.to_string();
    };
    let end = rendered[start..]
        .find(&format!("\n{EVIDENCE_MARKER}\n"))
        .map_or(rendered.len(), |i| start + i + 1);
    format!("{}{}", &rendered[..start], &rendered[end..])
}

/// Chain lines found under the chains marker of a rendered prompt.
pub fn chain_lines_in(rendered: &str) -> Vec<&str> {
    let Some(start) = rendered.find(&format!("{CHAINS_MARKER}\n")) else {
        return Vec::new();
    };
    rendered[start + CHAINS_MARKER.len() + 1..]
        .lines()
        .take_while(|l| !l.is_empty())
        .filter(|l| l.starts_with("(score="))
        .collect()
}
