//! Regenerates `fixtures/mock_llm.json`, the scripted responses used by the
//! offline CLI runs.
//!
//! Extraction responses come from `fixtures/scripts.json` keyed by doc id.
//! Answer responses are keyed by question; every answer prompt the pipeline
//! can render for the fixture questions over the sweep grid is recorded.
//!
//! Run with `cargo run -p chaingraph-core --example build_fixtures`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chaingraph_core::compile::{
    answer, answer_with_graph, build_document_graph, placeholder_documents, PipelineConfig,
    Providers, Serialization, TraversalMode, QUESTION_MARKER,
};
use chaingraph_core::eval::{load_dataset, DatasetFormat};
use chaingraph_core::extraction::{render_extraction_prompt, Document, Schema};
use chaingraph_core::providers::{
    prompt_hash, GenerationRequest, Generator, MockEmbedder, ProviderError,
};
use chaingraph_core::query::RuleClassifier;
use serde::Deserialize;

#[derive(Deserialize)]
struct Scripts {
    extraction: BTreeMap<String, HashMap<Schema, String>>,
    answers: BTreeMap<String, String>,
}

/// Serves scripted extraction output and records answer prompts.
struct Recorder {
    extraction: BTreeMap<String, String>,
    answers: BTreeMap<String, String>,
    recorded: Mutex<BTreeMap<String, String>>,
}

fn question_of(prompt: &str) -> Option<&str> {
    let mut lines = prompt.lines();
    lines.find(|l| *l == QUESTION_MARKER)?;
    lines.next()
}

impl Generator for Recorder {
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let key = prompt_hash(&req.user_text);
        if let Some(r) = self.extraction.get(&key) {
            return Ok(r.clone());
        }
        let q = question_of(&req.user_text).ok_or(ProviderError::ResponseEmpty)?;
        let a = self.answers.get(q).ok_or(ProviderError::ResponseEmpty)?;
        self.recorded.lock().unwrap().insert(key, a.clone());
        Ok(a.clone())
    }
}

fn read_jsonl(path: &Path) -> Vec<Document> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// The sweep grid crossed with both schemas, serializations and traversal
/// modes; the first entry is the default configuration.
fn configs() -> Vec<PipelineConfig> {
    let mut out = vec![PipelineConfig::default()];
    for beam_width in [1, 3] {
        for top_k_chains in [1, 3] {
            for schema in [Schema::Reasoning, Schema::Spo] {
                for serialization in [Serialization::Chains, Serialization::Flat] {
                    for traversal in [TraversalMode::Targeted, TraversalMode::Blind] {
                        out.push(PipelineConfig {
                            beam_width,
                            top_k_chains,
                            schema,
                            serialization,
                            traversal,
                            ..PipelineConfig::default()
                        });
                    }
                }
            }
        }
    }
    out
}

/// Every scripted response keyed by prompt hash.
pub fn build(fixtures: &Path) -> BTreeMap<String, String> {
    let scripts: Scripts =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("scripts.json")).unwrap())
            .unwrap();
    let flood = read_jsonl(&fixtures.join("corpus/flood.jsonl"));
    let bp = read_jsonl(&fixtures.join("corpus/bp_mini.jsonl"));
    let qa = load_dataset(fixtures.join("qa/bp_mini_qa.jsonl"), DatasetFormat::Native).unwrap();

    let mut extraction = BTreeMap::new();
    for doc in flood.iter().chain(&bp) {
        for (schema, out) in &scripts.extraction[&doc.doc_id] {
            extraction.insert(
                prompt_hash(&render_extraction_prompt(doc, *schema)),
                out.clone(),
            );
        }
    }
    let rec = Recorder {
        extraction: extraction.clone(),
        answers: scripts.answers.clone(),
        recorded: Mutex::new(BTreeMap::new()),
    };
    let embedder = MockEmbedder::default();
    let providers = Providers {
        embedder: &embedder,
        generator: &rec,
        classifier: &RuleClassifier,
    };

    let mut runs: Vec<(&str, &[Document])> = Vec::new();
    for q in scripts.answers.keys() {
        runs.push((q, &flood));
        runs.push((q, &bp));
    }
    for item in &qa {
        runs.push((&item.question, &item.documents));
    }
    for config in configs() {
        for (q, docs) in &runs {
            let t = answer(q, docs, &config, providers).unwrap();
            assert!(t.is_ok(), "{q}: {:?}", t.error);
        }
        let (g, _) = build_document_graph(&flood, &config, providers).unwrap();
        let placeholders = placeholder_documents(&g);
        for q in scripts.answers.keys() {
            let t = answer_with_graph(q, &g, &placeholders, &config, providers).unwrap();
            assert!(t.is_ok(), "{q}: {:?}", t.error);
        }
    }
    let mut all = rec.recorded.into_inner().unwrap();
    all.extend(extraction);
    all
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[allow(dead_code)]
fn main() {
    let map = build(&fixtures_dir());
    let out = fixtures_dir().join("mock_llm.json");
    std::fs::write(&out, serde_json::to_string_pretty(&map).unwrap() + "\n").unwrap();
    println!("wrote {} responses to {}", map.len(), out.display());
}
