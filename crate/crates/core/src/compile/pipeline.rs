//! End-to-end answering: extraction, graph build, query analysis, beam
//! search, prompt compilation and generation, all recorded in a trace.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::{
    all_evidence, compile_prompt, gather_evidence, CompiledPrompt, Serialization,
    DEFAULT_INSTRUCTION,
};
use super::serialize::serialize_chain;
use crate::extraction::{
    extract_triples, validate_documents, Document, DocumentError, ParseReport, Schema,
};
use crate::graph::{build_graph, graph_stats, GraphStats, ReasoningGraph, DEFAULT_MERGE_THRESHOLD};
use crate::providers::{Embedder, GenerationRequest, Generator};
use crate::query::{analyze_query, AnalysisParams, Direction, DirectionClassifier, QueryAnalysis};
use crate::traversal::{
    beam_search_with_sims, dedup_chains, node_similarities, select_top_chains, FrontierSnapshot,
    ReasoningChain, TraversalConfig, TraversalReport, DEFAULT_BEAM_WIDTH, DEFAULT_MAX_DEPTH,
    DEFAULT_TOP_K_CHAINS,
};

pub const ANSWER_MAX_TOKENS: u32 = 512;

/// Whether the classifier's direction steers the search or every query is
/// searched bidirectionally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraversalMode {
    #[default]
    Targeted,
    Blind,
}

impl fmt::Display for TraversalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraversalMode::Targeted => "targeted",
            TraversalMode::Blind => "blind",
        })
    }
}

impl FromStr for TraversalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "targeted" => Ok(TraversalMode::Targeted),
            "blind" | "blind-bidirectional" => Ok(TraversalMode::Blind),
            other => Err(format!(
                "unknown traversal mode {other:?} (expected targeted or blind)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema: Schema,
    pub merge_threshold: f64,
    pub tau: f64,
    pub top_m: usize,
    pub max_start_nodes: usize,
    pub beam_width: usize,
    pub max_depth: usize,
    pub top_k_chains: usize,
    pub serialization: Serialization,
    pub traversal: TraversalMode,
    pub instruction: String,
    /// Keep per-depth frontier dumps in the trace.
    #[serde(default)]
    pub record_frontiers: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let a = AnalysisParams::default();
        PipelineConfig {
            schema: Schema::default(),
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            tau: a.tau,
            top_m: a.top_m,
            max_start_nodes: a.max_start_nodes,
            beam_width: DEFAULT_BEAM_WIDTH,
            max_depth: DEFAULT_MAX_DEPTH,
            top_k_chains: DEFAULT_TOP_K_CHAINS,
            serialization: Serialization::default(),
            traversal: TraversalMode::default(),
            instruction: DEFAULT_INSTRUCTION.trim_end().to_string(),
            record_frontiers: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return Err(format!(
                "merge_threshold must be in [0, 1], got {}",
                self.merge_threshold
            ));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(format!("tau must be in [-1, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("top_m", self.top_m),
            ("max_start_nodes", self.max_start_nodes),
            ("beam_width", self.beam_width),
            ("max_depth", self.max_depth),
            ("top_k_chains", self.top_k_chains),
        ] {
            if v == 0 {
                return Err(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn analysis_params(&self) -> AnalysisParams {
        AnalysisParams {
            top_m: self.top_m,
            tau: self.tau,
            max_start_nodes: self.max_start_nodes,
        }
    }

    pub fn traversal_config(&self, direction: Direction) -> TraversalConfig {
        TraversalConfig {
            beam_width: self.beam_width,
            max_depth: self.max_depth,
            direction,
            top_k_chains: self.top_k_chains,
        }
    }
}

/// Borrowed provider set shared by every stage.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub classifier: &'a dyn DirectionClassifier,
}

/// Errors that reject the request before any stage runs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InputError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Documents(#[from] DocumentError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Graph,
    Analysis,
    Traversal,
    Compile,
    Generation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
    /// True when the failure came from an embedding or generation provider.
    pub provider: bool,
}

/// Seconds spent per cost bucket: graph construction (extraction and
/// build), answer construction (analysis, search, compilation) and
/// generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub graph_s: f64,
    pub construct_s: f64,
    pub generate_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedChain {
    #[serde(flatten)]
    pub chain: ReasoningChain,
    pub serialized: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub query: String,
    pub answer: Option<String>,
    pub chains: Vec<TracedChain>,
    pub prompt: Option<CompiledPrompt>,
    pub analysis: Option<QueryAnalysis>,
    /// Direction actually used by the search (blind mode overrides the
    /// classifier).
    pub direction: Option<Direction>,
    pub extraction: Vec<ParseReport>,
    pub graph: Option<GraphStats>,
    pub traversal: Option<TraversalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frontiers: Vec<FrontierSnapshot>,
    /// True when no chain survived and all documents were used as evidence.
    pub fallback: bool,
    pub timings: StageTimings,
    pub error: Option<StageError>,
}

impl AnswerTrace {
    fn new(query: &str) -> Self {
        AnswerTrace {
            query: query.to_string(),
            answer: None,
            chains: Vec::new(),
            prompt: None,
            analysis: None,
            direction: None,
            extraction: Vec::new(),
            graph: None,
            traversal: None,
            frontiers: Vec::new(),
            fallback: false,
            timings: StageTimings::default(),
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Zeroes every wall-clock field so traces can be compared byte for byte.
    pub fn redact_timings(&mut self) {
        self.timings = StageTimings::default();
        if let Some(t) = self.traversal.as_mut() {
            t.wall_time = Duration::ZERO;
        }
    }

    fn fail(mut self, stage: Stage, message: impl fmt::Display, provider: bool) -> Self {
        self.error = Some(StageError {
            stage,
            message: message.to_string(),
            provider,
        });
        self
    }
}

fn check_inputs(query: &str, docs: &[Document], config: &PipelineConfig) -> Result<(), InputError> {
    if query.trim().is_empty() {
        return Err(InputError::EmptyQuestion);
    }
    config.validate().map_err(InputError::Config)?;
    validate_documents(docs)?;
    Ok(())
}

/// Extracts triples from every document in parallel and builds the graph.
/// Reports come back in document order.
pub fn build_document_graph(
    docs: &[Document],
    config: &PipelineConfig,
    providers: Providers<'_>,
) -> Result<(ReasoningGraph, Vec<ParseReport>), StageError> {
    let extractions: Result<Vec<_>, _> = docs
        .par_iter()
        .map(|d| extract_triples(d, providers.generator, config.schema))
        .collect();
    let extractions = extractions.map_err(|e| StageError {
        stage: Stage::Extraction,
        message: e.to_string(),
        provider: true,
    })?;
    let mut triples = Vec::new();
    let mut reports = Vec::with_capacity(extractions.len());
    for x in extractions {
        triples.extend(x.triples);
        reports.push(x.report);
    }
    let g = build_graph(&triples, providers.embedder, config.merge_threshold).map_err(|e| {
        StageError {
            stage: Stage::Graph,
            message: e.to_string(),
            provider: true,
        }
    })?;
    Ok((g, reports))
}

/// Full pipeline over raw documents. Only malformed input is an `Err`;
/// stage failures come back as a trace holding the completed prefix.
pub fn answer(
    query: &str,
    docs: &[Document],
    config: &PipelineConfig,
    providers: Providers<'_>,
) -> Result<AnswerTrace, InputError> {
    check_inputs(query, docs, config)?;
    let mut trace = AnswerTrace::new(query);
    let started = Instant::now();
    let built = build_document_graph(docs, config, providers);
    trace.timings.graph_s = started.elapsed().as_secs_f64();
    match built {
        Ok((g, reports)) => {
            trace.extraction = reports;
            Ok(run_on_graph(trace, &g, docs, config, providers))
        }
        Err(e) => {
            trace.error = Some(e);
            Ok(trace)
        }
    }
}

/// Pipeline over a prebuilt graph; `docs` must cover the graph's provenance.
pub fn answer_with_graph(
    query: &str,
    g: &ReasoningGraph,
    docs: &[Document],
    config: &PipelineConfig,
    providers: Providers<'_>,
) -> Result<AnswerTrace, InputError> {
    check_inputs(query, docs, config)?;
    Ok(run_on_graph(
        AnswerTrace::new(query),
        g,
        docs,
        config,
        providers,
    ))
}

fn run_on_graph(
    mut trace: AnswerTrace,
    g: &ReasoningGraph,
    docs: &[Document],
    config: &PipelineConfig,
    providers: Providers<'_>,
) -> AnswerTrace {
    trace.graph = Some(graph_stats(g));
    let started = Instant::now();
    let analysis = match analyze_query(
        &trace.query,
        g,
        providers.embedder,
        providers.classifier,
        config.analysis_params(),
    ) {
        Ok(a) => a,
        Err(e) => {
            trace.timings.construct_s = started.elapsed().as_secs_f64();
            return trace.fail(Stage::Analysis, e, true);
        }
    };
    let direction = match config.traversal {
        TraversalMode::Targeted => analysis.direction,
        TraversalMode::Blind => Direction::Bidirectional,
    };
    trace.direction = Some(direction);
    let cfg = config.traversal_config(direction);

    let mut chains: Vec<ReasoningChain> = Vec::new();
    if !analysis.start_nodes.is_empty() {
        let q = analysis
            .query_embedding
            .as_ref()
            .expect("analysis embeds the query");
        let sims = node_similarities(g, q);
        let starts: Vec<_> = analysis.start_nodes.iter().map(|s| s.id).collect();
        let mut frontiers = Vec::new();
        let record = config.record_frontiers.then_some(&mut frontiers);
        match beam_search_with_sims(g, &starts, &sims, &cfg, record) {
            Ok((emitted, mut report)) => {
                let deduped = dedup_chains(emitted);
                report.chains_after_dedup = deduped.len();
                chains = select_top_chains(&deduped, cfg.top_k_chains);
                trace.traversal = Some(report);
                trace.frontiers = frontiers;
            }
            Err(e) => {
                trace.analysis = Some(analysis);
                trace.timings.construct_s = started.elapsed().as_secs_f64();
                return trace.fail(Stage::Traversal, e, false);
            }
        }
    } else {
        trace.traversal = Some(TraversalReport::default());
    }
    trace.analysis = Some(analysis);

    let compiled = compile_stage(&trace.query, &chains, g, docs, config);
    trace.timings.construct_s = started.elapsed().as_secs_f64();
    let (prompt, traced) = match compiled {
        Ok(x) => x,
        Err(e) => return trace.fail(Stage::Compile, e, false),
    };
    trace.fallback = traced.is_empty();
    trace.chains = traced;

    let started = Instant::now();
    let generated = GenerationRequest::new("", prompt.rendered.clone(), 0.0, ANSWER_MAX_TOKENS)
        .and_then(|req| providers.generator.generate(&req));
    trace.timings.generate_s = started.elapsed().as_secs_f64();
    trace.prompt = Some(prompt);
    match generated {
        Ok(text) => {
            trace.answer = Some(text.trim().to_string());
            trace
        }
        Err(e) => trace.fail(Stage::Generation, e, true),
    }
}

fn compile_stage(
    query: &str,
    chains: &[ReasoningChain],
    g: &ReasoningGraph,
    docs: &[Document],
    config: &PipelineConfig,
) -> Result<(CompiledPrompt, Vec<TracedChain>), super::CompileError> {
    let mut traced = Vec::with_capacity(chains.len());
    for c in chains {
        traced.push(TracedChain {
            chain: c.clone(),
            serialized: serialize_chain(c, g)?,
        });
    }
    let evidence = if chains.is_empty() {
        all_evidence(docs)
    } else {
        gather_evidence(chains, g, docs)?
    };
    let lines: Vec<String> = traced.iter().map(|t| t.serialized.clone()).collect();
    let prompt = compile_prompt(
        &config.instruction,
        query,
        &lines,
        evidence,
        config.serialization,
    );
    Ok((prompt, traced))
}
