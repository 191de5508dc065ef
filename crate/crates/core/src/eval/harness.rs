//! Per-item evaluation, aggregate reports, CSV output and grid sweeps.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::QaItem;
use super::metrics::{exact_match, f1};
use crate::compile::{
    answer, AnswerTrace, PipelineConfig, Providers, Serialization, TraversalMode,
};
use crate::extraction::Schema;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: the item list is empty")]
    NoItems,
    #[error("sweep grid has no values on any axis")]
    EmptyGrid,
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
    /// Zero all wall-clock columns so reports compare byte for byte.
    pub redact_timings: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            jobs: 1,
            redact_timings: false,
        }
    }
}

/// One CSV row. `error` is empty for items that produced an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item_id: String,
    pub em: f64,
    pub f1: f64,
    pub chains: usize,
    pub evidence_docs: usize,
    pub nodes_expanded: usize,
    pub t_graph_s: f64,
    pub t_construct_s: f64,
    pub t_generate_s: f64,
    pub nodes: usize,
    pub edges: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub context: Vec<String>,
    pub gold: Vec<String>,
}

/// Means over all rows, failed items included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub items: usize,
    pub errors: usize,
    pub em: f64,
    pub f1: f64,
    pub chains: f64,
    pub evidence_docs: f64,
    pub nodes_expanded: f64,
    pub t_graph_s: f64,
    pub t_construct_s: f64,
    pub t_generate_s: f64,
    pub nodes: f64,
    pub edges: f64,
}

impl Aggregate {
    pub fn from_rows(rows: &[ItemRow]) -> Self {
        let n = rows.len();
        if n == 0 {
            return Aggregate::default();
        }
        let mean = |f: &dyn Fn(&ItemRow) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
        Aggregate {
            items: n,
            errors: rows.iter().filter(|r| !r.error.is_empty()).count(),
            em: mean(&|r| r.em),
            f1: mean(&|r| r.f1),
            chains: mean(&|r| r.chains as f64),
            evidence_docs: mean(&|r| r.evidence_docs as f64),
            nodes_expanded: mean(&|r| r.nodes_expanded as f64),
            t_graph_s: mean(&|r| r.t_graph_s),
            t_construct_s: mean(&|r| r.t_construct_s),
            t_generate_s: mean(&|r| r.t_generate_s),
            nodes: mean(&|r| r.nodes as f64),
            edges: mean(&|r| r.edges as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by item_id.
    pub rows: Vec<ItemRow>,
    pub judge: Vec<JudgeRecord>,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "item_id",
    "em",
    "f1",
    "chains",
    "evidence_docs",
    "nodes_expanded",
    "t_graph_s",
    "t_construct_s",
    "t_generate_s",
    "nodes",
    "edges",
    "error",
];

/// Label of the aggregate row appended after the item rows.
pub const MEAN_ROW: &str = "MEAN";

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

impl EvalReport {
    pub fn aggregate(&self) -> Aggregate {
        Aggregate::from_rows(&self.rows)
    }

    /// Item rows followed by one `MEAN` row. Floats carry six decimals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.item_id.clone(),
                fmt6(r.em),
                fmt6(r.f1),
                r.chains.to_string(),
                r.evidence_docs.to_string(),
                r.nodes_expanded.to_string(),
                fmt6(r.t_graph_s),
                fmt6(r.t_construct_s),
                fmt6(r.t_generate_s),
                r.nodes.to_string(),
                r.edges.to_string(),
                r.error.clone(),
            ])
            .expect("in-memory write");
        }
        let a = self.aggregate();
        w.write_record([
            MEAN_ROW.to_string(),
            fmt6(a.em),
            fmt6(a.f1),
            fmt6(a.chains),
            fmt6(a.evidence_docs),
            fmt6(a.nodes_expanded),
            fmt6(a.t_graph_s),
            fmt6(a.t_construct_s),
            fmt6(a.t_generate_s),
            fmt6(a.nodes),
            fmt6(a.edges),
            format!("{} error(s)", a.errors),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    /// One `{"id","question","answer","context","gold"}` object per line.
    pub fn judge_jsonl(&self) -> String {
        self.judge
            .iter()
            .map(|j| serde_json::to_string(j).expect("plain data") + "\n")
            .collect()
    }
}

fn row_for(item: &QaItem, trace: &AnswerTrace, redact: bool) -> (ItemRow, JudgeRecord) {
    let pred = trace.answer.clone().unwrap_or_default();
    let evidence = trace
        .prompt
        .as_ref()
        .map(|p| p.evidence.as_slice())
        .unwrap_or_default();
    let graph = trace
        .graph
        .unwrap_or_else(|| crate::graph::graph_stats(&crate::graph::ReasoningGraph::empty()));
    let t = if redact {
        Default::default()
    } else {
        trace.timings
    };
    let row = ItemRow {
        item_id: item.item_id.clone(),
        em: if trace.answer.is_some() {
            exact_match(&pred, &item.gold_answers)
        } else {
            0.0
        },
        f1: if trace.answer.is_some() {
            f1(&pred, &item.gold_answers)
        } else {
            0.0
        },
        chains: trace.chains.len(),
        evidence_docs: evidence.len(),
        nodes_expanded: trace.traversal.as_ref().map_or(0, |r| r.nodes_expanded),
        t_graph_s: t.graph_s,
        t_construct_s: t.construct_s,
        t_generate_s: t.generate_s,
        nodes: graph.node_count,
        edges: graph.edge_count,
        error: trace
            .error
            .as_ref()
            .map(|e| format!("{}: {}", e.stage, e.message))
            .unwrap_or_default(),
    };
    let judge = JudgeRecord {
        id: item.item_id.clone(),
        question: item.question.clone(),
        answer: pred,
        context: evidence.iter().map(|e| e.text.clone()).collect(),
        gold: item.gold_answers.clone(),
    };
    (row, judge)
}

fn evaluate_item(
    item: &QaItem,
    config: &PipelineConfig,
    providers: Providers<'_>,
    redact: bool,
) -> (ItemRow, JudgeRecord) {
    match answer(&item.question, &item.documents, config, providers) {
        Ok(trace) => row_for(item, &trace, redact),
        Err(e) => {
            let row = ItemRow {
                item_id: item.item_id.clone(),
                em: 0.0,
                f1: 0.0,
                chains: 0,
                evidence_docs: 0,
                nodes_expanded: 0,
                t_graph_s: 0.0,
                t_construct_s: 0.0,
                t_generate_s: 0.0,
                nodes: 0,
                edges: 0,
                error: format!("input: {e}"),
            };
            let judge = JudgeRecord {
                id: item.item_id.clone(),
                question: item.question.clone(),
                answer: String::new(),
                context: Vec::new(),
                gold: item.gold_answers.clone(),
            };
            (row, judge)
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))
}

/// Answers every item on its own documents and scores it. Item failures
/// become rows with an `error`; the report is ordered by item_id whatever
/// the worker count.
pub fn run_eval(
    items: &[QaItem],
    config: &PipelineConfig,
    providers: Providers<'_>,
    opts: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    config.validate().map_err(EvalError::Config)?;
    let mut out: Vec<(ItemRow, JudgeRecord)> = pool(opts.jobs)?.install(|| {
        items
            .par_iter()
            .map(|it| evaluate_item(it, config, providers, opts.redact_timings))
            .collect()
    });
    out.sort_by(|a, b| a.0.item_id.cmp(&b.0.item_id));
    let (rows, judge) = out.into_iter().unzip();
    Ok(EvalReport { rows, judge })
}

/// Axes of an ablation grid. An empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub beam_width: Vec<usize>,
    #[serde(default)]
    pub top_k: Vec<usize>,
    #[serde(default)]
    pub schema: Vec<Schema>,
    #[serde(default)]
    pub serialization: Vec<Serialization>,
    #[serde(default)]
    pub traversal: Vec<TraversalMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub beam_width: usize,
    pub top_k: usize,
    pub schema: Schema,
    pub serialization: Serialization,
    pub traversal: TraversalMode,
}

impl SweepCell {
    pub fn name(&self) -> String {
        format!(
            "cell_{:03}_b{}_k{}_{}_{}_{}",
            self.index,
            self.beam_width,
            self.top_k,
            self.schema,
            self.serialization,
            self.traversal
        )
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            beam_width: self.beam_width,
            top_k_chains: self.top_k,
            schema: self.schema,
            serialization: self.serialization,
            traversal: self.traversal,
            ..base.clone()
        }
    }
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.beam_width.is_empty()
            && self.top_k.is_empty()
            && self.schema.is_empty()
            && self.serialization.is_empty()
            && self.traversal.is_empty()
    }

    /// Cartesian product with beam width varying slowest and traversal
    /// fastest.
    pub fn cells(&self, base: &PipelineConfig) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &beam_width in &axis(&self.beam_width, base.beam_width) {
            for &top_k in &axis(&self.top_k, base.top_k_chains) {
                for &schema in &axis(&self.schema, base.schema) {
                    for &serialization in &axis(&self.serialization, base.serialization) {
                        for &traversal in &axis(&self.traversal, base.traversal) {
                            cells.push(SweepCell {
                                index: cells.len(),
                                beam_width,
                                top_k,
                                schema,
                                serialization,
                                traversal,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cell: SweepCell,
    pub report: EvalReport,
}

pub fn run_sweep(
    items: &[QaItem],
    base: &PipelineConfig,
    grid: &SweepGrid,
    providers: Providers<'_>,
    opts: EvalOptions,
) -> Result<Vec<SweepResult>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    grid.cells(base)
        .into_iter()
        .map(|cell| {
            Ok(SweepResult {
                cell,
                report: run_eval(items, &cell.apply(base), providers, opts)?,
            })
        })
        .collect()
}

/// One line per cell with the cell's settings and its aggregate.
pub fn sweep_summary_csv(results: &[SweepResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "beam_width",
        "top_k",
        "schema",
        "serialization",
        "traversal",
        "items",
        "errors",
        "em",
        "f1",
        "chains",
        "evidence_docs",
        "nodes_expanded",
        "t_graph_s",
        "t_construct_s",
        "t_generate_s",
        "nodes",
        "edges",
    ])
    .expect("in-memory write");
    for r in results {
        let a = r.report.aggregate();
        let c = r.cell;
        w.write_record([
            c.name(),
            c.beam_width.to_string(),
            c.top_k.to_string(),
            c.schema.to_string(),
            c.serialization.to_string(),
            c.traversal.to_string(),
            a.items.to_string(),
            a.errors.to_string(),
            fmt6(a.em),
            fmt6(a.f1),
            fmt6(a.chains),
            fmt6(a.evidence_docs),
            fmt6(a.nodes_expanded),
            fmt6(a.t_graph_s),
            fmt6(a.t_construct_s),
            fmt6(a.t_generate_s),
            fmt6(a.nodes),
            fmt6(a.edges),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Writes `<cell name>.csv` per cell plus `summary.csv` into `dir`.
pub fn write_sweep(dir: impl AsRef<Path>, results: &[SweepResult]) -> io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(results.len() + 1);
    for r in results {
        let p = dir.join(format!("{}.csv", r.cell.name()));
        fs::write(&p, r.report.to_csv())?;
        written.push(p);
    }
    let p = dir.join("summary.csv");
    fs::write(&p, sweep_summary_csv(results))?;
    written.push(p);
    Ok(written)
}
