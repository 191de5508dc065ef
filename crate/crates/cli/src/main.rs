//! `chaingraph` command-line front end.

mod config;

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaingraph_core::compile::{
    answer, answer_with_graph, build_document_graph, placeholder_documents, AnswerTrace,
    InputError, PipelineConfig, Providers, Serialization, TraversalMode,
};
use chaingraph_core::eval::{
    load_dataset, run_eval, run_sweep, sample_items, sweep_summary_csv, write_sweep, DatasetFormat,
    EvalOptions, SweepGrid,
};
use chaingraph_core::extraction::{validate_documents, Document, Schema};
use chaingraph_core::graph::{graph_stats, load_graph, save_graph, DEFAULT_MERGE_THRESHOLD};
use chaingraph_core::providers::{
    Embedder, Generator, MockEmbedder, MockGenerator, RemoteEmbedder, RemoteGenerator,
    DEFAULT_EMBEDDING_DIM,
};
use chaingraph_core::query::{
    classify_direction, evaluate_classifier, parse_labeled_queries, DirectionClassifier,
    RemoteClassifier, RuleClassifier, DEFAULT_MAX_START_NODES, DEFAULT_TAU, DEFAULT_TOP_M,
};
use chaingraph_core::traversal::{DEFAULT_BEAM_WIDTH, DEFAULT_MAX_DEPTH, DEFAULT_TOP_K_CHAINS};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{FileConfig, FlagOverrides, RunConfig, DEFAULT_JOBS, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(
    name = "chaingraph",
    version,
    about = "Build reasoning graphs over documents and answer questions from them"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Defaults are filled into the help text at startup from the library
/// constants; see `command()`.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "F")]
    tau: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    merge: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    beam: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    topk: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    depth: Option<usize>,
    #[arg(long, global = true, value_name = "NAME")]
    schema: Option<Schema>,
    #[arg(long, global = true)]
    flat: bool,
    #[arg(long, global = true)]
    blind: bool,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    mock: bool,
    /// JSON object mapping prompt hashes to scripted responses
    #[arg(long, global = true, value_name = "PATH")]
    mock_fixture: Option<PathBuf>,
    /// Write zeros for every wall-clock measurement
    #[arg(long, global = true)]
    redact_timings: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract triples from documents and write the graph file
    BuildGraph {
        /// JSON lines of {"doc_id","text"}
        #[arg(long, value_name = "PATH")]
        docs: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Answer one question over documents or a saved graph
    Ask {
        question: String,
        #[arg(long, value_name = "PATH")]
        docs: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
        /// Print the full answer trace as JSON instead of the bare answer
        #[arg(long)]
        trace: bool,
    },
    /// Score a QA dataset and write a CSV report
    Eval {
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "FMT", default_value = "native")]
        format: DatasetFormat,
        /// CSV destination; stdout when absent
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// JSON lines for an external judge
        #[arg(long, value_name = "PATH")]
        judge_dump: Option<PathBuf>,
        /// Evaluate a seeded random subset of N items
        #[arg(long, value_name = "N")]
        sample: Option<usize>,
    },
    /// Evaluate every cell of a parameter grid
    Sweep {
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long, value_name = "FMT", default_value = "native")]
        format: DatasetFormat,
        /// JSON object with optional beam_width, top_k, schema, serialization and traversal lists
        #[arg(long, value_name = "PATH")]
        grid: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, value_name = "N")]
        sample: Option<usize>,
    },
    /// Classify queries read line by line from stdin
    Classify {
        /// Evaluate against JSON lines of {"text","label"} instead
        #[arg(long, value_name = "PATH")]
        labeled: Option<PathBuf>,
    },
    /// Print statistics of a saved graph
    Stats {
        #[arg(long, value_name = "PATH")]
        graph: Option<PathBuf>,
    },
}

fn command() -> clap::Command {
    let helps: [(&str, String); 11] = [
        (
            "tau",
            format!("Start-node similarity threshold [default: {DEFAULT_TAU}]"),
        ),
        (
            "merge",
            format!(
                "Cosine threshold for merging concept nodes [default: {DEFAULT_MERGE_THRESHOLD}]"
            ),
        ),
        (
            "beam",
            format!("Beam width [default: {DEFAULT_BEAM_WIDTH}]"),
        ),
        (
            "topk",
            format!("Chains kept for the prompt [default: {DEFAULT_TOP_K_CHAINS}]"),
        ),
        (
            "depth",
            format!("Maximum chain length in edges [default: {DEFAULT_MAX_DEPTH}]"),
        ),
        (
            "schema",
            format!(
                "Extraction schema: reasoning or spo [default: {}]",
                Schema::default()
            ),
        ),
        (
            "flat",
            format!(
                "Evidence only, no chain lines [default: {}]",
                Serialization::default()
            ),
        ),
        (
            "blind",
            format!(
                "Search both directions whatever the query asks [default: {}]",
                TraversalMode::default()
            ),
        ),
        (
            "seed",
            format!("Seed for mock embeddings and dataset sampling [default: {DEFAULT_SEED}]"),
        ),
        (
            "jobs",
            format!("Worker threads for eval and sweep [default: {DEFAULT_JOBS}]"),
        ),
        (
            "mock",
            "Use deterministic mock providers [default: false]".to_string(),
        ),
    ];
    let mut cmd = Cli::command();
    for (id, help) in helps {
        cmd = cmd.mut_arg(id, |a| a.help(help));
    }
    cmd.after_help(config_help())
}

fn config_help() -> String {
    let d = PipelineConfig::default();
    format!(
        "Config file keys (TOML; flags override the file, the file overrides defaults):\n  \
         tau = {}\n  merge_threshold = {}\n  beam_width = {}\n  max_depth = {}\n  top_k_chains = {}\n  \
         top_m = {DEFAULT_TOP_M}\n  max_start_nodes = {DEFAULT_MAX_START_NODES}\n  schema = \"{}\"\n  \
         serialization = \"{}\"\n  traversal = \"{}\"\n  seed = {DEFAULT_SEED}\n  jobs = {DEFAULT_JOBS}\n  \
         embedding_dim = {DEFAULT_EMBEDDING_DIM}\n  mock = false\n  mock_fixture, instruction_file, docs, graph, dataset = paths\n  \
         [generator] / [embedder] / [classifier]: endpoint_url, model_name, api_key_env_var,\n    \
         timeout_secs = 60, retry_count = 0, backoff_base_ms = 500\n\n\
         Exit codes: 0 success, 1 pipeline failure, 2 input error, 3 provider error.",
        d.tau,
        d.merge_threshold,
        d.beam_width,
        d.max_depth,
        d.top_k_chains,
        d.schema,
        d.serialization,
        d.traversal,
    )
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Provider(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Input(_) => 2,
            CliError::Provider(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Provider(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// The remote classifier when one is configured and mocks are off,
/// otherwise the keyword rules.
fn classifier_for(rc: &RunConfig) -> Result<Box<dyn DirectionClassifier>, CliError> {
    Ok(match (&rc.classifier, rc.mock) {
        (Some(c), false) => Box::new(RemoteClassifier::new(c.clone()).map_err(input)?),
        _ => Box::new(RuleClassifier),
    })
}

struct ProviderSet {
    embedder: Box<dyn Embedder>,
    generator: Box<dyn Generator>,
    classifier: Box<dyn DirectionClassifier>,
}

impl ProviderSet {
    fn build(rc: &RunConfig) -> Result<Self, CliError> {
        let classifier = classifier_for(rc)?;
        if rc.mock {
            let generator = match &rc.mock_fixture {
                Some(p) => MockGenerator::from_fixture_file(p)
                    .map_err(|e| input(format!("cannot load mock fixture {}: {e}", p.display())))?,
                None => MockGenerator::new(),
            };
            return Ok(ProviderSet {
                embedder: Box::new(MockEmbedder::new(rc.embedding_dim, rc.seed)),
                generator: Box::new(generator),
                classifier,
            });
        }
        let (Some(g), Some(e)) = (&rc.generator, &rc.embedder) else {
            return Err(input("no providers configured: pass --mock or add [generator] and [embedder] to the config"));
        };
        Ok(ProviderSet {
            embedder: Box::new(RemoteEmbedder::new(e.clone(), rc.embedding_dim).map_err(input)?),
            generator: Box::new(RemoteGenerator::new(g.clone()).map_err(input)?),
            classifier,
        })
    }

    fn providers(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            generator: self.generator.as_ref(),
            classifier: self.classifier.as_ref(),
        }
    }
}

fn resolve(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let file = match &global.config {
        Some(p) => FileConfig::load(p).map_err(input)?,
        None => FileConfig::default(),
    };
    let flags = FlagOverrides {
        tau: global.tau,
        merge_threshold: global.merge,
        beam_width: global.beam,
        max_depth: global.depth,
        top_k_chains: global.topk,
        schema: global.schema,
        flat: global.flat,
        blind: global.blind,
        seed: global.seed,
        jobs: global.jobs,
        mock: global.mock,
        mock_fixture: global.mock_fixture.clone(),
    };
    RunConfig::resolve(file, flags).map_err(input)
}

fn required(
    path: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    what: &str,
) -> Result<PathBuf, CliError> {
    path.or_else(|| fallback.clone()).ok_or_else(|| {
        input(format!(
            "no {what} given: pass --{what} or set `{what}` in the config"
        ))
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn read_documents(path: &Path) -> Result<Vec<Document>, CliError> {
    let text = read(path)?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line)
            .map_err(|e| input(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        docs.push(doc);
    }
    validate_documents(&docs).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(docs)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data") + "\n"
}

fn trace_outcome(trace: &AnswerTrace) -> Result<(), CliError> {
    match &trace.error {
        None => Ok(()),
        Some(e) if e.provider => Err(CliError::Provider(format!(
            "{} stage: {}",
            e.stage, e.message
        ))),
        Some(e) => Err(CliError::Failed(format!(
            "{} stage: {}",
            e.stage, e.message
        ))),
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let rc = resolve(&cli.global)?;
    let redact = cli.global.redact_timings;
    let emit = |out: &mut dyn Write, text: &str| -> Result<(), CliError> {
        out.write_all(text.as_bytes())
            .map_err(|e| CliError::Failed(format!("cannot write output: {e}")))
    };
    match cli.command {
        Command::BuildGraph {
            docs,
            out: out_path,
        } => {
            let docs = read_documents(&required(docs, &rc.docs, "docs")?)?;
            let set = ProviderSet::build(&rc)?;
            let (g, _) =
                build_document_graph(&docs, &rc.pipeline, set.providers()).map_err(|e| {
                    let msg = format!("{} stage: {}", e.stage, e.message);
                    if e.provider {
                        CliError::Provider(msg)
                    } else {
                        CliError::Failed(msg)
                    }
                })?;
            save_graph(&g, &out_path).map_err(|e| {
                CliError::Failed(format!("cannot write {}: {e}", out_path.display()))
            })?;
            emit(out, &pretty(&graph_stats(&g)))
        }
        Command::Ask {
            question,
            docs,
            graph,
            trace,
        } => {
            if question.trim().is_empty() {
                return Err(InputError::EmptyQuestion.into());
            }
            let mut pipeline = rc.pipeline.clone();
            pipeline.record_frontiers = trace;
            let set = ProviderSet::build(&rc)?;
            let docs_path = docs.or_else(|| rc.docs.clone());
            let graph_path = graph.or_else(|| rc.graph.clone());
            let mut result = match (graph_path, docs_path) {
                (Some(gp), dp) => {
                    let g = load_graph(&gp).map_err(|e| input(format!("{}: {e}", gp.display())))?;
                    let docs = match dp {
                        Some(p) => read_documents(&p)?,
                        None => placeholder_documents(&g),
                    };
                    answer_with_graph(&question, &g, &docs, &pipeline, set.providers())?
                }
                (None, Some(dp)) => {
                    answer(&question, &read_documents(&dp)?, &pipeline, set.providers())?
                }
                (None, None) => return Err(input("ask needs --docs or --graph")),
            };
            if redact {
                result.redact_timings();
            }
            if trace {
                emit(out, &pretty(&result))?;
            } else if let Some(a) = &result.answer {
                emit(out, &format!("{a}\n"))?;
            }
            trace_outcome(&result)
        }
        Command::Eval {
            dataset,
            format,
            out: out_path,
            judge_dump,
            sample,
        } => {
            let path = required(dataset, &rc.dataset, "dataset")?;
            let mut items = load_dataset(&path, format)
                .map_err(|e| input(format!("{}: {e}", path.display())))?;
            if let Some(n) = sample {
                items = sample_items(items, n, rc.seed);
            }
            let set = ProviderSet::build(&rc)?;
            let opts = EvalOptions {
                jobs: rc.jobs,
                redact_timings: redact,
            };
            let report = run_eval(&items, &rc.pipeline, set.providers(), opts).map_err(input)?;
            if let Some(p) = judge_dump {
                write_out(&p, &report.judge_jsonl())?;
            }
            match out_path {
                Some(p) => {
                    write_out(&p, &report.to_csv())?;
                    let a = report.aggregate();
                    eprintln!(
                        "{} item(s), {} error(s), EM {:.4}, F1 {:.4}",
                        a.items, a.errors, a.em, a.f1
                    );
                    Ok(())
                }
                None => emit(out, &report.to_csv()),
            }
        }
        Command::Sweep {
            dataset,
            format,
            grid,
            out_dir,
            sample,
        } => {
            let path = required(dataset, &rc.dataset, "dataset")?;
            let mut items = load_dataset(&path, format)
                .map_err(|e| input(format!("{}: {e}", path.display())))?;
            if let Some(n) = sample {
                items = sample_items(items, n, rc.seed);
            }
            let grid: SweepGrid = serde_json::from_str(&read(&grid)?)
                .map_err(|e| input(format!("{}: {e}", grid.display())))?;
            let set = ProviderSet::build(&rc)?;
            let opts = EvalOptions {
                jobs: rc.jobs,
                redact_timings: redact,
            };
            let results =
                run_sweep(&items, &rc.pipeline, &grid, set.providers(), opts).map_err(input)?;
            write_sweep(&out_dir, &results).map_err(|e| {
                CliError::Failed(format!("cannot write {}: {e}", out_dir.display()))
            })?;
            emit(out, &sweep_summary_csv(&results))
        }
        Command::Classify { labeled } => {
            let classifier = classifier_for(&rc)?;
            match labeled {
                Some(p) => {
                    let data = parse_labeled_queries(&read(&p)?)
                        .map_err(|e| input(format!("{}: {e}", p.display())))?;
                    emit(
                        out,
                        &pretty(&evaluate_classifier(classifier.as_ref(), &data)),
                    )
                }
                None => {
                    for line in io::stdin().lock().lines() {
                        let line = line.map_err(|e| input(format!("cannot read stdin: {e}")))?;
                        let q = line.trim();
                        if !q.is_empty() {
                            emit(
                                out,
                                &format!("{}\t{q}\n", classify_direction(q, classifier.as_ref())),
                            )?;
                        }
                    }
                    Ok(())
                }
            }
        }
        Command::Stats { graph } => {
            let path = required(graph, &rc.graph, "graph")?;
            let g = load_graph(&path).map_err(|e| input(format!("{}: {e}", path.display())))?;
            emit(out, &pretty(&graph_stats(&g)))
        }
    }
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn help_text() -> String {
        command().render_long_help().to_string()
    }

    #[test]
    fn cli_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn help_lists_library_defaults() {
        let h = help_text();
        for needle in [
            "[default: 0.55]",
            "[default: 0.9]",
            "[default: 3]",
            "[default: 4]",
            "[default: reasoning]",
            "[default: chains]",
            "[default: targeted]",
            "[default: 0]",
            "tau = 0.55",
            "merge_threshold = 0.9",
            "beam_width = 3",
            "max_depth = 4",
            "top_k_chains = 3",
        ] {
            assert!(h.contains(needle), "help lacks {needle}:\n{h}");
        }
        assert_eq!(DEFAULT_TAU, 0.55);
        assert_eq!(DEFAULT_MERGE_THRESHOLD, 0.90);
        assert_eq!(
            (DEFAULT_BEAM_WIDTH, DEFAULT_TOP_K_CHAINS, DEFAULT_MAX_DEPTH),
            (3, 3, 4)
        );
    }

    #[test]
    fn unknown_format_rejected() {
        let r = command().try_get_matches_from([
            "chaingraph",
            "eval",
            "--dataset",
            "x",
            "--format",
            "csv",
        ]);
        assert_eq!(r.unwrap_err().exit_code(), 2);
    }
}
