//! TOML run configuration and its merge with command-line flags.
//!
//! Precedence is flag, then file, then the library default.

use std::fs;
use std::path::{Path, PathBuf};

use chaingraph_core::compile::{PipelineConfig, Serialization, TraversalMode};
use chaingraph_core::extraction::Schema;
use chaingraph_core::providers::{ProviderConfig, DEFAULT_EMBEDDING_DIM};
use serde::Deserialize;

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tau: Option<f64>,
    pub merge_threshold: Option<f64>,
    pub beam_width: Option<usize>,
    pub max_depth: Option<usize>,
    pub top_k_chains: Option<usize>,
    pub top_m: Option<usize>,
    pub max_start_nodes: Option<usize>,
    pub schema: Option<Schema>,
    pub serialization: Option<Serialization>,
    pub traversal: Option<TraversalMode>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub instruction_file: Option<PathBuf>,
    pub mock: Option<bool>,
    pub mock_fixture: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    pub docs: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub generator: Option<ProviderConfig>,
    pub embedder: Option<ProviderConfig>,
    pub classifier: Option<ProviderConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub tau: Option<f64>,
    pub merge_threshold: Option<f64>,
    pub beam_width: Option<usize>,
    pub max_depth: Option<usize>,
    pub top_k_chains: Option<usize>,
    pub schema: Option<Schema>,
    pub flat: bool,
    pub blind: bool,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub mock: bool,
    pub mock_fixture: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_JOBS: usize = 1;

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub jobs: usize,
    pub mock: bool,
    pub mock_fixture: Option<PathBuf>,
    pub embedding_dim: usize,
    pub generator: Option<ProviderConfig>,
    pub embedder: Option<ProviderConfig>,
    pub classifier: Option<ProviderConfig>,
    pub docs: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: FlagOverrides) -> Result<Self, String> {
        let base = PipelineConfig::default();
        let instruction = match &file.instruction_file {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| format!("cannot read instruction file {}: {e}", p.display()))?
                .trim_end()
                .to_string(),
            None => base.instruction.clone(),
        };
        let serialization = if flags.flat {
            Serialization::Flat
        } else {
            file.serialization.unwrap_or(base.serialization)
        };
        let traversal = if flags.blind {
            TraversalMode::Blind
        } else {
            file.traversal.unwrap_or(base.traversal)
        };
        let pipeline = PipelineConfig {
            schema: flags.schema.or(file.schema).unwrap_or(base.schema),
            merge_threshold: flags
                .merge_threshold
                .or(file.merge_threshold)
                .unwrap_or(base.merge_threshold),
            tau: flags.tau.or(file.tau).unwrap_or(base.tau),
            top_m: file.top_m.unwrap_or(base.top_m),
            max_start_nodes: file.max_start_nodes.unwrap_or(base.max_start_nodes),
            beam_width: flags
                .beam_width
                .or(file.beam_width)
                .unwrap_or(base.beam_width),
            max_depth: flags.max_depth.or(file.max_depth).unwrap_or(base.max_depth),
            top_k_chains: flags
                .top_k_chains
                .or(file.top_k_chains)
                .unwrap_or(base.top_k_chains),
            serialization,
            traversal,
            instruction,
            record_frontiers: false,
        };
        pipeline.validate()?;
        let embedding_dim = file.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
        if embedding_dim == 0 {
            return Err("embedding_dim must be >= 1".into());
        }
        let jobs = flags.jobs.or(file.jobs).unwrap_or(DEFAULT_JOBS);
        if jobs == 0 {
            return Err("jobs must be >= 1".into());
        }
        Ok(RunConfig {
            pipeline,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            jobs,
            mock: flags.mock || file.mock.unwrap_or(false),
            mock_fixture: flags.mock_fixture.or(file.mock_fixture),
            embedding_dim,
            generator: file.generator,
            embedder: file.embedder,
            classifier: file.classifier,
            docs: file.docs,
            graph: file.graph,
            dataset: file.dataset,
        })
    }
}
