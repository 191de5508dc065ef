//! Chain serialization, evidence selection, prompt assembly and the
//! end-to-end answer pipeline.

mod pipeline;
mod prompt;
mod serialize;

use thiserror::Error;

use crate::graph::{EdgeId, NodeId};

pub use pipeline::{
    answer, answer_with_graph, build_document_graph, AnswerTrace, InputError, PipelineConfig,
    Providers, Stage, StageError, StageTimings, TracedChain, TraversalMode, ANSWER_MAX_TOKENS,
};
pub use prompt::{
    all_evidence, chain_lines_in, compile_prompt, gather_evidence, placeholder_documents,
    without_chains_section, CompiledPrompt, Evidence, Serialization, CHAINS_MARKER,
    DEFAULT_INSTRUCTION, EVIDENCE_MARKER, INSTRUCTION_MARKER, NO_CHAINS_SENTENCE, PLACEHOLDER_TEXT,
    QUESTION_MARKER,
};
pub use serialize::{chain_line, parse_chain_line, serialize_chain, ChainLine, Hop};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("chain references node {0} which is not in the graph")]
    DanglingNode(NodeId),
    #[error("chain references edge {0} which is not in the graph")]
    DanglingEdge(EdgeId),
    #[error("edge provenance names unknown document {0:?}")]
    UnknownDocId(String),
}
