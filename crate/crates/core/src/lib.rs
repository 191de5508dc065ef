//! Chain-of-reasoning graph retrieval: extract cause/relation/effect triples
//! from documents, merge them into a concept graph, walk query-relevant
//! chains with a direction-aware beam search and compile them into a prompt.

pub mod compile;
pub mod eval;
pub mod extraction;
pub mod graph;
pub mod providers;
pub mod query;
pub mod traversal;
