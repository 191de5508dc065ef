//! One-line arrow rendering of chains and its inverse.

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::graph::ReasoningGraph;
use crate::traversal::ReasoningChain;

/// A chain as it appears in the prompt: labels in presentation order and,
/// for every hop, its relation and whether the arrow points forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLine {
    pub score: f64,
    pub labels: Vec<String>,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub relation: String,
    pub forward: bool,
}

impl ChainLine {
    pub fn render(&self) -> String {
        let mut out = format!("(score={:.2}) {}", self.score, self.labels[0]);
        for (hop, label) in self.hops.iter().zip(&self.labels[1..]) {
            if hop.forward {
                out.push_str(&format!(" --[{}]--> {label}", hop.relation));
            } else {
                out.push_str(&format!(" <--[{}]-- {label}", hop.relation));
            }
        }
        out
    }
}

/// Presentation form of `chain`. A chain walked entirely against edge
/// orientation is reversed so arrows read cause to effect; a mixed chain
/// keeps traversal order and marks reversed hops with `<--`.
pub fn chain_line(chain: &ReasoningChain, g: &ReasoningGraph) -> Result<ChainLine, CompileError> {
    let mut labels = Vec::with_capacity(chain.nodes.len());
    for &id in &chain.nodes {
        labels.push(
            g.node(id)
                .ok_or(CompileError::DanglingNode(id))?
                .label
                .clone(),
        );
    }
    let mut hops = Vec::with_capacity(chain.steps.len());
    for step in &chain.steps {
        let edge = g
            .edge(step.edge)
            .ok_or(CompileError::DanglingEdge(step.edge))?;
        hops.push(Hop {
            relation: edge.relation.clone(),
            forward: step.along,
        });
    }
    if !hops.is_empty() && hops.iter().all(|h| !h.forward) {
        labels.reverse();
        hops.reverse();
        hops.iter_mut().for_each(|h| h.forward = true);
    }
    Ok(ChainLine {
        score: chain.score,
        labels,
        hops,
    })
}

pub fn serialize_chain(chain: &ReasoningChain, g: &ReasoningGraph) -> Result<String, CompileError> {
    chain_line(chain, g).map(|l| l.render())
}

/// Parses a rendered line back. The score comes back rounded to the two
/// printed decimals.
pub fn parse_chain_line(line: &str) -> Option<ChainLine> {
    let rest = line.strip_prefix("(score=")?;
    let close = rest.find(") ")?;
    let score: f64 = rest[..close].parse().ok()?;
    let mut rest = &rest[close + 2..];
    let mut labels = Vec::new();
    let mut hops = Vec::new();
    loop {
        let fwd = rest.find(" --[");
        let back = rest.find(" <--[");
        let (at, forward) = match (fwd, back) {
            (None, None) => break,
            (Some(f), None) => (f, true),
            (None, Some(b)) => (b, false),
            (Some(f), Some(b)) => {
                if f < b {
                    (f, true)
                } else {
                    (b, false)
                }
            }
        };
        labels.push(rest[..at].to_string());
        let after = &rest[at + if forward { 4 } else { 5 }..];
        let closer = if forward { "]--> " } else { "]-- " };
        let end = after.find(closer)?;
        hops.push(Hop {
            relation: after[..end].to_string(),
            forward,
        });
        rest = &after[end + closer.len()..];
    }
    labels.push(rest.to_string());
    if hops.is_empty() || labels.iter().any(|l| l.is_empty()) {
        return None;
    }
    Some(ChainLine {
        score,
        labels,
        hops,
    })
}
