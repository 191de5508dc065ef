//! Direction-aware semantic beam search over a [`ReasoningGraph`].
//!
//! A chain's score is the running mean of query similarity over every node
//! except the anchor (the start node). At each depth all extensions of the
//! frontier are pooled and only the global top `beam_width` survive; chains
//! with no legal extension are emitted as complete, and whatever is left at
//! `max_depth` is emitted as well.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeId, NodeId, ReasoningGraph};
use crate::providers::EmbeddingVector;
use crate::query::Direction;

pub const DEFAULT_BEAM_WIDTH: usize = 3;
pub const DEFAULT_MAX_DEPTH: usize = 4;
pub const DEFAULT_TOP_K_CHAINS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraversalError {
    #[error("beam search needs at least one start node")]
    EmptyStartSet,
    #[error("start node {0} is not in the graph")]
    UnknownStart(NodeId),
    #[error("invalid traversal config: {0}")]
    InvalidConfig(String),
}

/// One hop of a chain. `along` is true when the graph edge points from the
/// earlier chain node to the later one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub edge: EdgeId,
    pub along: bool,
}

/// A simple path in traversal order plus its running-mean score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub nodes: Vec<NodeId>,
    pub steps: Vec<ChainStep>,
    pub score: f64,
}

impl ReasoningChain {
    fn anchor(start: NodeId) -> Self {
        ReasoningChain {
            nodes: vec![start],
            steps: Vec::new(),
            score: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tail(&self) -> NodeId {
        *self.nodes.last().expect("chains are never empty")
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn visited(&self) -> HashSet<NodeId> {
        self.nodes.iter().copied().collect()
    }

    fn extend(&self, next: NodeId, step: ChainStep, sim: f64) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len() + 1);
        nodes.extend_from_slice(&self.nodes);
        nodes.push(next);
        let mut steps = self.steps.clone();
        steps.push(step);
        let score = score_update(self.score, nodes.len(), sim);
        ReasoningChain {
            nodes,
            steps,
            score,
        }
    }
}

/// Running-mean update when appending the `t`-th node (1-based, `t >= 2`):
/// `prev` is the mean over nodes `2..t-1` (0 for the empty mean at `t = 2`).
pub fn score_update(prev: f64, t: usize, sim: f64) -> f64 {
    assert!(t >= 2, "the anchor node is not scored");
    (prev * (t - 2) as f64 + sim) / (t - 1) as f64
}

/// Ranking used by the beam and by dedup: score descending, then the
/// lexicographically smaller node sequence.
fn beam_order(a: &ReasoningChain, b: &ReasoningChain) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.nodes.cmp(&b.nodes))
}

/// Output ordering: score descending, longer first, then node sequence.
fn output_order(a: &ReasoningChain, b: &ReasoningChain) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.nodes.len().cmp(&a.nodes.len()))
        .then_with(|| a.nodes.cmp(&b.nodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraversalConfig {
    pub beam_width: usize,
    pub max_depth: usize,
    pub direction: Direction,
    pub top_k_chains: usize,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        TraversalConfig {
            beam_width: DEFAULT_BEAM_WIDTH,
            max_depth: DEFAULT_MAX_DEPTH,
            direction: Direction::Bidirectional,
            top_k_chains: DEFAULT_TOP_K_CHAINS,
        }
    }
}

impl TraversalConfig {
    pub fn validate(&self) -> Result<(), TraversalError> {
        if self.beam_width == 0 || self.max_depth == 0 || self.top_k_chains == 0 {
            return Err(TraversalError::InvalidConfig(
                "beam_width, max_depth and top_k_chains must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraversalReport {
    /// Frontier chains whose tail node had its neighbourhood enumerated.
    pub nodes_expanded: usize,
    pub chains_emitted: usize,
    pub chains_after_dedup: usize,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::try_from_secs_f64(secs).unwrap_or_default())
    }
}

/// Frontier contents after pruning at one depth, for debugging dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSnapshot {
    pub depth: usize,
    pub chains: Vec<(Vec<NodeId>, f64)>,
}

/// Legal moves out of `chain`'s tail, one per neighbour. When several edges
/// reach the same neighbour the lowest-id edge in graph orientation wins.
fn moves(
    g: &ReasoningGraph,
    chain: &ReasoningChain,
    direction: Direction,
) -> BTreeMap<NodeId, ChainStep> {
    let tail = chain.tail();
    let mut out = BTreeMap::new();
    if matches!(direction, Direction::Forward | Direction::Bidirectional) {
        for &e in g.outgoing(tail) {
            let to = g.edges()[e.index()].to;
            if !chain.contains(to) {
                out.entry(to).or_insert(ChainStep {
                    edge: e,
                    along: true,
                });
            }
        }
    }
    if matches!(direction, Direction::Backward | Direction::Bidirectional) {
        for &e in g.incoming(tail) {
            let from = g.edges()[e.index()].from;
            if !chain.contains(from) {
                out.entry(from).or_insert(ChainStep {
                    edge: e,
                    along: false,
                });
            }
        }
    }
    out
}

/// Cosine of every node embedding with the query embedding, by node index.
pub fn node_similarities(g: &ReasoningGraph, query_emb: &EmbeddingVector) -> Vec<f64> {
    g.nodes()
        .iter()
        .map(|n| query_emb.cosine(&n.embedding))
        .collect()
}

pub fn beam_search(
    g: &ReasoningGraph,
    starts: &[NodeId],
    query_emb: &EmbeddingVector,
    cfg: &TraversalConfig,
) -> Result<(Vec<ReasoningChain>, TraversalReport), TraversalError> {
    beam_search_with_sims(g, starts, &node_similarities(g, query_emb), cfg, None)
}

/// Beam search against precomputed node similarities. When `trace` is
/// given, the pruned frontier of every depth is appended to it.
pub fn beam_search_with_sims(
    g: &ReasoningGraph,
    starts: &[NodeId],
    sims: &[f64],
    cfg: &TraversalConfig,
    mut trace: Option<&mut Vec<FrontierSnapshot>>,
) -> Result<(Vec<ReasoningChain>, TraversalReport), TraversalError> {
    cfg.validate()?;
    if starts.is_empty() {
        return Err(TraversalError::EmptyStartSet);
    }
    if let Some(&bad) = starts.iter().find(|s| s.index() >= g.node_count()) {
        return Err(TraversalError::UnknownStart(bad));
    }
    let started = Instant::now();
    let mut report = TraversalReport::default();

    let mut anchors: Vec<NodeId> = starts.to_vec();
    anchors.sort();
    anchors.dedup();
    let mut frontier: Vec<ReasoningChain> =
        anchors.into_iter().map(ReasoningChain::anchor).collect();
    let mut emitted: Vec<ReasoningChain> = Vec::new();

    for depth in 1..=cfg.max_depth {
        let mut pool = Vec::new();
        for chain in frontier.drain(..) {
            report.nodes_expanded += 1;
            let legal = moves(g, &chain, cfg.direction);
            if legal.is_empty() {
                emitted.push(chain);
                continue;
            }
            for (next, step) in legal {
                pool.push(chain.extend(next, step, sims[next.index()]));
            }
        }
        pool.sort_by(beam_order);
        pool.truncate(cfg.beam_width);
        if let Some(t) = trace.as_deref_mut() {
            t.push(FrontierSnapshot {
                depth,
                chains: pool.iter().map(|c| (c.nodes.clone(), c.score)).collect(),
            });
        }
        frontier = pool;
        if frontier.is_empty() {
            break;
        }
    }
    emitted.append(&mut frontier);
    emitted.retain(|c| c.len() >= 2);
    report.chains_emitted = emitted.len();
    report.wall_time = started.elapsed();
    Ok((emitted, report))
}

fn is_contiguous_subpath(short: &[NodeId], long: &[NodeId]) -> bool {
    short.len() < long.len() && long.windows(short.len()).any(|w| w == short)
}

/// Collapses identical node sequences and drops every chain that is a
/// contiguous sub-path of another chain scoring at least as well. Output is
/// sorted by score, then length (longer first), then node sequence.
pub fn dedup_chains(mut chains: Vec<ReasoningChain>) -> Vec<ReasoningChain> {
    chains.sort_by(output_order);
    let mut seen = HashSet::new();
    chains.retain(|c| seen.insert(c.nodes.clone()));
    let keep: Vec<bool> = chains
        .iter()
        .map(|c| {
            !chains.iter().any(|other| {
                other.score >= c.score && is_contiguous_subpath(&c.nodes, &other.nodes)
            })
        })
        .collect();
    chains
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// The first `k` chains of the dedup ordering.
pub fn select_top_chains(chains: &[ReasoningChain], k: usize) -> Vec<ReasoningChain> {
    chains.iter().take(k).cloned().collect()
}

/// Beam search, dedup and top-k selection in one call.
pub fn traverse(
    g: &ReasoningGraph,
    starts: &[NodeId],
    query_emb: &EmbeddingVector,
    cfg: &TraversalConfig,
    trace: Option<&mut Vec<FrontierSnapshot>>,
) -> Result<(Vec<ReasoningChain>, TraversalReport), TraversalError> {
    let started = Instant::now();
    let sims = node_similarities(g, query_emb);
    let (emitted, mut report) = beam_search_with_sims(g, starts, &sims, cfg, trace)?;
    let deduped = dedup_chains(emitted);
    report.chains_after_dedup = deduped.len();
    let selected = select_top_chains(&deduped, cfg.top_k_chains);
    report.wall_time = started.elapsed();
    Ok((selected, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BuildInfo, ConceptNode, Provenance, ReasoningEdge};
    use std::collections::BTreeSet;

    /// Nodes n0..n{count} with sims supplied separately; edges as (from, to).
    fn graph(count: usize, edges: &[(u32, u32)]) -> ReasoningGraph {
        let nodes = (0..count)
            .map(|i| ConceptNode {
                id: NodeId(i as u32),
                label: format!("N{i}"),
                key: format!("n{i}"),
                merged: BTreeSet::new(),
                embedding: EmbeddingVector::normalized(vec![1.0]).unwrap(),
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(a, b)| ReasoningEdge {
                from: NodeId(a),
                to: NodeId(b),
                relation: "r".into(),
                provenance: vec![Provenance {
                    doc_id: "d".into(),
                    line: 0,
                }],
            })
            .collect();
        ReasoningGraph::from_parts(nodes, edges, BuildInfo::default()).unwrap()
    }

    fn cfg(beam: usize, depth: usize, direction: Direction) -> TraversalConfig {
        TraversalConfig {
            beam_width: beam,
            max_depth: depth,
            direction,
            top_k_chains: 3,
        }
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    fn chain(nodes: &[u32], score: f64) -> ReasoningChain {
        ReasoningChain {
            nodes: ids(nodes),
            steps: vec![],
            score,
        }
    }

    #[test]
    fn score_update_examples() {
        assert_eq!(score_update(0.0, 2, 0.8), 0.8);
        assert!((score_update(0.8, 3, 0.6) - 0.7).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn score_update_rejects_anchor() {
        score_update(0.0, 1, 0.5);
    }

    #[test]
    fn path_graph_forward() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let sims = [0.1, 0.5, 0.3];
        let (out, rep) =
            beam_search_with_sims(&g, &ids(&[0]), &sims, &cfg(3, 4, Direction::Forward), None)
                .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].nodes, ids(&[0, 1, 2]));
        assert!((out[0].score - 0.4).abs() < 1e-12);
        assert!(out[0].steps.iter().all(|s| s.along));
        assert_eq!(rep.nodes_expanded, 3);
    }

    #[test]
    fn path_graph_backward() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let sims = [0.1, 0.5, 0.3];
        let (out, _) =
            beam_search_with_sims(&g, &ids(&[2]), &sims, &cfg(3, 4, Direction::Backward), None)
                .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].nodes, ids(&[2, 1, 0]));
        assert!(out[0].steps.iter().all(|s| !s.along));
        assert!((out[0].score - 0.3).abs() < 1e-12);
    }

    #[test]
    fn depth_cap_emits_frontier() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let sims = [0.0; 4];
        let (out, _) =
            beam_search_with_sims(&g, &ids(&[0]), &sims, &cfg(3, 2, Direction::Forward), None)
                .unwrap();
        assert_eq!(
            out.iter().map(|c| c.nodes.clone()).collect::<Vec<_>>(),
            vec![ids(&[0, 1, 2])]
        );
    }

    #[test]
    fn isolated_start_discarded() {
        let g = graph(2, &[]);
        let (out, rep) = beam_search_with_sims(
            &g,
            &ids(&[0, 1]),
            &[0.0, 0.0],
            &cfg(3, 4, Direction::Forward),
            None,
        )
        .unwrap();
        assert!(out.is_empty());
        assert_eq!(rep.nodes_expanded, 2);
    }

    #[test]
    fn errors() {
        let g = graph(2, &[(0, 1)]);
        assert_eq!(
            beam_search_with_sims(&g, &[], &[0.0, 0.0], &cfg(1, 1, Direction::Forward), None)
                .unwrap_err(),
            TraversalError::EmptyStartSet
        );
        assert!(beam_search_with_sims(
            &g,
            &ids(&[5]),
            &[0.0, 0.0],
            &cfg(1, 1, Direction::Forward),
            None
        )
        .is_err());
        assert!(beam_search_with_sims(
            &g,
            &ids(&[0]),
            &[0.0, 0.0],
            &cfg(0, 1, Direction::Forward),
            None
        )
        .is_err());
    }

    #[test]
    fn cycles_are_not_revisited() {
        let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        let (out, _) = beam_search_with_sims(
            &g,
            &ids(&[0]),
            &[0.0, 1.0, 1.0],
            &cfg(3, 10, Direction::Forward),
            None,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].nodes, ids(&[0, 1, 2]));
    }

    #[test]
    fn beam_prunes_to_best() {
        // 0 -> {1,2,3}; only the best survives with beam 1.
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let sims = [0.0, 0.2, 0.9, 0.5];
        let (out, _) =
            beam_search_with_sims(&g, &ids(&[0]), &sims, &cfg(1, 3, Direction::Forward), None)
                .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].nodes, ids(&[0, 2]));
    }

    #[test]
    fn ties_prefer_smaller_sequence() {
        let g = graph(3, &[(0, 2), (0, 1)]);
        let (out, _) = beam_search_with_sims(
            &g,
            &ids(&[0]),
            &[0.0, 0.5, 0.5],
            &cfg(1, 3, Direction::Forward),
            None,
        )
        .unwrap();
        assert_eq!(out[0].nodes, ids(&[0, 1]));
    }

    #[test]
    fn bidirectional_uses_both_orientations() {
        // 1 -> 0 -> 2: from 0 we can reach 1 (against) and 2 (along).
        let g = graph(3, &[(1, 0), (0, 2)]);
        let (out, _) = beam_search_with_sims(
            &g,
            &ids(&[0]),
            &[0.0, 0.4, 0.6],
            &cfg(3, 3, Direction::Bidirectional),
            None,
        )
        .unwrap();
        let seqs: Vec<_> = out.iter().map(|c| c.nodes.clone()).collect();
        assert!(seqs.contains(&ids(&[0, 1])));
        assert!(seqs.contains(&ids(&[0, 2])));
        for c in &out {
            for (i, s) in c.steps.iter().enumerate() {
                let e = &g.edges()[s.edge.index()];
                let (a, b) = (c.nodes[i], c.nodes[i + 1]);
                assert_eq!((e.from, e.to), if s.along { (a, b) } else { (b, a) });
            }
        }
    }

    #[test]
    fn trace_records_each_depth() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let mut snaps = Vec::new();
        beam_search_with_sims(
            &g,
            &ids(&[0]),
            &[0.0; 3],
            &cfg(2, 4, Direction::Forward),
            Some(&mut snaps),
        )
        .unwrap();
        assert_eq!(
            snaps.iter().map(|s| s.depth).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(snaps[2].chains.is_empty());
    }

    #[test]
    fn dedup_keeps_longer_better_chain() {
        let out = dedup_chains(vec![chain(&[0, 1], 0.6), chain(&[0, 1, 2], 0.7)]);
        assert_eq!(out, vec![chain(&[0, 1, 2], 0.7)]);
    }

    #[test]
    fn dedup_keeps_better_subpath() {
        let out = dedup_chains(vec![chain(&[0, 1], 0.9), chain(&[0, 1, 2], 0.5)]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].nodes, ids(&[0, 1]));
    }

    #[test]
    fn dedup_exact_duplicates() {
        let out = dedup_chains(vec![chain(&[0, 1], 0.4), chain(&[0, 1], 0.4)]);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn dedup_interior_subpath_and_equal_scores() {
        let out = dedup_chains(vec![chain(&[1, 2], 0.5), chain(&[0, 1, 2, 3], 0.5)]);
        assert_eq!(out, vec![chain(&[0, 1, 2, 3], 0.5)]);
        // Non-contiguous is not a sub-path.
        let out = dedup_chains(vec![chain(&[0, 2], 0.1), chain(&[0, 1, 2], 0.5)]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn select_top() {
        let chains: Vec<_> = (0..10)
            .map(|i| chain(&[i, 100 + i], i as f64 / 10.0))
            .collect();
        let sorted = dedup_chains(chains);
        let top = select_top_chains(&sorted, 3);
        assert_eq!(
            top.iter().map(|c| c.score).collect::<Vec<_>>(),
            vec![0.9, 0.8, 0.7]
        );
        assert_eq!(select_top_chains(&sorted[..2], 5).len(), 2);
    }

    #[test]
    fn equal_scores_longer_first() {
        let out = dedup_chains(vec![
            chain(&[5, 6], 0.5),
            chain(&[1, 2, 3], 0.5),
            chain(&[0, 9], 0.5),
        ]);
        assert_eq!(
            out.iter().map(|c| c.nodes.clone()).collect::<Vec<_>>(),
            vec![ids(&[1, 2, 3]), ids(&[0, 9]), ids(&[5, 6])]
        );
    }
}
