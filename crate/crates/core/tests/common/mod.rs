//! Synthetic graphs and an exhaustive path oracle shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use chaingraph_core::graph::{
    BuildInfo, ConceptNode, NodeId, Provenance, ReasoningEdge, ReasoningGraph,
};
use chaingraph_core::providers::EmbeddingVector;
use chaingraph_core::query::Direction;
use rand::Rng;

/// Graph over `n` nodes labelled `v0..` with the given directed edges.
pub fn graph(n: usize, edges: &[(usize, usize)]) -> ReasoningGraph {
    let nodes = (0..n)
        .map(|i| ConceptNode {
            id: NodeId(i as u32),
            label: format!("v{i}"),
            key: format!("v{i}"),
            merged: BTreeSet::new(),
            embedding: EmbeddingVector::from_unit(vec![1.0]),
        })
        .collect();
    let edges = edges
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| ReasoningEdge {
            from: NodeId(a as u32),
            to: NodeId(b as u32),
            relation: "r".into(),
            provenance: vec![Provenance {
                doc_id: "d".into(),
                line: i,
            }],
        })
        .collect();
    ReasoningGraph::from_parts(nodes, edges, BuildInfo::default()).unwrap()
}

/// Random DAG: edges only run from lower to higher index, at most
/// `max_out` per node.
pub fn random_dag(rng: &mut impl Rng, n: usize, max_out: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n.saturating_sub(1) {
        let k = rng.random_range(0..=max_out.min(n - u - 1));
        let mut targets: Vec<usize> = ((u + 1)..n).collect();
        for _ in 0..k {
            let t = targets.swap_remove(rng.random_range(0..targets.len()));
            edges.push((u, t));
        }
    }
    edges
}

/// Complete `b`-ary tree of depth `d`, edges pointing away from node 0.
pub fn fan_out_tree(b: usize, d: usize) -> (usize, Vec<(usize, usize)>) {
    let mut edges = Vec::new();
    let mut level = vec![0usize];
    let mut next_id = 1;
    for _ in 0..d {
        let mut next = Vec::new();
        for &u in &level {
            for _ in 0..b {
                edges.push((u, next_id));
                next.push(next_id);
                next_id += 1;
            }
        }
        level = next;
    }
    (next_id, edges)
}

pub fn neighbours(g: &ReasoningGraph, v: NodeId, dir: Direction) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    if matches!(dir, Direction::Forward | Direction::Bidirectional) {
        out.extend(g.outgoing(v).iter().map(|e| g.edges()[e.index()].to));
    }
    if matches!(dir, Direction::Backward | Direction::Bidirectional) {
        out.extend(g.incoming(v).iter().map(|e| g.edges()[e.index()].from));
    }
    out
}

/// Mean of `sims` over every node after the anchor.
pub fn batch_score(nodes: &[NodeId], sims: &[f64]) -> f64 {
    let tail = &nodes[1..];
    tail.iter().map(|n| sims[n.index()]).sum::<f64>() / tail.len() as f64
}

/// Every simple path the beam could emit with unlimited width: paths of
/// at least one hop that either dead-end or reach `max_depth` hops.
/// Also returns the number of path prefixes expanded.
pub struct DfsResult {
    pub paths: BTreeSet<Vec<NodeId>>,
    pub expanded: usize,
}

pub fn dfs_paths(
    g: &ReasoningGraph,
    starts: &[NodeId],
    dir: Direction,
    max_depth: usize,
) -> DfsResult {
    fn walk(
        g: &ReasoningGraph,
        path: &mut Vec<NodeId>,
        dir: Direction,
        max_depth: usize,
        out: &mut DfsResult,
    ) {
        out.expanded += 1;
        let tail = *path.last().unwrap();
        let next: Vec<NodeId> = neighbours(g, tail, dir)
            .into_iter()
            .filter(|n| !path.contains(n))
            .collect();
        if next.is_empty() || path.len() > max_depth {
            if path.len() >= 2 {
                out.paths.insert(path.clone());
            }
            return;
        }
        for n in next {
            path.push(n);
            walk(g, path, dir, max_depth, out);
            path.pop();
        }
    }
    let mut out = DfsResult {
        paths: BTreeSet::new(),
        expanded: 0,
    };
    let starts: BTreeSet<NodeId> = starts.iter().copied().collect();
    for s in starts {
        walk(g, &mut vec![s], dir, max_depth, &mut out);
    }
    out
}
