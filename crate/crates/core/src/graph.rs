//! Query-local reasoning graph: canonicalized concept nodes joined by the
//! extracted relations.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::extraction::Triple;
use crate::providers::{Embedder, EmbeddingVector, ProviderError};

pub const GRAPH_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.90;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("embedding failed: {0}")]
    Embedding(#[from] ProviderError),
    #[error("graph file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported graph format version {found} (expected {expected})")]
    FormatVersionMismatch { found: String, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Lowercase, NFC, single-spaced, with trailing `.,;:` removed.
pub fn canonical_key(label: &str) -> String {
    let nfc: String = label.nfc().collect::<String>().to_lowercase();
    let collapsed = nfc.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':') || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: NodeId,
    /// First-seen surface form.
    pub label: String,
    pub key: String,
    /// Other surface forms folded into this node.
    #[serde(default)]
    pub merged: BTreeSet<String>,
    pub embedding: EmbeddingVector,
}

/// Document-level provenance of one extracted line; serialized as
/// `["doc_id", line]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, usize)", into = "(String, usize)")]
pub struct Provenance {
    pub doc_id: String,
    pub line: usize,
}

impl From<(String, usize)> for Provenance {
    fn from((doc_id, line): (String, usize)) -> Self {
        Provenance { doc_id, line }
    }
}

impl From<Provenance> for (String, usize) {
    fn from(p: Provenance) -> Self {
        (p.doc_id, p.line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub relation: String,
    pub provenance: Vec<Provenance>,
}

/// Bookkeeping from [`build_graph`] that is not recoverable from the
/// nodes and edges alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub triples: usize,
    pub self_loops_dropped: usize,
    pub duplicate_edges_merged: usize,
    /// Union-find classes with more than one member after the similarity pass.
    pub merge_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningGraph {
    nodes: Vec<ConceptNode>,
    edges: Vec<ReasoningEdge>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    build: BuildInfo,
}

impl ReasoningGraph {
    /// Assembles a graph from parts, validating ids and rebuilding the
    /// adjacency indexes.
    pub fn from_parts(
        nodes: Vec<ConceptNode>,
        edges: Vec<ReasoningEdge>,
        build: BuildInfo,
    ) -> Result<Self, String> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(format!("node at position {i} has id {}", n.id.0));
            }
        }
        if let Some(first) = nodes.first() {
            let dim = first.embedding.dim();
            if nodes.iter().any(|n| n.embedding.dim() != dim) {
                return Err("nodes have mixed embedding dimensions".into());
            }
        }
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.from.index() >= nodes.len() || e.to.index() >= nodes.len() {
                return Err(format!("edge {i} references a missing node"));
            }
            if e.provenance.is_empty() {
                return Err(format!("edge {i} has no provenance"));
            }
            outgoing[e.from.index()].push(EdgeId(i as u32));
            incoming[e.to.index()].push(EdgeId(i as u32));
        }
        Ok(ReasoningGraph {
            nodes,
            edges,
            outgoing,
            incoming,
            build,
        })
    }

    pub fn empty() -> Self {
        ReasoningGraph::from_parts(Vec::new(), Vec::new(), BuildInfo::default())
            .expect("empty graph is valid")
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ReasoningEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&ConceptNode> {
        self.nodes.get(id.index())
    }

    pub fn edge(&self, id: EdgeId) -> Option<&ReasoningEdge> {
        self.edges.get(id.index())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges leaving `id`, in creation order.
    pub fn outgoing(&self, id: NodeId) -> &[EdgeId] {
        self.outgoing.get(id.index()).map_or(&[], Vec::as_slice)
    }

    /// Edges entering `id`, in creation order.
    pub fn incoming(&self, id: NodeId) -> &[EdgeId] {
        self.incoming.get(id.index()).map_or(&[], Vec::as_slice)
    }

    pub fn build_info(&self) -> BuildInfo {
        self.build
    }

    pub fn find_by_key(&self, key: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.key == key).map(|n| n.id)
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

/// Disjoint sets over dense indices; roots are always the smallest index
/// in their class.
#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

struct ProtoNode {
    label: String,
    key: String,
    surface_forms: BTreeSet<String>,
}

/// Aggregates triples into a graph.
///
/// Nodes are first unified by [`canonical_key`]; a second pass unions any
/// pair whose embedding cosine is at least `merge_threshold`, keeping the
/// earliest-created node of each class as representative. Edges are then
/// rewritten onto representatives; self-loops are dropped and repeated
/// `(from, relation, to)` edges (relation compared case-insensitively)
/// merge their provenance.
pub fn build_graph(
    triples: &[Triple],
    embedder: &dyn Embedder,
    merge_threshold: f64,
) -> Result<ReasoningGraph, GraphError> {
    let mut protos: Vec<ProtoNode> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut endpoints = Vec::with_capacity(triples.len());
    let mut intern = |label: &str| -> usize {
        let label = label.trim();
        let key = canonical_key(label);
        let idx = *by_key.entry(key.clone()).or_insert_with(|| {
            protos.push(ProtoNode {
                label: label.to_string(),
                key,
                surface_forms: BTreeSet::new(),
            });
            protos.len() - 1
        });
        protos[idx].surface_forms.insert(label.to_string());
        idx
    };
    for t in triples {
        let from = intern(&t.cause);
        let to = intern(&t.effect);
        endpoints.push((from, to));
    }

    let labels: Vec<&str> = protos.iter().map(|p| p.label.as_str()).collect();
    let embeddings = embedder.embed_batch(&labels)?;

    let mut uf = UnionFind::new(protos.len());
    for i in 0..protos.len() {
        for j in (i + 1)..protos.len() {
            if embeddings[i].cosine(&embeddings[j]) >= merge_threshold {
                uf.union(i, j);
            }
        }
    }

    // Representatives keep creation order, so dense ids follow first appearance.
    let mut new_id = vec![usize::MAX; protos.len()];
    let mut class_size = vec![0usize; protos.len()];
    let mut nodes: Vec<ConceptNode> = Vec::new();
    for i in 0..protos.len() {
        let root = uf.find(i);
        class_size[root] += 1;
        if root == i {
            new_id[i] = nodes.len();
            nodes.push(ConceptNode {
                id: NodeId(nodes.len() as u32),
                label: protos[i].label.clone(),
                key: protos[i].key.clone(),
                merged: BTreeSet::new(),
                embedding: embeddings[i].clone(),
            });
        }
    }
    for i in 0..protos.len() {
        let rep = new_id[uf.find(i)];
        let node = &mut nodes[rep];
        for form in &protos[i].surface_forms {
            if *form != node.label {
                node.merged.insert(form.clone());
            }
        }
    }

    let mut info = BuildInfo {
        triples: triples.len(),
        merge_classes: class_size.iter().filter(|&&s| s > 1).count(),
        ..BuildInfo::default()
    };
    let mut edges: Vec<ReasoningEdge> = Vec::new();
    let mut edge_index: HashMap<(usize, String, usize), usize> = HashMap::new();
    for (t, &(from, to)) in triples.iter().zip(&endpoints) {
        let (from, to) = (new_id[uf.find(from)], new_id[uf.find(to)]);
        if from == to {
            info.self_loops_dropped += 1;
            continue;
        }
        let relation = t.relation.trim();
        let prov = Provenance {
            doc_id: t.doc_id.clone(),
            line: t.line_index,
        };
        match edge_index.entry((from, relation.to_lowercase(), to)) {
            std::collections::hash_map::Entry::Occupied(e) => {
                edges[*e.get()].provenance.push(prov);
                info.duplicate_edges_merged += 1;
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(edges.len());
                edges.push(ReasoningEdge {
                    from: NodeId(from as u32),
                    to: NodeId(to as u32),
                    relation: relation.to_string(),
                    provenance: vec![prov],
                });
            }
        }
    }

    Ok(ReasoningGraph::from_parts(nodes, edges, info).expect("built graph is consistent"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub self_loops_dropped: usize,
    pub duplicate_edges_merged: usize,
    pub merge_classes: usize,
    /// |E| / |V|, or 0 for an empty graph.
    pub density: f64,
}

pub fn graph_stats(g: &ReasoningGraph) -> GraphStats {
    let (v, e) = (g.node_count(), g.edge_count());
    GraphStats {
        node_count: v,
        edge_count: e,
        self_loops_dropped: g.build.self_loops_dropped,
        duplicate_edges_merged: g.build.duplicate_edges_merged,
        merge_classes: g.build.merge_classes,
        density: if v == 0 { 0.0 } else { e as f64 / v as f64 },
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    nodes: Vec<ConceptNode>,
    edges: Vec<ReasoningEdge>,
    #[serde(default)]
    build: BuildInfo,
}

pub fn graph_to_json(g: &ReasoningGraph) -> String {
    let file = GraphFile {
        version: GRAPH_FORMAT_VERSION,
        nodes: g.nodes.clone(),
        edges: g.edges.clone(),
        build: g.build,
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}

pub fn graph_from_json(text: &str) -> Result<ReasoningGraph, GraphError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(io::Error::from)?;
    match value.get("version") {
        Some(v) if v.as_u64() == Some(GRAPH_FORMAT_VERSION as u64) => {}
        other => {
            return Err(GraphError::FormatVersionMismatch {
                found: other.map_or_else(|| "missing".to_string(), |v| v.to_string()),
                expected: GRAPH_FORMAT_VERSION,
            })
        }
    }
    let file: GraphFile = serde_json::from_value(value).map_err(io::Error::from)?;
    for n in &file.nodes {
        if (n.embedding.norm() - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("node {} embedding is not unit-norm", n.id.0)).into());
        }
    }
    ReasoningGraph::from_parts(file.nodes, file.edges, file.build).map_err(|m| invalid(m).into())
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn save_graph(g: &ReasoningGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    fs::write(path, graph_to_json(g))?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ReasoningGraph, GraphError> {
    let text = fs::read_to_string(path)?;
    graph_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockEmbedder, TableEmbedder};

    fn t(c: &str, r: &str, e: &str, doc: &str, line: usize) -> Triple {
        Triple {
            cause: c.into(),
            relation: r.into(),
            effect: e.into(),
            doc_id: doc.into(),
            line_index: line,
        }
    }

    fn flood_triples() -> Vec<Triple> {
        vec![
            t(
                "sea levels rising significantly",
                "caused",
                "coastal regions to experience flooding",
                "port",
                0,
            ),
            t(
                "sea levels rising significantly",
                "caused",
                "Port City to be affected",
                "port",
                1,
            ),
            t(
                "storm period",
                "was when",
                "sea levels rose significantly",
                "port",
                2,
            ),
            t("Port City", "was flooded during", "storm period", "port", 3),
        ]
    }

    #[test]
    fn canonical_key_rules() {
        assert_eq!(
            canonical_key("  Interest Rate Hike. "),
            "interest rate hike"
        );
        assert_eq!(canonical_key("FT1D"), "ft1d");
        assert_eq!(canonical_key("sea   levels\trising"), "sea levels rising");
        assert_eq!(canonical_key("a;:,."), "a");
        // NFC: decomposed e + combining acute equals precomposed.
        assert_eq!(canonical_key("Cafe\u{301}"), canonical_key("Café"));
    }

    #[test]
    fn single_triple() {
        let g = build_graph(
            &[t("A", "caused", "B", "d", 0)],
            &MockEmbedder::default(),
            0.9,
        )
        .unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert_eq!(g.outgoing(NodeId(0)), &[EdgeId(0)]);
        assert_eq!(g.incoming(NodeId(1)), &[EdgeId(0)]);
    }

    #[test]
    fn key_unification_merges_edges() {
        let triples = [
            t("A", "caused", "B", "d1", 0),
            t("a.", "Caused", "B", "d2", 4),
        ];
        let g = build_graph(&triples, &MockEmbedder::default(), 1.0).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert_eq!(g.edges()[0].relation, "caused");
        assert_eq!(
            g.edges()[0].provenance,
            vec![
                Provenance {
                    doc_id: "d1".into(),
                    line: 0
                },
                Provenance {
                    doc_id: "d2".into(),
                    line: 4
                }
            ]
        );
        assert_eq!(g.nodes()[0].label, "A");
        assert!(g.nodes()[0].merged.contains("a."));
        assert_eq!(g.build_info().duplicate_edges_merged, 1);
    }

    #[test]
    fn worked_example_has_six_nodes_four_edges() {
        let g = build_graph(
            &flood_triples(),
            &MockEmbedder::default(),
            DEFAULT_MERGE_THRESHOLD,
        )
        .unwrap();
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(g.stats().merge_classes, 0);
    }

    #[test]
    fn similarity_merge_uses_earliest_representative() {
        let mut emb = TableEmbedder::new(2);
        emb.insert("rate hike", vec![1.0, 0.0]);
        emb.insert("interest rate increase", vec![0.99, 0.141]);
        emb.insert("inflation", vec![0.0, 1.0]);
        let triples = [
            t("inflation", "caused", "rate hike", "d", 0),
            t("inflation", "caused", "interest rate increase", "d", 1),
            t("rate hike", "led to", "interest rate increase", "d", 2),
        ];
        let g = build_graph(&triples, &emb, 0.95).unwrap();
        assert_eq!(g.node_count(), 2);
        let rep = &g.nodes()[1];
        assert_eq!(rep.label, "rate hike");
        assert!(rep.merged.contains("interest rate increase"));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].provenance.len(), 2);
        let s = g.stats();
        assert_eq!(
            (
                s.self_loops_dropped,
                s.duplicate_edges_merged,
                s.merge_classes
            ),
            (1, 1, 1)
        );
        assert_eq!(
            s.edge_count + s.self_loops_dropped + s.duplicate_edges_merged,
            triples.len()
        );
    }

    #[test]
    fn stats_empty_and_small() {
        let s = graph_stats(&ReasoningGraph::empty());
        assert_eq!((s.node_count, s.edge_count, s.density), (0, 0, 0.0));
        let g = build_graph(&[t("A", "r", "B", "d", 0)], &MockEmbedder::default(), 0.9).unwrap();
        assert_eq!(g.stats().density, 0.5);
    }

    #[test]
    fn embedding_failure_aborts() {
        let emb = TableEmbedder::new(2);
        let err = build_graph(&[t("A", "r", "B", "d", 0)], &emb, 0.9).unwrap_err();
        assert!(matches!(err, GraphError::Embedding(_)));
    }

    #[test]
    fn round_trip() {
        let g = build_graph(&flood_triples(), &MockEmbedder::default(), 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn json_shape() {
        let g = build_graph(&[t("A", "r", "B", "d", 3)], &MockEmbedder::new(4, 0), 0.9).unwrap();
        let v: serde_json::Value = serde_json::from_str(&graph_to_json(&g)).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["nodes"][0]["label"], "A");
        assert_eq!(v["nodes"][0]["key"], "a");
        assert_eq!(v["nodes"][0]["embedding"].as_array().unwrap().len(), 4);
        assert_eq!(v["edges"][0]["provenance"], serde_json::json!([["d", 3]]));
        assert_eq!(v["edges"][0]["from"], 0);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let g = build_graph(&flood_triples(), &MockEmbedder::default(), 0.9).unwrap();
        let json = graph_to_json(&g);
        for cut in [0, 1, 10, json.len() / 2, json.len() - 1] {
            let err = graph_from_json(&json[..cut]).unwrap_err();
            assert!(matches!(
                err,
                GraphError::Io(_) | GraphError::FormatVersionMismatch { .. }
            ));
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let err = graph_from_json(r#"{"version":2,"nodes":[],"edges":[]}"#).unwrap_err();
        assert!(matches!(err, GraphError::FormatVersionMismatch { .. }));
        let err = graph_from_json(r#"{"nodes":[],"edges":[]}"#).unwrap_err();
        assert!(matches!(err, GraphError::FormatVersionMismatch { .. }));
    }

    #[test]
    fn dangling_edge_rejected() {
        let text = r#"{"version":1,"nodes":[],"edges":[{"from":0,"to":1,"relation":"r","provenance":[["d",0]]}]}"#;
        assert!(matches!(graph_from_json(text), Err(GraphError::Io(_))));
    }
}
