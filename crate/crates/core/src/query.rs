//! Query analysis: keyphrase distillation, entry-node matching and
//! traversal-direction classification.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::graph::{NodeId, ReasoningGraph};
use crate::providers::remote::post_json;
use crate::providers::{Embedder, EmbeddingVector, ProviderConfig, ProviderError};

pub const DEFAULT_TAU: f64 = 0.55;
pub const DEFAULT_MAX_START_NODES: usize = 5;
pub const DEFAULT_TOP_M: usize = 5;
const MAX_NGRAM: usize = 3;

const STOPWORDS_ASSET: &str = include_str!("../assets/stopwords_en.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_ASSET
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

/// Lowercased, whitespace-collapsed query text; this is what gets embedded.
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Effect-seeking: follow successors.
    Forward,
    /// Cause-seeking: follow predecessors.
    Backward,
    /// Relational: follow both.
    Bidirectional,
}

impl Direction {
    pub const ALL: [Direction; 3] = [
        Direction::Forward,
        Direction::Backward,
        Direction::Bidirectional,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
            Direction::Bidirectional => 2,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Bidirectional => "bidirectional",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "bidirectional" => Ok(Direction::Bidirectional),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyphrase {
    pub text: String,
    pub score: f64,
}

struct Candidate {
    text: String,
    position: usize,
    tokens: usize,
}

/// Content tokens of the query: lowercased, punctuation trimmed, stopwords
/// removed.
fn content_tokens(query: &str) -> Vec<String> {
    query
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty() && !is_stopword(t))
        .collect()
}

/// Ranks 1- to 3-grams over the content tokens by cosine to the whole
/// query and returns the best `top_m` distinct phrases. Ties prefer the
/// earlier position, then the shorter phrase. A query with no content
/// tokens yields itself as the only keyphrase.
pub fn extract_keyphrases(
    query: &str,
    embedder: &dyn Embedder,
    top_m: usize,
) -> Result<Vec<Keyphrase>, ProviderError> {
    let trimmed = query.trim();
    if trimmed.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let tokens = content_tokens(trimmed);
    if tokens.is_empty() {
        return Ok(vec![Keyphrase {
            text: trimmed.to_string(),
            score: 1.0,
        }]);
    }
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for start in 0..tokens.len() {
        for n in 1..=MAX_NGRAM.min(tokens.len() - start) {
            let text = tokens[start..start + n].join(" ");
            if seen.insert(text.clone()) {
                candidates.push(Candidate {
                    text,
                    position: start,
                    tokens: n,
                });
            }
        }
    }
    let e_q = embedder.embed(&normalize_query(trimmed))?;
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let embs = embedder.embed_batch(&texts)?;
    let mut scored: Vec<(f64, &Candidate)> = embs
        .iter()
        .map(|e| e_q.cosine(e))
        .zip(&candidates)
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then(a.position.cmp(&b.position))
            .then(a.tokens.cmp(&b.tokens))
    });
    Ok(scored
        .into_iter()
        .take(top_m.max(1))
        .map(|(score, c)| Keyphrase {
            text: c.text.clone(),
            score,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartNode {
    pub id: NodeId,
    /// Best cosine to any keyphrase.
    pub score: f64,
}

/// Nodes whose best keyphrase cosine strictly exceeds `tau`, highest
/// scoring first (ties by node id), capped at `max_start_nodes`.
pub fn match_start_nodes(
    g: &ReasoningGraph,
    keyphrases: &[Keyphrase],
    embedder: &dyn Embedder,
    tau: f64,
    max_start_nodes: usize,
) -> Result<Vec<StartNode>, ProviderError> {
    let texts: Vec<&str> = keyphrases.iter().map(|k| k.text.as_str()).collect();
    let key_embs = embedder.embed_batch(&texts)?;
    Ok(select_start_nodes(g, &key_embs, tau, max_start_nodes))
}

pub(crate) fn select_start_nodes(
    g: &ReasoningGraph,
    key_embs: &[EmbeddingVector],
    tau: f64,
    max_start_nodes: usize,
) -> Vec<StartNode> {
    let mut hits: Vec<StartNode> = g
        .nodes()
        .iter()
        .filter_map(|n| {
            let best = key_embs
                .iter()
                .map(|k| k.cosine(&n.embedding))
                .fold(f64::NEG_INFINITY, f64::max);
            (best > tau).then_some(StartNode {
                id: n.id,
                score: best,
            })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    hits.truncate(max_start_nodes);
    hits
}

/// Pluggable direction classifier.
pub trait DirectionClassifier: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, query: &str) -> Result<Direction, ProviderError>;
}

const BACKWARD_CUES: &[&str] = &[
    "why",
    "what caused",
    "reason for",
    "due to what",
    "origin of",
];
const FORWARD_CUES: &[&str] = &[
    "what happens if",
    "effects of",
    "impact of",
    "consequences",
    "lead to what",
];

/// Keyword baseline. Cues match as whole-word sequences on the
/// lowercased, punctuation-free query. Backward cues win over Forward
/// ones; everything else is Bidirectional.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleClassifier;

impl RuleClassifier {
    pub fn predict(&self, query: &str) -> Direction {
        let words: Vec<String> = query
            .to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let has = |cue: &str| {
            let cue: Vec<&str> = cue.split(' ').collect();
            words
                .windows(cue.len())
                .any(|w| w.iter().zip(&cue).all(|(a, b)| a == b))
        };
        if BACKWARD_CUES.iter().any(|c| has(c)) {
            Direction::Backward
        } else if FORWARD_CUES.iter().any(|c| has(c)) {
            Direction::Forward
        } else {
            // Relational cues ("related to", "link between") and cue-free
            // queries both land here.
            Direction::Bidirectional
        }
    }
}

impl DirectionClassifier for RuleClassifier {
    fn name(&self) -> &str {
        "rules"
    }

    fn classify(&self, query: &str) -> Result<Direction, ProviderError> {
        Ok(self.predict(query))
    }
}

/// Adapter for a remote classifier endpoint. Sends `{"text": query}` and
/// accepts either `{"probabilities": {"forward": p, ...}}` or a list of
/// `{"label", "score"}` objects; the arg-max label wins.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    config: ProviderConfig,
}

impl RemoteClassifier {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(RemoteClassifier { config })
    }
}

fn parse_probabilities(resp: &Value) -> Option<Vec<(Direction, f64)>> {
    let body = resp.get("probabilities").unwrap_or(resp);
    let mut out = Vec::new();
    if let Some(map) = body.as_object() {
        for (k, v) in map {
            out.push((k.parse().ok()?, v.as_f64()?));
        }
    } else if let Some(list) = body.as_array() {
        for item in list {
            let label = item.get("label")?.as_str()?.parse().ok()?;
            out.push((label, item.get("score")?.as_f64()?));
        }
    }
    (!out.is_empty()).then_some(out)
}

impl DirectionClassifier for RemoteClassifier {
    fn name(&self) -> &str {
        "remote"
    }

    fn classify(&self, query: &str) -> Result<Direction, ProviderError> {
        let resp = post_json(&self.config, &json!({"text": query}))?;
        let probs = parse_probabilities(&resp).ok_or_else(|| ProviderError::Unavailable {
            attempts: 1,
            message: "classifier response has no class probabilities".into(),
        })?;
        probs
            .into_iter()
            .max_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .map(|(d, _)| d)
            .ok_or(ProviderError::ResponseEmpty)
    }
}

/// Classifies with `classifier`, falling back to the rule baseline when it
/// fails.
pub fn classify_direction(query: &str, classifier: &dyn DirectionClassifier) -> Direction {
    classifier
        .classify(query)
        .unwrap_or_else(|_| RuleClassifier.predict(query))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub text: String,
    pub label: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Direction,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`, indexed by [`Direction::index`].
    pub confusion: [[usize; 3]; 3],
}

/// Accuracy, per-class precision/recall/F1 and the confusion matrix.
/// Undefined ratios (no predictions or no support) are reported as 0.
pub fn evaluate_classifier(
    classifier: &dyn DirectionClassifier,
    labeled: &[LabeledQuery],
) -> ClassifierReport {
    let mut confusion = [[0usize; 3]; 3];
    for item in labeled {
        let pred = classify_direction(&item.text, classifier);
        confusion[item.label.index()][pred.index()] += 1;
    }
    let total = labeled.len();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class = Direction::ALL
        .iter()
        .map(|&class| {
            let i = class.index();
            let tp = confusion[i][i];
            let predicted: usize = (0..3).map(|g| confusion[g][i]).sum();
            let support: usize = confusion[i].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    ClassifierReport {
        total,
        correct,
        accuracy: ratio(correct, total),
        per_class,
        confusion,
    }
}

/// Parses the JSON-lines labeled fixture (`{"text": ..., "label": ...}`).
pub fn parse_labeled_queries(text: &str) -> Result<Vec<LabeledQuery>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryAnalysis {
    pub query: String,
    #[serde(skip)]
    pub query_embedding: Option<EmbeddingVector>,
    pub keyphrases: Vec<Keyphrase>,
    pub start_nodes: Vec<StartNode>,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisParams {
    pub top_m: usize,
    pub tau: f64,
    pub max_start_nodes: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            top_m: DEFAULT_TOP_M,
            tau: DEFAULT_TAU,
            max_start_nodes: DEFAULT_MAX_START_NODES,
        }
    }
}

/// Runs keyphrase extraction, start-node matching and direction
/// classification for one query.
pub fn analyze_query(
    query: &str,
    g: &ReasoningGraph,
    embedder: &dyn Embedder,
    classifier: &dyn DirectionClassifier,
    params: AnalysisParams,
) -> Result<QueryAnalysis, ProviderError> {
    let keyphrases = extract_keyphrases(query, embedder, params.top_m)?;
    let start_nodes =
        match_start_nodes(g, &keyphrases, embedder, params.tau, params.max_start_nodes)?;
    let query_embedding = embedder.embed(&normalize_query(query))?;
    Ok(QueryAnalysis {
        query: query.to_string(),
        query_embedding: Some(query_embedding),
        keyphrases,
        start_nodes,
        direction: classify_direction(query, classifier),
    })
}
