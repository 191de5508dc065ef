//! Deterministic offline providers.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Embedder, EmbeddingVector, GenerationRequest, Generator, ProviderError};

/// Fixture key for a prompt: lowercase hex of the 64-bit FNV-1a hash of
/// the user text (16 hex chars).
pub fn prompt_hash(user_text: &str) -> String {
    format!("{:016x}", fnv1a(user_text.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Lowercased whitespace tokens with surrounding punctuation trimmed.
pub(crate) fn mock_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Bag-of-tokens embedder: each token maps through a seeded hash to a
/// pseudo-random unit vector; a text embeds as the re-normalized mean of
/// its token vectors. Texts with the same token multiset embed identically.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEmbedder { dim, seed }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let mut h = FnvHasher::default();
        h.write(&self.seed.to_le_bytes());
        h.write(token.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let raw: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, r) in acc.iter_mut().zip(raw) {
            *a += r / norm;
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(super::DEFAULT_EMBEDDING_DIM, 0)
    }
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut tokens = mock_tokens(trimmed);
        if tokens.is_empty() {
            tokens.push(trimmed.to_lowercase());
        }
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            self.token_vector(t, &mut acc);
        }
        // Summation order is fixed, so the mean is bitwise reproducible.
        EmbeddingVector::normalized(acc).ok_or(ProviderError::ResponseEmpty)
    }
}

/// Embedder backed by an explicit text -> vector table. Lookups are exact
/// on the trimmed text; unknown texts fail with `ProviderUnavailable`.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl TableEmbedder {
    pub fn new(dim: usize) -> Self {
        TableEmbedder {
            dim,
            table: HashMap::new(),
        }
    }

    /// Inserts `values` (normalized on the way in).
    pub fn insert(&mut self, text: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.dim, "vector has wrong dimension");
        let v = EmbeddingVector::normalized(values).expect("non-zero vector");
        self.table.insert(text.trim().to_string(), v);
    }
}

impl Embedder for TableEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let key = text.trim();
        if key.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.table
            .get(key)
            .cloned()
            .ok_or_else(|| ProviderError::Unavailable {
                attempts: 1,
                message: format!("no table entry for {key:?}"),
            })
    }
}

/// Fixture-scripted generator. Responses are keyed by [`prompt_hash`] of
/// the request's user text; unscripted prompts fail with `ResponseEmpty`.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    scripts: BTreeMap<String, String>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(scripts: BTreeMap<String, String>) -> Self {
        let scripts = scripts
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        MockGenerator { scripts }
    }

    /// Loads a JSON object mapping prompt hashes to responses.
    pub fn from_fixture_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
        Ok(Self::from_map(map))
    }

    /// Scripts `response` for the exact prompt text.
    pub fn script(&mut self, prompt: &str, response: impl Into<String>) {
        self.scripts.insert(prompt_hash(prompt), response.into());
    }

    pub fn scripts(&self) -> &BTreeMap<String, String> {
        &self.scripts
    }

    pub fn len(&self) -> usize {
        self.scripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scripts.is_empty()
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        req.validate()?;
        self.scripts
            .get(&prompt_hash(&req.user_text))
            .cloned()
            .ok_or(ProviderError::ResponseEmpty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(prompt_hash(""), "cbf29ce484222325");
        assert_eq!(prompt_hash("a"), "af63dc4c8601ec8c");
        assert_eq!(prompt_hash("foobar"), "85944171f73967e8");
    }

    #[test]
    fn embed_is_deterministic() {
        let e = MockEmbedder::default();
        let a = e.embed("x").unwrap();
        let b = e.embed("x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 384);
    }

    #[test]
    fn embed_is_unit_norm() {
        let e = MockEmbedder::default();
        let v = e.embed("interest rate hike").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn self_similarity() {
        let e = MockEmbedder::default();
        let v = e.embed("bitcoin").unwrap();
        assert!((v.cosine(&v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn token_multiset_equivalence() {
        let e = MockEmbedder::default();
        assert_eq!(
            e.embed("rate interest").unwrap(),
            e.embed("Interest  rate.").unwrap()
        );
        assert_ne!(e.embed("rate").unwrap(), e.embed("rates").unwrap());
    }

    #[test]
    fn seed_changes_vectors() {
        let a = MockEmbedder::new(16, 1).embed("x").unwrap();
        let b = MockEmbedder::new(16, 2).embed("x").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn embed_empty_is_error() {
        let e = MockEmbedder::default();
        assert!(matches!(e.embed("   "), Err(ProviderError::EmptyInput)));
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let e = MockEmbedder::new(8, 0);
        let v = e.embed("?!").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_matches_pointwise() {
        let e = MockEmbedder::default();
        let batch = e.embed_batch(&["a", "b"]).unwrap();
        assert_eq!(batch, vec![e.embed("a").unwrap(), e.embed("b").unwrap()]);
        assert!(e.embed_batch(&[]).unwrap().is_empty());
        let same = e.embed_batch(&["a", "a"]).unwrap();
        assert_eq!(same[0], same[1]);
        assert!(e.embed_batch(&["a", ""]).is_err());
    }

    #[test]
    fn generator_fixture_lookup() {
        let mut map = BTreeMap::new();
        map.insert(prompt_hash("p1"), "A | caused | B".to_string());
        let g = MockGenerator::from_map(map);
        let req = GenerationRequest::new("", "p1", 0.0, 16).unwrap();
        assert_eq!(g.generate(&req).unwrap(), "A | caused | B");
        let other = GenerationRequest::new("", "p2", 0.0, 16).unwrap();
        assert!(matches!(
            g.generate(&other),
            Err(ProviderError::ResponseEmpty)
        ));
    }

    #[test]
    fn generator_fixture_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.json");
        let body = format!("{{\"{}\": \"hello\"}}", prompt_hash("hi"));
        std::fs::write(&path, body).unwrap();
        let g = MockGenerator::from_fixture_file(&path).unwrap();
        let req = GenerationRequest::new("", "hi", 0.0, 16).unwrap();
        assert_eq!(g.generate(&req).unwrap(), "hello");
    }

    #[test]
    fn table_embedder_lookup() {
        let mut t = TableEmbedder::new(2);
        t.insert("a", vec![2.0, 0.0]);
        assert_eq!(t.embed(" a ").unwrap().as_slice(), &[1.0, 0.0]);
        assert!(t.embed("b").is_err());
    }
}
