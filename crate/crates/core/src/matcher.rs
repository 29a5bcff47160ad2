//! Attribute similarity: text embeddings, cosine scoring and top-k.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::EntitySpec;
use crate::scene_graph::ObjectNode;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("spec has no attribute text and no memory cue")]
    Underspecified,
    #[error("no candidate nodes to score")]
    NoNodes,
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

/// Unit-norm vector, or the zero vector flagged `empty` for blank text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    empty: bool,
}

impl Embedding {
    pub fn from_raw(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            values.iter_mut().for_each(|v| *v = 0.0);
            return Embedding { values, empty: true };
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Embedding { values, empty: false }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `None` when either side is empty.
    pub fn cosine(&self, other: &Embedding) -> Option<f64> {
        if self.empty || other.empty {
            return None;
        }
        Some(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

/// Lowercased alphanumeric tokens joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    tokens(text).join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, MatchError>;
}

/// Bag of hashed tokens: FNV-1a bucket per token, counts, L2 normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, MatchError> {
        let mut counts = vec![0.0; self.dim];
        for t in tokens(text) {
            counts[self.bucket(&t)] += 1.0;
        }
        Ok(Embedding::from_raw(counts))
    }
}

/// Memoizes another embedder by normalized text.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<String, Embedding>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.read().is_empty()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<Embedding, MatchError> {
        let key = normalize_text(text);
        if let Some(hit) = self.cache.read().get(&key) {
            return Ok(hit.clone());
        }
        let value = self.inner.embed(&key)?;
        self.cache.write().insert(key, value.clone());
        Ok(value)
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn embed(&self, text: &str) -> Result<Embedding, MatchError> {
        (**self).embed(text)
    }
}

/// Request/response transport for a remote embedding model:
/// `{"texts": [...]}` in, `{"vectors": [[...]]}` out.
pub trait EmbeddingBackend: Send + Sync {
    fn request(&self, request_json: &str) -> Result<String, String>;
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Wraps a remote model; the first response fixes the session dimension.
pub struct ExternalEmbedder<B> {
    backend: B,
    dim: RwLock<Option<usize>>,
}

impl<B: EmbeddingBackend> ExternalEmbedder<B> {
    pub fn new(backend: B) -> Self {
        ExternalEmbedder {
            backend,
            dim: RwLock::new(None),
        }
    }
}

impl<B: EmbeddingBackend> Embedder for ExternalEmbedder<B> {
    fn embed(&self, text: &str) -> Result<Embedding, MatchError> {
        let request = serde_json::json!({ "texts": [text] }).to_string();
        let body = self.backend.request(&request).map_err(MatchError::Backend)?;
        let resp: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| MatchError::Backend(e.to_string()))?;
        let v = resp
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| MatchError::Backend("empty vectors".into()))?;
        let mut dim = self.dim.write();
        match *dim {
            Some(expected) if expected != v.len() => {
                return Err(MatchError::DimensionMismatch {
                    expected,
                    got: v.len(),
                })
            }
            None => *dim = Some(v.len()),
            _ => {}
        }
        Ok(Embedding::from_raw(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub node_id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoringOptions {
    /// Append the node's scene context to its text.
    pub include_scene_context: bool,
}

pub fn node_text(node: &ObjectNode, opts: ScoringOptions) -> String {
    let mut text = node.attribute_text();
    if opts.include_scene_context && !node.scene_context.is_empty() {
        text.push(' ');
        text.push_str(&node.scene_context);
    }
    text
}

/// Cosine of spec text against each node, ranked by [`rank_order`].
pub fn score_candidates<'a, I>(
    embedder: &dyn Embedder,
    spec: &EntitySpec,
    nodes: I,
    opts: ScoringOptions,
) -> Result<Vec<ScoredCandidate>, MatchError>
where
    I: IntoIterator<Item = &'a ObjectNode>,
{
    let spec_text = spec.attribute_text();
    let spec_vec = embedder.embed(&spec_text)?;
    if spec_vec.is_empty() && spec.memory_cue.is_none() {
        return Err(MatchError::Underspecified);
    }
    let mut out = Vec::new();
    for node in nodes {
        let v = embedder.embed(&node_text(node, opts))?;
        let score = spec_vec.cosine(&v).unwrap_or(0.0);
        out.push(ScoredCandidate {
            node_id: node.id.clone(),
            score,
        });
    }
    if out.is_empty() {
        return Err(MatchError::NoNodes);
    }
    out.sort_by(rank_order);
    Ok(out)
}

/// First `k` of `scored` under [`rank_order`] without sorting the tail.
pub fn top_k(mut scored: Vec<ScoredCandidate>, k: usize) -> Vec<ScoredCandidate> {
    assert!(k >= 1, "k must be at least 1");
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn node(id: &str, label: &str, desc: &[&str]) -> ObjectNode {
        ObjectNode::new(id, label, desc, Vec3::ZERO, Vec3::new(0.1, 0.1, 0.1))
    }

    fn cos(a: &str, b: &str) -> f64 {
        let e = HashingEmbedder::default();
        e.embed(a).unwrap().cosine(&e.embed(b).unwrap()).unwrap()
    }

    #[test]
    fn embedding_basics() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("red cube").unwrap(), e.embed("red cube").unwrap());
        assert!((cos("red cube", "red cube") - 1.0).abs() < 1e-12);
        assert!((cos("red cube", "cube red") - 1.0).abs() < 1e-12);
        assert!((cos("Red, CUBE!", "red cube") - 1.0).abs() < 1e-12);
        let v = e.embed("purple striped cube").unwrap();
        let n: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(e.embed("  ,, ").unwrap().is_empty());
    }

    #[test]
    fn red_cube_ranks_first() {
        // Hand computation: "red cube" vs "red cube" = 1, vs "blue cube" = 1/2
        // when the three tokens fall in distinct buckets.
        let e = HashingEmbedder::default();
        let buckets: std::collections::HashSet<_> =
            ["red", "blue", "cube"].iter().map(|t| e.bucket(t)).collect();
        assert_eq!(buckets.len(), 3);
        let nodes = [node("b", "cube", &["blue"]), node("a", "cube", &["red"])];
        let scored = score_candidates(&e, &EntitySpec::labeled("cube", &["red"]), &nodes, Default::default()).unwrap();
        assert_eq!(scored[0].node_id, "a");
        assert!((scored[0].score - 1.0).abs() < 1e-12);
        assert!((scored[1].score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id() {
        let e = HashingEmbedder::default();
        let nodes = [node("z", "cube", &["red"]), node("m", "cube", &["red"])];
        let scored = score_candidates(&e, &EntitySpec::labeled("cube", &[]), &nodes, Default::default()).unwrap();
        assert_eq!(scored[0].score, scored[1].score);
        assert_eq!(scored[0].node_id, "m");
    }

    #[test]
    fn single_node_always_returned() {
        let e = HashingEmbedder::default();
        let nodes = [node("only", "lamp", &[])];
        let scored = score_candidates(&e, &EntitySpec::labeled("cube", &["red"]), &nodes, Default::default()).unwrap();
        assert_eq!(scored.len(), 1);
        assert_eq!(scored[0].node_id, "only");
    }

    #[test]
    fn underspecified_spec_is_rejected() {
        let e = HashingEmbedder::default();
        let nodes = [node("a", "cube", &[])];
        assert_eq!(
            score_candidates(&e, &EntitySpec::default(), &nodes, Default::default()),
            Err(MatchError::Underspecified)
        );
    }

    #[test]
    fn scene_context_is_opt_in() {
        let e = HashingEmbedder::default();
        let mut n = node("a", "cube", &[]);
        n.scene_context = "desk with laptop".into();
        let spec = EntitySpec::labeled("laptop", &[]);
        let off = score_candidates(&e, &spec, [&n], Default::default()).unwrap();
        let on = score_candidates(&e, &spec, [&n], ScoringOptions { include_scene_context: true }).unwrap();
        assert!(on[0].score > off[0].score);
    }

    #[test]
    fn top_k_sizes() {
        let scored: Vec<_> = (0..8)
            .map(|i| ScoredCandidate { node_id: format!("n{i}"), score: i as f64 / 10.0 })
            .collect();
        assert_eq!(top_k(scored.clone(), DEFAULT_K).len(), 5);
        assert_eq!(top_k(scored[..3].to_vec(), DEFAULT_K).len(), 3);
        assert_eq!(top_k(scored.clone(), 5)[0].node_id, "n7");
    }

    struct FakeModel(parking_lot::Mutex<Vec<usize>>);
    impl EmbeddingBackend for FakeModel {
        fn request(&self, _req: &str) -> Result<String, String> {
            let d = self.0.lock().remove(0);
            Ok(serde_json::json!({ "vectors": [vec![1.0; d]] }).to_string())
        }
    }

    #[test]
    fn external_embedder_pins_dimension() {
        let ext = ExternalEmbedder::new(FakeModel(parking_lot::Mutex::new(vec![4, 4, 3])));
        assert_eq!(ext.embed("a").unwrap().dim(), 4);
        assert!(ext.embed("b").is_ok());
        assert_eq!(
            ext.embed("c"),
            Err(MatchError::DimensionMismatch { expected: 4, got: 3 })
        );
    }
}
