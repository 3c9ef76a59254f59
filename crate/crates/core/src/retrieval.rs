//! Top-k cosine retrieval over graph scenes and their modifiers.
//!
//! Exact full scans, no index: graphs here are scene-granular and desk-scale.
//! All operations are read-only over a loaded graph and safe to share.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::graph::{GraphError, NodeId, RelationGraph};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("scene hit references unknown scene {0}")]
    UnknownSceneId(NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// One retrieved node with its similarity to the query.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredItem {
    pub node_id: NodeId,
    pub score: f64,
    pub text: String,
}

/// Cosine similarity, accumulated in f64 over the f32 components in index
/// order — the exact arithmetic the retrieval contract freezes.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for i in 0..a.len() {
        let x = a[i] as f64;
        let y = b[i] as f64;
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Sorts descending by score, ties broken by ascending node id, then keeps
/// the first k. Scores must be finite (cosine guarantees this).
pub fn top_k(mut items: Vec<ScoredItem>, k: usize) -> Vec<ScoredItem> {
    items.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.node_id.cmp(&b.node_id))
    });
    items.truncate(k);
    items
}

/// The min(k, scene_count) scenes most similar to the query.
pub async fn retrieve_scenes(
    graph: &RelationGraph,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredItem>, RetrievalError> {
    graph.check_backend(embedder)?;
    if k == 0 || graph.scene_count() == 0 {
        return Ok(Vec::new());
    }
    let query_vec = embedder.embed(query).await?;
    let mut scored = Vec::with_capacity(graph.scene_count());
    for scene in graph.scenes() {
        scored.push(ScoredItem {
            node_id: scene.id.clone(),
            score: cosine(&query_vec, &scene.embedding)?,
            text: scene.text.clone(),
        });
    }
    Ok(top_k(scored, k))
}

/// Top-k over the union of modifiers attached to the hit scenes, scored
/// against the query. Identical modifier texts are deduplicated first
/// (keeping the highest-scoring occurrence, ties to the lowest id), so the
/// output length is min(k, deduplicated pool size).
pub async fn retrieve_modifiers(
    graph: &RelationGraph,
    scene_hits: &[ScoredItem],
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredItem>, RetrievalError> {
    graph.check_backend(embedder)?;
    let mut pool_ids = Vec::new();
    for hit in scene_hits {
        let scene = graph
            .scene(&hit.node_id)
            .ok_or_else(|| RetrievalError::UnknownSceneId(hit.node_id.clone()))?;
        pool_ids.extend(scene.modifier_ids.iter().cloned());
    }
    if k == 0 || pool_ids.is_empty() {
        return Ok(Vec::new());
    }
    let query_vec = embedder.embed(query).await?;
    let mut best_by_text: HashMap<String, ScoredItem> = HashMap::new();
    for id in pool_ids {
        let modifier = graph
            .modifier(&id)
            .expect("graph integrity: scene lists only existing modifiers");
        let candidate = ScoredItem {
            node_id: id,
            score: cosine(&query_vec, &modifier.embedding)?,
            text: modifier.text.clone(),
        };
        match best_by_text.get_mut(&candidate.text) {
            None => {
                best_by_text.insert(candidate.text.clone(), candidate);
            }
            Some(existing) => {
                let replace = candidate.score > existing.score
                    || (candidate.score == existing.score && candidate.node_id < existing.node_id);
                if replace {
                    *existing = candidate;
                }
            }
        }
    }
    Ok(top_k(best_by_text.into_values().collect(), k))
}
