//! Scene/modifier relation graph: construction, persistence, validation.
//!
//! Scene texts are core nodes; subject/action/atmosphere modifiers hang off
//! them as sub-nodes. Scene identity is normalized-exact string match, and
//! node ids are content hashes, so rebuilding from the same corpus always
//! produces the same ids.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use async_trait::async_trait;
use futures::StreamExt;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::text::normalize_text;

/// Format tag written as `version` in the graph file header.
pub const GRAPH_VERSION: &str = "rapo-graph/1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(
        "embedding backend mismatch: graph was built with {expected_id} (dim {expected_dim}), \
         active backend is {actual_id} (dim {actual_dim})"
    )]
    EmbeddingBackendMismatch {
        expected_id: String,
        expected_dim: usize,
        actual_id: String,
        actual_dim: usize,
    },
    #[error("unsupported graph format version {found:?} (expected {GRAPH_VERSION:?})")]
    FormatVersionMismatch { found: String },
    #[error("corrupt graph record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("invalid extraction record: {0}")]
    InvalidRecord(String),
    #[error("extraction backend failure: {0}")]
    ExtractionBackend(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable identifier derived from node content; lexicographic order is the
/// retrieval tie-break order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModifierCategory {
    Subject,
    Action,
    Atmosphere,
}

impl ModifierCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ModifierCategory::Subject => "subject",
            ModifierCategory::Action => "action",
            ModifierCategory::Atmosphere => "atmosphere",
        }
    }
}

fn content_id(parts: &[&str]) -> NodeId {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            // Unit separator prevents collisions between part boundaries.
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(32);
    for byte in &digest[..16] {
        hex.push_str(&format!("{byte:02x}"));
    }
    NodeId(hex)
}

/// Id of the scene node for a normalized scene text.
pub fn scene_node_id(scene_text: &str) -> NodeId {
    content_id(&["scene", scene_text])
}

/// Id of a modifier node; modifiers are duplicated per scene, so the owning
/// scene text participates in the hash.
pub fn modifier_node_id(scene_text: &str, category: ModifierCategory, text: &str) -> NodeId {
    content_id(&["modifier", scene_text, category.as_str(), text])
}

/// One prompt's extracted scene plus categorized modifiers, already
/// normalized. Construct via [`ExtractionRecord::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub source_prompt: String,
    pub scene: String,
    pub subjects: Vec<String>,
    pub actions: Vec<String>,
    pub atmospheres: Vec<String>,
}

impl ExtractionRecord {
    /// Normalizes every field; drops modifiers that normalize to empty;
    /// rejects records whose scene normalizes to empty.
    pub fn new(
        source_prompt: &str,
        scene: &str,
        subjects: Vec<String>,
        actions: Vec<String>,
        atmospheres: Vec<String>,
    ) -> Result<Self, GraphError> {
        let scene = normalize_text(scene);
        if scene.is_empty() {
            return Err(GraphError::InvalidRecord(format!(
                "scene is empty after normalization (source prompt {source_prompt:?})"
            )));
        }
        let clean = |items: Vec<String>| -> Vec<String> {
            items
                .into_iter()
                .map(|m| normalize_text(&m))
                .filter(|m| !m.is_empty())
                .collect()
        };
        Ok(Self {
            source_prompt: source_prompt.to_string(),
            scene,
            subjects: clean(subjects),
            actions: clean(actions),
            atmospheres: clean(atmospheres),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: NodeId,
    pub text: String,
    pub embedding: Vec<f32>,
    pub modifier_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierNode {
    pub id: NodeId,
    pub scene_id: NodeId,
    pub category: ModifierCategory,
    pub text: String,
    pub embedding: Vec<f32>,
}

/// Result of folding one [`ExtractionRecord`] into the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateSummary {
    pub scene_created: bool,
    pub modifiers_added: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub scene_count: usize,
    pub modifier_count: usize,
    pub source_prompt_count: u64,
}

/// The relation graph. Immutable after build/load; mutation happens only
/// through [`RelationGraph::add_record`] behind exclusive access.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    version: String,
    embedding_backend_id: String,
    embedding_dim: usize,
    scenes: IndexMap<NodeId, SceneNode>,
    modifiers: IndexMap<NodeId, ModifierNode>,
    source_prompt_count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    version: String,
    embedding_backend: String,
    dim: usize,
    #[serde(default)]
    source_prompts: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum GraphLine {
    Header(GraphHeader),
    Scene(SceneNode),
    Modifier(ModifierNode),
}

impl RelationGraph {
    /// Empty graph bound to the given backend's id and dimension.
    pub fn new(embedder: &dyn Embedder) -> Self {
        Self {
            version: GRAPH_VERSION.to_string(),
            embedding_backend_id: embedder.id().to_string(),
            embedding_dim: embedder.dim(),
            scenes: IndexMap::new(),
            modifiers: IndexMap::new(),
            source_prompt_count: 0,
        }
    }

    pub fn embedding_backend_id(&self) -> &str {
        &self.embedding_backend_id
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    pub fn modifier_count(&self) -> usize {
        self.modifiers.len()
    }

    pub fn source_prompt_count(&self) -> u64 {
        self.source_prompt_count
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            scene_count: self.scenes.len(),
            modifier_count: self.modifiers.len(),
            source_prompt_count: self.source_prompt_count,
        }
    }

    pub fn scenes(&self) -> impl Iterator<Item = &SceneNode> {
        self.scenes.values()
    }

    pub fn modifiers(&self) -> impl Iterator<Item = &ModifierNode> {
        self.modifiers.values()
    }

    pub fn scene(&self, id: &NodeId) -> Option<&SceneNode> {
        self.scenes.get(id)
    }

    pub fn modifier(&self, id: &NodeId) -> Option<&ModifierNode> {
        self.modifiers.get(id)
    }

    /// Errors unless the active embedder matches the graph's backend header.
    pub fn check_backend(&self, embedder: &dyn Embedder) -> Result<(), GraphError> {
        if embedder.id() != self.embedding_backend_id || embedder.dim() != self.embedding_dim {
            return Err(GraphError::EmbeddingBackendMismatch {
                expected_id: self.embedding_backend_id.clone(),
                expected_dim: self.embedding_dim,
                actual_id: embedder.id().to_string(),
                actual_dim: embedder.dim(),
            });
        }
        Ok(())
    }

    /// Folds one record in: attaches modifiers to the existing scene node if
    /// the scene text is already present, otherwise creates the scene first.
    /// Duplicate (scene, category, text) modifiers are skipped, which makes
    /// the operation idempotent. Embeddings are computed only for new nodes.
    ///
    /// On an embedding error the graph may have absorbed part of the record;
    /// build flows treat that error as fatal, so the partial state is never
    /// observed by a successful run.
    pub async fn add_record(
        &mut self,
        record: &ExtractionRecord,
        embedder: &dyn Embedder,
    ) -> Result<UpdateSummary, GraphError> {
        self.check_backend(embedder)?;
        let scene_id = scene_node_id(&record.scene);
        let scene_created = !self.scenes.contains_key(&scene_id);
        if scene_created {
            let embedding = embedder.embed(&record.scene).await?;
            self.scenes.insert(
                scene_id.clone(),
                SceneNode {
                    id: scene_id.clone(),
                    text: record.scene.clone(),
                    embedding,
                    modifier_ids: Vec::new(),
                },
            );
        }
        let mut modifiers_added = 0;
        let groups = [
            (ModifierCategory::Subject, &record.subjects),
            (ModifierCategory::Action, &record.actions),
            (ModifierCategory::Atmosphere, &record.atmospheres),
        ];
        for (category, texts) in groups {
            for text in texts {
                let id = modifier_node_id(&record.scene, category, text);
                if self.modifiers.contains_key(&id) {
                    continue;
                }
                let embedding = embedder.embed(text).await?;
                self.modifiers.insert(
                    id.clone(),
                    ModifierNode {
                        id: id.clone(),
                        scene_id: scene_id.clone(),
                        category,
                        text: text.clone(),
                        embedding,
                    },
                );
                self.scenes
                    .get_mut(&scene_id)
                    .expect("scene inserted above")
                    .modifier_ids
                    .push(id);
                modifiers_added += 1;
            }
        }
        Ok(UpdateSummary {
            scene_created,
            modifiers_added,
        })
    }

    /// Bumps the ingested-prompt counter. Kept separate from `add_record` so
    /// that folding the same record twice leaves the graph bit-identical.
    pub fn record_source_prompt(&mut self) {
        self.source_prompt_count += 1;
    }

    /// Full integrity sweep: referential integrity in both directions,
    /// embedding dimensions, and unit norms (with slack for f32 storage).
    pub fn validate(&self) -> Result<(), String> {
        for scene in self.scenes.values() {
            check_embedding(&scene.embedding, self.embedding_dim, &scene.text)?;
            for mid in &scene.modifier_ids {
                let modifier = self
                    .modifiers
                    .get(mid)
                    .ok_or_else(|| format!("scene {} lists missing modifier {mid}", scene.id))?;
                if modifier.scene_id != scene.id {
                    return Err(format!(
                        "modifier {mid} back-references scene {} but is listed by {}",
                        modifier.scene_id, scene.id
                    ));
                }
            }
        }
        for modifier in self.modifiers.values() {
            check_embedding(&modifier.embedding, self.embedding_dim, &modifier.text)?;
            let scene = self
                .scenes
                .get(&modifier.scene_id)
                .ok_or_else(|| format!("modifier {} has dangling scene {}", modifier.id, modifier.scene_id))?;
            if !scene.modifier_ids.contains(&modifier.id) {
                return Err(format!(
                    "scene {} does not list modifier {}",
                    scene.id, modifier.id
                ));
            }
        }
        Ok(())
    }

    /// Writes the line-delimited graph file: header, then scenes, then
    /// modifiers, each in insertion order.
    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = GraphLine::Header(GraphHeader {
            version: self.version.clone(),
            embedding_backend: self.embedding_backend_id.clone(),
            dim: self.embedding_dim,
            source_prompts: self.source_prompt_count,
        });
        writeln!(out, "{}", serde_json::to_string(&header).expect("header json"))?;
        for scene in self.scenes.values() {
            let line = GraphLine::Scene(scene.clone());
            writeln!(out, "{}", serde_json::to_string(&line).expect("scene json"))?;
        }
        for modifier in self.modifiers.values() {
            let line = GraphLine::Modifier(modifier.clone());
            writeln!(out, "{}", serde_json::to_string(&line).expect("modifier json"))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let reader = BufReader::new(File::open(path)?);
        let mut graph: Option<Self> = None;
        // Line numbers of loaded records, for error reporting during the
        // referential sweep below.
        let mut scene_lines: Vec<(usize, NodeId)> = Vec::new();
        let mut modifier_lines: Vec<(usize, NodeId)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: GraphLine =
                serde_json::from_str(&line).map_err(|e| GraphError::CorruptRecord {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            match parsed {
                GraphLine::Header(header) => {
                    if graph.is_some() {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: "duplicate header".to_string(),
                        });
                    }
                    if header.version != GRAPH_VERSION {
                        return Err(GraphError::FormatVersionMismatch {
                            found: header.version,
                        });
                    }
                    if header.dim == 0 {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: "dim must be positive".to_string(),
                        });
                    }
                    graph = Some(Self {
                        version: header.version,
                        embedding_backend_id: header.embedding_backend,
                        embedding_dim: header.dim,
                        scenes: IndexMap::new(),
                        modifiers: IndexMap::new(),
                        source_prompt_count: header.source_prompts,
                    });
                }
                GraphLine::Scene(scene) => {
                    let graph = graph.as_mut().ok_or(GraphError::CorruptRecord {
                        line: line_no,
                        reason: "record before header".to_string(),
                    })?;
                    if scene.embedding.len() != graph.embedding_dim {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: format!(
                                "scene embedding has length {}, header says {}",
                                scene.embedding.len(),
                                graph.embedding_dim
                            ),
                        });
                    }
                    scene_lines.push((line_no, scene.id.clone()));
                    if graph.scenes.insert(scene.id.clone(), scene).is_some() {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: "duplicate scene id".to_string(),
                        });
                    }
                }
                GraphLine::Modifier(modifier) => {
                    let graph = graph.as_mut().ok_or(GraphError::CorruptRecord {
                        line: line_no,
                        reason: "record before header".to_string(),
                    })?;
                    if modifier.embedding.len() != graph.embedding_dim {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: format!(
                                "modifier embedding has length {}, header says {}",
                                modifier.embedding.len(),
                                graph.embedding_dim
                            ),
                        });
                    }
                    modifier_lines.push((line_no, modifier.id.clone()));
                    if graph.modifiers.insert(modifier.id.clone(), modifier).is_some() {
                        return Err(GraphError::CorruptRecord {
                            line: line_no,
                            reason: "duplicate modifier id".to_string(),
                        });
                    }
                }
            }
        }
        let graph = graph.ok_or(GraphError::CorruptRecord {
            line: 1,
            reason: "missing header".to_string(),
        })?;
        for (line_no, id) in &modifier_lines {
            let modifier = &graph.modifiers[id];
            let Some(scene) = graph.scenes.get(&modifier.scene_id) else {
                return Err(GraphError::CorruptRecord {
                    line: *line_no,
                    reason: format!("modifier references missing scene {}", modifier.scene_id),
                });
            };
            if !scene.modifier_ids.contains(id) {
                return Err(GraphError::CorruptRecord {
                    line: *line_no,
                    reason: format!("scene {} does not list modifier {id}", scene.id),
                });
            }
        }
        for (line_no, id) in &scene_lines {
            let scene = &graph.scenes[id];
            for mid in &scene.modifier_ids {
                if !graph.modifiers.contains_key(mid) {
                    return Err(GraphError::CorruptRecord {
                        line: *line_no,
                        reason: format!("scene lists missing modifier {mid}"),
                    });
                }
            }
        }
        Ok(graph)
    }
}

fn check_embedding(embedding: &[f32], dim: usize, text: &str) -> Result<(), String> {
    if embedding.len() != dim {
        return Err(format!(
            "node {text:?} has embedding length {}, expected {dim}",
            embedding.len()
        ));
    }
    let norm = embedding
        .iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    // 1e-5 slack accommodates f32 storage rounding of unit vectors.
    if (norm - 1.0).abs() > 1e-5 {
        return Err(format!("node {text:?} has embedding norm {norm}"));
    }
    Ok(())
}

/// Turns one corpus prompt into an [`ExtractionRecord`].
#[async_trait]
pub trait Extract: Send + Sync {
    async fn extract(&self, prompt: &str) -> Result<ExtractionRecord, ExtractError>;
}

#[derive(Debug, Error)]
pub enum ExtractError {
    /// The backend is down or persistently failing; aborts the build.
    #[error("extraction backend failure: {0}")]
    Fatal(String),
    /// This prompt could not be extracted; the build skips and counts it.
    #[error("extraction rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub prompts_in: usize,
    pub extracted: usize,
    pub extraction_failures: usize,
}

/// Builds a graph as the left fold of [`RelationGraph::add_record`] over
/// successful extractions, in corpus order. Extraction fans out over up to
/// `workers` concurrent calls; folding stays serial, so the result is
/// independent of the worker count.
pub async fn build_graph(
    prompts: Vec<String>,
    extractor: &dyn Extract,
    embedder: &dyn Embedder,
    workers: usize,
) -> Result<(RelationGraph, BuildSummary), GraphError> {
    let workers = workers.max(1);
    let mut graph = RelationGraph::new(embedder);
    let mut summary = BuildSummary::default();
    let mut results = futures::stream::iter(
        prompts
            .into_iter()
            .map(|prompt| async move { extractor.extract(&prompt).await }),
    )
    .buffered(workers);
    while let Some(result) = results.next().await {
        summary.prompts_in += 1;
        match result {
            Ok(record) => {
                graph.add_record(&record, embedder).await?;
                graph.record_source_prompt();
                summary.extracted += 1;
            }
            Err(ExtractError::Rejected(reason)) => {
                log::warn!("skipping prompt: {reason}");
                summary.extraction_failures += 1;
            }
            Err(ExtractError::Fatal(reason)) => {
                return Err(GraphError::ExtractionBackend(reason));
            }
        }
    }
    Ok((graph, summary))
}
