//! Builders for the two instruction-tuning datasets.
//!
//! The refactor dataset pairs a deliberately degraded caption with the
//! original, teaching a model to restore training-caption shape. The
//! discriminator dataset pairs a user prompt's two optimized candidates
//! with a preference label. Rows use the common
//! `{"instruction","input","output"}` layout so off-the-shelf tuning
//! harnesses can consume them directly.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    bindings, select_instruction, Gateway, GatewayError, LlmRequest, TemplateError, TemplateId,
    TemplateSet, REFACTOR_INSTRUCTION_PREFIX, REFACTOR_INSTRUCTION_SUFFIX,
};
use crate::io::PromptItem;
use crate::pipeline::{length_proximity_label, Pipeline, SelectLabel};
use crate::text::normalize_text;

pub const DIMENSION_OTHER: &str = "other";

/// The built-in evaluation dimensions a prompt can target.
pub const BUILTIN_DIMENSIONS: [&str; 7] = [
    "temporal_flickering",
    "imaging_quality",
    "human_action",
    "object_class",
    "multiple_objects",
    "spatial_relationship",
    DIMENSION_OTHER,
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("degrade rejected: {0}")]
    DegradeRejected(String),
    #[error("dimension set is empty")]
    EmptyDimensions,
    #[error("row {line}: {reason}")]
    InvalidRow { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] crate::io::IoError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Read {
        path: path.display().to_string(),
        source,
    })
}

// --- dimensions ---

fn canonical_name(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c == '.' || c == '"' || c == '\'' || c == '`')
        .to_lowercase()
        .replace('-', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// A closed set of dimension names. Routing replies outside the set
/// collapse to `other`, which every set is guaranteed to contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionSet {
    names: Vec<String>,
}

impl DimensionSet {
    pub fn builtin() -> Self {
        Self {
            names: BUILTIN_DIMENSIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_names<I, S>(names: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut canonical = Vec::new();
        for name in names {
            let name = canonical_name(name.as_ref());
            if !name.is_empty() && seen.insert(name.clone()) {
                canonical.push(name);
            }
        }
        if canonical.is_empty() {
            return Err(DatasetError::EmptyDimensions);
        }
        if !canonical.iter().any(|n| n == DIMENSION_OTHER) {
            canonical.push(DIMENSION_OTHER.to_string());
        }
        Ok(Self { names: canonical })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn joined(&self) -> String {
        self.names.join(", ")
    }

    pub fn canonical(&self, raw: &str) -> Option<&str> {
        let candidate = canonical_name(raw);
        self.names
            .iter()
            .find(|n| **n == candidate)
            .map(|n| n.as_str())
    }
}

// --- caption degradation and the refactor dataset ---

/// The degraded text must actually differ from the original, compared
/// case- and whitespace-insensitively.
pub fn degraded_differs(original: &str, degraded: &str) -> bool {
    normalize_text(original) != normalize_text(degraded)
}

pub fn rendered_degrade_prompt(
    templates: &TemplateSet,
    caption: &str,
) -> Result<String, TemplateError> {
    templates.render(TemplateId::PairDegrade, &bindings([("caption", caption)]))
}

/// Asks the backend for a degraded version of `caption`; output identical
/// to the input (ignoring case and spacing) is rejected after one re-ask.
pub async fn degrade(gateway: &Gateway, caption: &str) -> Result<String, DatasetError> {
    let rendered =
        rendered_degrade_prompt(gateway.templates(), caption).map_err(GatewayError::from)?;
    let request = LlmRequest::new(TemplateId::PairDegrade, rendered);
    let caption_owned = caption.to_string();
    let (text, _) = gateway
        .complete_validated(request, move |text| {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                return Err("empty output".to_string());
            }
            if !degraded_differs(&caption_owned, trimmed) {
                return Err("degraded text matches the original".to_string());
            }
            Ok(trimmed.to_string())
        })
        .await
        .map_err(|e| match e {
            GatewayError::ResponseRejected { reason, .. } => DatasetError::DegradeRejected(reason),
            other => DatasetError::Gateway(other),
        })?;
    Ok(text)
}

/// One `{"instruction","input","output"}` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningRow {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// A refactor row embeds the degraded sentence in the instruction and
/// carries the original caption as the target output.
pub fn refactor_row(degraded: &str, caption: &str) -> TuningRow {
    TuningRow {
        instruction: format!(
            "{REFACTOR_INSTRUCTION_PREFIX}{degraded}{REFACTOR_INSTRUCTION_SUFFIX}"
        ),
        input: String::new(),
        output: caption.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefactorPair {
    pub degraded: String,
    pub caption: String,
}

/// Inverts [`refactor_row`]; fails if the instruction does not carry the
/// fixed affixes.
pub fn parse_refactor_row(row: &TuningRow) -> Result<RefactorPair, String> {
    let degraded = row
        .instruction
        .strip_prefix(REFACTOR_INSTRUCTION_PREFIX)
        .and_then(|rest| rest.strip_suffix(REFACTOR_INSTRUCTION_SUFFIX))
        .ok_or_else(|| "instruction does not match the refactor template".to_string())?;
    Ok(RefactorPair {
        degraded: degraded.to_string(),
        caption: row.output.clone(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RefactorBuildSummary {
    pub captions_in: usize,
    pub written: usize,
    pub rejected: usize,
}

/// Degrades captions with bounded concurrency and writes the dataset.
/// Per-caption failures are skipped and counted; only I/O errors abort.
pub async fn build_refactor_dataset(
    gateway: &Gateway,
    captions: &[String],
    out_path: &Path,
    limit: Option<usize>,
    workers: usize,
) -> Result<RefactorBuildSummary, DatasetError> {
    let mut summary = RefactorBuildSummary::default();
    let mut lines = Vec::new();
    let mut stream = futures::stream::iter(
        captions
            .iter()
            .map(|c| async move { (c, degrade(gateway, c).await) }),
    )
    .buffered(workers.max(1));
    while let Some((caption, result)) = stream.next().await {
        if limit.is_some_and(|l| summary.written >= l) {
            break;
        }
        summary.captions_in += 1;
        match result {
            Ok(degraded) => {
                let row = refactor_row(&degraded, caption);
                lines.push(serde_json::to_string(&row).expect("row serialize"));
                summary.written += 1;
            }
            Err(e) => {
                log::warn!("skipping caption after degrade failure: {e}");
                summary.rejected += 1;
            }
        }
    }
    crate::io::write_lines(out_path, &lines)?;
    Ok(summary)
}

/// Reads a refactor dataset back into (degraded, caption) pairs.
pub fn parse_refactor_dataset(path: &Path) -> Result<Vec<RefactorPair>, DatasetError> {
    let body = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TuningRow = serde_json::from_str(line).map_err(|e| DatasetError::InvalidRow {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let pair = parse_refactor_row(&row).map_err(|reason| DatasetError::InvalidRow {
            line: idx + 1,
            reason,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

// --- simulated user prompts ---

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedPrompt {
    pub text: String,
    pub dimension: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimulateSummary {
    pub requested: usize,
    pub produced: usize,
    pub duplicates: usize,
    pub failures: usize,
}

pub fn rendered_simulate_prompt(
    templates: &TemplateSet,
    dimension: &str,
    seed: &str,
    index: usize,
) -> Result<String, TemplateError> {
    templates.render(
        TemplateId::SimulateUser,
        &bindings([
            ("dimension", dimension),
            ("seed", seed),
            ("index", &index.to_string()),
        ]),
    )
}

/// Generates up to `n` user-style prompts, cycling round-robin through the
/// dimension set (repeat a name in a custom set to weight its quota) and
/// through the seed list. Duplicates (case- and whitespace-insensitive) and
/// failed requests are dropped; the summary reports any shortfall.
pub async fn simulate_user_prompts(
    gateway: &Gateway,
    dimensions: &DimensionSet,
    seeds: &[String],
    n: usize,
    workers: usize,
) -> Result<(Vec<SimulatedPrompt>, SimulateSummary), DatasetError> {
    let mut summary = SimulateSummary {
        requested: n,
        ..SimulateSummary::default()
    };
    let names = dimensions.names();
    let requests = (0..n).map(|i| {
        let dimension = names[i % names.len()].clone();
        let seed = if seeds.is_empty() {
            "none".to_string()
        } else {
            seeds[i % seeds.len()].clone()
        };
        async move {
            let rendered =
                match rendered_simulate_prompt(gateway.templates(), &dimension, &seed, i) {
                    Ok(r) => r,
                    Err(e) => return (dimension, Err(GatewayError::from(e))),
                };
            let request = LlmRequest::new(TemplateId::SimulateUser, rendered);
            let result = gateway
                .complete_validated(request, |text| {
                    let trimmed = text.trim();
                    if trimmed.is_empty() {
                        Err("empty output".to_string())
                    } else {
                        Ok(trimmed.to_string())
                    }
                })
                .await
                .map(|(text, _)| text);
            (dimension, result)
        }
    });
    let outcomes: Vec<(String, Result<String, GatewayError>)> = futures::stream::iter(requests)
        .buffered(workers.max(1))
        .collect()
        .await;
    let mut seen = HashSet::new();
    let mut prompts = Vec::new();
    for (dimension, result) in outcomes {
        match result {
            Ok(text) => {
                if seen.insert(normalize_text(&text)) {
                    prompts.push(SimulatedPrompt { text, dimension });
                    summary.produced += 1;
                } else {
                    summary.duplicates += 1;
                }
            }
            Err(e) => {
                log::warn!("simulated prompt request failed: {e}");
                summary.failures += 1;
            }
        }
    }
    Ok((prompts, summary))
}

// --- dimension routing ---

pub fn rendered_route_prompt(
    templates: &TemplateSet,
    dimensions: &DimensionSet,
    prompt: &str,
) -> Result<String, TemplateError> {
    templates.render(
        TemplateId::DimensionRoute,
        &bindings([("dimensions", dimensions.joined().as_str()), ("prompt", prompt)]),
    )
}

/// Classifies a prompt into one dimension of the set. Never fails: replies
/// outside the set, and backend failures, map to `other`.
pub async fn route_dimension(
    gateway: &Gateway,
    dimensions: &DimensionSet,
    prompt: &str,
) -> String {
    let rendered = match rendered_route_prompt(gateway.templates(), dimensions, prompt) {
        Ok(r) => r,
        Err(_) => return DIMENSION_OTHER.to_string(),
    };
    let request = LlmRequest::new(TemplateId::DimensionRoute, rendered);
    match gateway.complete(request).await {
        Ok(response) => dimensions
            .canonical(&response.text)
            .unwrap_or(DIMENSION_OTHER)
            .to_string(),
        Err(e) => {
            log::warn!("dimension routing failed, using {DIMENSION_OTHER}: {e}");
            DIMENSION_OTHER.to_string()
        }
    }
}

// --- discriminator dataset ---

fn label_str(label: SelectLabel) -> &'static str {
    match label {
        SelectLabel::R => "r",
        SelectLabel::N => "n",
    }
}

fn parse_label(raw: &str) -> Result<SelectLabel, String> {
    match raw.trim().to_lowercase().as_str() {
        "r" => Ok(SelectLabel::R),
        "n" => Ok(SelectLabel::N),
        other => Err(format!("label must be \"r\" or \"n\", got {other:?}")),
    }
}

/// One discriminator row: the tuning triple plus the raw fields so the
/// dataset parses back losslessly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorRow {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub x_i: String,
    pub x_r: String,
    pub x_n: String,
    pub dimension: String,
}

pub fn discriminator_row(
    x_i: &str,
    x_r: &str,
    x_n: &str,
    label: SelectLabel,
    dimension: &str,
) -> DiscriminatorRow {
    DiscriminatorRow {
        instruction: select_instruction(x_i, x_r, x_n),
        input: String::new(),
        output: label_str(label).to_string(),
        x_i: x_i.to_string(),
        x_r: x_r.to_string(),
        x_n: x_n.to_string(),
        dimension: dimension.to_string(),
    }
}

/// Where preference labels come from: the deterministic length-proximity
/// rule, or a `{"id","y_d"}` file keyed by prompt id.
pub enum LabelSource {
    Heuristic,
    File(HashMap<String, SelectLabel>),
}

#[derive(Deserialize)]
struct LabelLine {
    id: String,
    y_d: String,
}

pub fn load_labels(path: &Path) -> Result<HashMap<String, SelectLabel>, DatasetError> {
    let body = read_to_string(path)?;
    let mut labels = HashMap::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelLine =
            serde_json::from_str(line).map_err(|e| DatasetError::InvalidRow {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        let label = parse_label(&parsed.y_d).map_err(|reason| DatasetError::InvalidRow {
            line: idx + 1,
            reason,
        })?;
        labels.insert(parsed.id, label);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DiscriminatorBuildSummary {
    pub prompts_in: usize,
    pub written: usize,
    pub branch_failures: usize,
    pub missing_labels: usize,
}

/// Runs both pipeline branches per prompt, routes a dimension, attaches a
/// label, and writes the dataset. Prompts whose branches fail, or whose id
/// has no label in a label file, are skipped and counted. Prompts without
/// an explicit id are keyed by their zero-based position.
pub async fn build_discriminator_dataset(
    pipeline: &Pipeline,
    items: &[PromptItem],
    dimensions: &DimensionSet,
    label_source: &LabelSource,
    out_path: &Path,
    workers: usize,
) -> Result<DiscriminatorBuildSummary, DatasetError> {
    let mut summary = DiscriminatorBuildSummary {
        prompts_in: items.len(),
        ..DiscriminatorBuildSummary::default()
    };
    let work = items.iter().enumerate().map(|(idx, item)| async move {
        let id = item
            .id
            .clone()
            .unwrap_or_else(|| idx.to_string());
        let x_i = item.text.trim().to_string();
        let candidates = async {
            let (augmented, _, _) = pipeline.augment(&x_i).await?;
            let x_r = pipeline.refactor(&augmented).await?;
            let x_n = pipeline.rewrite(&x_i).await?;
            Ok::<(String, String), crate::pipeline::PipelineError>((x_r, x_n))
        }
        .await;
        match candidates {
            Ok((x_r, x_n)) => {
                let dimension = route_dimension(pipeline.gateway(), dimensions, &x_i).await;
                Ok((id, x_i, x_r, x_n, dimension))
            }
            Err(e) => Err((id, e)),
        }
    });
    let outcomes: Vec<_> = futures::stream::iter(work)
        .buffered(workers.max(1))
        .collect()
        .await;
    let mut lines = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((id, x_i, x_r, x_n, dimension)) => {
                let label = match label_source {
                    LabelSource::Heuristic => Some(length_proximity_label(
                        &x_r,
                        &x_n,
                        pipeline.options().reference_median_words,
                    )),
                    LabelSource::File(map) => map.get(&id).copied(),
                };
                match label {
                    Some(label) => {
                        let row = discriminator_row(&x_i, &x_r, &x_n, label, &dimension);
                        lines.push(serde_json::to_string(&row).expect("row serialize"));
                        summary.written += 1;
                    }
                    None => {
                        log::warn!("no label for prompt id {id:?}; skipping");
                        summary.missing_labels += 1;
                    }
                }
            }
            Err((id, e)) => {
                log::warn!("branches failed for prompt id {id:?}: {e}");
                summary.branch_failures += 1;
            }
        }
    }
    crate::io::write_lines(out_path, &lines)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorTriple {
    pub x_i: String,
    pub x_r: String,
    pub x_n: String,
    pub y_d: SelectLabel,
    pub dimension: String,
}

/// Reads a discriminator dataset back, checking each row's instruction
/// against the canonical selection text.
pub fn parse_discriminator_dataset(path: &Path) -> Result<Vec<DiscriminatorTriple>, DatasetError> {
    let body = read_to_string(path)?;
    let mut triples = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DiscriminatorRow =
            serde_json::from_str(line).map_err(|e| DatasetError::InvalidRow {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if row.instruction != select_instruction(&row.x_i, &row.x_r, &row.x_n) {
            return Err(DatasetError::InvalidRow {
                line: idx + 1,
                reason: "instruction does not match the row's prompts".to_string(),
            });
        }
        let y_d = parse_label(&row.output).map_err(|reason| DatasetError::InvalidRow {
            line: idx + 1,
            reason,
        })?;
        triples.push(DiscriminatorTriple {
            x_i: row.x_i,
            x_r: row.x_r,
            x_n: row.x_n,
            y_d,
            dimension: row.dimension,
        });
    }
    Ok(triples)
}
