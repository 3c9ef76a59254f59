//! The dual-branch optimization pipeline.
//!
//! Branch 1 augments the input with retrieved modifiers (merged one at a
//! time, highest score first) and refactors the result into training-caption
//! shape (x_r). Branch 2 rewrites the input directly (x_n). A selection step
//! picks one of the two; when no usable selection answer is available, a
//! deterministic fallback chooses the candidate whose word count sits closer
//! to the training corpus's median length.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::word_count;
use crate::embed::Embedder;
use crate::gateway::{
    bindings, Gateway, GatewayError, LlmRequest, TemplateError, TemplateId, TemplateSet,
};
use crate::graph::RelationGraph;
use crate::retrieval::{retrieve_modifiers, retrieve_scenes, RetrievalError, ScoredItem};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input prompt is empty")]
    EmptyInput,
    #[error("merge rejected: {0}")]
    MergeRejected(String),
    #[error("refactor rejected: {0}")]
    RefactorRejected(String),
    #[error("rewrite rejected: {0}")]
    RewriteRejected(String),
    #[error("bad merge examples file: {0}")]
    BadExamples(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// One few-shot pair for the merge template: input body, modifier, and the
/// merged result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeExample {
    pub body: String,
    pub modifier: String,
    pub merged: String,
}

/// Built-in few-shot pairs, headed by the canonical funeral/black-suit merge.
pub fn default_merge_examples() -> Vec<MergeExample> {
    vec![
        MergeExample {
            body: "a woman representing a funeral".to_string(),
            modifier: "a black suit".to_string(),
            merged: "a woman dressed in a black suit representing a funeral".to_string(),
        },
        MergeExample {
            body: "a dog plays in the yard".to_string(),
            modifier: "a red ball".to_string(),
            merged: "a dog plays with a red ball in the yard".to_string(),
        },
    ]
}

/// Renders the example list exactly as the merge prompt embeds it.
pub fn format_merge_examples(examples: &[MergeExample]) -> String {
    if examples.is_empty() {
        return "none".to_string();
    }
    examples
        .iter()
        .map(|e| {
            format!(
                "(input prompt: \"{}\", modifier: \"{}\", merged prompt: \"{}\")",
                e.body, e.modifier, e.merged
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Loads example pairs from a line-delimited `{"body","modifier","merged"}`
/// file.
pub fn load_merge_examples(path: &Path) -> Result<Vec<MergeExample>, PipelineError> {
    let reader = BufReader::new(
        File::open(path).map_err(|e| PipelineError::BadExamples(format!("{}: {e}", path.display())))?,
    );
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::BadExamples(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let example: MergeExample = serde_json::from_str(&line)
            .map_err(|e| PipelineError::BadExamples(format!("line {}: {e}", idx + 1)))?;
        examples.push(example);
    }
    Ok(examples)
}

pub const DEFAULT_K_SCENES: usize = 3;
pub const DEFAULT_K_MODIFIERS: usize = 5;
pub const DEFAULT_MAX_REFACTOR_WORDS: usize = 120;
/// Used by the selection fallback when no corpus stats file is supplied.
pub const DEFAULT_REFERENCE_MEDIAN_WORDS: f64 = 36.0;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub k_scenes: usize,
    pub k_modifiers: usize,
    pub max_refactor_words: usize,
    /// Median word count of the training corpus; the selection fallback
    /// picks the candidate closer to it.
    pub reference_median_words: f64,
    pub run_select: bool,
    pub merge_examples: Vec<MergeExample>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            k_scenes: DEFAULT_K_SCENES,
            k_modifiers: DEFAULT_K_MODIFIERS,
            max_refactor_words: DEFAULT_MAX_REFACTOR_WORDS,
            reference_median_words: DEFAULT_REFERENCE_MEDIAN_WORDS,
            run_select: true,
            merge_examples: default_merge_examples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectLabel {
    R,
    N,
}

/// Which text `chosen` carries: a branch candidate, or the untouched input
/// when both branches failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChosenLabel {
    R,
    N,
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenPrompt {
    pub label: ChosenLabel,
    pub text: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTraceEntry {
    pub modifier: String,
    pub before: String,
    pub after: String,
    /// Set when this merge step failed validation; the fold then skipped
    /// the modifier (`after` == `before`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub scenes: Vec<ScoredItem>,
    pub modifiers: Vec<ScoredItem>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub augment_ms: u64,
    pub refactor_ms: u64,
    pub rewrite_ms: u64,
    pub select_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub input: String,
    /// Refactored branch-1 candidate; null when that branch failed.
    pub x_r: Option<String>,
    /// Rewrite branch-2 candidate; null when that branch failed.
    pub x_n: Option<String>,
    /// Null only when selection was disabled.
    pub chosen: Option<ChosenPrompt>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
    pub merge_trace: Vec<MergeTraceEntry>,
    pub retrieval: RetrievalTrace,
    pub timings_ms: Timings,
}

/// Deterministic selection fallback: the candidate whose word count is
/// closer to the reference median wins; ties go to the refactored branch.
pub fn length_proximity_label(x_r: &str, x_n: &str, reference_median: f64) -> SelectLabel {
    let dr = (word_count(x_r) as f64 - reference_median).abs();
    let dn = (word_count(x_n) as f64 - reference_median).abs();
    if dr <= dn {
        SelectLabel::R
    } else {
        SelectLabel::N
    }
}

// Rendering helpers shared with fixture authoring, so authored fixtures and
// live pipeline calls can never drift apart.

pub fn rendered_merge_prompt(
    templates: &TemplateSet,
    examples_text: &str,
    body: &str,
    modifier: &str,
) -> Result<String, TemplateError> {
    templates.render(
        TemplateId::Merge,
        &bindings([
            ("examples", examples_text),
            ("body", body),
            ("modifier", modifier),
        ]),
    )
}

pub fn rendered_refactor_prompt(
    templates: &TemplateSet,
    sentence: &str,
) -> Result<String, TemplateError> {
    templates.render(TemplateId::Refactor, &bindings([("sentence", sentence)]))
}

pub fn rendered_rewrite_prompt(
    templates: &TemplateSet,
    prompt: &str,
) -> Result<String, TemplateError> {
    templates.render(TemplateId::Rewrite, &bindings([("prompt", prompt)]))
}

pub fn rendered_select_prompt(
    templates: &TemplateSet,
    x_i: &str,
    x_r: &str,
    x_n: &str,
) -> Result<String, TemplateError> {
    templates.render(
        TemplateId::Select,
        &bindings([("x_i", x_i), ("x_r", x_r), ("x_n", x_n)]),
    )
}

fn parse_select_label(text: &str) -> Result<SelectLabel, String> {
    for c in text.trim().chars() {
        if c.is_ascii_alphanumeric() {
            return match c.to_ascii_lowercase() {
                'r' => Ok(SelectLabel::R),
                'n' => Ok(SelectLabel::N),
                other => Err(format!("expected label R or N, got {other:?}")),
            };
        }
    }
    Err("no label in response".to_string())
}

pub struct Pipeline {
    graph: Arc<RelationGraph>,
    embedder: Arc<dyn Embedder>,
    gateway: Arc<Gateway>,
    options: PipelineOptions,
    examples_text: String,
}

impl Pipeline {
    pub fn new(
        graph: Arc<RelationGraph>,
        embedder: Arc<dyn Embedder>,
        gateway: Arc<Gateway>,
        options: PipelineOptions,
    ) -> Self {
        let examples_text = format_merge_examples(&options.merge_examples);
        Self {
            graph,
            embedder,
            gateway,
            options,
            examples_text,
        }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn graph(&self) -> &Arc<RelationGraph> {
        &self.graph
    }

    /// One iteration of the merge fold: combine the current prompt with one
    /// modifier via the merge template. Empty output is rejected (after one
    /// re-ask).
    pub async fn merge_step(&self, x_m: &str, p_m: &str) -> Result<String, PipelineError> {
        if x_m.trim().is_empty() || p_m.trim().is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let rendered =
            rendered_merge_prompt(self.gateway.templates(), &self.examples_text, x_m, p_m)
                .map_err(GatewayError::from)?;
        let request = LlmRequest::new(TemplateId::Merge, rendered);
        let (text, _) = self
            .gateway
            .complete_validated(request, non_empty_validator)
            .await
            .map_err(|e| match e {
                GatewayError::ResponseRejected { reason, .. } => {
                    PipelineError::MergeRejected(reason)
                }
                other => PipelineError::Gateway(other),
            })?;
        Ok(text)
    }

    /// Retrieval plus the merge fold: modifiers are merged in descending
    /// retrieval-score order. A step that fails validation is skipped and
    /// recorded; backend unavailability aborts the branch.
    pub async fn augment(
        &self,
        x_i: &str,
    ) -> Result<(String, Vec<MergeTraceEntry>, RetrievalTrace), PipelineError> {
        let scenes = retrieve_scenes(
            &self.graph,
            self.embedder.as_ref(),
            x_i,
            self.options.k_scenes,
        )
        .await?;
        let modifiers = retrieve_modifiers(
            &self.graph,
            &scenes,
            self.embedder.as_ref(),
            x_i,
            self.options.k_modifiers,
        )
        .await?;
        let mut current = x_i.to_string();
        let mut trace = Vec::with_capacity(modifiers.len());
        for modifier in &modifiers {
            match self.merge_step(&current, &modifier.text).await {
                Ok(next) => {
                    trace.push(MergeTraceEntry {
                        modifier: modifier.text.clone(),
                        before: current.clone(),
                        after: next.clone(),
                        skipped: None,
                    });
                    current = next;
                }
                Err(PipelineError::MergeRejected(reason)) => {
                    trace.push(MergeTraceEntry {
                        modifier: modifier.text.clone(),
                        before: current.clone(),
                        after: current.clone(),
                        skipped: Some(reason),
                    });
                }
                Err(other) => return Err(other),
            }
        }
        Ok((current, trace, RetrievalTrace { scenes, modifiers }))
    }

    /// Rewrites `w` into training-caption shape. Output must be non-empty
    /// and within the configured word budget; one re-ask, then rejection.
    pub async fn refactor(&self, w: &str) -> Result<String, PipelineError> {
        if w.trim().is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let rendered = rendered_refactor_prompt(self.gateway.templates(), w)
            .map_err(GatewayError::from)?;
        let request = LlmRequest::new(TemplateId::Refactor, rendered);
        let max_words = self.options.max_refactor_words;
        let (text, _) = self
            .gateway
            .complete_validated(request, move |text| {
                let trimmed = text.trim();
                if trimmed.is_empty() {
                    return Err("empty output".to_string());
                }
                let words = word_count(trimmed);
                if words > max_words {
                    return Err(format!("output has {words} words, budget is {max_words}"));
                }
                Ok(trimmed.to_string())
            })
            .await
            .map_err(|e| match e {
                GatewayError::ResponseRejected { reason, .. } => {
                    PipelineError::RefactorRejected(reason)
                }
                other => PipelineError::Gateway(other),
            })?;
        Ok(text)
    }

    /// The direct-rewrite branch.
    pub async fn rewrite(&self, x_i: &str) -> Result<String, PipelineError> {
        if x_i.trim().is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let rendered = rendered_rewrite_prompt(self.gateway.templates(), x_i)
            .map_err(GatewayError::from)?;
        let request = LlmRequest::new(TemplateId::Rewrite, rendered);
        let (text, _) = self
            .gateway
            .complete_validated(request, non_empty_validator)
            .await
            .map_err(|e| match e {
                GatewayError::ResponseRejected { reason, .. } => {
                    PipelineError::RewriteRejected(reason)
                }
                other => PipelineError::Gateway(other),
            })?;
        Ok(text)
    }

    /// Picks between the two candidates. Never fails: identical candidates
    /// short-circuit to `r`; an unusable or unavailable discriminator falls
    /// back to the length-proximity rule.
    pub async fn select(&self, x_i: &str, x_r: &str, x_n: &str) -> (SelectLabel, String) {
        if x_r == x_n {
            return (
                SelectLabel::R,
                "candidates are identical; tie goes to the refactored branch".to_string(),
            );
        }
        let rendered = match rendered_select_prompt(self.gateway.templates(), x_i, x_r, x_n) {
            Ok(r) => r,
            Err(e) => return self.select_fallback(x_r, x_n, &e.to_string()),
        };
        let request = LlmRequest::new(TemplateId::Select, rendered);
        match self
            .gateway
            .complete_validated(request, parse_select_label)
            .await
        {
            Ok((label, _)) => (label, "discriminator answer".to_string()),
            Err(e) => self.select_fallback(x_r, x_n, &e.to_string()),
        }
    }

    fn select_fallback(&self, x_r: &str, x_n: &str, cause: &str) -> (SelectLabel, String) {
        let median = self.options.reference_median_words;
        let label = length_proximity_label(x_r, x_n, median);
        let rationale = format!(
            "fallback ({cause}): word counts {} vs {} against reference median {median}",
            word_count(x_r),
            word_count(x_n)
        );
        (label, rationale)
    }

    /// Runs both branches and the selection step. Branch failures do not
    /// abort: the surviving candidate is chosen, and if both branches fail
    /// the input itself is returned with a warning. The branches run
    /// sequentially so fixture-backed runs replay byte-identically.
    pub async fn optimize(&self, input: &str) -> Result<OptimizationResult, PipelineError> {
        let x_i = input.trim();
        if x_i.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let deterministic = self.gateway.deterministic();
        let total_start = Instant::now();
        let mut timings = Timings::default();

        let augment_start = Instant::now();
        let mut branch1_error: Option<String> = None;
        let (augmented, merge_trace, retrieval) = match self.augment(x_i).await {
            Ok((w, trace, retrieval)) => (Some(w), trace, retrieval),
            Err(e) => {
                branch1_error = Some(e.to_string());
                (None, Vec::new(), RetrievalTrace::default())
            }
        };
        timings.augment_ms = augment_start.elapsed().as_millis() as u64;

        let refactor_start = Instant::now();
        let x_r = match &augmented {
            Some(w) => match self.refactor(w).await {
                Ok(x_r) => Some(x_r),
                Err(e) => {
                    branch1_error = Some(e.to_string());
                    None
                }
            },
            None => None,
        };
        timings.refactor_ms = refactor_start.elapsed().as_millis() as u64;

        let rewrite_start = Instant::now();
        let (x_n, branch2_error) = match self.rewrite(x_i).await {
            Ok(x_n) => (Some(x_n), None),
            Err(e) => (None, Some(e.to_string())),
        };
        timings.rewrite_ms = rewrite_start.elapsed().as_millis() as u64;

        let select_start = Instant::now();
        let (chosen, warning) = if !self.options.run_select {
            (None, None)
        } else {
            match (&x_r, &x_n) {
                (Some(r), Some(n)) => {
                    let (label, rationale) = self.select(x_i, r, n).await;
                    let (label, text) = match label {
                        SelectLabel::R => (ChosenLabel::R, r.clone()),
                        SelectLabel::N => (ChosenLabel::N, n.clone()),
                    };
                    (
                        Some(ChosenPrompt {
                            label,
                            text,
                            rationale,
                        }),
                        None,
                    )
                }
                (Some(r), None) => (
                    Some(ChosenPrompt {
                        label: ChosenLabel::R,
                        text: r.clone(),
                        rationale: format!(
                            "branch failure: rewrite branch failed ({})",
                            branch2_error.as_deref().unwrap_or("unknown")
                        ),
                    }),
                    None,
                ),
                (None, Some(n)) => (
                    Some(ChosenPrompt {
                        label: ChosenLabel::N,
                        text: n.clone(),
                        rationale: format!(
                            "branch failure: augmentation branch failed ({})",
                            branch1_error.as_deref().unwrap_or("unknown")
                        ),
                    }),
                    None,
                ),
                (None, None) => (
                    Some(ChosenPrompt {
                        label: ChosenLabel::Input,
                        text: x_i.to_string(),
                        rationale: "both branches failed; returning the input".to_string(),
                    }),
                    Some(format!(
                        "both branches failed: augmentation: {}; rewrite: {}",
                        branch1_error.as_deref().unwrap_or("unknown"),
                        branch2_error.as_deref().unwrap_or("unknown")
                    )),
                ),
            }
        };
        timings.select_ms = select_start.elapsed().as_millis() as u64;
        timings.total_ms = total_start.elapsed().as_millis() as u64;
        if deterministic {
            timings = Timings::default();
        }

        Ok(OptimizationResult {
            input: x_i.to_string(),
            x_r,
            x_n,
            chosen,
            warning,
            merge_trace,
            retrieval,
            timings_ms: timings,
        })
    }

    /// Optimizes a batch with bounded concurrency; the output order always
    /// matches the input order, independent of the worker count.
    pub async fn optimize_batch(
        &self,
        prompts: &[String],
        workers: usize,
    ) -> Vec<Result<OptimizationResult, PipelineError>> {
        futures::stream::iter(prompts.iter().map(|p| self.optimize(p)))
            .buffered(workers.max(1))
            .collect()
            .await
    }
}

fn non_empty_validator(text: &str) -> Result<String, String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        Err("empty output".to_string())
    } else {
        Ok(trimmed.to_string())
    }
}
