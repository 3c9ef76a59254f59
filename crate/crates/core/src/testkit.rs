//! Fixture authoring for offline, reproducible runs.
//!
//! A fixture file must hold a canned response for every prompt the toolkit
//! will render. [`FixtureAuthor`] builds such files by rendering requests
//! with the same helper functions the live code paths call, so authored
//! keys can never drift from the requests they serve. [`FixtureAuthor::plan_optimize`]
//! goes further and replays the full optimize call sequence — retrieval,
//! merge fold, refactor, rewrite, selection — returning the values the
//! pipeline is then guaranteed to produce.

use std::path::Path;

use crate::dataset::{
    rendered_degrade_prompt, rendered_route_prompt, rendered_simulate_prompt, DimensionSet,
};
use crate::embed::Embedder;
use crate::gateway::extract::rendered_extract_prompt;
use crate::gateway::{FixtureBackend, FixtureError, TemplateSet};
use crate::graph::RelationGraph;
use crate::pipeline::{
    format_merge_examples, rendered_merge_prompt, rendered_refactor_prompt,
    rendered_rewrite_prompt, rendered_select_prompt, PipelineOptions,
};
use crate::retrieval::{retrieve_modifiers, retrieve_scenes, RetrievalError};

fn list_or_none(items: &[&str]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join(", ")
    }
}

/// Composes a structured extraction reply in the exact shape the parser
/// expects.
pub fn extraction_reply(
    scene: &str,
    subjects: &[&str],
    actions: &[&str],
    atmospheres: &[&str],
) -> String {
    format!(
        "SCENE: {scene}\nSUBJECTS: {}\nACTIONS: {}\nATMOSPHERE: {}",
        list_or_none(subjects),
        list_or_none(actions),
        list_or_none(atmospheres)
    )
}

/// What a planned optimize run will produce, for asserting against the real
/// pipeline output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptimizePlan {
    pub x_i: String,
    /// Augment-branch text after the merge fold, before refactoring.
    pub merged: String,
    pub x_r: String,
    pub x_n: String,
    /// Modifier texts in the order the fold consumes them.
    pub modifiers: Vec<String>,
}

pub struct FixtureAuthor {
    options: PipelineOptions,
    templates: TemplateSet,
    examples_text: String,
    backend: FixtureBackend,
}

impl FixtureAuthor {
    pub fn new(options: PipelineOptions) -> Self {
        Self::with_templates(options, TemplateSet::builtin())
    }

    pub fn with_templates(options: PipelineOptions, templates: TemplateSet) -> Self {
        let examples_text = format_merge_examples(&options.merge_examples);
        Self {
            options,
            templates,
            examples_text,
            backend: FixtureBackend::new(),
        }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    /// A snapshot of the fixtures authored so far.
    pub fn backend(&self) -> FixtureBackend {
        self.backend.clone()
    }

    pub fn into_backend(self) -> FixtureBackend {
        self.backend
    }

    pub fn save(&self, path: &Path) -> Result<(), FixtureError> {
        self.backend.save(path)
    }

    fn insert(&mut self, rendered: Result<String, crate::gateway::TemplateError>, reply: &str) {
        let rendered = rendered.expect("built-in template renders");
        self.backend.insert_prompt(&rendered, reply);
    }

    /// Registers a structured extraction answer for `prompt`.
    pub fn extraction(
        &mut self,
        prompt: &str,
        scene: &str,
        subjects: &[&str],
        actions: &[&str],
        atmospheres: &[&str],
    ) {
        let reply = extraction_reply(scene, subjects, actions, atmospheres);
        self.extraction_raw(prompt, &reply);
    }

    /// Registers a raw extraction reply (e.g. a malformed one, to exercise
    /// rejection paths).
    pub fn extraction_raw(&mut self, prompt: &str, reply: &str) {
        self.insert(rendered_extract_prompt(&self.templates, prompt), reply);
    }

    pub fn merge(&mut self, body: &str, modifier: &str, merged: &str) {
        self.insert(
            rendered_merge_prompt(&self.templates, &self.examples_text, body, modifier),
            merged,
        );
    }

    pub fn refactor(&mut self, sentence: &str, reply: &str) {
        self.insert(rendered_refactor_prompt(&self.templates, sentence), reply);
    }

    pub fn rewrite(&mut self, prompt: &str, reply: &str) {
        self.insert(rendered_rewrite_prompt(&self.templates, prompt), reply);
    }

    pub fn select_answer(&mut self, x_i: &str, x_r: &str, x_n: &str, answer: &str) {
        self.insert(rendered_select_prompt(&self.templates, x_i, x_r, x_n), answer);
    }

    pub fn degrade(&mut self, caption: &str, reply: &str) {
        self.insert(rendered_degrade_prompt(&self.templates, caption), reply);
    }

    pub fn simulate(&mut self, dimension: &str, seed: &str, index: usize, reply: &str) {
        self.insert(
            rendered_simulate_prompt(&self.templates, dimension, seed, index),
            reply,
        );
    }

    pub fn route(&mut self, dimensions: &DimensionSet, prompt: &str, reply: &str) {
        self.insert(rendered_route_prompt(&self.templates, dimensions, prompt), reply);
    }

    /// Replays the optimize call sequence for `x_i` against `graph`,
    /// registering a fixture for every request the pipeline will issue, and
    /// returns the outputs the pipeline must then produce. The closures
    /// decide what each stage answers; `select_answer`, when given, is the
    /// discriminator's raw reply (with `None` the pipeline will fall back
    /// deterministically or short-circuit on a tie).
    #[allow(clippy::too_many_arguments)]
    pub async fn plan_optimize<M, F, W>(
        &mut self,
        graph: &RelationGraph,
        embedder: &dyn Embedder,
        x_i: &str,
        merge_fn: M,
        refactor_fn: F,
        rewrite_fn: W,
        select_answer: Option<&str>,
    ) -> Result<OptimizePlan, RetrievalError>
    where
        M: Fn(&str, &str) -> String,
        F: Fn(&str) -> String,
        W: Fn(&str) -> String,
    {
        let x_i = x_i.trim().to_string();
        let scenes = retrieve_scenes(graph, embedder, &x_i, self.options.k_scenes).await?;
        let modifiers =
            retrieve_modifiers(graph, &scenes, embedder, &x_i, self.options.k_modifiers).await?;
        let mut current = x_i.clone();
        let mut modifier_texts = Vec::with_capacity(modifiers.len());
        for m in &modifiers {
            let next = merge_fn(&current, &m.text);
            self.merge(&current, &m.text, &next);
            modifier_texts.push(m.text.clone());
            current = next;
        }
        let x_r = refactor_fn(&current);
        self.refactor(&current, &x_r);
        let x_n = rewrite_fn(&x_i);
        self.rewrite(&x_i, &x_n);
        if let Some(answer) = select_answer {
            self.select_answer(&x_i, &x_r, &x_n, answer);
        }
        Ok(OptimizePlan {
            x_i,
            merged: current,
            x_r,
            x_n,
            modifiers: modifier_texts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::embed::LocalHashEmbedder;
    use crate::gateway::Gateway;
    use crate::graph::ExtractionRecord;
    use crate::pipeline::{ChosenLabel, Pipeline};

    #[test]
    fn extraction_replies_parse_back() {
        let reply = extraction_reply("a park", &["a dog", "a child"], &[], &["sunny"]);
        assert_eq!(
            reply,
            "SCENE: a park\nSUBJECTS: a dog, a child\nACTIONS: none\nATMOSPHERE: sunny"
        );
        let record =
            crate::gateway::extract::parse_extraction("src", &reply).unwrap();
        assert_eq!(record.scene, "a park");
        assert_eq!(record.subjects, vec!["a dog", "a child"]);
        assert!(record.actions.is_empty());
        assert_eq!(record.atmospheres, vec!["sunny"]);
    }

    #[tokio::test]
    async fn planned_runs_match_pipeline_output_exactly() {
        let embedder = LocalHashEmbedder;
        let mut graph = RelationGraph::new(&embedder);
        let record = ExtractionRecord::new(
            "corpus",
            "a quiet park",
            vec!["a golden dog".to_string()],
            vec!["chasing a ball".to_string()],
            vec![],
        )
        .unwrap();
        graph.add_record(&record, &embedder).await.unwrap();

        let options = PipelineOptions::default();
        let mut author = FixtureAuthor::new(options.clone());
        let plan = author
            .plan_optimize(
                &graph,
                &embedder,
                "a dog in a park",
                |current, modifier| format!("{current}, with {modifier}"),
                |merged| format!("refactored: {merged}"),
                |x_i| format!("rewritten: {x_i}"),
                Some("N"),
            )
            .await
            .unwrap();
        assert_eq!(plan.modifiers.len(), 2);

        let pipeline = Pipeline::new(
            Arc::new(graph),
            Arc::new(LocalHashEmbedder),
            Arc::new(Gateway::new(Arc::new(author.into_backend()))),
            options,
        );
        let result = pipeline.optimize("a dog in a park").await.unwrap();
        assert_eq!(result.x_r.as_deref(), Some(plan.x_r.as_str()));
        assert_eq!(result.x_n.as_deref(), Some(plan.x_n.as_str()));
        let chosen = result.chosen.unwrap();
        assert_eq!(chosen.label, ChosenLabel::N);
        assert_eq!(chosen.text, plan.x_n);
        assert_eq!(
            result
                .merge_trace
                .iter()
                .map(|e| e.modifier.clone())
                .collect::<Vec<_>>(),
            plan.modifiers
        );
        assert_eq!(result.merge_trace.last().unwrap().after, plan.merged);
    }

    #[test]
    fn authored_files_round_trip() {
        let mut author = FixtureAuthor::new(PipelineOptions::default());
        author.extraction("a child runs", "a park", &["a child"], &["running"], &[]);
        author.degrade("a red fox", "red fox a");
        author.route(&DimensionSet::builtin(), "a red fox", "object_class");
        author.simulate("object_class", "seed", 0, "a painted fox");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        author.save(&path).unwrap();
        let loaded = FixtureBackend::load(&path).unwrap();
        assert_eq!(loaded.len(), 4);
    }
}
