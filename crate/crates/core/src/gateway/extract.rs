//! Parsing of scene/modifier extraction output, plus the gateway-backed
//! extractor used during graph construction.

use std::sync::Arc;

use async_trait::async_trait;
use thiserror::Error;

use super::{bindings, Gateway, GatewayError, LlmRequest, TemplateId};
use crate::graph::{Extract, ExtractError, ExtractionRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractionParseError {
    #[error("no SCENE line found")]
    MissingScene,
    #[error("scene is empty after normalization (line {line:?})")]
    EmptyScene { line: String },
}

fn split_list(value: &str) -> Vec<String> {
    if value.trim().eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    value.split(',').map(|s| s.to_string()).collect()
}

/// Parses the strict line-keyed extraction format:
///
/// ```text
/// SCENE: park
/// SUBJECTS: a child, a dog
/// ACTIONS: running
/// ATMOSPHERE: sunny
/// ```
///
/// Keys are case-insensitive, the first occurrence of each wins, unknown
/// lines are ignored (models like to chat), list values split on commas,
/// and a bare `none` means an empty list. The SCENE line is mandatory.
pub fn parse_extraction(
    source_prompt: &str,
    llm_text: &str,
) -> Result<ExtractionRecord, ExtractionParseError> {
    let mut scene: Option<(String, String)> = None;
    let mut subjects: Option<Vec<String>> = None;
    let mut actions: Option<Vec<String>> = None;
    let mut atmospheres: Option<Vec<String>> = None;
    for raw in llm_text.lines() {
        let Some((key, value)) = raw.split_once(':') else {
            continue;
        };
        match key.trim().to_ascii_uppercase().as_str() {
            "SCENE" if scene.is_none() => {
                scene = Some((value.trim().to_string(), raw.trim().to_string()));
            }
            "SUBJECT" | "SUBJECTS" if subjects.is_none() => subjects = Some(split_list(value)),
            "ACTION" | "ACTIONS" if actions.is_none() => actions = Some(split_list(value)),
            "ATMOSPHERE" | "ATMOSPHERES" if atmospheres.is_none() => {
                atmospheres = Some(split_list(value));
            }
            _ => {}
        }
    }
    let (scene_value, scene_line) = scene.ok_or(ExtractionParseError::MissingScene)?;
    ExtractionRecord::new(
        source_prompt,
        &scene_value,
        subjects.unwrap_or_default(),
        actions.unwrap_or_default(),
        atmospheres.unwrap_or_default(),
    )
    .map_err(|_| ExtractionParseError::EmptyScene { line: scene_line })
}

/// Renders the extraction request exactly as [`LlmExtractor`] issues it,
/// so fixture authoring cannot drift from the live call.
pub fn rendered_extract_prompt(
    templates: &crate::gateway::TemplateSet,
    prompt: &str,
) -> Result<String, crate::gateway::TemplateError> {
    templates.render(TemplateId::Extract, &bindings([("prompt", prompt)]))
}

/// [`Extract`] implementation that asks the gateway's extract template and
/// parses the reply; one unparseable reply earns one re-ask, then the
/// prompt is rejected (skipped by graph builds). Backend unavailability is
/// fatal so a dead endpoint aborts instead of silently skipping a corpus.
pub struct LlmExtractor {
    gateway: Arc<Gateway>,
}

impl LlmExtractor {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

#[async_trait]
impl Extract for LlmExtractor {
    async fn extract(&self, prompt: &str) -> Result<ExtractionRecord, ExtractError> {
        let rendered = rendered_extract_prompt(self.gateway.templates(), prompt)
            .map_err(|e| ExtractError::Fatal(e.to_string()))?;
        let request = LlmRequest::new(TemplateId::Extract, rendered);
        match self
            .gateway
            .complete_validated(request, |text| {
                parse_extraction(prompt, text).map_err(|e| e.to_string())
            })
            .await
        {
            Ok((record, _)) => Ok(record),
            Err(GatewayError::ResponseRejected { reason, .. }) => {
                Err(ExtractError::Rejected(reason))
            }
            Err(other) => Err(ExtractError::Fatal(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FixtureBackend;

    #[test]
    fn parses_the_reference_output() {
        let record = parse_extraction(
            "a child runs in a sunny park",
            "SCENE: park\nSUBJECTS: a child\nACTIONS: running\nATMOSPHERE: sunny",
        )
        .unwrap();
        assert_eq!(record.scene, "park");
        assert_eq!(record.subjects, vec!["a child"]);
        assert_eq!(record.actions, vec!["running"]);
        assert_eq!(record.atmospheres, vec!["sunny"]);
    }

    #[test]
    fn missing_scene_is_an_error() {
        assert_eq!(
            parse_extraction("p", "SUBJECTS: a dog").unwrap_err(),
            ExtractionParseError::MissingScene
        );
        assert!(matches!(
            parse_extraction("p", "SCENE:   \nSUBJECTS: a dog").unwrap_err(),
            ExtractionParseError::EmptyScene { .. }
        ));
    }

    #[test]
    fn commas_split_lists_and_none_means_empty() {
        let record = parse_extraction(
            "p",
            "SCENE: park\nSUBJECTS: a dog, a cat\nACTIONS: none\nATMOSPHERE:",
        )
        .unwrap();
        assert_eq!(record.subjects, vec!["a dog", "a cat"]);
        assert!(record.actions.is_empty());
        assert!(record.atmospheres.is_empty());
    }

    #[test]
    fn chatter_and_duplicates_are_tolerated() {
        let record = parse_extraction(
            "p",
            "Sure! Here is the analysis.\nSCENE: a park\nSCENE: override attempt\nSUBJECTS: a child\nThanks!",
        )
        .unwrap();
        assert_eq!(record.scene, "a park");
        assert_eq!(record.subjects, vec!["a child"]);
    }

    #[tokio::test]
    async fn extractor_round_trips_through_fixtures() {
        let gateway = Gateway::new(Arc::new(FixtureBackend::new()));
        let rendered = gateway
            .render(TemplateId::Extract, &bindings([("prompt", "a child runs")]))
            .unwrap();
        let mut fixtures = FixtureBackend::new();
        fixtures.insert_prompt(&rendered, "SCENE: park\nSUBJECTS: a child\nACTIONS: running\nATMOSPHERE: none");
        let gateway = Arc::new(Gateway::new(Arc::new(fixtures)));
        let extractor = LlmExtractor::new(gateway);
        let record = extractor.extract("a child runs").await.unwrap();
        assert_eq!(record.scene, "park");

        let err = extractor.extract("prompt without fixture").await.unwrap_err();
        assert!(matches!(err, ExtractError::Fatal(_)));
    }

    #[tokio::test]
    async fn unparseable_fixture_rejects_after_reask() {
        let probe = Gateway::new(Arc::new(FixtureBackend::new()));
        let rendered = probe
            .render(TemplateId::Extract, &bindings([("prompt", "gibberish in")]))
            .unwrap();
        let mut fixtures = FixtureBackend::new();
        fixtures.insert_prompt(&rendered, "no structured output here");
        let extractor = LlmExtractor::new(Arc::new(Gateway::new(Arc::new(fixtures))));
        let err = extractor.extract("gibberish in").await.unwrap_err();
        assert!(matches!(err, ExtractError::Rejected(_)));
    }
}
