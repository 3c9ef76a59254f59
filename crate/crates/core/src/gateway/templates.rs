//! Prompt templates for every LLM-touching operation.
//!
//! Bodies use `{name}` placeholders. Rendering is a single forward pass, so
//! braces inside bound values are never re-interpreted.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Extract,
    Merge,
    Rewrite,
    Refactor,
    Select,
    SimulateUser,
    DimensionRoute,
    PairDegrade,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Extract,
        TemplateId::Merge,
        TemplateId::Rewrite,
        TemplateId::Refactor,
        TemplateId::Select,
        TemplateId::SimulateUser,
        TemplateId::DimensionRoute,
        TemplateId::PairDegrade,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Extract => "extract",
            TemplateId::Merge => "merge",
            TemplateId::Rewrite => "rewrite",
            TemplateId::Refactor => "refactor",
            TemplateId::Select => "select",
            TemplateId::SimulateUser => "simulate_user",
            TemplateId::DimensionRoute => "dimension_route",
            TemplateId::PairDegrade => "pair_degrade",
        }
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing placeholder {0:?}")]
    MissingPlaceholder(String),
}

/// The exact instruction wording used both by the refactoring operation and
/// by every exported refactoring training row: prefix + sentence + suffix.
pub const REFACTOR_INSTRUCTION_PREFIX: &str = "Refine format and word length of the sentence: ";
pub const REFACTOR_INSTRUCTION_SUFFIX: &str = ". Maintain the original subject descriptions, \
     actions, scene descriptions. Append additional straightforward actions to make the sentence \
     more dynamic if necessary.";

/// The exact instruction wording for the discriminator, parameterized over
/// the three prompts; also used verbatim in exported discriminator rows.
pub fn select_instruction(x_i: &str, x_r: &str, x_n: &str) -> String {
    format!(
        "Given user-provided prompt {x_i}, select the better optimized prompt from {x_r} and \
         {x_n}. The chosen prompt is required to contain multiple, straightforward, and relevant \
         modifiers about {x_i} while involving the semantics of {x_i}."
    )
}

const EXTRACT_BODY: &str = "\
You label video caption prompts. Read the prompt and report its scene plus subject, action, and \
atmosphere modifiers.
Answer with exactly four lines in this format:
SCENE: <the core scene or setting, a short phrase>
SUBJECTS: <comma-separated subject modifiers, or none>
ACTIONS: <comma-separated action modifiers, or none>
ATMOSPHERE: <comma-separated atmosphere modifiers, or none>
Prompt: {prompt}";

const MERGE_BODY: &str = "\
Suppose you are a Text Merger. You receive two inputs from the user: a description body and a \
relevant modifier. Your task is to enrich the description body with relevant modifiers while \
retaining the description body. You should ensure that the output text is coherent, contextually \
relevant, and follows the same structure as the examples provided.
Examples of prompt-pairs provided: {examples}
Input description body and modifier are: {body}, {modifier}.
The merged prompt is:";

const REWRITE_BODY: &str = "\
Rewrite the prompt into one detailed video caption that matches the format and word length of \
typical training captions. Maintain the original subject descriptions, actions, scene \
descriptions. Append additional straightforward actions to make the sentence more dynamic if \
necessary.
Prompt: {prompt}
The rewritten prompt is:";

const SELECT_SUFFIX: &str = "\nAnswer with exactly one letter: R for the first optimized prompt, \
     N for the second.";

const SIMULATE_USER_BODY: &str = "\
You imitate a user of a text-to-video tool. Write one short, plain prompt such a user might \
type. The prompt should exercise the {dimension} evaluation dimension. Style example: {seed}. \
Keep it under 15 words and reply with the prompt only.
Request number: {index}";

const DIMENSION_ROUTE_BODY: &str = "\
Classify the prompt into exactly one evaluation dimension from this list: {dimensions}.
Prompt: {prompt}
Reply with the dimension name only.";

const PAIR_DEGRADE_BODY: &str = "\
Rewrite the caption so it keeps the same meaning but breaks the caption's format: vary the \
sentence structure, reorder the phrasing, and change the length. Do not copy the caption \
verbatim.
Caption: {caption}
The rewritten caption is:";

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

fn placeholder_at(body: &str, open: usize) -> Option<(String, usize)> {
    let rest = &body[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        return None;
    }
    Some((name.to_string(), open + 1 + close + 1))
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: &str) -> Self {
        let mut required = BTreeSet::new();
        let mut at = 0;
        while let Some(rel) = body[at..].find('{') {
            let open = at + rel;
            match placeholder_at(body, open) {
                Some((name, end)) => {
                    required.insert(name);
                    at = end;
                }
                None => at = open + 1,
            }
        }
        Self {
            id,
            body: body.to_string(),
            required_placeholders: required,
        }
    }

    /// Substitutes every placeholder verbatim. Unbound placeholders error;
    /// extra bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        let mut at = 0;
        while let Some(rel) = self.body[at..].find('{') {
            let open = at + rel;
            out.push_str(&self.body[at..open]);
            match placeholder_at(&self.body, open) {
                Some((name, end)) => {
                    let value = bindings
                        .get(&name)
                        .ok_or(TemplateError::MissingPlaceholder(name))?;
                    out.push_str(value);
                    at = end;
                }
                None => {
                    out.push('{');
                    at = open + 1;
                }
            }
        }
        out.push_str(&self.body[at..]);
        Ok(out)
    }
}

/// All registered templates; individual bodies can be overridden (e.g. from
/// a file) without touching the rest.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    map: HashMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let refactor_body = format!(
            "{REFACTOR_INSTRUCTION_PREFIX}{{sentence}}{REFACTOR_INSTRUCTION_SUFFIX}"
        );
        let select_body = format!("{}{SELECT_SUFFIX}", select_instruction("{x_i}", "{x_r}", "{x_n}"));
        let mut map = HashMap::new();
        for template in [
            PromptTemplate::new(TemplateId::Extract, EXTRACT_BODY),
            PromptTemplate::new(TemplateId::Merge, MERGE_BODY),
            PromptTemplate::new(TemplateId::Rewrite, REWRITE_BODY),
            PromptTemplate::new(TemplateId::Refactor, &refactor_body),
            PromptTemplate::new(TemplateId::Select, &select_body),
            PromptTemplate::new(TemplateId::SimulateUser, SIMULATE_USER_BODY),
            PromptTemplate::new(TemplateId::DimensionRoute, DIMENSION_ROUTE_BODY),
            PromptTemplate::new(TemplateId::PairDegrade, PAIR_DEGRADE_BODY),
        ] {
            map.insert(template.id, template);
        }
        Self { map }
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        self.map.get(&id).expect("all template ids registered")
    }

    /// Replaces one template body, keeping the id's registration.
    pub fn set_body(&mut self, id: TemplateId, body: &str) {
        self.map.insert(id, PromptTemplate::new(id, body));
    }

    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, TemplateError> {
        self.get(id).render(bindings)
    }
}

/// Convenience for building binding maps.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
