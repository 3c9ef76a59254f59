//! The single abstraction every LLM call flows through: templates, a
//! backend (remote or fixture), bounded concurrency, retries, and an
//! optional transcript log.

pub mod extract;
pub mod fixture;
pub mod remote;
pub mod templates;
pub mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use thiserror::Error;
use tokio::sync::Semaphore;

pub use fixture::{key_for, FixtureBackend, FixtureError};
pub use remote::{RemoteChatBackend, RemoteConfig};
pub use templates::{
    bindings, select_instruction, PromptTemplate, TemplateError, TemplateId, TemplateSet,
    REFACTOR_INSTRUCTION_PREFIX, REFACTOR_INSTRUCTION_SUFFIX,
};
pub use transcript::Transcript;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;
pub const DEFAULT_GATEWAY_CONCURRENCY: usize = 8;

/// Decision-making calls run greedy; generative calls keep some sampling
/// freedom.
pub fn default_temperature(id: TemplateId) -> f64 {
    match id {
        TemplateId::Extract | TemplateId::Select | TemplateId::DimensionRoute => 0.0,
        TemplateId::Merge
        | TemplateId::Rewrite
        | TemplateId::Refactor
        | TemplateId::SimulateUser
        | TemplateId::PairDegrade => 0.7,
    }
}

#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub template_id: TemplateId,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub metadata: BTreeMap<String, String>,
}

impl LlmRequest {
    /// Request with the template's default temperature and token budget.
    pub fn new(template_id: TemplateId, rendered_prompt: impl Into<String>) -> Self {
        Self {
            template_id,
            rendered_prompt: rendered_prompt.into(),
            temperature: default_temperature(template_id),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub attempt: u32,
}

/// How a single backend call failed. Transient failures are retried by the
/// gateway; permanent ones short-circuit.
#[derive(Debug, Clone)]
pub enum BackendFailure {
    Transient(String),
    Permanent(String),
}

impl BackendFailure {
    fn reason(&self) -> &str {
        match self {
            BackendFailure::Transient(r) | BackendFailure::Permanent(r) => r,
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    /// Deterministic backends let callers pin timestamps and latencies so
    /// replayed runs are byte-identical.
    fn deterministic(&self) -> bool {
        false
    }
    async fn complete(&self, request: &LlmRequest) -> Result<String, BackendFailure>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("response rejected for {template} call: {reason}")]
    ResponseRejected { template: TemplateId, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(200),
            backoff_factor: 2.0,
        }
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    overrides: HashMap<TemplateId, Arc<dyn ChatBackend>>,
    templates: TemplateSet,
    retry: RetryPolicy,
    semaphore: Arc<Semaphore>,
    transcript: Option<Transcript>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            overrides: HashMap::new(),
            templates: TemplateSet::builtin(),
            retry: RetryPolicy::default(),
            semaphore: Arc::new(Semaphore::new(DEFAULT_GATEWAY_CONCURRENCY)),
            transcript: None,
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.semaphore = Arc::new(Semaphore::new(limit.max(1)));
        self
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    /// Routes one template's calls to a different backend — the hook for
    /// fine-tuned refactoring/discriminator endpoints.
    pub fn with_override(mut self, id: TemplateId, backend: Arc<dyn ChatBackend>) -> Self {
        self.overrides.insert(id, backend);
        self
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn set_template_body(&mut self, id: TemplateId, body: &str) {
        self.templates.set_body(id, body);
    }

    /// True when every routed backend is deterministic; callers then pin
    /// timings for byte-stable output.
    pub fn deterministic(&self) -> bool {
        self.backend.deterministic() && self.overrides.values().all(|b| b.deterministic())
    }

    fn backend_for(&self, id: TemplateId) -> &Arc<dyn ChatBackend> {
        self.overrides.get(&id).unwrap_or(&self.backend)
    }

    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, GatewayError> {
        Ok(self.templates.render(id, bindings)?)
    }

    /// One logical call: bounded by the concurrency limit, retried with
    /// exponential backoff on transient failures, logged to the transcript.
    pub async fn complete(&self, request: LlmRequest) -> Result<LlmResponse, GatewayError> {
        if request.rendered_prompt.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "rendered prompt is empty".to_string(),
            ));
        }
        let _permit = self
            .semaphore
            .acquire()
            .await
            .expect("gateway semaphore never closes");
        let backend = self.backend_for(request.template_id);
        let deterministic = self.deterministic();
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let start = Instant::now();
            match backend.complete(&request).await {
                Ok(text) => {
                    let latency_ms = if deterministic {
                        0
                    } else {
                        start.elapsed().as_millis() as u64
                    };
                    let response = LlmResponse {
                        text,
                        backend_id: backend.id().to_string(),
                        latency_ms,
                        attempt,
                    };
                    if let Some(t) = &self.transcript {
                        t.append(
                            request.template_id.as_str(),
                            &response.backend_id,
                            attempt,
                            latency_ms,
                            &request.rendered_prompt,
                            Ok(&response.text),
                        )?;
                    }
                    return Ok(response);
                }
                Err(failure) => {
                    let transient = matches!(failure, BackendFailure::Transient(_));
                    let out_of_attempts = attempt >= self.retry.max_attempts;
                    if !transient || out_of_attempts {
                        if let Some(t) = &self.transcript {
                            t.append(
                                request.template_id.as_str(),
                                backend.id(),
                                attempt,
                                0,
                                &request.rendered_prompt,
                                Err(failure.reason()),
                            )?;
                        }
                        return Err(GatewayError::BackendUnavailable {
                            attempts: attempt,
                            reason: failure.reason().to_string(),
                        });
                    }
                    tokio::time::sleep(backoff).await;
                    backoff = backoff.mul_f64(self.retry.backoff_factor);
                }
            }
        }
    }

    /// `complete` plus a validator; a rejected response earns exactly one
    /// re-ask before the call fails with `ResponseRejected`.
    pub async fn complete_validated<T>(
        &self,
        request: LlmRequest,
        validate: impl Fn(&str) -> Result<T, String> + Send,
    ) -> Result<(T, LlmResponse), GatewayError> {
        let template = request.template_id;
        let first = self.complete(request.clone()).await?;
        let first_reason = match validate(&first.text) {
            Ok(value) => return Ok((value, first)),
            Err(reason) => reason,
        };
        let mut retry_request = request;
        retry_request
            .metadata
            .insert("validation_retry".to_string(), "1".to_string());
        let second = self.complete(retry_request).await?;
        match validate(&second.text) {
            Ok(value) => Ok((value, second)),
            Err(second_reason) => Err(GatewayError::ResponseRejected {
                template,
                reason: format!("{first_reason}; after re-ask: {second_reason}"),
            }),
        }
    }
}
