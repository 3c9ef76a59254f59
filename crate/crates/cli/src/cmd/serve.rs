use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use rapo::pipeline::{
    OptimizationResult, Pipeline, PipelineError, DEFAULT_K_MODIFIERS, DEFAULT_K_SCENES,
    DEFAULT_MAX_REFACTOR_WORDS,
};

use crate::support::{build_pipeline, pipeline_options, BackendArgs};

#[derive(clap::Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Relation graph file built by `rapo build-graph`
    #[arg(long)]
    pub graph: PathBuf,
    /// Listen address; port 0 picks an ephemeral port
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = DEFAULT_K_SCENES)]
    pub k_scenes: usize,
    #[arg(long, default_value_t = DEFAULT_K_MODIFIERS)]
    pub k_modifiers: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_REFACTOR_WORDS)]
    pub max_refactor_words: usize,
    /// Few-shot merge examples file (JSONL with body/modifier/merged)
    #[arg(long)]
    pub merge_examples: Option<PathBuf>,
    /// corpus_stats.json whose median drives the selection fallback
    #[arg(long)]
    pub corpus_stats: Option<PathBuf>,
}

#[derive(Deserialize)]
struct OptimizeRequest {
    text: String,
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn optimize_handler(
    State(pipeline): State<Arc<Pipeline>>,
    Json(request): Json<OptimizeRequest>,
) -> Result<Json<OptimizationResult>, (StatusCode, Json<Value>)> {
    if request.text.trim().is_empty() {
        return Err((
            StatusCode::BAD_REQUEST,
            Json(json!({"error": "text must not be empty"})),
        ));
    }
    match pipeline.optimize(&request.text).await {
        Ok(result) => Ok(Json(result)),
        Err(PipelineError::EmptyInput) => Err((
            StatusCode::BAD_REQUEST,
            Json(json!({"error": "text must not be empty"})),
        )),
        Err(e) => Err((
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": e.to_string()})),
        )),
    }
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/optimize", post(optimize_handler))
        .with_state(pipeline)
}

pub async fn run(args: ServeArgs) -> Result<()> {
    let options = pipeline_options(
        args.k_scenes,
        args.k_modifiers,
        args.max_refactor_words,
        true,
        args.merge_examples.as_deref(),
        args.corpus_stats.as_deref(),
    )?;
    let pipeline = Arc::new(build_pipeline(&args.backend, &args.graph, options).await?);
    let listener = tokio::net::TcpListener::bind(&args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    // Announce the bound address on stdout so callers using port 0 can
    // discover the actual port.
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(pipeline)).await?;
    Ok(())
}
