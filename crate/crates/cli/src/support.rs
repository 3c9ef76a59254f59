//! Shared assembly of backends, embedders, and pipelines from CLI flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;

use rapo::analytics::read_corpus_stats;
use rapo::embed::{CachedEmbedder, Embedder, LocalHashEmbedder, RemoteEmbedder};
use rapo::gateway::{
    FixtureBackend, Gateway, RemoteChatBackend, RemoteConfig, TemplateId, Transcript,
};
use rapo::graph::RelationGraph;
use rapo::pipeline::{load_merge_examples, Pipeline, PipelineOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    /// Deterministic hash embedding, no network needed
    Local,
    /// HTTP embedding endpoint configured via RAPO_EMBED_* variables
    Remote,
}

/// Flags shared by every command that talks to an LLM backend.
#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// Canned-response file; replaces the remote chat backend for offline runs
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Embedding backend
    #[arg(long, value_enum, default_value_t = EmbedderKind::Local)]
    pub embedder: EmbedderKind,
    /// Append-only embedding cache file
    #[arg(long)]
    pub embed_cache: Option<PathBuf>,
    /// Write a JSONL transcript of every chat request
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Maximum in-flight chat requests
    #[arg(long)]
    pub gateway_concurrency: Option<usize>,
    /// Model name serving the refactor template (remote backend only)
    #[arg(long)]
    pub refactor_model: Option<String>,
    /// Model name serving the selection template (remote backend only)
    #[arg(long)]
    pub select_model: Option<String>,
}

pub fn build_gateway(args: &BackendArgs) -> Result<Arc<Gateway>> {
    if args.fixtures.is_some() && (args.refactor_model.is_some() || args.select_model.is_some()) {
        bail!("--refactor-model/--select-model need the remote backend; drop --fixtures");
    }
    let mut gateway = match &args.fixtures {
        Some(path) => {
            let fixtures = FixtureBackend::load(path)
                .with_context(|| format!("loading fixtures {}", path.display()))?;
            Gateway::new(Arc::new(fixtures))
        }
        None => {
            let config = RemoteConfig::from_env().map_err(|e| anyhow!(e))?;
            Gateway::new(Arc::new(RemoteChatBackend::new(config)))
        }
    };
    for (flag, template) in [
        (&args.refactor_model, TemplateId::Refactor),
        (&args.select_model, TemplateId::Select),
    ] {
        if let Some(model) = flag {
            let config = RemoteConfig {
                model: model.clone(),
                ..RemoteConfig::from_env().map_err(|e| anyhow!(e))?
            };
            gateway = gateway.with_override(template, Arc::new(RemoteChatBackend::new(config)));
        }
    }
    if let Some(limit) = args.gateway_concurrency {
        gateway = gateway.with_concurrency(limit);
    }
    if let Some(path) = &args.transcript {
        let deterministic = gateway.deterministic();
        let transcript = Transcript::create(path, deterministic)
            .with_context(|| format!("creating transcript {}", path.display()))?;
        gateway = gateway.with_transcript(transcript);
    }
    Ok(Arc::new(gateway))
}

pub async fn build_embedder(args: &BackendArgs) -> Result<Arc<dyn Embedder>> {
    let base: Box<dyn Embedder> = match args.embedder {
        EmbedderKind::Local => Box::new(LocalHashEmbedder),
        EmbedderKind::Remote => Box::new(RemoteEmbedder::from_env().await?),
    };
    Ok(match &args.embed_cache {
        Some(path) => Arc::new(CachedEmbedder::open(path, base)?),
        None => Arc::from(base),
    })
}

pub fn load_graph(path: &Path, embedder: &dyn Embedder) -> Result<RelationGraph> {
    let graph = RelationGraph::load(path)
        .with_context(|| format!("loading graph {}", path.display()))?;
    graph.check_backend(embedder)?;
    Ok(graph)
}

/// Pipeline options from the flags common to optimize-style commands.
pub fn pipeline_options(
    k_scenes: usize,
    k_modifiers: usize,
    max_refactor_words: usize,
    run_select: bool,
    merge_examples: Option<&Path>,
    corpus_stats: Option<&Path>,
) -> Result<PipelineOptions> {
    let mut options = PipelineOptions {
        k_scenes,
        k_modifiers,
        max_refactor_words,
        run_select,
        ..PipelineOptions::default()
    };
    if let Some(path) = merge_examples {
        options.merge_examples = load_merge_examples(path)?;
    }
    if let Some(path) = corpus_stats {
        options.reference_median_words = read_corpus_stats(path)?.median;
    }
    Ok(options)
}

pub async fn build_pipeline(
    backend: &BackendArgs,
    graph_path: &Path,
    options: PipelineOptions,
) -> Result<Pipeline> {
    let gateway = build_gateway(backend)?;
    let embedder = build_embedder(backend).await?;
    let graph = load_graph(graph_path, embedder.as_ref())?;
    Ok(Pipeline::new(Arc::new(graph), embedder, gateway, options))
}

/// Prints a serializable summary as one JSON line on stdout.
pub fn print_summary<T: serde::Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}
