use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use rapo::gateway::extract::LlmExtractor;
use rapo::graph::build_graph;
use rapo::io::{read_prompts, resolve_format, CorpusFilter, CorpusFormat};

use crate::support::{build_embedder, build_gateway, print_summary, BackendArgs};

#[derive(clap::Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Prompt corpus (plain lines, or JSONL with a "text" field)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the graph file
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus format; inferred from the extension when omitted
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// Corpus filter: "nonempty", "all", or "words:MIN..MAX"
    #[arg(long, default_value = "nonempty")]
    pub filter: CorpusFilter,
    /// Only ingest the first N kept prompts
    #[arg(long)]
    pub limit: Option<usize>,
    /// Concurrent extraction requests
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Serialize)]
struct Summary {
    lines: usize,
    kept: usize,
    filtered: usize,
    corrupt: usize,
    prompts_in: usize,
    extracted: usize,
    extraction_failures: usize,
    scenes: usize,
    modifiers: usize,
}

pub async fn run(args: BuildGraphArgs) -> Result<()> {
    let format = resolve_format(args.format, &args.corpus);
    let (prompts, read) = read_prompts(&args.corpus, format, &args.filter, args.limit)?;
    let gateway = build_gateway(&args.backend)?;
    let embedder = build_embedder(&args.backend).await?;
    let extractor = LlmExtractor::new(gateway);
    let (graph, build) = build_graph(prompts, &extractor, embedder.as_ref(), args.workers).await?;
    graph
        .save(&args.out)
        .with_context(|| format!("writing graph {}", args.out.display()))?;
    print_summary(&Summary {
        lines: read.lines,
        kept: read.kept,
        filtered: read.filtered,
        corrupt: read.corrupt,
        prompts_in: build.prompts_in,
        extracted: build.extracted,
        extraction_failures: build.extraction_failures,
        scenes: graph.scene_count(),
        modifiers: graph.modifier_count(),
    })
}
