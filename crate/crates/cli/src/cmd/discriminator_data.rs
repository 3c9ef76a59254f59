use std::path::PathBuf;

use anyhow::Result;

use rapo::dataset::{build_discriminator_dataset, load_labels, DimensionSet, LabelSource};
use rapo::io::{read_prompt_items, resolve_format, CorpusFilter, CorpusFormat};
use rapo::pipeline::{DEFAULT_K_MODIFIERS, DEFAULT_K_SCENES, DEFAULT_MAX_REFACTOR_WORDS};

use crate::support::{build_pipeline, pipeline_options, BackendArgs};

#[derive(clap::Args)]
pub struct DiscriminatorDataArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// User prompts (plain lines, or JSONL with "text" and optional "id")
    #[arg(long)]
    pub prompts: PathBuf,
    /// Relation graph file built by `rapo build-graph`
    #[arg(long)]
    pub graph: PathBuf,
    /// Where to write the dataset
    #[arg(long)]
    pub out: PathBuf,
    /// Labels file with {"id","y_d"} lines; without it the deterministic
    /// length-proximity rule labels each row
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Comma-separated dimension names; "other" is always included
    #[arg(long)]
    pub dimensions: Option<String>,
    /// Prompts file format; inferred from the extension when omitted
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    #[arg(long, default_value_t = DEFAULT_K_SCENES)]
    pub k_scenes: usize,
    #[arg(long, default_value_t = DEFAULT_K_MODIFIERS)]
    pub k_modifiers: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_REFACTOR_WORDS)]
    pub max_refactor_words: usize,
    /// Few-shot merge examples file (JSONL with body/modifier/merged)
    #[arg(long)]
    pub merge_examples: Option<PathBuf>,
    /// corpus_stats.json whose median drives the heuristic labels
    #[arg(long)]
    pub corpus_stats: Option<PathBuf>,
    /// Concurrent prompts
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub async fn run(args: DiscriminatorDataArgs) -> Result<()> {
    let format = resolve_format(args.format, &args.prompts);
    let (items, _) = read_prompt_items(&args.prompts, format, &CorpusFilter::default(), None)?;
    let options = pipeline_options(
        args.k_scenes,
        args.k_modifiers,
        args.max_refactor_words,
        false,
        args.merge_examples.as_deref(),
        args.corpus_stats.as_deref(),
    )?;
    let pipeline = build_pipeline(&args.backend, &args.graph, options).await?;
    let dimensions = match &args.dimensions {
        Some(names) => DimensionSet::from_names(names.split(','))?,
        None => DimensionSet::builtin(),
    };
    let label_source = match &args.labels {
        Some(path) => LabelSource::File(load_labels(path)?),
        None => LabelSource::Heuristic,
    };
    let summary = build_discriminator_dataset(
        &pipeline,
        &items,
        &dimensions,
        &label_source,
        &args.out,
        args.workers,
    )
    .await?;
    crate::support::print_summary(&summary)
}
