use std::path::PathBuf;

use anyhow::Result;

use rapo::dataset::build_refactor_dataset;
use rapo::io::{read_prompts, resolve_format, CorpusFilter, CorpusFormat};

use crate::support::{build_gateway, print_summary, BackendArgs};

#[derive(clap::Args)]
pub struct RefactorDataArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Training captions (plain lines, or JSONL with a "text" field)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the dataset (JSONL instruction/input/output rows)
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus format; inferred from the extension when omitted
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// Corpus filter: "nonempty", "all", or "words:MIN..MAX"
    #[arg(long, default_value = "nonempty")]
    pub filter: CorpusFilter,
    /// Stop after writing N pairs
    #[arg(long)]
    pub limit: Option<usize>,
    /// Concurrent degradation requests
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub async fn run(args: RefactorDataArgs) -> Result<()> {
    let format = resolve_format(args.format, &args.corpus);
    let (captions, _) = read_prompts(&args.corpus, format, &args.filter, None)?;
    let gateway = build_gateway(&args.backend)?;
    let summary =
        build_refactor_dataset(&gateway, &captions, &args.out, args.limit, args.workers).await?;
    print_summary(&summary)
}
