use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;

use rapo::dataset::{simulate_user_prompts, DimensionSet};
use rapo::io::{read_prompts, CorpusFilter, CorpusFormat};

use crate::support::{build_gateway, BackendArgs};

#[derive(clap::Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// How many prompts to request
    #[arg(long)]
    pub n: usize,
    /// Seed phrases, one per line, cycled across requests
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Write prompts here instead of stdout (JSONL with text/dimension)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated dimension names; "other" is always included
    #[arg(long)]
    pub dimensions: Option<String>,
    /// Concurrent generation requests
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub async fn run(args: SimulateArgs) -> Result<()> {
    let gateway = build_gateway(&args.backend)?;
    let dimensions = match &args.dimensions {
        Some(names) => DimensionSet::from_names(names.split(','))?,
        None => DimensionSet::builtin(),
    };
    let seeds = match &args.seeds {
        Some(path) => {
            read_prompts(path, CorpusFormat::Text, &CorpusFilter::default(), None)?.0
        }
        None => Vec::new(),
    };
    let (prompts, summary) =
        simulate_user_prompts(&gateway, &dimensions, &seeds, args.n, args.workers).await?;
    let lines: Vec<String> = prompts
        .iter()
        .map(|p| serde_json::to_string(p).expect("prompt serialize"))
        .collect();
    match &args.out {
        Some(path) => rapo::io::write_lines(path, &lines)?,
        None => {
            let stdout = std::io::stdout();
            let mut handle = stdout.lock();
            for line in &lines {
                writeln!(handle, "{line}")?;
            }
        }
    }
    eprintln!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
