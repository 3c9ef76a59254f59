use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use rapo::analytics::{
    distribution_distance, histogram_csv, length_distribution, write_corpus_stats, CorpusStats,
    LengthDistribution,
};
use rapo::io::{read_prompts, resolve_format, CorpusFilter, CorpusFormat};

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    /// Corpus files to analyze; the first is treated as the reference corpus
    #[arg(required = true)]
    pub corpora: Vec<PathBuf>,
    /// Write a per-corpus histogram CSV into this directory
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    /// Write the first corpus's summary here; feeds `optimize --corpus-stats`
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    /// Corpus format for every file; inferred per file when omitted
    #[arg(long)]
    pub format: Option<CorpusFormat>,
}

fn label_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub async fn run(args: AnalyzeArgs) -> Result<()> {
    let mut distributions: Vec<LengthDistribution> = Vec::new();
    for path in &args.corpora {
        let format = resolve_format(args.format, path);
        let (prompts, _) = read_prompts(path, format, &CorpusFilter::default(), None)?;
        let dist = length_distribution(&prompts, &label_for(path))
            .with_context(|| format!("analyzing {}", path.display()))?;
        println!(
            "corpus {}: n={} mean={} median={} p10={} p90={}",
            dist.label, dist.n, dist.mean, dist.median, dist.p10, dist.p90
        );
        distributions.push(dist);
    }
    for i in 0..distributions.len() {
        for j in (i + 1)..distributions.len() {
            println!(
                "distance {} <-> {}: {}",
                distributions[i].label,
                distributions[j].label,
                distribution_distance(&distributions[i], &distributions[j])
            );
        }
    }
    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        for dist in &distributions {
            let path = dir.join(format!("{}.csv", dist.label));
            std::fs::write(&path, histogram_csv(dist))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if let Some(path) = &args.stats_out {
        write_corpus_stats(path, &CorpusStats::from(&distributions[0]))?;
    }
    Ok(())
}
