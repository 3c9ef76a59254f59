use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rapo::io::{read_prompt_items, resolve_format, CorpusFilter, CorpusFormat};
use rapo::pipeline::{
    OptimizationResult, DEFAULT_K_MODIFIERS, DEFAULT_K_SCENES, DEFAULT_MAX_REFACTOR_WORDS,
};

use crate::support::{build_pipeline, pipeline_options, BackendArgs};

#[derive(clap::Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["prompt", "batch"]))]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Relation graph file built by `rapo build-graph`
    #[arg(long)]
    pub graph: PathBuf,
    /// A single prompt to optimize
    #[arg(long)]
    pub prompt: Option<String>,
    /// Batch input file (plain lines, or JSONL with "text" and optional "id")
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Write results here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Batch file format; inferred from the extension when omitted
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// Scenes retrieved per prompt
    #[arg(long, default_value_t = DEFAULT_K_SCENES)]
    pub k_scenes: usize,
    /// Modifiers merged per prompt
    #[arg(long, default_value_t = DEFAULT_K_MODIFIERS)]
    pub k_modifiers: usize,
    /// Word budget for the refactored candidate
    #[arg(long, default_value_t = DEFAULT_MAX_REFACTOR_WORDS)]
    pub max_refactor_words: usize,
    /// Emit both candidates without running selection (chosen becomes null)
    #[arg(long)]
    pub no_select: bool,
    /// Concurrent prompts in a batch
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Few-shot merge examples file (JSONL with body/modifier/merged)
    #[arg(long)]
    pub merge_examples: Option<PathBuf>,
    /// corpus_stats.json whose median drives the selection fallback
    #[arg(long)]
    pub corpus_stats: Option<PathBuf>,
}

/// A batch output line: the result, plus the input's id when it had one.
#[derive(Serialize)]
struct BatchLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(flatten)]
    result: &'a OptimizationResult,
}

fn write_output(out: Option<&PathBuf>, lines: &[String]) -> Result<()> {
    match out {
        Some(path) => rapo::io::write_lines(path, lines)?,
        None => {
            let stdout = std::io::stdout();
            let mut handle = stdout.lock();
            for line in lines {
                writeln!(handle, "{line}")?;
            }
        }
    }
    Ok(())
}

pub async fn run(args: OptimizeArgs) -> Result<()> {
    let options = pipeline_options(
        args.k_scenes,
        args.k_modifiers,
        args.max_refactor_words,
        !args.no_select,
        args.merge_examples.as_deref(),
        args.corpus_stats.as_deref(),
    )?;
    let pipeline = build_pipeline(&args.backend, &args.graph, options).await?;

    if let Some(prompt) = &args.prompt {
        let result = pipeline
            .optimize(prompt)
            .await
            .context("optimizing prompt")?;
        let line = serde_json::to_string(&result)?;
        return write_output(args.out.as_ref(), &[line]);
    }

    let batch = args.batch.as_ref().expect("clap enforces prompt|batch");
    let format = resolve_format(args.format, batch);
    let (items, read) = read_prompt_items(batch, format, &CorpusFilter::default(), None)?;
    let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
    let results = pipeline.optimize_batch(&texts, args.workers).await;

    let mut lines = Vec::with_capacity(results.len());
    let mut failures = 0usize;
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(result) => {
                if let Some(warning) = &result.warning {
                    log::warn!("prompt {:?}: {warning}", item.text);
                }
                lines.push(serde_json::to_string(&BatchLine {
                    id: item.id.as_deref(),
                    result: &result,
                })?);
            }
            Err(e) => {
                log::error!("prompt {:?} failed: {e}", item.text);
                failures += 1;
            }
        }
    }
    write_output(args.out.as_ref(), &lines)?;
    log::info!(
        "optimized {} prompts ({} filtered on read, {} failed)",
        lines.len(),
        read.filtered + read.corrupt,
        failures
    );
    if failures > 0 {
        bail!("{failures} prompts produced no output");
    }
    Ok(())
}
