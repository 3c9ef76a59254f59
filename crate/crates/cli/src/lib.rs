//! Command line front end for the rapo prompt optimizer.

use clap::{Parser, Subcommand};

pub mod cmd;
pub mod support;

#[derive(Parser)]
#[command(
    name = "rapo",
    version,
    about = "Retrieval-augmented prompt optimization for text-to-video models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a relation graph from a prompt corpus
    BuildGraph(cmd::build_graph::BuildGraphArgs),
    /// Optimize a single prompt or a batch file
    Optimize(cmd::optimize::OptimizeArgs),
    /// Build the refactor instruction-tuning dataset
    PrepareRefactorData(cmd::refactor_data::RefactorDataArgs),
    /// Build the discriminator instruction-tuning dataset
    PrepareDiscriminatorData(cmd::discriminator_data::DiscriminatorDataArgs),
    /// Generate dimension-targeted user-style prompts
    SimulateUsers(cmd::simulate::SimulateArgs),
    /// Report word-length statistics and distances between corpora
    AnalyzeLengths(cmd::analyze::AnalyzeArgs),
    /// Serve the optimizer over HTTP
    Serve(cmd::serve::ServeArgs),
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildGraph(args) => cmd::build_graph::run(args).await,
        Command::Optimize(args) => cmd::optimize::run(args).await,
        Command::PrepareRefactorData(args) => cmd::refactor_data::run(args).await,
        Command::PrepareDiscriminatorData(args) => cmd::discriminator_data::run(args).await,
        Command::SimulateUsers(args) => cmd::simulate::run(args).await,
        Command::AnalyzeLengths(args) => cmd::analyze::run(args).await,
        Command::Serve(args) => cmd::serve::run(args).await,
    }
}
