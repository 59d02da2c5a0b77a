mod cmd_detect;
mod cmd_embed;
mod cmd_run;
mod cmd_synth;
mod cmd_train;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

/// Histology tile analysis: synthetic data generation, nuclei detection,
/// five-class cell phenotyping, evaluation, and embedding projection.
#[derive(Parser)]
#[command(name = "phenotile", version, about)]
struct Cli {
    /// Global seed for every random component.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// JSON config file overriding built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic tiles with exact ground truth and a patch dataset.
    Synth(cmd_synth::SynthArgs),
    /// Split an image into fixed-size tiles, scoring artifacts.
    Tile(cmd_detect::TileArgs),
    /// Run the DoG nuclei detector over images.
    Detect(cmd_detect::DetectArgs),
    /// Sweep posterior thresholds and report mAP per threshold.
    EvalMap(cmd_detect::EvalMapArgs),
    /// Train classifier ensemble members on a synthetic dataset.
    Train(cmd_train::TrainArgs),
    /// Classify dataset patches with trained members.
    Classify(cmd_train::ClassifyArgs),
    /// Compute a classification report from predictions.
    Report(cmd_train::ReportArgs),
    /// Extract (concatenated) hidden-layer embeddings for patches.
    Embed(cmd_embed::EmbedArgs),
    /// Project embeddings to 2-D with exact t-SNE.
    Tsne(cmd_embed::TsneArgs),
    /// Full pipeline over a tile directory: detect, classify, report.
    Run(cmd_run::RunArgs),
    /// Import VGG Image Annotator JSON into ground-truth files.
    ImportVia(cmd_run::ImportViaArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("rayon pool initialized once");
    }
    let ctx = match config::Context::load(cli.seed, cli.config.as_deref(), cli.out.clone()) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    };
    let outcome: Result<i32> = match cli.command {
        Command::Synth(args) => cmd_synth::run(&ctx, args),
        Command::Tile(args) => cmd_detect::tile(&ctx, args),
        Command::Detect(args) => cmd_detect::detect(&ctx, args),
        Command::EvalMap(args) => cmd_detect::eval_map(&ctx, args),
        Command::Train(args) => cmd_train::train(&ctx, args),
        Command::Classify(args) => cmd_train::classify(&ctx, args),
        Command::Report(args) => cmd_train::report(&ctx, args),
        Command::Embed(args) => cmd_embed::embed(&ctx, args),
        Command::Tsne(args) => cmd_embed::tsne(&ctx, args),
        Command::Run(args) => cmd_run::run(&ctx, args),
        Command::ImportVia(args) => cmd_run::import_via(&ctx, args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
