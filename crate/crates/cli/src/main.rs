//! Command-line front end for the gaze-attention experiment pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gazeattn::corpus::BinningMode;
use gazeattn::model::AttentionSource;
use gazeattn::pipeline::config::DataConfig;
use gazeattn::pipeline::{self, Command, ExperimentConfig, HeatmapRequest};

#[derive(Debug, Parser)]
#[command(
    name = "gazeattn",
    version,
    about = "Compare machine attention of sentiment classifiers with human eye-tracking data"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the root seed of the configuration.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    out: PathBuf,

    /// Worker threads for independent grid cells and batches (default: all cores).
    #[arg(long, global = true, value_name = "INT")]
    jobs: Option<usize>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Read the corpus files and write the canonical dataset and ingestion report.
    Ingest(IngestArgs),
    /// Run the full grid: train, extract, compare, ANOVA (and multitask when configured).
    Experiment,
    /// Train the grid and write machine attention for the test sentences.
    Extract,
    /// Train, extract and compute all comparison metrics.
    Compare,
    /// Train, extract and run the attention-shape ANOVAs.
    Anova,
    /// Fine-tune with gaze supervision and write before/after deltas.
    Multitask,
    /// Render one sentence's attention sources as an SVG heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Gaze TSV (used instead of the configuration's data section).
    #[arg(long, value_name = "PATH", requires = "labels")]
    gaze: Option<PathBuf>,
    /// Sentence-label TSV.
    #[arg(long, value_name = "PATH", requires = "gaze")]
    labels: Option<PathBuf>,
    /// Treebank TSV (optional for ingestion).
    #[arg(long, value_name = "PATH", requires = "gaze")]
    treebank: Option<PathBuf>,
    /// Label binning: ternary or binary.
    #[arg(long, value_name = "MODE", requires = "gaze")]
    mode: Option<BinningMode>,
    /// Positive sentiment word list.
    #[arg(long, value_name = "PATH", requires_all = ["gaze", "negative"])]
    positive: Option<PathBuf>,
    /// Negative sentiment word list.
    #[arg(long, value_name = "PATH", requires_all = ["gaze", "positive"])]
    negative: Option<PathBuf>,
    /// POS lexicon TSV.
    #[arg(long, value_name = "PATH", requires = "gaze")]
    pos_lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Sentence id of the eye-tracking corpus.
    #[arg(long = "sentence", value_name = "ID")]
    sentence_id: String,
    /// Comma-separated sources: MA, MA_ft, RAN, nFix, FFD, TRT, RRT.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    sources: Vec<AttentionSource>,
    /// Grid cell id of the machine attention (default: the primary cell).
    #[arg(long, value_name = "ID")]
    cell: Option<String>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let Some(path) = &cli.config else {
        bail!("--config <PATH> is required for this command");
    };
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn ingest_config(cli: &Cli, args: &IngestArgs) -> Result<ExperimentConfig> {
    match (&args.gaze, &cli.config) {
        (Some(gaze), _) => {
            let mode = args
                .mode
                .context("--mode is required when corpus files are given on the command line")?;
            let data = DataConfig {
                gaze: gaze.clone(),
                labels: args.labels.clone().expect("clap enforces --labels"),
                treebank: args.treebank.clone(),
                positive_words: args.positive.clone(),
                negative_words: args.negative.clone(),
                pos_lexicon: args.pos_lexicon.clone(),
            };
            Ok(ExperimentConfig::for_ingest(
                data,
                mode,
                cli.seed.unwrap_or(0),
            )?)
        }
        (None, Some(_)) => load_config(cli),
        (None, None) => bail!("ingest needs either --config <PATH> or --gaze/--labels/--mode"),
    }
}

fn run_command(cli: &Cli, command: Command, config: &ExperimentConfig) -> Result<()> {
    let (manifest, _) = pipeline::run(config, command, &cli.out).with_context(|| {
        format!(
            "`{}` failed; see {}",
            command.name(),
            cli.out.join(command.manifest_file()).display()
        )
    })?;
    println!(
        "{}: {} output file(s) in {} (manifest: {})",
        command.name(),
        manifest.outputs.len(),
        cli.out.display(),
        command.manifest_file()
    );
    for note in &manifest.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Cmd::Ingest(args) => run_command(cli, Command::Ingest, &ingest_config(cli, args)?),
        Cmd::Experiment => run_command(cli, Command::Experiment, &load_config(cli)?),
        Cmd::Extract => run_command(cli, Command::Extract, &load_config(cli)?),
        Cmd::Compare => run_command(cli, Command::Compare, &load_config(cli)?),
        Cmd::Anova => run_command(cli, Command::Anova, &load_config(cli)?),
        Cmd::Multitask => run_command(cli, Command::Multitask, &load_config(cli)?),
        Cmd::Heatmap(args) => {
            let config = load_config(cli)?;
            let req = HeatmapRequest {
                sentence_id: args.sentence_id.clone(),
                sources: args.sources.clone(),
                cell: args.cell.clone(),
            };
            let path = pipeline::run_heatmap(&config, &cli.out, &req)?;
            println!("heatmap: {}", display_relative(&path));
            Ok(())
        }
    }
}

fn display_relative(p: &Path) -> String {
    std::env::current_dir()
        .ok()
        .and_then(|cwd| p.strip_prefix(cwd).ok().map(|r| r.display().to_string()))
        .unwrap_or_else(|| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
