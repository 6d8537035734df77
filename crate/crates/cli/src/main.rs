use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use config::RunConfig;
use error::CliError;

/// Self-supervised ECG representation learning pipeline.
#[derive(Debug, Parser)]
#[command(name = "ecg-ssl", version)]
struct Cli {
    /// TOML run configuration. Defaults to $ECG_SSL_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts and run_manifest.json.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker count. Recorded in the manifest; work runs on one thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic two-class emotion proxy as preprocessed windows.
    Synth(SynthArgs),
    /// Resample, filter, normalise and segment a directory of raw CSV recordings.
    Preprocess(PreprocessArgs),
    /// Expand segments into the balanced seven-class pretext set.
    MakePretext(MakePretextArgs),
    /// Train the transformation-recognition network.
    TrainPretext(TrainPretextArgs),
    /// Train the emotion classifier on a frozen pretext trunk.
    TrainDownstream(TrainDownstreamArgs),
    /// Score a checkpoint, or run k-fold transfer evaluation with --folds.
    Eval(EvalArgs),
    /// Sweep transformation parameters.
    Sweep(SweepArgs),
    /// Self-supervised against fully-supervised on the same folds.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    subjects: Option<usize>,
    /// Recordings per subject; classes alternate.
    #[arg(long)]
    trials: Option<usize>,
    /// Length of each recording in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value = "data.ecgs")]
    out: PathBuf,
    /// Also write each recording as a raw CSV file here.
    #[arg(long)]
    raw_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of raw CSV recordings.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "data.ecgs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakePretextArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "pretext.ecgs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainPretextArgs {
    /// Pretext set written by make-pretext.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value = "pretext.ecgw")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainDownstreamArgs {
    /// Labelled segments.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Pretext checkpoint supplying the frozen trunk.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train a randomly initialised trunk end to end instead.
    #[arg(long, conflicts_with = "checkpoint")]
    from_scratch: bool,
    /// Head variant, a or b.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value = "downstream.ecgw")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pretext set for a pretext checkpoint, labelled segments otherwise.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// k-fold transfer evaluation of a pretext checkpoint.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Labelled segments; their windows also feed the pretext stage.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// single or multi.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    transform: Option<String>,
    /// snr_db, scale, perm_m, warp_m or warp_k.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Upper bound on multi-task grid points.
    #[arg(long)]
    cap: Option<usize>,
    /// Pretext epochs per grid point.
    #[arg(long)]
    epochs: Option<usize>,
    /// Downstream epochs per grid point.
    #[arg(long)]
    downstream_epochs: Option<usize>,
    #[arg(long, default_value = "sweep_results.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Pretext checkpoint. Without one, the pretext network is first
    /// trained on the input windows.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    /// Pretext epochs when no checkpoint is given.
    #[arg(long)]
    pretext_epochs: Option<usize>,
    /// Head epochs on the frozen trunk.
    #[arg(long)]
    epochs: Option<usize>,
    /// End-to-end epochs for the fully-supervised baseline.
    #[arg(long)]
    supervised_epochs: Option<usize>,
    #[arg(long, default_value = "comparison.csv")]
    out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::MakePretext(_) => "make-pretext",
            Command::TrainPretext(_) => "train-pretext",
            Command::TrainDownstream(_) => "train-downstream",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Compare(_) => "compare",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        config.paths.output = d.clone();
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    let mut config = resolve(&cli)?;
    let dir = config.paths.output.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = cli.command.name();
    let io = match &cli.command {
        Command::Synth(a) => commands::synth(a, &mut config)?,
        Command::Preprocess(a) => commands::preprocess(a, &mut config)?,
        Command::MakePretext(a) => commands::make_pretext(a, &mut config)?,
        Command::TrainPretext(a) => commands::train_pretext(a, &mut config)?,
        Command::TrainDownstream(a) => commands::train_downstream(a, &mut config)?,
        Command::Eval(a) => commands::eval(a, &mut config)?,
        Command::Sweep(a) => commands::sweep(a, &mut config)?,
        Command::Compare(a) => commands::compare(a, &mut config)?,
    };
    let record = manifest::RunRecord::new(args, &config, &io.inputs, &io.outputs)?;
    manifest::record(&dir, name, record)?;
    for p in &io.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let err = CliError::Usage(if detail.is_empty() { msg } else { detail });
            eprintln!("{}", err.to_line());
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, args.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
