use clap::{Parser, Subcommand, ValueEnum};
use stare::cli;
use stare::config::{self, ExperimentConfig};
use stare::evaluation::SliceKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "stare",
    about = "ROI-tokenized gaze sequence modeling: train, evaluate, ablate"
)]
struct Args {
    /// Experiment configuration (JSON). Omitted means all defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for repeated runs (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Validate the configuration and list planned outputs without running.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum SliceAxis {
    Data,
    Time,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (fixations, outcomes, ROI map).
    Gen,
    /// Tokenize sessions and write JSON lines.
    Tokenize,
    /// Train a model on every session.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the representation/fusion ablation ladder.
    Ablate,
    /// Sweep partial-data or partial-time slices.
    Slice {
        #[arg(long, value_enum)]
        axis: SliceAxis,
        /// Score one full-data model per split instead of retraining.
        #[arg(long)]
        no_retrain: bool,
    },
    /// Print a roll-up of artifacts in the output directory.
    Report,
}

fn run(args: &Args) -> stare::Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => config::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = args.seed.unwrap_or(cfg.train.seed);
    if args.jobs > 0 {
        // Ignored if a global pool already exists (e.g. repeated calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build_global();
    }
    if args.dry_run {
        cfg.validate()?;
        let planned = match &args.command {
            Command::Gen => "fixations.csv, outcomes.csv, roi_map.json",
            Command::Tokenize => "tokens.jsonl",
            Command::Train => "checkpoint.json, history.csv, train_report.json",
            Command::Eval { .. } => "eval_report.json",
            Command::Ablate => "ablation.csv",
            Command::Slice { axis: SliceAxis::Data, .. } => "slice_data.csv",
            Command::Slice { axis: SliceAxis::Time, .. } => "slice_time.csv",
            Command::Report => "(stdout only)",
        };
        println!("config ok; would write {} under {}", planned, args.out.display());
        return Ok(());
    }
    match &args.command {
        Command::Gen => {
            for f in cli::cmd_gen(&cfg, seed, &args.out)? {
                println!("{}", f.display());
            }
        }
        Command::Tokenize => println!("{}", cli::cmd_tokenize(&cfg, seed, &args.out)?.display()),
        Command::Train => {
            for f in cli::cmd_train(&cfg, seed, &args.out)? {
                println!("{}", f.display());
            }
        }
        Command::Eval { checkpoint } => {
            println!("{}", cli::cmd_eval(&cfg, seed, checkpoint, &args.out)?.display());
        }
        Command::Ablate => println!("{}", cli::cmd_ablate(&cfg, seed, &args.out)?.display()),
        Command::Slice { axis, no_retrain } => {
            if *no_retrain {
                cfg.eval.retrain_slices = false;
            }
            let kind = match axis {
                SliceAxis::Data => SliceKind::DataFraction,
                SliceAxis::Time => SliceKind::TimeSeconds,
            };
            println!("{}", cli::cmd_slice(&cfg, seed, kind, &args.out)?.display());
        }
        Command::Report => println!("{}", cli::cmd_report(&args.out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("STARE_LOG", "warn"))
        .init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
