//! Command-line front end: argument parsing and exit-code mapping only;
//! the verbs live in [`seqalign::commands`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqalign::commands::{self, Ablation, SweepKnob};
use seqalign::eval::synthetic::SyntheticParams;

#[derive(Parser)]
#[command(
    name = "seqalign",
    version,
    about = "Sequential entity alignment over pre-trained KG embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoint, metrics log, and manifest.
    Train(TrainArgs),
    /// Score alignment strategies against the test links.
    Eval(EvalArgs),
    /// Write a synthetic confusable dataset plus a ready run config.
    Generate(GenerateArgs),
    /// Rerun training/evaluation across one knob's values.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train a deliberately weakened variant.
    #[arg(long, value_enum)]
    ablation: Option<Ablation>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Trained policy; required when the rl strategy is requested.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of ranking,seq,rl.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory to create the dataset in.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Entities per graph (multiple of --block-size).
    #[arg(long, default_value_t = 30)]
    entities: usize,
    /// Entities sharing one confusable embedding center.
    #[arg(long, default_value_t = 3)]
    block_size: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Embedding spread within a block.
    #[arg(long, default_value_t = 0.01)]
    intra_noise: f64,
    /// Embedding noise between the two graphs.
    #[arg(long, default_value_t = 0.05)]
    alignment_noise: f64,
    /// Random chord edges beyond the covering ring.
    #[arg(long, default_value_t = 30)]
    extra_triples: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Which dial to turn.
    #[arg(long, value_enum, default_value_t = SweepKnob::Candidates)]
    knob: SweepKnob,
    /// Comma-separated values for the knob (e.g. 1,2,5,10).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<String>>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_values(knob: SweepKnob) -> Vec<String> {
    let defaults: &[&str] = match knob {
        SweepKnob::Candidates => &["1", "2", "5", "10"],
        SweepKnob::Threshold => &["0.5", "0.7", "0.9"],
        SweepKnob::Penalty => &["-1", "-5", "-10"],
    };
    defaults.iter().map(|s| s.to_string()).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::cmd_train(
            &args.config,
            args.out.as_deref(),
            args.seed,
            args.ablation,
        ),
        Command::Eval(args) => commands::cmd_eval(
            &args.config,
            args.checkpoint.as_deref(),
            args.out.as_deref(),
            args.seed,
            args.strategies.as_deref(),
        ),
        Command::Generate(args) => commands::cmd_generate(
            &args.out,
            &SyntheticParams {
                n_entities: args.entities,
                block_size: args.block_size,
                dim: args.dim,
                intra_block_noise: args.intra_noise,
                alignment_noise: args.alignment_noise,
                extra_triples: args.extra_triples,
                seed: args.seed,
            },
        ),
        Command::Sweep(args) => {
            let values = args.values.unwrap_or_else(|| default_values(args.knob));
            commands::cmd_sweep(
                &args.config,
                args.knob,
                &values,
                args.out.as_deref(),
                args.seed,
            )
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
