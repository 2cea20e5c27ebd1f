//! `spkr`: command-line surface over the speaker-embedding pipeline.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 file format, 5 numeric/degenerate.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "spkr",
    version,
    about = "Tiny speaker encoder: embedding extraction, contrastive distillation \
             training, on-the-fly similarity refinement, and verification scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract an utterance-level speaker embedding from a WAV file
    Embed(EmbedArgs),
    /// Train the tiny encoder by contrastive distillation on the synthetic corpus
    TrainKd(TrainArgs),
    /// Stream a WAV through similarity refinement against a reference embedding
    Refine(RefineArgs),
    /// Score a verification trial list and report EER and minDCF
    EvalSv(EvalArgs),
    /// Print the weight shape ledger and parameter count
    InspectWeights(InspectArgs),
}

#[derive(clap::Args)]
struct EmbedArgs {
    /// Input WAV (mono, 16 kHz, 16-bit PCM)
    #[arg(long)]
    wav: PathBuf,
    /// Encoder weight file
    #[arg(long)]
    weights: PathBuf,
    /// Output embedding file
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config file (key = value)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Pipeline config file; defaults to the built-in desk-scale setup
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the trained weights
    #[arg(long)]
    out_weights: PathBuf,
    /// Where to write the per-epoch history CSV
    #[arg(long)]
    history: Option<PathBuf>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct RefineArgs {
    /// Input WAV (mono, 16 kHz, 16-bit PCM)
    #[arg(long)]
    wav: PathBuf,
    /// Reference speaker embedding file
    #[arg(long)]
    reference: PathBuf,
    /// Encoder weight file (light mode)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Similarity scaling factor; defaults to 6 (light) or 2 (oracle)
    #[arg(long)]
    alpha: Option<f64>,
    /// Chunk embedder: light (tiny encoder) or oracle (reference-space)
    #[arg(long)]
    mode: Option<String>,
    /// Chunk length in milliseconds (must give a whole, even frame count)
    #[arg(long)]
    chunk_ms: Option<f64>,
    /// Seed of the frozen reference-space projection (oracle mode)
    #[arg(long)]
    oracle_seed: Option<u64>,
    /// Similarity track CSV output: frame_index,raw_similarity,scaled_clipped
    #[arg(long)]
    track_csv: PathBuf,
    /// Optional conditioning tensor output (binary)
    #[arg(long)]
    conditioning: Option<PathBuf>,
    /// Pipeline config file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Trial list: enroll_path<TAB>test_path<TAB>label (1/0), paths relative
    /// to the list's directory; .emb files are read directly, anything else
    /// is embedded as a WAV with the tiny encoder
    #[arg(long)]
    trials: PathBuf,
    /// Encoder weight file for the verification side
    #[arg(long)]
    weights: PathBuf,
    /// Detection-cost target prior
    #[arg(long, default_value_t = 0.01)]
    p_target: f64,
    /// Miss cost
    #[arg(long, default_value_t = 1.0)]
    c_miss: f64,
    /// False-alarm cost
    #[arg(long, default_value_t = 1.0)]
    c_fa: f64,
    /// Pipeline config file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct InspectArgs {
    /// Weight file; without it, the default architecture is inspected
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPKR_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Embed(args) => {
            commands::embed(&args.wav, &args.weights, &args.out, args.config.as_deref())
        }
        Command::TrainKd(args) => commands::train_kd(
            args.config.as_deref(),
            &args.out_weights,
            args.history.as_deref(),
            args.seed,
        ),
        Command::Refine(args) => commands::refine(&commands::RefineRequest {
            wav: args.wav,
            reference: args.reference,
            weights: args.weights,
            alpha: args.alpha,
            mode: args.mode,
            chunk_ms: args.chunk_ms,
            oracle_seed: args.oracle_seed,
            track_csv: args.track_csv,
            conditioning: args.conditioning,
            config: args.config,
        }),
        Command::EvalSv(args) => commands::eval_sv(
            &args.trials,
            &args.weights,
            args.p_target,
            args.c_miss,
            args.c_fa,
            args.config.as_deref(),
        ),
        Command::InspectWeights(args) => commands::inspect_weights(args.weights.as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.class().exit_code());
    }
}
