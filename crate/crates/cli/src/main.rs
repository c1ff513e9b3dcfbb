use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use octmix_cli::commands;
use octmix_cli::config::Overrides;

#[derive(Parser)]
#[command(
    name = "octmix",
    version,
    about = "Frequency-decomposed waveform mixing and augmentation-ensemble training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sensor corpus (CSV files plus manifest).
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides config and OCTMIX_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply an augmentation policy to a corpus and dump tensors.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a variant for some number of independent trials.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Evaluate a saved model on a corpus.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over octave-mix (alpha, cutoff) cells; best validation accuracy
    /// over epochs per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump low-pass kernel taps and frequency response samples.
    InspectFilter {
        #[arg(long)]
        cutoff_hz: f64,
        #[arg(long)]
        sample_rate_hz: f64,
        #[arg(long)]
        num_taps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth { config, out, seed } => commands::cmd_gen_synth(
            &config,
            &Overrides {
                out,
                seed,
                trials: None,
            },
        ),
        Command::Augment { config, out, seed } => commands::cmd_augment(
            &config,
            &Overrides {
                out,
                seed,
                trials: None,
            },
        ),
        Command::Train {
            config,
            out,
            seed,
            trials,
        } => commands::cmd_train(&config, &Overrides { out, seed, trials }),
        Command::Eval { config, out } => commands::cmd_eval(
            &config,
            &Overrides {
                out,
                seed: None,
                trials: None,
            },
        ),
        Command::Sweep { config, out, seed } => commands::cmd_sweep(
            &config,
            &Overrides {
                out,
                seed,
                trials: None,
            },
        ),
        Command::InspectFilter {
            cutoff_hz,
            sample_rate_hz,
            num_taps,
            out,
        } => commands::cmd_inspect_filter(cutoff_hz, sample_rate_hz, num_taps, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
