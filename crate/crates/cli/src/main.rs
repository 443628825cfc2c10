use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use siamhand::dataset_pairs::PairingMode;

mod commands;
mod error;
mod run;

use run::Common;

#[derive(Debug, Parser)]
#[command(name = "siamhand", version, about = "Multi-view hand pose annotation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Siamese,
    RandomPair,
    Single,
}

impl From<ModeArg> for PairingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Siamese => PairingMode::Siamese,
            ModeArg::RandomPair => PairingMode::RandomPair,
            ModeArg::Single => PairingMode::Single,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes or occluded/clean pairs.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of scenes (or pairs).
        #[arg(long)]
        count: Option<usize>,
        /// Emit occluded/clean pairs instead of single scenes.
        #[arg(long)]
        pairs: bool,
        /// Detector noise standard deviation in pixels.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Marker detections → consensus camera extrinsics.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit the hand model to every scene of a scene file.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the fit / accept / refine annotation loop on synthetic scenes.
    Bootstrap {
        #[command(flatten)]
        common: Common,
    },
    /// Train the 2D→3D lifter on a pair file.
    TrainLift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Train the grasp classifier on synthetic prototype poses.
    TrainGrasp {
        #[command(flatten)]
        common: Common,
    },
    /// PCK curve and mean error of predicted joints.
    EvalPck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Confusion matrix of grasp labels.
    EvalGrasp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Collect the summaries of every run below a directory.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth {
            common,
            count,
            pairs,
            sigma,
        } => commands::synth::run(common, *count, *pairs, *sigma),
        Command::Calibrate { common, input } => commands::calibrate::run(common, input),
        Command::Fit { common, input } => commands::fit::run(common, input),
        Command::Bootstrap { common } => commands::bootstrap::run(common),
        Command::TrainLift { common, input, mode } => commands::train::lift(common, input, mode.map(Into::into)),
        Command::TrainGrasp { common } => commands::train::grasp(common),
        Command::EvalPck { common, input } => commands::eval::pck(common, input),
        Command::EvalGrasp { common, input } => commands::eval::grasp(common, input),
        Command::Report { common, input } => commands::report::run(common, input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("siamhand: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
