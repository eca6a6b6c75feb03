use std::path::{Path, PathBuf};
use std::process::ExitCode;

use breathtrace::commands::{self, SynthOptions, SUMMARY_FILE};
use breathtrace::config::load_config;
use breathtrace::{CliError, PipelineConfig};
use breathtrace_core::locgp::Mode;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Intra,
    Inter,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Intra => Mode::Intra,
            ModeArg::Inter => Mode::Inter,
        }
    }
}

#[derive(Parser)]
#[command(name = "breathtrace")]
#[command(about = "Airflow estimation from thoracic and abdominal movement signals")]
#[command(version)]
struct Cli {
    /// JSON pipeline config; defaults apply to omitted fields.
    #[arg(long, global = true, env = "BT_CONFIG")]
    config: Option<PathBuf>,

    /// Directory for all outputs.
    #[arg(long, global = true, env = "BT_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    /// Overrides the config's mode.
    #[arg(long, global = true, env = "BT_MODE", value_enum)]
    mode: Option<ModeArg>,

    /// Worker threads; all cores when omitted.
    #[arg(long, global = true, env = "BT_JOBS")]
    jobs: Option<usize>,

    /// Overrides the config's seed.
    #[arg(long, global = true, env = "BT_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write harmonic decompositions and features per recording.
    Decompose {
        /// Recording CSV files (`t,flow,abd,tho`).
        #[arg(long, env = "BT_DATA", value_delimiter = ',', num_args = 1.., required = true)]
        data: Vec<PathBuf>,
    },
    /// Predict flow and score it where flow is present.
    Predict {
        #[arg(long, env = "BT_DATA", value_delimiter = ',', num_args = 1.., required = true)]
        data: Vec<PathBuf>,
    },
    /// Score existing prediction files against recorded flow.
    Evaluate {
        #[arg(long, env = "BT_DATA", value_delimiter = ',', num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Directory holding `<id>_predictions.csv` files.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Generate synthetic recordings with known flow.
    Synth {
        #[arg(long, default_value_t = 1)]
        subjects: usize,
        /// Recording length, seconds.
        #[arg(long, default_value_t = 1200.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        flow_noise: f64,
        #[arg(long, default_value_t = 0.0)]
        movement_noise: f64,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(mode) = cli.mode {
        cfg.mode = mode.into();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let out: &Path = &cli.out_dir;
    match &cli.command {
        Command::Decompose { data } => commands::decompose(&cfg, data, out, cli.jobs)?,
        Command::Predict { data } => commands::predict(&cfg, data, out, cli.jobs)?,
        Command::Evaluate { data, predictions } => commands::evaluate(&cfg, data, predictions, out)?,
        Command::Synth {
            subjects,
            duration,
            flow_noise,
            movement_noise,
        } => {
            let opts = SynthOptions {
                subjects: *subjects,
                duration_s: *duration,
                flow_noise_sd: *flow_noise,
                movement_noise_sd: *movement_noise,
            };
            commands::synth(&cfg, &opts, out)?
        }
    };
    println!("{}", out.join(SUMMARY_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
