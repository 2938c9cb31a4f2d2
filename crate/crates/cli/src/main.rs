mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orbitall::dataio::Split;
use orbitall::Error;

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const SCF: u8 = 3;
    pub const VERIFY: u8 = 4;
    pub const CHECKSUM: u8 = 5;
}

#[derive(Parser)]
#[command(
    name = "orbitall",
    version,
    about = "Orbital-feature molecular energy models"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Write the real Clebsch-Gordan table used by the network to this file.
    #[arg(long, global = true, value_name = "FILE")]
    dump_cg: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SCF on every .xyz file and write feature files, the low-level
    /// sidecar and a manifest.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Assign train/val/test splits in a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the result (default: overwrite the input).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Equal counts per species tag in every split.
        #[arg(long)]
        balance: bool,
    },
    /// Train on the train split, selecting on the val split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// TOML run configuration ([model] and [train] sections).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for model.json, model.bin, metrics.csv and config.toml.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.deterministic`.
        #[arg(long)]
        deterministic: bool,
    },
    /// Per-molecule predictions as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_split_arg, default_value = "all")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAE table per species tag.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_split_arg, default_value = "test")]
        split: SplitArg,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equivariance, conservation, invariance and gradient checks.
    Verify {
        /// Check this model instead of a random one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Width of the random model when no checkpoint is given.
        #[arg(long, default_value_t = 16)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 12)]
        molecules: usize,
        #[arg(long, default_value_t = 10)]
        rotations: usize,
        #[arg(long, default_value_t = 10)]
        permutations: usize,
        #[arg(long)]
        skip_gradient: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic dataset labelled by a perturbed copy of the engine.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_atoms: usize,
        #[arg(long, default_value_t = orbitall::toy::HIGH_LEVEL_PERTURBATION)]
        strength: f64,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "0"
        )]
        charges: Vec<i32>,
        /// Probability of the higher multiplicity.
        #[arg(long, default_value_t = 0.0)]
        high_spin: f64,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory with the .qmm files and lowlevel.csv.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Clone, Copy)]
pub enum SplitArg {
    All,
    One(Split),
}

impl SplitArg {
    fn get(self) -> Option<Split> {
        match self {
            SplitArg::All => None,
            SplitArg::One(s) => Some(s),
        }
    }
}

fn parse_split_arg(s: &str) -> Result<SplitArg, String> {
    if s == "all" {
        return Ok(SplitArg::All);
    }
    s.parse()
        .map(SplitArg::One)
        .map_err(|e: Error| e.to_string())
}

fn code_of(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } => exit::PARSE,
        Error::ScfNotConverged { .. } | Error::LinearDependence { .. } => exit::SCF,
        Error::ChecksumMismatch(_) => exit::CHECKSUM,
        _ => exit::OTHER,
    }
}

fn run(cli: Cli) -> orbitall::Result<u8> {
    if let Some(path) = &cli.dump_cg {
        commands::dump_cg(path)?;
    }
    match cli.command {
        Command::Featurize {
            input,
            output,
            workers,
        } => commands::featurize(&input, &output, workers),
        Command::Split {
            manifest,
            out,
            fractions,
            seed,
            balance,
        } => {
            let out = out.unwrap_or_else(|| manifest.clone());
            let fractions: [f64; 3] = fractions.try_into().map_err(|f: Vec<f64>| {
                Error::Config(format!("--fractions needs three values, got {}", f.len()))
            })?;
            commands::split(&manifest, &out, fractions, seed, balance)
        }
        Command::Train {
            data,
            config,
            out,
            seed,
            deterministic,
        } => commands::train(
            &data.manifest,
            &data.features,
            config.as_deref(),
            &out,
            seed,
            deterministic,
        ),
        Command::Predict {
            checkpoint,
            data,
            split,
            out,
        } => commands::predict(
            &checkpoint,
            &data.manifest,
            &data.features,
            split.get(),
            &out,
        ),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => commands::eval(
            &checkpoint,
            &data.manifest,
            &data.features,
            split.get(),
            out.as_deref(),
        ),
        Command::Verify {
            checkpoint,
            hidden_dim,
            molecules,
            rotations,
            permutations,
            skip_gradient,
            seed,
            report,
        } => {
            let opts = orbitall::verify::SuiteOptions {
                molecules,
                rotations,
                invariance_rotations: rotations,
                permutations,
                gradient_check: !skip_gradient,
                seed,
            };
            commands::verify(checkpoint.as_deref(), hidden_dim, &opts, report.as_deref())
        }
        Command::GenToy {
            out,
            count,
            seed,
            max_atoms,
            strength,
            charges,
            high_spin,
        } => commands::gen_toy(
            &out,
            &orbitall::toy::ToyOptions {
                count,
                max_atoms,
                seed,
                strength,
                charges,
                high_spin_fraction: high_spin,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code_of(&e))
        }
    }
}
