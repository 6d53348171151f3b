use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use simlab::experiment::{self, ExperimentFile, ExperimentSpec};
use simlab::io;
use simlab::phenomenology;
use simlab::theory;
use simlab::two_layer::ModelKind;
use simlab::SimError;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

/// Linear-network dynamics on the structured identity mapping task.
///
/// Set SIMLAB_THREADS to cap the number of worker threads.
#[derive(Parser)]
#[command(name = "simlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and write its trajectory and analyses.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a recorded W-recursion trajectory against the lemma bounds.
    Verify {
        #[arg(long)]
        traj: PathBuf,
        /// TOML (or .json) file with alpha, gamma, beta, omega, K, P, kappa,
        /// C, eta and optionally lambda.
        #[arg(long)]
        constants: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Losses at every test point of the lattice along a simulated run.
    Lattice {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the training set of an experiment as CSV.
    SampleData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Sim(SimError),
    Verification(usize),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Sim(e)
    }
}

fn error_kind(e: &SimError) -> (&'static str, u8) {
    match e {
        SimError::Divergence { .. } => ("divergence", EXIT_DIVERGENCE),
        SimError::Io(_) => ("io", EXIT_RUNTIME),
        SimError::Config(_) => ("config", EXIT_CONFIG),
        SimError::Scope(_) => ("scope", EXIT_CONFIG),
        SimError::Parse(_) | SimError::Csv(_) | SimError::Json(_) => ("parse", EXIT_CONFIG),
        SimError::MissingDecomposition => ("missing_columns", EXIT_CONFIG),
        SimError::UnstableStep { .. } => ("unstable_step", EXIT_CONFIG),
        SimError::Initialization(_) => ("initialization", EXIT_CONFIG),
        _ => ("invalid_input", EXIT_CONFIG),
    }
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec, SimError> {
    let mut file = ExperimentFile::load(path)?;
    if let Some(seed) = seed {
        file.seed = seed;
    }
    ExperimentSpec::from_file(file)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), SimError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), SimError> {
    match out {
        Some(path) => io::write_json(path, value),
        None => print_json(value),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out, seed } => {
            let spec = load_spec(&config, seed)?;
            let dir = out
                .or_else(|| spec.output_dir.clone())
                .ok_or_else(|| SimError::Config("no output directory: pass --out or set output_dir".into()))?;
            let summary = experiment::run(&spec, &dir)?;
            print_json(&summary)?;
        }
        Command::Verify { traj, constants, out } => {
            let (trajectory, meta) = io::load_trajectory(&traj)?;
            if meta.model != ModelKind::TwoLayerW {
                return Err(SimError::Scope("verification applies to the two-layer W-recursion only".into()).into());
            }
            let a = meta
                .a
                .ok_or_else(|| SimError::Scope("verification needs a diagonal covariance".into()))?;
            let (c, lambda) = io::load_constants(&constants)?;
            let a = simlab::linalg::Vector::from_vec(a);
            let report = theory::verify_trajectory(&trajectory, &c, &a, lambda)?;
            emit(&report, out.as_deref())?;
            if !report.passed() {
                return Err(Failure::Verification(report.violations()));
            }
        }
        Command::Lattice { config, epochs, out } => {
            let spec = load_spec(&config, None)?;
            let (a, _) = experiment::covariance(&spec)?;
            let trajectory = experiment::simulate(&spec, &a)?;
            let epochs = epochs.or(spec.analyses.lattice).unwrap_or(50);
            let snapshots = experiment::lattice_snapshots(&trajectory, epochs);
            let result = phenomenology::lattice_losses(&snapshots, &spec.sim)?;
            emit(&result, out.as_deref())?;
        }
        Command::SampleData { config, seed, out } => {
            let spec = load_spec(&config, seed)?;
            let data = experiment::sample_data(&spec)?;
            match out {
                Some(path) => io::write_dataset_csv(BufWriter::new(File::create(path).map_err(SimError::Io)?), &data)?,
                None => io::write_dataset_csv(std::io::stdout().lock(), &data)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Sim(e)) => {
            let (kind, code) = error_kind(&e);
            eprintln!("{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
            ExitCode::from(code)
        }
        Err(Failure::Verification(violations)) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": "verification_failed", "violations": violations })
            );
            ExitCode::from(EXIT_VERIFICATION)
        }
    }
}
