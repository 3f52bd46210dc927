use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oseledets_lab::{run_file, Command, LabError, RunOptions, OUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "oseledets-lab", version, about = "Run cocycle experiments from a scenario file")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory (the subcommand name is appended).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default output root when neither --out nor the scenario sets one.
    #[arg(long, global = true, env = OUT_ROOT_ENV, hide_env_values = true)]
    root: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, conflicts_with = "threads")]
    single_thread: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Lyapunov exponents per sample point and pooled.
    Spectrum,
    /// Oseledets splitting (or filtration) per point against the oracle.
    Splitting,
    /// Lyapunov-norm regularity per point and the nested regular sets.
    RegularSet,
    /// Hölder bounds for the invariant subspaces on sampled pairs.
    Verify,
    /// Filtration bounds and block-decomposition audit.
    Filtration,
    /// Random two-sequence instances checked against their bound.
    LemmaLab,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Splitting => Command::Splitting,
        Cmd::RegularSet => Command::RegularSet,
        Cmd::Verify => Command::Verify,
        Cmd::Filtration => Command::Filtration,
        Cmd::LemmaLab => Command::LemmaLab,
    };
    let opts = RunOptions {
        out: cli.out,
        root: cli.root,
        seed: cli.seed,
        threads: if cli.single_thread { Some(1) } else { cli.threads },
    };
    let result = match cli.scenario {
        Some(p) => run_file(cmd, &p, &opts),
        None => Err(LabError::Config("--scenario is required".into())),
    };
    match result {
        Ok(m) => {
            println!("{}", serde_json::to_string(&m).expect("manifest serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
