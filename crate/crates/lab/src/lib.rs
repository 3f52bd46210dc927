//! Scenario-driven runs of the cocycle laboratory with CSV, JSON and
//! two-column outputs plus a digest manifest.

pub mod drivers;
pub mod error;
pub mod output;
pub mod scenario;

use std::path::{Path, PathBuf};

pub use error::{LabError, LabResult};
pub use output::RunManifest;
pub use scenario::Scenario;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "OSELEDETS_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Splitting,
    RegularSet,
    Verify,
    Filtration,
    LemmaLab,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Spectrum, Command::Splitting, Command::RegularSet, Command::Verify, Command::Filtration, Command::LemmaLab];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Splitting => "splitting",
            Command::RegularSet => "regular-set",
            Command::Verify => "verify",
            Command::Filtration => "filtration",
            Command::LemmaLab => "lemma-lab",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub root: Option<PathBuf>,
    pub seed: Option<u64>,
    /// `None` uses rayon's default; `Some(1)` is the bit-exact debug mode.
    pub threads: Option<usize>,
}

/// `--out`, then the scenario's `out`, then `<root>/<name>`, with the
/// subcommand appended.
pub fn output_dir(cmd: Command, scenario: &Scenario, opts: &RunOptions) -> PathBuf {
    let base = match (&opts.out, &scenario.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => opts.root.clone().unwrap_or_else(|| PathBuf::from("runs")).join(&scenario.name),
    };
    base.join(cmd.name())
}

pub fn run(cmd: Command, scenario: &Scenario, opts: &RunOptions) -> LabResult<RunManifest> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    let dir = output_dir(cmd, &scenario, opts);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| LabError::Config(e.to_string()))?;
    let mut out = output::RunDir::create(&dir, cmd.name())?;
    let result = pool.install(|| match cmd {
        Command::Spectrum => drivers::run_spectrum(&scenario, &mut out),
        Command::Splitting => drivers::run_splitting(&scenario, &mut out),
        Command::RegularSet => drivers::run_regular_set(&scenario, &mut out),
        Command::Verify => drivers::run_verify(&scenario, &mut out),
        Command::Filtration => drivers::run_filtration(&scenario, &mut out),
        Command::LemmaLab => drivers::run_lemma_lab(&scenario, &mut out),
    });
    if let Err(e) = &result {
        out.json("error.json", &e.report())?;
    }
    let manifest = out.finish(&scenario)?;
    result.map(|_| manifest)
}

pub fn run_file(cmd: Command, path: &Path, opts: &RunOptions) -> LabResult<RunManifest> {
    run(cmd, &Scenario::load(path)?, opts)
}
