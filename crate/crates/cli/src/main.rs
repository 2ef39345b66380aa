//! `coupled-mcmc`: runs one experiment from a key-value configuration and
//! writes CSV/JSON files into the output directory.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! divergence, 4 failed internal assertion.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coupled_mcmc::Error;

use crate::config::Config;
use crate::experiments::Context;
use crate::output::Provenance;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.root() {
                Error::Config(_) | Error::TooShort { .. } | Error::EmptyWindow => 2,
                Error::Divergence { .. }
                | Error::UnstableTail { .. }
                | Error::NonFiniteIntegrand { .. }
                | Error::NonFinite(_) => 3,
                _ => 4,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "coupled-mcmc",
    version,
    about = "Coupled Langevin and zigzag sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the one-dimensional Poisson equation (x, phi, dphi, residual).
    Poisson(Common),
    /// Linearized variance change per coupling kind by quadrature.
    DeltaSigma(Common),
    /// One coupled Langevin run: variance summary and optional trajectory.
    Langevin(Common),
    /// Coupled zigzag replicates: channel summaries and optional event log.
    Zigzag(Common),
    /// Asymptotic variance against coupling strength, one row per (kind, beta).
    VarianceSweep(Common),
    /// Sorted against fixed pairing for block couplings.
    SortCompare(Common),
    /// Entropic transport plan against empirical coupling costs.
    OtCompare(Common),
    /// Generator eigenvalues with parity classification.
    Spectral(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Poisson(c) => ("poisson", c),
            Command::DeltaSigma(c) => ("delta-sigma", c),
            Command::Langevin(c) => ("langevin", c),
            Command::Zigzag(c) => ("zigzag", c),
            Command::VarianceSweep(c) => ("variance-sweep", c),
            Command::SortCompare(c) => ("sort-compare", c),
            Command::OtCompare(c) => ("ot-compare", c),
            Command::Spectral(c) => ("spectral", c),
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (numerics.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for replicate parallelism (numerics.workers).
    #[arg(long)]
    workers: Option<usize>,
    /// Time step (numerics.dt).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time horizon (numerics.t_total).
    #[arg(long)]
    t_total: Option<f64>,
    /// Burn-in time (numerics.burn_in).
    #[arg(long)]
    burn_in: Option<f64>,
    /// Replicates per configuration (numerics.replicates).
    #[arg(long)]
    replicates: Option<usize>,
    /// Batches for batch means (numerics.batches).
    #[arg(long)]
    batches: Option<usize>,
    /// Number of particles (langevin.particles).
    #[arg(long)]
    particles: Option<usize>,
    /// Coupling kind (coupling.kind).
    #[arg(long)]
    kind: Option<String>,
    /// Coupling strength (coupling.beta).
    #[arg(long)]
    beta: Option<String>,
    /// Arbitrary override, repeatable: --set model.grid=4001
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let flags: [(&str, Option<String>); 9] = [
            ("numerics.seed", self.seed.map(|v| v.to_string())),
            ("numerics.dt", self.dt.map(|v| v.to_string())),
            ("numerics.t_total", self.t_total.map(|v| v.to_string())),
            ("numerics.burn_in", self.burn_in.map(|v| v.to_string())),
            ("numerics.replicates", self.replicates.map(|v| v.to_string())),
            ("numerics.batches", self.batches.map(|v| v.to_string())),
            ("langevin.particles", self.particles.map(|v| v.to_string())),
            ("coupling.kind", self.kind.clone()),
            ("coupling.beta", self.beta.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v);
            }
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        // A strength given with `pi` is accepted wherever a number is.
        if let Some(b) = cfg.raw("coupling.beta").map(str::to_string) {
            let v = config::parse_number(&b)
                .ok_or_else(|| CliError::Config(format!("coupling.beta = `{b}` is not a number")))?;
            cfg.set("coupling.beta", output::format_num(v));
        }
        if let Some(w) = self.workers {
            cfg.set("numerics.workers", w.to_string());
        }
        Ok(cfg)
    }
}

fn execute(name: &str, args: &Common) -> Result<Vec<PathBuf>, CliError> {
    let cfg = args.resolve()?;
    if let Some(exp) = cfg.raw("experiment") {
        if exp != name {
            return Err(CliError::Config(format!(
                "config is for experiment `{exp}`, not `{name}`"
            )));
        }
    }
    let workers: usize = cfg.get("numerics.workers", 0)?;
    // The worker count does not change any output, so it is left out of the hash.
    let mut hashed = cfg.clone();
    hashed.remove("numerics.workers");
    hashed.set("experiment", name);
    let provenance = Provenance {
        experiment: name.to_string(),
        config_hash: hashed.hash(),
        seed: cfg.get("numerics.seed", 1)?,
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let ctx = Context {
        config: &cfg,
        out_dir: &args.out_dir,
        provenance,
    };
    if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
        pool.install(|| experiments::run(name, &ctx))
    } else {
        experiments::run(name, &ctx)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.parts();
    debug_assert!(experiments::EXPERIMENTS.contains(&name));
    match execute(name, args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
