//! `slfv`: run trajectories and ensembles of the embedded jump chain, verify
//! the martingale identities, and simulate the non-spatial chain.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 I/O error. Progress goes to stderr; data goes only to files under `--out`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, Seeds};

#[derive(Parser)]
#[command(name = "slfv", version, about = "Spatial Lambda-Fleming-Viot jump chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory: events.jsonl and freeze.json.
    Run(Common),
    /// Many seeds in parallel: summary.csv, reports.jsonl and ensemble.json.
    Ensemble(Common),
    /// The invariant suite on fresh trajectories: verify.csv and verify_summary.json.
    Verify(Common),
    /// Non-spatial chain ensemble: nonspatial.csv and nonspatial.json.
    Nonspatial(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// `A..B` (exclusive) or `A..=B`.
    #[arg(long)]
    seeds: Option<Seeds>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    impact: Option<f64>,
    /// Initial frequency `a`.
    #[arg(long = "init-freq")]
    a: Option<f64>,
    /// Initial radius `r0`.
    #[arg(long = "init-radius")]
    r0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Initial value for `nonspatial`.
    #[arg(long)]
    z0: Option<f64>,
    /// `ensemble`: also write every event log.
    #[arg(long)]
    events: bool,
    #[arg(long, short)]
    quiet: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(steps => steps, out => out, dim => dim, radius => radius, impact => impact, a => a, r0 => r0,
             mc_samples => mc_samples, z0 => z0, seeds => seeds);
        if let Some(s) = self.seed {
            c.seeds = Seeds::Single(s);
        }
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        c.events |= self.events;
        Ok(c)
    }
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn verification(m: impl Into<String>) -> Self {
        Failure { code: 1, message: m.into() }
    }

    pub fn config(m: impl Into<String>) -> Self {
        Failure { code: 2, message: m.into() }
    }

    pub fn io(m: impl Into<String>) -> Self {
        Failure { code: 3, message: m.into() }
    }
}

impl From<slfv_core::Error> for Failure {
    fn from(e: slfv_core::Error) -> Self {
        use slfv_core::Error::*;
        match e {
            Io(_) | Json(_) | Csv(_) => Failure::io(e.to_string()),
            _ => Failure::config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Run(c) => ("run", c),
        Command::Ensemble(c) => ("ensemble", c),
        Command::Verify(c) => ("verify", c),
        Command::Nonspatial(c) => ("nonspatial", c),
    };
    let result = common.resolve().and_then(|cfg| {
        let progress = commands::Progress::new(!common.quiet);
        match &cli.command {
            Command::Run(_) => commands::run(&cfg, &progress),
            Command::Ensemble(_) => commands::ensemble(&cfg, &progress),
            Command::Verify(_) => commands::verify(&cfg, &progress),
            Command::Nonspatial(_) => commands::nonspatial(&cfg, &progress),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("slfv {name}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
