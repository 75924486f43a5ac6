use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use monotrack::{Error, Result};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "monotrack", version, about = "Globally monotonic step-response tracking for LTI MIMO systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Analyze,
    Synthesize,
    Simulate,
    Verify,
    Ensemble,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Zeros, assumption audit, subspace dimensions and solvability verdicts
    Analyze(JobArgs),
    /// Gain and feedforward: feedback.json and gain.csv
    Synthesize(JobArgs),
    /// Synthesize, then write one trace per initial state
    Simulate(JobArgs),
    /// Synthesize, simulate and check monotonicity, rate and single-mode fit
    Verify(JobArgs),
    /// Genericity statistics on generated plants (and the given system)
    Ensemble(JobArgs),
}

impl Command {
    pub fn split(self) -> (CommandKind, JobArgs) {
        match self {
            Command::Analyze(a) => (CommandKind::Analyze, a),
            Command::Synthesize(a) => (CommandKind::Synthesize, a),
            Command::Simulate(a) => (CommandKind::Simulate, a),
            Command::Verify(a) => (CommandKind::Verify, a),
            Command::Ensemble(a) => (CommandKind::Ensemble, a),
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct JobArgs {
    /// JSON job file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// System JSON file
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Comma-separated mode per output, e.g. -1,-2,-1
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Comma-separated step reference
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub reference: Option<Vec<f64>>,
    /// Comma-separated initial state; repeat for several
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Vec<String>,
    /// Rate bound (negative in continuous time, in (0,1) in discrete time)
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replay file with Vg, Wg and optional direction pairs
    #[arg(long)]
    pub replay_vg: Option<PathBuf>,
    /// Safety factor of the SVD rank threshold
    #[arg(long)]
    pub tol_rank: Option<f64>,
    /// Seconds (continuous) or steps (discrete)
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Ensemble draws per fixture
    #[arg(long)]
    pub trials: Option<usize>,
    /// Generated ensemble fixtures
    #[arg(long)]
    pub count: Option<usize>,
}

/// Job file; every field optional, paths relative to the file.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub command: Option<String>,
    pub system: Option<PathBuf>,
    pub lambdas: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    pub rho: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replay_vg: Option<PathBuf>,
    pub tol_rank: Option<f64>,
    pub horizon: Option<f64>,
    pub samples: Option<usize>,
    pub trials: Option<usize>,
    pub count: Option<usize>,
}

/// Merged job settings.
#[derive(Debug, Clone)]
pub struct Job {
    pub command: CommandKind,
    pub system: Option<PathBuf>,
    pub lambdas: Option<Vec<f64>>,
    pub reference: Option<Vec<f64>>,
    pub x0: Vec<Vec<f64>>,
    pub rho: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub replay_vg: Option<PathBuf>,
    pub tol_rank: Option<f64>,
    pub horizon: Option<f64>,
    pub samples: Option<usize>,
    pub trials: usize,
    pub count: usize,
}

fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::InvalidSpec(format!("cannot parse {x:?} in {s:?}"))))
        .collect()
}

impl Job {
    pub fn build(command: CommandKind, args: JobArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?;
                let mut f: JobFile = serde_json::from_str(&text)?;
                let base = path.parent().unwrap_or(Path::new("."));
                f.system = rebase(base, f.system);
                f.replay_vg = rebase(base, f.replay_vg);
                f.out = rebase(base, f.out);
                f
            }
            None => JobFile::default(),
        };
        if let Some(c) = &file.command {
            let expected = format!("{command:?}").to_lowercase();
            if *c != expected {
                return Err(Error::InvalidSpec(format!("job file is for {c:?}, invoked as {expected:?}")));
            }
        }
        let x0 = if args.x0.is_empty() { file.x0 } else { args.x0.iter().map(|s| parse_list(s)).collect::<Result<_>>()? };
        Ok(Self {
            command,
            system: args.system.or(file.system),
            lambdas: args.lambdas.or(file.lambdas),
            reference: args.reference.or(file.reference),
            x0,
            rho: args.rho.or(file.rho),
            seed: args.seed.or(file.seed).unwrap_or(0),
            out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            replay_vg: args.replay_vg.or(file.replay_vg),
            tol_rank: args.tol_rank.or(file.tol_rank),
            horizon: args.horizon.or(file.horizon),
            samples: args.samples.or(file.samples),
            trials: args.trials.or(file.trials).unwrap_or(100),
            count: args.count.or(file.count).unwrap_or(6),
        })
    }

    pub fn require_system(&self) -> Result<&Path> {
        self.system.as_deref().ok_or_else(|| Error::InvalidSpec("--system is required".into()))
    }

    pub fn require_lambdas(&self) -> Result<&[f64]> {
        self.lambdas.as_deref().ok_or_else(|| Error::InvalidSpec("--lambdas is required".into()))
    }
}
