use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;
mod report;

use config::{Config, ModeName};

/// Why a command stopped; the exit status follows from the variant.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Synthesis(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Synthesis(_) => 4,
        }
    }
}

impl From<qdd_core::Error> for Failure {
    fn from(e: qdd_core::Error) -> Self {
        use qdd_core::Error as E;
        match e {
            E::RankDeficiency { .. } | E::FrameNotExpressible(_) | E::InteractionVanishes => {
                Failure::Synthesis(e.to_string())
            }
            E::EnvTooSmall(_) | E::InvalidIndex(_) | E::InvalidSchedule(_) | E::InvalidParameter(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical abort: {m}"),
            Failure::Synthesis(m) => write!(f, "synthesis failed: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "qdd",
    version,
    about = "Decouplability tables, traces, rank and maneuver reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; omitted fields take the defaults listed below.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Write per-step synthesis audits (simulate).
    #[arg(long, global = true)]
    audit: bool,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured feedback mode.
    #[arg(long, global = true, value_name = "MODE")]
    feedback_mode: Option<ModeName>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Open-loop, closed-loop and restructured decouplability table
    /// (default: single_qubit, two_qubit, bait).
    Check,
    /// Paired coupled/uncoupled traces (default scenario: two_qubit).
    Simulate,
    /// Rank of the control fields and interaction membership over random
    /// states (default scenario: restructured).
    Rank,
    /// Four-segment commutator maneuver report (default scenario: bait).
    Maneuver {
        /// First control, 1-based.
        #[arg(long)]
        i: Option<usize>,
        /// Second control, 1-based.
        #[arg(long)]
        j: Option<usize>,
        /// Include the bait commutator chain and interaction words.
        #[arg(long)]
        chain: bool,
    },
    /// Feedback synthesis at random states (default scenario: fully_actuated).
    SynthesizeAudit,
}

fn run(cli: &Cli) -> Result<i32, Failure> {
    let mut cfg = Config::load(cli.config.as_deref()).map_err(|e| Failure::Config(e.0))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.feedback_mode {
        cfg.feedback_mode = m;
    }
    if let Command::Maneuver { i, j, chain } = &cli.command {
        cfg.maneuver.i = i.unwrap_or(cfg.maneuver.i);
        cfg.maneuver.j = j.unwrap_or(cfg.maneuver.j);
        cfg.maneuver.chain |= *chain;
    }
    cfg.validate().map_err(|e| Failure::Config(e.0))?;
    let out = report::Outputs::new(&cli.out)?;
    match &cli.command {
        Command::Check => commands::check(&cfg, &out),
        Command::Simulate => commands::simulate(&cfg, &out, cli.audit),
        Command::Rank => commands::rank(&cfg, &out),
        Command::Maneuver { .. } => {
            let m = &cfg.maneuver;
            commands::maneuver(&cfg, &out, m.i, m.j, m.chain)
        }
        Command::SynthesizeAudit => commands::synthesize_audit(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let defaults = serde_json::to_string_pretty(&Config::default()).expect("defaults serialize");
    let cmd = Cli::command().after_long_help(format!("Configuration defaults:\n{defaults}"));
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(code) => {
            if code != 0 {
                eprintln!("qdd: run stopped early, see {}/report.json", cli.out.display());
            }
            ExitCode::from(code as u8)
        }
        Err(f) => {
            eprintln!("qdd: {f}");
            ExitCode::from(f.code())
        }
    }
}
