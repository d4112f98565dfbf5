//! Command-line front end: `jumpcons <command> --config run.json --out dir`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jumpcons::config::{CommandName, RunConfig};
use jumpcons::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "jumpcons", version, about = "Consistency checks and pricing for jump-diffusion term-structure models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for stochastic commands; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Consistency tolerance; overrides the configuration.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Print nothing on success and only errors to the log.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the Riccati equations and write loadings and the yield curve.
    Price,
    /// Evaluate the consistency residual over the configured grid.
    Check,
    /// Recover drift, covariance and intensity from the curve family.
    Recover,
    /// Nelson–Siegel coefficient table and impossibility scan.
    NsDemo,
    /// Simulate the state and price a bond by Monte Carlo.
    Simulate,
    /// Test the martingale property of discounted bond prices.
    Martingale,
    /// Print the JSON schema of the configuration.
    Schema,
}

impl Command {
    fn name(self) -> Option<CommandName> {
        Some(match self {
            Command::Price => CommandName::Price,
            Command::Check => CommandName::Check,
            Command::Recover => CommandName::Recover,
            Command::NsDemo => CommandName::NsDemo,
            Command::Simulate => CommandName::Simulate,
            Command::Martingale => CommandName::Martingale,
            Command::Schema => return None,
        })
    }
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Spec(String),
    /// The model fails the check; the verdict has been written.
    Inconsistent(String),
    RankDeficient(String),
    /// The jump measure violates a regularity condition.
    Irregular(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

pub const EXIT_SPEC: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_INCONSISTENT: u8 = 4;
pub const EXIT_REGULARITY: u8 = 5;
pub const EXIT_RANK_DEFICIENT: u8 = 6;

pub fn error_code(e: &Error) -> u8 {
    match e {
        Error::Explosion { .. } | Error::Accuracy { .. } => EXIT_NUMERIC,
        Error::Regularity { .. } | Error::Divergent { .. } => EXIT_REGULARITY,
        _ => EXIT_SPEC,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::OutOfDomain { .. } => "out_of_domain",
        Error::Divergent { .. } => "divergent",
        Error::Accuracy { .. } => "accuracy",
        Error::Regularity { .. } => "regularity",
        Error::AnchorSelection { .. } => "anchor_selection",
        Error::Explosion { .. } => "explosion",
        Error::Range { .. } => "range",
        Error::StepSize { .. } => "step_size",
        Error::NotAffine { .. } => "not_affine",
        Error::Support(_) => "support",
        Error::Io(_) => "io",
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(e) => error_code(e),
            Failure::Spec(_) => EXIT_SPEC,
            Failure::Inconsistent(_) => EXIT_INCONSISTENT,
            Failure::RankDeficient(_) => EXIT_RANK_DEFICIENT,
            Failure::Irregular(_) => EXIT_REGULARITY,
        }
    }

    fn diagnostic(&self) -> Value {
        let (kind, message) = match self {
            Failure::Core(e) => (error_kind(e), e.to_string()),
            Failure::Spec(m) => ("invalid_input", m.clone()),
            Failure::Inconsistent(m) => ("inconsistent", m.clone()),
            Failure::RankDeficient(m) => ("rank_deficient", m.clone()),
            Failure::Irregular(m) => ("regularity", m.clone()),
        };
        let mut d = json!({ "error": kind, "exit_code": self.code(), "message": message });
        match self {
            Failure::Core(Error::Explosion { tau } | Error::Regularity { tau, .. }) => d["tau"] = json!(tau),
            Failure::Core(Error::OutOfDomain { point, .. }) => d["point"] = json!(point),
            _ => {}
        }
        d
    }
}

/// Everything a command needs besides the model.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Run {
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Spec(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Prints a one-line summary to stdout unless quiet.
    pub fn report(&self, value: &Value) {
        if !self.quiet {
            println!("{value}");
        }
    }
}

fn prepare(cli: &Cli, name: CommandName) -> Result<Run, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Spec("--config <path> is required".into()))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(c) = config.command {
        if c != name {
            return Err(Failure::Spec(format!("configuration is for `{}`", command_label(c))));
        }
    }
    if let Some(seed) = cli.seed {
        config.numerics.seed = Some(seed);
    }
    if let Some(tol) = cli.tol {
        config.numerics.tol = tol;
    }
    if name.is_stochastic() && config.numerics.seed.is_none() {
        return Err(Failure::Spec(format!(
            "`{}` is stochastic: give --seed or numerics.seed",
            command_label(name)
        )));
    }
    config.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.outputs.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    Ok(Run {
        config,
        out,
        quiet: cli.quiet,
    })
}

fn command_label(c: CommandName) -> String {
    serde_json::to_value(c).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let d = json!({ "error": "usage", "exit_code": EXIT_SPEC, "message": e.to_string().lines().next().unwrap_or_default() });
            eprintln!("{d}");
            return ExitCode::from(EXIT_SPEC);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .format_timestamp(None)
        .init();

    let Some(name) = cli.command.name() else {
        println!("{}", RunConfig::schema());
        return ExitCode::SUCCESS;
    };
    let outcome = prepare(&cli, name).and_then(|run| match name {
        CommandName::Price => commands::price(&run),
        CommandName::Check => commands::check(&run),
        CommandName::Recover => commands::recover(&run),
        CommandName::NsDemo => commands::ns_demo(&run),
        CommandName::Simulate => commands::simulate(&run),
        CommandName::Martingale => commands::martingale(&run),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic());
            ExitCode::from(f.code())
        }
    }
}
