//! `jjswitch` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.
//! Errors go to stderr as one line, `error[<tag>]: <message>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jjswitch::config::RunConfig;
use jjswitch::experiments::{execute, Command, RunReport};
use jjswitch::Error;

#[derive(Debug, Parser)]
#[command(
    name = "jjswitch",
    version,
    about = "Switching statistics of a quantum Josephson junction under measured bias ramps"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML configuration, or a JSON configuration or run manifest.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one value, e.g. `--set params.ramp_time=800`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Root directory for outputs.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,

    /// Worker threads for parallel points; all cores when absent.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Validate and print the resolved configuration without running.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Periodic ground state and its energy.
    GroundState,
    /// Free evolution under a fixed or ramped bias.
    Evolve,
    /// Measured ramp: switching distribution over the N measurements.
    Switchdist,
    /// Semiclassical switching distributions.
    Wkb,
    /// Decay rates, relaxation times and survival prefactors.
    Ratefit,
    /// Parameter sweep with per-point manifests and aggregates.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GroundState => Command::GroundState,
            Cmd::Evolve => Command::Evolve,
            Cmd::Switchdist => Command::Switchdist,
            Cmd::Wkb => Command::Wkb,
            Cmd::Ratefit => Command::Ratefit,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

fn load_document(path: Option<&Path>) -> Result<toml::Table, Error> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        let config = RunConfig::from_json(&text)?;
        toml::Table::try_from(&config).map_err(config_error)
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| config_error(format!("{}: {e}", path.display())))
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_error(format!("--set {spec}: expected SECTION.KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("--set {spec}: empty key segment")));
    }
    let (last, sections) = path.split_last().expect("split yields one segment");
    let mut table = doc;
    for s in sections {
        let entry = table
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("--set {spec}: `{s}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut doc = load_document(cli.config.as_deref())?;
    for spec in &cli.overrides {
        apply_override(&mut doc, spec)?;
    }
    toml::Value::Table(doc).try_into().map_err(config_error)
}

fn run(cli: &Cli) -> Result<RunReport, Error> {
    let command = Command::from(cli.command);
    let config = resolve_config(cli)?;
    if cli.dry_run {
        command.validate(&config)?;
        let text = toml::to_string_pretty(&config).map_err(config_error)?;
        print!("{text}");
        return Ok(RunReport::default());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config_error("--jobs must be at least 1"));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
    pool.install(|| execute(command, &config, &cli.out_dir))
}

fn fail(e: &Error) -> ExitCode {
    let text = e.to_string().replace('\n', " ").trim().to_string();
    eprintln!("error[{}]: {text}", e.tag());
    ExitCode::from(if e.is_config() { 2 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for (key, value) in &report.summary {
        println!("{key} = {value}");
    }
    for file in &report.files {
        println!("wrote {}", file.display());
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        for f in &report.failures {
            eprintln!("failed: {f}");
        }
        fail(&Error::Numerical(format!(
            "{} point(s) failed; completed outputs were written",
            report.failures.len()
        )))
    }
}
