use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use volstream::config::{self, Diagnostic, Mode, ScenarioConfig, SCENARIOS};
use volstream::sim::{self, RunReport};
use volstream::socket::{self, Role};

#[derive(Parser)]
#[command(name = "volstream", version, about = "Volumetric streaming latency lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV reports.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["sim", "socket"])]
        mode: Option<String>,
        /// Socket mode: sender, relay, receiver, receiver:<index>, or all
        /// (every role on loopback threads in this process).
        #[arg(long, default_value = "all")]
        role: String,
    },
    /// Check a configuration and print diagnostics.
    Validate {
        #[command(flatten)]
        source: Source,
        /// Print the resolved configuration.
        #[arg(long)]
        print: bool,
    },
    /// Join the role logs of a socket run into the CSV reports.
    Assemble {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the canned scenarios.
    Scenarios,
    /// List every configuration key with its environment variable.
    Keys,
}

#[derive(Args)]
struct Source {
    /// key = value configuration file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Canned scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(Vec<Diagnostic>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_error(key: &str, value: &str, constraint: impl Into<String>) -> Failure {
    Failure::Config(vec![Diagnostic { key: key.into(), value: value.into(), constraint: constraint.into() }])
}

/// Scenario or file, then `VLAB_*` variables, then `--set` overrides.
fn load(source: &Source) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match (&source.config, &source.scenario) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error("--config", &path.display().to_string(), e.to_string()))?;
            ScenarioConfig::parse(&text).map_err(Failure::Config)?
        }
        (None, Some(name)) => ScenarioConfig::scenario(name).ok_or_else(|| {
            config_error("--scenario", name, format!("unknown scenario; one of {}", SCENARIOS.join(", ")))
        })?,
        (None, None) => ScenarioConfig::default(),
    };
    cfg.apply_env(std::env::vars()).map_err(Failure::Config)?;
    let mut errors = Vec::new();
    for kv in &source.overrides {
        match kv.split_once('=') {
            Some((k, v)) => {
                if let Err(d) = cfg.set(k.trim(), v) {
                    errors.push(d);
                }
            }
            None => errors.push(Diagnostic {
                key: kv.clone(),
                value: String::new(),
                constraint: "expected key=value".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Failure::Config(errors))
    }
}

fn validated(cfg: ScenarioConfig) -> Result<ScenarioConfig, Failure> {
    let diags = cfg.validate();
    if diags.is_empty() {
        Ok(cfg)
    } else {
        Err(Failure::Config(diags))
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run_socket(cfg: &ScenarioConfig, role: &str, out: &Path) -> Result<(), Failure> {
    eprintln!("{}", socket::link_model_warning());
    if role == "all" {
        let output = socket::run_loopback(cfg, out).context("socket run failed")?;
        let report = RunReport::Pipeline(output);
        print_files(&sim::write_outputs(out, &report).context("writing reports")?);
        sim::render_report(&report, &mut std::io::stdout()).context("printing summary")?;
        return Ok(());
    }
    let role: Role = role.parse().map_err(|e: String| config_error("--role", role, e))?;
    socket::run_role(cfg, role, out).with_context(|| format!("{role} failed"))?;
    println!("{role} finished; logs in {}", out.display());
    if role == Role::Receiver(0) {
        println!("run `volstream assemble` with the same configuration once every role has finished");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { source, seed, out, mode, role } => {
            let mut cfg = load(&source)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(m) = mode {
                cfg.set("mode", &m).map_err(|d| Failure::Config(vec![d]))?;
            }
            let cfg = validated(cfg)?;
            let out = cfg.out_dir.clone();
            match cfg.mode {
                Mode::Sim => {
                    let report = sim::run_scenario(&cfg).context("simulation failed")?;
                    print_files(&sim::write_outputs(&out, &report).context("writing reports")?);
                    sim::render_report(&report, &mut std::io::stdout()).context("printing summary")?;
                }
                Mode::Socket => run_socket(&cfg, &role, &out)?,
            }
            Ok(())
        }
        Command::Validate { source, print } => {
            let cfg = validated(load(&source)?)?;
            if print {
                print!("{}", cfg.to_text());
            }
            println!("ok");
            Ok(())
        }
        Command::Assemble { source, out } => {
            let mut cfg = validated(load(&source)?)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let output = socket::assemble(&cfg, &cfg.out_dir).context("assembling role logs")?;
            let report = RunReport::Pipeline(output);
            print_files(&sim::write_outputs(&cfg.out_dir, &report).context("writing reports")?);
            sim::render_report(&report, &mut std::io::stdout()).context("printing summary")?;
            Ok(())
        }
        Command::Scenarios => {
            for name in SCENARIOS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Keys => {
            for k in config::keys() {
                println!("{k}\t{}", config::env_name(&k));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(diags)) => {
            eprintln!("configuration error:");
            for d in diags {
                eprintln!("  {d}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
