use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use thermovisco::cli_io::{
    certificate_lines, emit_outputs, parse_config, print, read_config, refine, refinement_checks,
    simulate, simulate_from, Checkpoint, RunConfig,
};
use thermovisco::Scenario;

/// Thermoviscoelastic simulations with certificates.
///
/// CONFIG is a TOML file or the name of a preset scenario. The exit code is 0 when
/// every enabled certificate passes, 1 when one fails and 2 on errors.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs.
    Simulate {
        config: String,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        isothermal: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Refinement study in the time step and the regularization.
    Refine {
        config: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        tau_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        eps_list: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the configuration, run it and report certificates without writing files.
    Validate { config: String },
}

fn load(config: &str) -> thermovisco::Result<RunConfig> {
    let path = Path::new(config);
    if !path.exists() && Scenario::PRESETS.contains(&config) {
        return parse_config(&format!("scenario = \"{config}\"\n"));
    }
    read_config(path)
}

fn execute(cli: Cli) -> thermovisco::Result<bool> {
    match cli.command {
        Command::Simulate {
            config,
            tau,
            eps,
            isothermal,
            out,
            resume,
        } => {
            let mut cfg = load(&config)?;
            if let Some(t) = tau {
                cfg.set_tau(t)?;
            }
            if let Some(e) = eps {
                cfg.scenario.eps = e;
            }
            cfg.scenario.isothermal |= isothermal;
            let v = cfg.scenario.violations();
            if !v.is_empty() {
                return Err(thermovisco::Error::Config(v));
            }
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let outcome = match resume {
                Some(p) => simulate_from(&cfg, Checkpoint::load(&p)?)?,
                None => simulate(&cfg)?,
            };
            emit_outputs(&cfg, &outcome, &dir)?;
            print(&certificate_lines(&outcome.report.certificates));
            print(&format!("outputs written to {}\n", dir.display()));
            Ok(outcome.report.passed)
        }
        Command::Refine {
            config,
            tau_list,
            eps_list,
            out,
        } => {
            let mut cfg = load(&config)?;
            if !tau_list.is_empty() {
                cfg.set_tau_list(&tau_list)?;
            }
            if !eps_list.is_empty() {
                cfg.eps_list = eps_list;
            }
            let dir = out.unwrap_or_else(|| cfg.output.dir.join("refinement"));
            let report = refine(&cfg, Some(&dir))?;
            let checks = refinement_checks(&report);
            print(&certificate_lines(&checks));
            print(&format!("outputs written to {}\n", dir.display()));
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let outcome = simulate(&cfg)?;
            print(&certificate_lines(&outcome.report.certificates));
            Ok(outcome.report.passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
