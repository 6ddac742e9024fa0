//! Command-line front end. Exit codes: 0 success, 1 configuration or usage
//! error, 2 study failure, 3 acceptance failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use log::LevelFilter;

use crate::config::ExperimentConfig;
use crate::describe::describe;
use crate::envs::EnvSpec;
use crate::error::{HarnessError, HarnessResult};
use crate::studies::run_study;
use crate::suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STUDY: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

/// Environment variable added to every run seed.
pub const SEED_OFFSET_VAR: &str = "COPKIT_SEED_OFFSET";

#[derive(Debug, Parser)]
#[command(name = "copkit", version, about = "Stationary-ratio off-policy evaluation experiments")]
struct Cli {
    /// Log verbosity: off, error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the study described by a config file.
    Run {
        /// Config file (alternatively `--config`).
        config_path: Option<PathBuf>,
        #[arg(long = "config")]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated seeds; override the config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads for independent cells.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Parse and validate a config file without running it.
    Validate {
        config_path: Option<PathBuf>,
        #[arg(long = "config")]
        config: Option<PathBuf>,
    },
    /// Run the full acceptance battery.
    Suite {
        #[arg(long, default_value = "suite_results")]
        out_dir: PathBuf,
    },
    /// Print stationary distributions and concentration coefficients of a
    /// named environment (e.g. `chain5`, `random_ergodic10`, `gridworld_sparse`).
    Describe {
        env: String,
        #[arg(long, default_value_t = 0.9)]
        gamma_hat: f64,
        /// Seed of randomly generated environments.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_path(positional: Option<PathBuf>, flag: Option<PathBuf>) -> HarnessResult<PathBuf> {
    match (positional, flag) {
        (Some(p), None) | (None, Some(p)) => Ok(p),
        (Some(_), Some(_)) => Err(HarnessError::Config(
            "give the config either positionally or with --config, not both".into(),
        )),
        (None, None) => Err(HarnessError::Config("missing config file".into())),
    }
}

/// Seed offset from [`SEED_OFFSET_VAR`]; unset means zero.
pub fn seed_offset() -> HarnessResult<u64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("{SEED_OFFSET_VAR}={v:?} is not a u64"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(HarnessError::Config(format!("{SEED_OFFSET_VAR}: {e}"))),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Normal output goes to `out`, diagnostics
/// to `err`.
pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .try_init();
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> HarnessResult<i32> {
    match command {
        Command::Run {
            config_path: positional,
            config,
            out_dir,
            seeds,
            parallel,
        } => {
            let mut config = ExperimentConfig::from_path(&config_path(positional, config)?)?;
            if let Some(seeds) = seeds {
                config.budget.seeds = seeds;
            }
            let offset = seed_offset()?;
            for s in &mut config.budget.seeds {
                *s = s.checked_add(offset).ok_or_else(|| {
                    HarnessError::Config(format!("seed {s} + offset {offset} overflows"))
                })?;
            }
            let out_dir = out_dir
                .or_else(|| config.output.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let report = run_study(&config, &out_dir, parallel.max(1))?;
            for file in &report.files {
                writeln!(out, "{}", file.display())?;
            }
            Ok(EXIT_OK)
        }
        Command::Validate {
            config_path: positional,
            config,
        } => {
            let path = config_path(positional, config)?;
            let config = ExperimentConfig::from_path(&path)?;
            writeln!(
                out,
                "{}: valid {} study on {}",
                path.display(),
                config.study.as_str(),
                config.env.name()
            )?;
            Ok(EXIT_OK)
        }
        Command::Suite { out_dir } => {
            let outcomes = suite::run_suite(&out_dir, |o| {
                log::info!("{}", o.line());
            })?;
            for o in &outcomes {
                writeln!(out, "{}", o.line())?;
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            writeln!(
                out,
                "{} of {} criteria passed",
                outcomes.len() - failed,
                outcomes.len()
            )?;
            Ok(if failed == 0 { EXIT_OK } else { EXIT_ACCEPTANCE })
        }
        Command::Describe {
            env,
            gamma_hat,
            seed,
        } => {
            let spec = EnvSpec::from_name(&env)?;
            let description = describe(&spec, seed, gamma_hat)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&description)?)?;
            Ok(EXIT_OK)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cli_main(
            std::iter::once("copkit").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("frobnicate"));
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn describe_unknown_env_is_a_config_error() {
        assert_eq!(run(&["describe", "nowhere7"]).0, EXIT_CONFIG);
    }

    #[test]
    fn conflicting_config_sources_are_rejected() {
        let (code, _, err) = run(&["validate", "a.json", "--config", "b.json"]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(err.contains("not both"));
    }
}
