//! `cavsim`: run scenarios, sweep the prediction step, validate configs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cavsim_core::output::{write_run, write_sweep_file};
use cavsim_core::{load_scenario, run, sweep_prediction_step, Error, Scenario, SweepRow};
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "cavsim", version, about = "Connected-vehicle intersection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the scenario once per prediction step and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated prediction steps in seconds, e.g. 0.01,0.1,0.5,1.0.
        #[arg(long)]
        steps: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    };
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_numeric() => 3,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Error> {
    let sc = load_scenario(path)?;
    match seed {
        Some(seed) => sc.with_seed(seed),
        None => Ok(sc),
    }
}

fn parse_steps(list: &str) -> Result<Vec<f64>, Error> {
    let bad = |message: String| Error::Config {
        path: "--steps".into(),
        message,
    };
    let steps = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if steps.is_empty() {
        return Err(bad("must list at least one prediction step".into()));
    }
    Ok(steps)
}

/// Sub-directory name for one sweep entry, e.g. `dt_0.01`.
fn step_dir(step: f64) -> String {
    format!("dt_{step}")
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, seed, out } => {
            let sc = load(&config, seed)?;
            info!("running {} for {} steps", config.display(), sc.engine.n_steps);
            let result = run(&sc)?;
            write_run(&out, &result)?;
            let s = &result.summary;
            say!(
                "max |pos err| {:.6} m, rms {:.6} m, violations {}, full stops {} -> {}",
                s.max_abs_pos_err_m,
                s.rms_pos_err_m,
                s.violation_count,
                s.full_stop_count,
                out.display()
            );
        }
        Command::Sweep {
            config,
            steps,
            seed,
            out,
        } => {
            let steps = parse_steps(&steps)?;
            let sc = load(&config, seed)?;
            let results = sweep_prediction_step(&sc, &steps)?;
            let mut rows = Vec::with_capacity(results.len());
            for (step, result) in steps.iter().zip(&results) {
                write_run(&out.join(step_dir(*step)), result)?;
                let row = SweepRow::from_summary(&result.summary);
                say!(
                    "dt {:>6} s: max |pos err| {:.6} m, {:.6} ms/step",
                    step,
                    row.max_abs_pos_err_m,
                    row.mean_step_wallclock_ms
                );
                rows.push(row);
            }
            write_sweep_file(&out.join("sweep.csv"), &rows)?;
        }
        Command::Validate { config } => {
            let sc = load(&config, None)?;
            say!("{}", sc.config.to_json_pretty());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAVSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_parse_in_order() {
        assert_eq!(parse_steps("1.0, 0.01,0.5").unwrap(), vec![1.0, 0.01, 0.5]);
    }

    #[test]
    fn empty_steps_are_a_config_error() {
        for list in ["", " ", ",,"] {
            assert_eq!(exit_code(&parse_steps(list).unwrap_err()), 2);
        }
        assert_eq!(exit_code(&parse_steps("0.1,fast").unwrap_err()), 2);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::NumericFault("speed")), 3);
        let io = Error::Io {
            path: "x".into(),
            message: "denied".into(),
        };
        assert_eq!(exit_code(&io), 1);
    }

    #[test]
    fn step_dirs() {
        assert_eq!(step_dir(0.01), "dt_0.01");
        assert_eq!(step_dir(1.0), "dt_1");
    }
}
