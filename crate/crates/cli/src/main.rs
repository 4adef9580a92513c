use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parabuck::verify::{VerifyOptions, DEFAULT_DRAWS, DEFAULT_SEED};
use parabuck_cli::{
    cmd_run, cmd_sweep, cmd_verify, load_config, render_verify, CliError, Overrides, Status,
};

/// Simulator for parallel buck converters under passivity-based control.
#[derive(Parser)]
#[command(name = "parabuck", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and summary, evaluate its checks.
    Run {
        /// Scenario file, or a bundled name (exp1, exp2, exp2_esr).
        #[arg(long)]
        config: String,
        /// Output directory for the CSV trace and summary.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        decimate: Option<usize>,
    },
    /// Randomized structural checks on the model and coordinate maps.
    Verify {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
        /// Perturb Gamma before checking (self-test of the suite).
        #[arg(long, hide = true)]
        corrupt_gamma: bool,
    },
    /// Run a scenario once per parameter value, concurrently.
    Sweep {
        #[arg(long)]
        config: String,
        /// One of R, k_d, k_i, k_lambda, r_scale.
        #[arg(long)]
        param: String,
        /// Parameter values.
        #[arg(allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        decimate: Option<usize>,
    },
}

fn exec(cli: Cli) -> Result<Status, CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            dt,
            decimate,
        } => {
            let cfg = load_config(&config)?;
            let report = cmd_run(&cfg, &Overrides { dt, decimate }, out.as_deref())?;
            print!("{}", report.render());
            Ok(if report.passed() {
                Status::Ok
            } else {
                Status::CheckFailed
            })
        }
        Command::Verify {
            seed,
            draws,
            corrupt_gamma,
        } => {
            let report = cmd_verify(&VerifyOptions {
                seed,
                draws,
                corrupt_gamma,
                ..Default::default()
            })?;
            print!("{}", render_verify(&report));
            Ok(if report.passed() {
                Status::Ok
            } else {
                Status::CheckFailed
            })
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            dt,
            decimate,
        } => {
            let cfg = load_config(&config)?;
            let report = cmd_sweep(
                &cfg,
                &Overrides { dt, decimate },
                &param,
                &values,
                out.as_deref(),
            )?;
            print!("{}", report.render());
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let status = match exec(Cli::parse()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("parabuck: {e}");
            e.status()
        }
    };
    ExitCode::from(status as u8)
}
