use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stratsurv_cli::{design, fit, simulate, CliError, SimulateOptions};
use stratsurv_core::design::{DesignInputs, DEFAULT_EVENT_FRACTION};
use stratsurv_core::inference::{Method, TieMethod};

#[derive(Parser)]
#[command(name = "stratsurv", version, about = "Stratified survival analysis and trial simulation")]
struct Cli {
    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write the metric table.
    Simulate {
        /// Study config (TOML) or a previous run's JSON sidecar.
        config: PathBuf,
        /// Results CSV; the JSON sidecar is written next to it.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write every simulated dataset as CSV into this directory.
        #[arg(long)]
        dump_datasets: Option<PathBuf>,
    },
    /// Analyse a subject-level dataset CSV.
    Fit {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "cox-stratified")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "efron")]
        ties: TiesArg,
    },
    /// Required events (Schoenfeld) and sample size.
    Design {
        #[arg(long)]
        hr: f64,
        #[arg(long, default_value_t = 0.025)]
        alpha: f64,
        #[arg(long, default_value_t = 0.8)]
        power: f64,
        #[arg(long, default_value_t = DEFAULT_EVENT_FRACTION)]
        event_fraction: f64,
        /// Fraction randomized to treatment.
        #[arg(long, default_value_t = 0.5)]
        allocation: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Logrank,
    StratifiedLogrank,
    CoxUnstratified,
    CoxMultivariate,
    CoxStratified,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Logrank => Method::LogRank,
            MethodArg::StratifiedLogrank => Method::StratifiedLogRank,
            MethodArg::CoxUnstratified => Method::CoxUnstratified,
            MethodArg::CoxMultivariate => Method::CoxMultivariate,
            MethodArg::CoxStratified => Method::CoxStratified,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Efron,
    Breslow,
}

impl From<TiesArg> for TieMethod {
    fn from(t: TiesArg) -> Self {
        match t {
            TiesArg::Efron => TieMethod::Efron,
            TiesArg::Breslow => TieMethod::Breslow,
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            output,
            dump_datasets,
        } => {
            let opts = SimulateOptions {
                seed: cli.seed,
                workers: cli.workers,
                dump_datasets,
            };
            let summary = simulate(&config, &output, &opts)?;
            for row in &summary.rows {
                let status = row.status();
                if status != "ok" {
                    eprintln!("true_hr {} (D={}): {status}", row.true_hr, row.events);
                }
            }
            if cli.json {
                println!("{}", to_json(&summary.rows));
            } else {
                println!(
                    "wrote {} rows to {} (sidecar {})",
                    summary.rows.len(),
                    summary.results_path.display(),
                    summary.sidecar_path.display()
                );
            }
            if summary.any_failed() {
                return Err(CliError::Runtime("one or more rows failed".into()));
            }
            Ok(())
        }
        Command::Fit { dataset, method, ties } => {
            let report = fit(&dataset, method.into(), ties.into())?;
            if cli.json {
                println!("{}", to_json(&report));
            } else {
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Design {
            hr,
            alpha,
            power,
            event_fraction,
            allocation,
        } => {
            let r = design(&DesignInputs {
                hr,
                alpha_one_sided: alpha,
                power,
                allocation,
                event_fraction,
            })?;
            if cli.json {
                println!("{}", to_json(&r));
            } else {
                println!("D={}\nN={}", r.events, r.sample_size);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
