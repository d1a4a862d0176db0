use bilevel_sim::{bench, check, matrix, trace, Axis, RunError, Scenario, ScenarioError};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(version, about = "Closed-loop runs of the bilevel gait controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Simulate {
        scenario: PathBuf,
        /// Keep the contact schedule fixed.
        #[arg(long)]
        no_bilevel: bool,
        /// Per-cycle CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON summary; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Recovery counts for pushes of several magnitudes.
    Matrix {
        scenario: PathBuf,
        #[arg(long)]
        axis: Axis,
        /// Push magnitudes in newtons.
        #[arg(long, value_delimiter = ',', required = true)]
        forces: Vec<f64>,
    },
    /// Compare the analytic gradient with finite differences.
    GradCheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Per-stage timing for several horizon lengths.
    Benchmark {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [20, 33, 50])]
        nodes: Vec<usize>,
    },
}

#[derive(Debug)]
enum CliError {
    Run(RunError),
    Output(String),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError::Run(e)
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Run(e.into())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            scenario,
            no_bilevel,
            trace: trace_path,
            summary,
        } => {
            let sc = Scenario::load(&scenario)?;
            let (records, s) = bilevel_sim::run_scenario(&sc, !no_bilevel)?;
            if let Some(p) = trace_path {
                write_file(&p, &trace::trace_to_string(&records))?;
            }
            let json = trace::summary_json(&s);
            match summary {
                Some(p) => write_file(&p, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Matrix { scenario, axis, forces } => {
            let sc = Scenario::load(&scenario)?;
            let report = matrix::run_matrix(&sc, axis, &forces)?;
            print!("{}", matrix::render_cells(&report));
            println!();
            print!("{}", matrix::render_table(std::slice::from_ref(&report)));
        }
        Command::GradCheck { scenario, trials } => {
            let sc = Scenario::load(&scenario)?;
            print!("{}", check::grad_check(&sc, trials)?.render());
        }
        Command::Benchmark { scenario, nodes } => {
            let sc = Scenario::load(&scenario)?;
            print!("{}", bench::render_table(&bench::benchmark(&sc, &nodes)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match &e {
                CliError::Run(err) => {
                    eprintln!("{err}");
                    err.exit_code()
                }
                CliError::Output(msg) => {
                    eprintln!("cannot write output: {msg}");
                    1
                }
            };
            ExitCode::from(code)
        }
    }
}
