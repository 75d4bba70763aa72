//! Command-line runner: analyze one problem from a TOML spec, run the
//! registry-wide verification suite, extract plot tables from a report, or
//! list the builtin registry.
//!
//! Exit codes are a stable contract: 0 = pass, 1 = consistency failure,
//! 2 = configuration error (bad flags, malformed spec, missing stage).

mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dichotomy_lab::analyze::{run, Verdict};
use dichotomy_lab::problems::registry;
use dichotomy_lab::run_verify_suite;
use dichotomy_lab::Error;

#[derive(Parser)]
#[command(
    name = "dichotomy-lab",
    version,
    about = "Exponential dichotomies, node operators, and Fredholm indices for linear nonautonomous systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one problem described by a TOML spec and emit a JSON report.
    Analyze {
        /// Path to the TOML problem spec.
        spec: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock stage timings in the report (off by default so
        /// reports stay byte-for-byte deterministic).
        #[arg(long)]
        timings: bool,
    },
    /// Run the cross-module invariant suite over the builtin registry.
    Verify {
        /// Only run checks whose tag matches (e.g. "flow", "dichotomy").
        #[arg(long)]
        filter: Option<String>,
    },
    /// Extract a plain-text plot table from a JSON report.
    Plot {
        /// Path to a report produced by `analyze`.
        report: PathBuf,
        /// Which table to extract.
        #[arg(long, value_enum)]
        what: PlotKind,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the builtin problem registry.
    ListProblems,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Kernel-basis samples per grid time: n, then one column per entry.
    KernelProfile,
    /// Forward decay on the plus half-line: offset, log norm, log envelope.
    DichotomyDecay,
    /// Sorted eigenvalue trajectories of the selfadjoint path: t, then values.
    EigenvaluePath,
}

/// Anything that stops a command, tagged with the exit code it maps to.
#[derive(Debug)]
enum CliError {
    /// Malformed flags, spec files, inputs, or a missing report stage.
    Config(String),
    /// A library-level defect surfaced outside a report.
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Internal(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        match &err {
            Error::Config(_) | Error::MissingStage { .. } => CliError::Config(err.to_string()),
            _ => CliError::Internal(err.to_string()),
        }
    }
}

fn read_to_string(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|err| CliError::Config(format!("cannot read {}: {err}", path.display())))
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|err| CliError::Config(format!("cannot write {}: {err}", path.display()))),
        None => {
            print_stdout(text);
            Ok(())
        }
    }
}

/// Write to stdout, tolerating a consumer that closed the pipe early (e.g.
/// `dichotomy-lab list-problems | head`): the rest of the output is dropped
/// and the command finishes with its computed exit code.
fn print_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(err) = out.write_all(text.as_bytes()) {
        if err.kind() != std::io::ErrorKind::BrokenPipe {
            panic!("failed writing to stdout: {err}");
        }
    }
}

/// `print_stdout` plus a trailing newline.
fn println_stdout(text: &str) {
    print_stdout(text);
    print_stdout("\n");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze { spec, out, timings } => cmd_analyze(&spec, out.as_ref(), timings),
        Command::Verify { filter } => cmd_verify(filter.as_deref()),
        Command::Plot { report, what, out } => cmd_plot(&report, what, out.as_ref()),
        Command::ListProblems => cmd_list_problems(),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn cmd_analyze(
    spec_path: &PathBuf,
    out: Option<&PathBuf>,
    timings: bool,
) -> Result<ExitCode, CliError> {
    let text = read_to_string(spec_path)?;
    let (task, mut options) = config::parse_spec(&text)?;
    options.timings = timings;

    let report = run(&task, &options);
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|err| CliError::Internal(format!("report serialization failed: {err}")))?;
    json.push('\n');
    write_output(out, &json)?;
    if out.is_some() {
        let verdict = match report.verdict {
            Verdict::Pass => "pass",
            Verdict::Refused => "refused",
            Verdict::Fail => "fail",
        };
        println_stdout(&format!("{}: verdict {}", report.problem, verdict));
        if let Some(integers) = &report.integers {
            println_stdout(&format!(
                "  rank P+ {} | dim ker {} | codim im {} | index {}{}",
                integers.rank_plus,
                integers.dim_kernel,
                integers.codim_image,
                integers.index,
                match integers.flow {
                    Some(flow) => format!(" | flow {flow}"),
                    None => String::new(),
                }
            ));
        }
        if let Some(refusal) = &report.refusal {
            println_stdout(&format!("  refusal: {refusal}"));
        }
    }
    Ok(match report.verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    })
}

fn cmd_verify(filter: Option<&str>) -> Result<ExitCode, CliError> {
    let max_threads = match std::env::var("DICHOTOMY_LAB_THREADS") {
        Ok(raw) => raw.parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "DICHOTOMY_LAB_THREADS must be a non-negative integer, got '{raw}'"
            ))
        })?,
        Err(_) => 0,
    };
    let summary = run_verify_suite(filter, max_threads)?;
    for outcome in &summary.outcomes {
        let mark = if outcome.passed { "PASS" } else { "FAIL" };
        println_stdout(&format!(
            "{mark} [{}] {} — {}",
            outcome.tag, outcome.name, outcome.detail
        ));
    }
    let (passed, failed) = summary.counts();
    println_stdout(&format!("{passed} passed, {failed} failed"));
    Ok(if summary.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_plot(
    report_path: &PathBuf,
    what: PlotKind,
    out: Option<&PathBuf>,
) -> Result<ExitCode, CliError> {
    let text = read_to_string(report_path)?;
    let report: dichotomy_lab::analyze::RunReport = serde_json::from_str(&text)
        .map_err(|err| CliError::Config(format!("malformed report JSON: {err}")))?;
    let table = plot::emit(&report, what)?;
    write_output(out, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_list_problems() -> Result<ExitCode, CliError> {
    for problem in registry() {
        println_stdout(&format!("{:<24} {}", problem.name, problem.summary));
    }
    Ok(ExitCode::SUCCESS)
}
