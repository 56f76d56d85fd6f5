//! Command-line harness: `run`, `sweep` and `verify`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | at least one holder, all residuals within tolerance |
//! | 1    | defect: a holder out of tolerance, or an invariant broke |
//! | 2    | data loss: every copy of some block died (report still written) |
//! | 3    | I/O failure |
//! | 64   | usage error |

pub mod report;
pub mod schedule;
pub mod sweep;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::densela::{rel_residual, Matrix};
use crate::simnet::FailureSchedule;
use crate::tsqr::{run_with_matrix, AlgorithmKind, RunConfig, DEFAULT_TOL};
use report::{InputSource, ReportDocument, SCHEMA_VERSION};
use sweep::{run_sweep, MAX_SWEEP_PROCS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DEFECT: i32 = 1;
pub const EXIT_DATA_LOSS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "ft-tsqr",
    version,
    about = "Fault-tolerant TSQR on a simulated message-passing runtime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write its report.
    Run(RunArgs),
    /// Run every failure schedule up to a size bound.
    Sweep(SweepArgs),
    /// Recompute the residual of a written report.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Baseline,
    Redundant,
    Replace,
    Selfheal,
}

impl From<AlgorithmArg> for AlgorithmKind {
    fn from(value: AlgorithmArg) -> Self {
        match value {
            AlgorithmArg::Baseline => AlgorithmKind::Baseline,
            AlgorithmArg::Redundant => AlgorithmKind::Redundant,
            AlgorithmArg::Replace => AlgorithmKind::Replace,
            AlgorithmArg::Selfheal => AlgorithmKind::SelfHealing,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    #[arg(long)]
    procs: usize,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated `rank@step[:before|:after]` events.
    #[arg(long, default_value = "")]
    failures: String,
    /// Write the global input matrix as CSV.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    /// Factor this CSV matrix instead of a seeded one.
    #[arg(long)]
    input_matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 2)]
    max_failures: usize,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    report: PathBuf,
    /// CSV input matrix; regenerated from the report's seed when absent.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCommand {
    pub config: RunConfig,
    /// Rows and columns were given on the command line.
    pub explicit_shape: bool,
    pub input_matrix: Option<PathBuf>,
    pub dump_matrix: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCommand {
    pub config: RunConfig,
    pub max_failures: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyCommand {
    pub report: PathBuf,
    pub matrix: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliCommand {
    Run(RunCommand),
    Sweep(SweepCommand),
    Verify(VerifyCommand),
}

/// Rejected command line. `exit_code` is 0 for `--help` and `--version`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError {
    pub message: String,
    pub exit_code: i32,
}

impl UsageError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            exit_code: EXIT_USAGE,
        }
    }
}

fn problem_config(
    p: &ProblemArgs,
    schedule: FailureSchedule,
    need_shape: bool,
) -> Result<RunConfig, UsageError> {
    let (rows, cols) = match (p.rows, p.cols) {
        (Some(r), Some(c)) => (r, c),
        (None, None) if !need_shape => (0, 0),
        _ => return Err(UsageError::new("--rows and --cols are required")),
    };
    let config = RunConfig::new(p.algorithm.into(), p.procs, rows, cols, p.seed)
        .with_schedule(schedule)
        .with_tol(p.tol);
    if need_shape || rows != 0 {
        config
            .validate()
            .map_err(|e| UsageError::new(e.to_string()))?;
    } else {
        crate::simnet::rounds_for(p.procs).map_err(|e| UsageError::new(e.to_string()))?;
        config
            .schedule
            .validate(p.procs)
            .map_err(|e| UsageError::new(e.to_string()))?;
    }
    Ok(config)
}

/// Parses and validates a full argument vector (program name first).
pub fn parse_args<I, T>(argv: I) -> Result<CliCommand, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        let exit_code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_USAGE,
        };
        UsageError {
            message: e.render().to_string(),
            exit_code,
        }
    })?;

    match cli.command {
        Command::Run(args) => {
            let schedule: FailureSchedule = args
                .failures
                .parse()
                .map_err(|e: crate::Error| UsageError::new(e.to_string()))?;
            let need_shape = args.input_matrix.is_none();
            let config = problem_config(&args.problem, schedule, need_shape)?;
            Ok(CliCommand::Run(RunCommand {
                explicit_shape: config.rows != 0,
                config,
                input_matrix: args.input_matrix,
                dump_matrix: args.dump_matrix,
                out: args.problem.out,
                format: args.problem.format,
            }))
        }
        Command::Sweep(args) => {
            let config = problem_config(&args.problem, FailureSchedule::empty(), true)?;
            if config.procs > MAX_SWEEP_PROCS {
                return Err(UsageError::new(format!(
                    "sweeps are limited to {MAX_SWEEP_PROCS} processes"
                )));
            }
            Ok(CliCommand::Sweep(SweepCommand {
                config,
                max_failures: args.max_failures,
                out: args.problem.out,
                format: args.problem.format,
            }))
        }
        Command::Verify(args) => Ok(CliCommand::Verify(VerifyCommand {
            report: args.report,
            matrix: args.matrix,
            out: args.out,
        })),
    }
}

enum Failure {
    Usage(String),
    Io(String),
    Defect(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
            Failure::Defect(_) => EXIT_DEFECT,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Defect(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn read_matrix(path: &Path) -> Result<Matrix, Failure> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Matrix::read_csv(file).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(io_err(path)),
        None => stdout
            .write_all(bytes)
            .map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis().try_into().unwrap_or(u64::MAX)
}

fn execute_run(cmd: &RunCommand, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let start = Instant::now();
    let (a, config, input) = match &cmd.input_matrix {
        Some(path) => {
            let a = read_matrix(path)?;
            if cmd.explicit_shape && (a.rows(), a.cols()) != (cmd.config.rows, cmd.config.cols) {
                return Err(Failure::Usage(format!(
                    "{} is {}x{} but --rows/--cols say {}x{}",
                    path.display(),
                    a.rows(),
                    a.cols(),
                    cmd.config.rows,
                    cmd.config.cols
                )));
            }
            let config = RunConfig {
                rows: a.rows(),
                cols: a.cols(),
                ..cmd.config.clone()
            };
            config
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            (a, config, InputSource::File)
        }
        None => {
            let a = cmd
                .config
                .generate_matrix()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            (a, cmd.config.clone(), InputSource::Seeded)
        }
    };

    if let Some(path) = &cmd.dump_matrix {
        let file = fs::File::create(path).map_err(io_err(path))?;
        a.write_csv(io::BufWriter::new(file))
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }

    let report = run_with_matrix(&config, &a).map_err(|e| Failure::Defect(e.to_string()))?;
    let doc = ReportDocument::new(&config, input, &report, elapsed_ms(start));
    let bytes = match cmd.format {
        Format::Json => doc.to_json().into_bytes(),
        Format::Csv => {
            let mut buf = Vec::new();
            doc.write_csv(&mut buf)
                .map_err(|e| Failure::Io(e.to_string()))?;
            buf
        }
    };
    emit(cmd.out.as_deref(), stdout, &bytes)?;
    Ok(doc.verdict.exit_code())
}

fn execute_sweep(cmd: &SweepCommand, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let start = Instant::now();
    let mut report =
        run_sweep(&cmd.config, cmd.max_failures).map_err(|e| Failure::Defect(e.to_string()))?;
    report.wall_time_ms = elapsed_ms(start);
    let bytes = match cmd.format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&report).expect("sweep serializes");
            text.push('\n');
            text.into_bytes()
        }
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Failure::Io(format!("csv: {e}"));
            wtr.write_record([
                "failures",
                "budget_ok",
                "holders",
                "data_loss",
                "verdict",
                "max_residual",
            ])
            .map_err(csv_err)?;
            for e in &report.entries {
                let holders = e
                    .holders
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" ");
                let verdict = serde_json::to_value(e.verdict).expect("verdict serializes");
                wtr.write_record([
                    e.failures.clone(),
                    e.budget_ok.to_string(),
                    holders,
                    e.data_loss.to_string(),
                    verdict.as_str().unwrap_or_default().to_string(),
                    e.max_residual
                        .map(|x| format!("{x:.16e}"))
                        .unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
            wtr.into_inner()
                .map_err(|e| Failure::Io(format!("csv: {e}")))?
        }
    };
    emit(cmd.out.as_deref(), stdout, &bytes)?;
    Ok(report.exit_code())
}

fn execute_verify(cmd: &VerifyCommand, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let text = fs::read_to_string(&cmd.report).map_err(io_err(&cmd.report))?;
    let doc = ReportDocument::from_json(&text).map_err(|e| Failure::Io(e.to_string()))?;
    let a = match &cmd.matrix {
        Some(path) => read_matrix(path)?,
        None if doc.config.input == InputSource::Seeded => doc
            .config
            .to_config()
            .and_then(|c| c.generate_matrix())
            .map_err(|e| Failure::Io(format!("report config: {e}")))?,
        None => {
            return Err(Failure::Usage(
                "report was produced from a matrix file; pass --matrix".into(),
            ))
        }
    };
    let tol = doc.config.tol;
    let factor = doc
        .final_factor()
        .map_err(|e| Failure::Io(format!("final_r: {e}")))?;

    let (recomputed, consistent, code) = match factor {
        None => {
            let code = if doc.data_loss && doc.holders.is_empty() {
                EXIT_DATA_LOSS
            } else {
                EXIT_DEFECT
            };
            (None, doc.holders.is_empty(), code)
        }
        Some(r) => {
            let res = rel_residual(&a, &r).map_err(|e| Failure::Usage(e.to_string()))?;
            let consistent = doc
                .ranks
                .iter()
                .filter_map(|rank| rank.residual)
                .all(|reported| (reported - res).abs() <= 1e-6 * tol);
            let ok = consistent && res <= tol && !doc.holders.is_empty();
            (
                Some(res),
                consistent,
                if ok { EXIT_OK } else { EXIT_DEFECT },
            )
        }
    };

    let verdict = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "report": cmd.report.display().to_string(),
        "holders": doc.holders,
        "recomputed_residual": recomputed,
        "reported_max_residual": doc.max_residual,
        "tol": tol,
        "consistent": consistent,
        "exit_code": code,
    });
    let mut text = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    text.push('\n');
    emit(cmd.out.as_deref(), stdout, text.as_bytes())?;
    Ok(code)
}

/// Executes a parsed command, writing reports to `--out` or `stdout` and
/// diagnostics to standard error. Returns the process exit code.
pub fn execute_with(cmd: &CliCommand, stdout: &mut dyn Write) -> i32 {
    let result = match cmd {
        CliCommand::Run(c) => execute_run(c, stdout),
        CliCommand::Sweep(c) => execute_sweep(c, stdout),
        CliCommand::Verify(c) => execute_verify(c, stdout),
    };
    result.unwrap_or_else(|failure| {
        eprintln!("ft-tsqr: {}", failure.message());
        failure.exit_code()
    })
}

pub fn execute(cmd: &CliCommand) -> i32 {
    execute_with(cmd, &mut io::stdout().lock())
}

/// Parses `argv` and runs it.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(argv) {
        Ok(cmd) => execute(&cmd),
        Err(e) => {
            if e.exit_code == EXIT_OK {
                print!("{}", e.message);
            } else {
                eprint!("{}", e.message);
                if !e.message.ends_with('\n') {
                    eprintln!();
                }
            }
            e.exit_code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &str) -> Result<CliCommand, UsageError> {
        parse_args(std::iter::once("ft-tsqr").chain(line.split_whitespace()))
    }

    #[test]
    fn parses_a_single_crash_run() {
        let cmd = parse(
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --seed 7 --failures 2@0:after",
        )
        .unwrap();
        let CliCommand::Run(run) = cmd else {
            panic!("expected run")
        };
        assert_eq!(run.config.algorithm, AlgorithmKind::Redundant);
        assert_eq!(run.config.procs, 4);
        assert_eq!(run.config.schedule.to_string(), "2@0:after");
        assert_eq!(run.config.tol, 1e-10);
        assert_eq!(run.format, Format::Json);
    }

    #[test]
    fn defaults() {
        let CliCommand::Run(run) =
            parse("run --algorithm selfheal --procs 2 --rows 8 --cols 2").unwrap()
        else {
            panic!()
        };
        assert!(run.config.schedule.is_empty());
        assert_eq!(run.config.seed, 0);
        assert_eq!(run.config.algorithm, AlgorithmKind::SelfHealing);

        let CliCommand::Sweep(sweep) =
            parse("sweep --algorithm replace --procs 8 --rows 64 --cols 2").unwrap()
        else {
            panic!()
        };
        assert_eq!(sweep.max_failures, 2);
    }

    #[test]
    fn usage_errors() {
        for line in [
            "run --algorithm redundant --procs 3 --rows 48 --cols 4",
            "run --algorithm redundant --procs 4 --rows 63 --cols 4",
            "run --algorithm redundant --procs 4 --rows 8 --cols 4",
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --failures 2@",
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --failures 2@5",
            "run --algorithm redundant --procs 4 --rows 64",
            "run --algorithm tree --procs 4 --rows 64 --cols 4",
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --bogus 1",
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --format xml",
            "sweep --algorithm replace --procs 32 --rows 64 --cols 2",
            "walk",
        ] {
            let err = parse(line).unwrap_err();
            assert_eq!(err.exit_code, EXIT_USAGE, "{line}");
        }
        assert_eq!(parse("--help").unwrap_err().exit_code, EXIT_OK);
    }

    #[test]
    fn baseline_run_exits_zero() {
        let cmd = parse("run --algorithm baseline --procs 4 --rows 64 --cols 4 --seed 7").unwrap();
        let mut out = Vec::new();
        assert_eq!(execute_with(&cmd, &mut out), EXIT_OK);
        let doc = ReportDocument::from_json(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(doc.holders, vec![0]);
    }

    #[test]
    fn lost_block_exits_two() {
        let cmd = parse(
            "run --algorithm redundant --procs 4 --rows 64 --cols 4 --seed 7 --failures 2@0:before,3@0:before",
        )
        .unwrap();
        let mut out = Vec::new();
        assert_eq!(execute_with(&cmd, &mut out), EXIT_DATA_LOSS);
        let doc = ReportDocument::from_json(std::str::from_utf8(&out).unwrap()).unwrap();
        assert!(doc.data_loss);
        assert!(doc.holders.is_empty());
    }

    #[test]
    fn self_healing_single_crash_exits_zero() {
        let cmd = parse(
            "run --algorithm selfheal --procs 4 --rows 64 --cols 4 --seed 7 --failures 2@0:after",
        )
        .unwrap();
        let mut out = Vec::new();
        assert_eq!(execute_with(&cmd, &mut out), EXIT_OK);
        let doc = ReportDocument::from_json(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(doc.respawns, 1);
        assert_eq!(doc.holders, vec![0, 1, 2, 3]);
    }

    #[test]
    fn unwritable_output_exits_three() {
        let cmd = parse(
            "run --algorithm baseline --procs 2 --rows 8 --cols 2 --out /nonexistent-dir/x/report.json",
        )
        .unwrap();
        assert_eq!(execute_with(&cmd, &mut Vec::new()), EXIT_IO);
    }
}
