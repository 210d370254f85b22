//! Command-line front end. Reports go to stdout as JSON (amounts as plain
//! decimal lines), human summaries to stderr.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success |
//! | 1  | writing output failed |
//! | 2  | input violates the Sincov equation or the block structure |
//! | 3  | input missing or unparsable |
//! | 4  | evaluation outside the domain, unordered pair, or off-knot time |
//! | 5  | calibration failed |
//! | 6  | finance error (negative outcome, wipeout present value, bad rate) |
//! | 64 | bad command-line usage |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::calibrate::{calibrate, read_observations_csv, CalibrateError, CalibrationProblem};
use crate::canonical::{
    constant_rate_solution, validate_system, AnySolution, CanonicalError, SolutionDoc,
    ZeroConvention,
};
use crate::codomain::{GroupWithZero, DEFAULT_ZERO_TOL};
use crate::factor_table::{
    check_sincov, decompose, read_csv, write_csv, AnchorRule, AnyTable, FactorError, FactorTable,
    TimeGrid, Tolerances, DEFAULT_SINCOV_TOL,
};
use crate::finance::{
    format_amount, future_value, future_value_constant, future_value_signed, CashAmount,
    FinanceError, InvestmentHorizon, RateQuote,
};
use crate::synth::{random_grid_solution, ChartKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OUTPUT: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_DOMAIN: i32 = 4;
pub const EXIT_CALIBRATION: i32 = 5;
pub const EXIT_FINANCE: i32 = 6;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "sincov", version, about = "Multiplicative Sincov solutions: synthesize, check, decompose, calibrate, value")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random solution (solution.json) and its sampled table (table.csv)
    Synth(SynthArgs),
    /// Evaluate f(s,t) of a solution
    Eval(EvalArgs),
    /// Check a solution's block system or a table's consistency
    Validate(ValidateArgs),
    /// Recover the canonical form of a factor table
    Decompose(DecomposeArgs),
    /// Fit a solution to noisy observations
    Calibrate(CalibrateArgs),
    /// Future value K·f(s,t)
    Fv(FvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    First,
    Middle,
}

impl From<AnchorArg> for AnchorRule {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::First => AnchorRule::First,
            AnchorArg::Middle => AnchorRule::Middle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZeroConventionArg {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
}

impl From<ZeroConventionArg> for ZeroConvention {
    fn from(z: ZeroConventionArg) -> Self {
        match z {
            ZeroConventionArg::Zero => ZeroConvention::Zero,
            ZeroConventionArg::One => ZeroConvention::One,
        }
    }
}

#[derive(Debug, Args)]
pub struct TolArgs {
    #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
    pub zero_tol: f64,
    #[arg(long, default_value_t = DEFAULT_SINCOV_TOL)]
    pub sincov_tol: f64,
}

impl TolArgs {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            zero_tol: self.zero_tol,
            sincov_tol: self.sincov_tol,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for solution.json and table.csv
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Grid points 0, 1, ..., n-1
    #[arg(long, default_value_t = 10)]
    pub grid_size: usize,
    /// Write the constant-rate model q^(t-s) instead of a random solution
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, value_enum, default_value = "1")]
    pub zero_convention: ZeroConventionArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub s: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub t: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Solution JSON, table JSON, or table CSV
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Table CSV (s,t,value) or table JSON
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the report to this file
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long, value_enum, default_value = "middle")]
    pub anchor: AnchorArg,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Observations CSV (s,t,value[,weight])
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Magnitudes at or below this are structural zeros
    #[arg(long, default_value_t = crate::calibrate::DEFAULT_ZERO_THRESHOLD)]
    pub zero_tol: f64,
}

#[derive(Debug, Args)]
pub struct FvArgs {
    /// Solution JSON; omit when using --q
    #[arg(long, required_unless_present = "q")]
    pub input: Option<PathBuf>,
    #[arg(long = "K", allow_negative_numbers = true)]
    pub k: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub s: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub t: f64,
    #[arg(long)]
    pub allow_signed: bool,
    /// Constant growth factor; values over the duration t - s
    #[arg(long, conflicts_with = "input")]
    pub q: Option<f64>,
    #[arg(long, value_enum, default_value = "1")]
    pub zero_convention: ZeroConventionArg,
}

/// An error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Report to print on stdout before failing.
    pub report: Option<serde_json::Value>,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            report: None,
        }
    }
}

fn canonical_code(e: &CanonicalError) -> i32 {
    match e {
        CanonicalError::OutOfDomain { .. }
        | CanonicalError::UnorderedPair { .. }
        | CanonicalError::NonKnotEvaluation { .. } => EXIT_DOMAIN,
        CanonicalError::InvalidSystem(_) => EXIT_VIOLATION,
        _ => EXIT_INPUT,
    }
}

impl From<CanonicalError> for CliError {
    fn from(e: CanonicalError) -> Self {
        CliError::new(canonical_code(&e), e.to_string())
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        match e {
            FactorError::NotSincov(report) => CliError {
                code: EXIT_VIOLATION,
                message: format!(
                    "table is not a Sincov solution: {} violation(s), max error {:e}",
                    report.violations.len(),
                    report.max_error
                ),
                report: serde_json::to_value(&*report).ok(),
            },
            FactorError::InconsistentZeroPattern { .. } | FactorError::ZeroInsideBlock(..) => {
                CliError::new(EXIT_VIOLATION, e.to_string())
            }
            FactorError::Canonical(c) => c.into(),
            other => CliError::new(EXIT_INPUT, other.to_string()),
        }
    }
}

impl From<FinanceError> for CliError {
    fn from(e: FinanceError) -> Self {
        match e {
            FinanceError::Canonical(c) => c.into(),
            FinanceError::UnorderedHorizon { .. } => CliError::new(EXIT_DOMAIN, e.to_string()),
            other => CliError::new(EXIT_FINANCE, other.to_string()),
        }
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        let code = match e {
            CalibrateError::Parse(_) => EXIT_INPUT,
            _ => EXIT_CALIBRATION,
        };
        CliError::new(code, e.to_string())
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_INPUT, format!("cannot read {}: {}", path.display(), e)))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::new(EXIT_OUTPUT, format!("cannot write {}: {}", path.display(), e)))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

fn load_solution(path: &Path) -> Result<AnySolution, CliError> {
    Ok(AnySolution::from_json(&read_input(path)?)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_table(path: &Path) -> Result<AnyTable, CliError> {
    let text = read_input(path)?;
    if is_csv(path) {
        Ok(AnyTable::Real(read_csv(text.as_bytes())?))
    } else {
        Ok(AnyTable::from_json(&text)?)
    }
}

struct Output<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Output<'_> {
    fn stdout(&mut self, text: &str) -> Result<(), CliError> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(EXIT_OUTPUT, format!("cannot write output: {e}")))
    }

    fn note(&mut self, text: &str) {
        let _ = writeln!(self.err, "{text}");
    }
}

fn cmd_synth(a: &SynthArgs, io: &mut Output) -> Result<(), CliError> {
    if a.grid_size == 0 {
        return Err(CliError::new(EXIT_USAGE, "--grid-size must be at least 1"));
    }
    let grid = TimeGrid::uniform(0.0, 1.0, a.grid_size)?;
    let (solution, ranges): (AnySolution, Vec<(usize, usize)>) = match a.q {
        Some(q) => {
            let sol = constant_rate_solution(q, grid.hull(), a.zero_convention.into())?;
            let ranges = if sol.blocks().is_empty() || a.grid_size < 2 {
                Vec::new()
            } else {
                vec![(0, a.grid_size - 1)]
            };
            (sol.into(), ranges)
        }
        None => {
            if a.blocks > a.grid_size / 2 {
                return Err(CliError::new(
                    EXIT_USAGE,
                    format!("{} blocks do not fit on {} grid points", a.blocks, a.grid_size),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let kinds = [ChartKind::Exponential, ChartKind::LogLinear, ChartKind::Signed];
            let (sol, ranges) = random_grid_solution(&mut rng, &grid, a.blocks, &kinds);
            (sol.into(), ranges)
        }
    };

    let mut csv = Vec::new();
    match &solution {
        AnySolution::Real(s) => write_csv(&FactorTable::from_solution(s, grid)?, &mut csv)?,
        AnySolution::PosReal(s) => write_csv(&FactorTable::from_solution(s, grid)?, &mut csv)?,
        AnySolution::Matrix(_) => unreachable!("synth only builds real solutions"),
    }
    fs::create_dir_all(&a.output).map_err(|e| {
        CliError::new(EXIT_OUTPUT, format!("cannot create {}: {}", a.output.display(), e))
    })?;
    write_file(&a.output.join("solution.json"), to_json(&solution.to_doc()).as_bytes())?;
    write_file(&a.output.join("table.csv"), &csv)?;
    io.note(&format!(
        "synth: {} block(s) on {} grid points, wrote solution.json and table.csv",
        ranges.len(),
        a.grid_size
    ));
    io.stdout(&to_json(&json!({
        "seed": a.seed,
        "grid_size": a.grid_size,
        "blocks": ranges,
        "files": ["solution.json", "table.csv"],
    })))
}

fn cmd_eval(a: &EvalArgs, io: &mut Output) -> Result<(), CliError> {
    let sol = load_solution(&a.input)?;
    let value = sol.evaluate_json(a.s, a.t)?;
    io.stdout(&to_json(&json!({ "s": a.s, "t": a.t, "value": value })))
}

fn cmd_validate(a: &ValidateArgs, io: &mut Output) -> Result<(), CliError> {
    let text = read_input(&a.input)?;
    let is_solution = !is_csv(&a.input)
        && serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| CliError::new(EXIT_INPUT, e.to_string()))?
            .get("blocks")
            .is_some();
    if is_solution {
        let doc: SolutionDoc =
            serde_json::from_str(&text).map_err(|e| CliError::new(EXIT_INPUT, e.to_string()))?;
        let blocks: Vec<_> = doc.blocks.iter().map(|b| b.interval).collect();
        let report = validate_system(&doc.domain, &blocks);
        let issues: Vec<String> = report.issues.iter().map(ToString::to_string).collect();
        io.stdout(&to_json(&json!({ "kind": "solution", "valid": report.is_valid(), "issues": issues })))?;
        if !report.is_valid() {
            return Err(CliError::new(EXIT_VIOLATION, format!("invalid block system: {report}")));
        }
        AnySolution::from_doc(&doc)?;
        io.note("validate: block system is valid");
        return Ok(());
    }

    let tol = a.tol.tolerances();
    let report = match load_table(&a.input)? {
        AnyTable::Real(t) => check_sincov(&crate::factor_table::zero_classify(&t, &tol).0, &tol),
        AnyTable::Matrix(t) => check_sincov(&crate::factor_table::zero_classify(&t, &tol).0, &tol),
    };
    io.stdout(&to_json(&report))?;
    if !report.is_consistent {
        return Err(CliError::new(
            EXIT_VIOLATION,
            format!("{} violation(s), max error {:e}", report.violations.len(), report.max_error),
        ));
    }
    io.note(&format!("validate: consistent, max error {:e}", report.max_error));
    Ok(())
}

fn decompose_json<G: GroupWithZero>(
    table: &FactorTable<G>,
    a: &DecomposeArgs,
) -> Result<(String, f64, usize), CliError> {
    let dec = decompose(table, &a.tol.tolerances(), a.anchor.into())?;
    Ok((to_json(&dec.to_doc()), dec.residual_max, dec.block_index_ranges.len()))
}

fn cmd_decompose(a: &DecomposeArgs, io: &mut Output) -> Result<(), CliError> {
    let (text, residual, blocks) = match load_table(&a.input)? {
        AnyTable::Real(t) => decompose_json(&t, a)?,
        AnyTable::Matrix(t) => decompose_json(&t, a)?,
    };
    if let Some(path) = &a.output {
        write_file(path, text.as_bytes())?;
    }
    io.note(&format!("decompose: {blocks} block(s), residual {residual:e}"));
    io.stdout(&text)
}

fn cmd_calibrate(a: &CalibrateArgs, io: &mut Output) -> Result<(), CliError> {
    let obs = read_observations_csv(read_input(&a.input)?.as_bytes())?;
    let problem = CalibrationProblem::from_observations(&obs, a.zero_tol)?;
    let result = calibrate(&problem)?;
    let text = to_json(&result.to_doc());
    if let Some(path) = &a.output {
        write_file(path, text.as_bytes())?;
    }
    io.note(&format!(
        "calibrate: {} group(s), rms log residual {:e}, {} rejected",
        result.groups.len(),
        result.rms_residual,
        result.rejected_observations.len()
    ));
    io.stdout(&text)
}

fn cmd_fv(a: &FvArgs, io: &mut Output) -> Result<(), CliError> {
    let k = CashAmount::new(a.k)?;
    let h = InvestmentHorizon::new(a.s, a.t)?;
    let value = match (a.q, &a.input) {
        (Some(q), _) => future_value_constant(k, h.t - h.s, RateQuote::GrowthFactor(q), a.zero_convention.into())?
            .value(),
        (None, Some(path)) => {
            let signed = |r: Result<f64, FinanceError>| r;
            match load_solution(path)? {
                AnySolution::Real(s) if a.allow_signed => signed(future_value_signed(k, h, &s))?,
                AnySolution::Real(s) => future_value(k, h, &s)?.value(),
                AnySolution::PosReal(s) => future_value(k, h, &s)?.value(),
                AnySolution::Matrix(_) => return Err(FinanceError::NonRealCodomain.into()),
            }
        }
        (None, None) => return Err(CliError::new(EXIT_USAGE, "fv needs --input or --q")),
    };
    if value == 0.0 && a.k > 0.0 {
        io.note(&format!("fv: horizon ({}, {}) crosses a wipeout segment", a.s, a.t));
        return io.stdout("0 WIPEOUT\n");
    }
    io.stdout(&format!("{}\n", format_amount(value)))
}

/// Runs the command line `args` (including the program name), writing to
/// the given streams, and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut io = Output { out, err };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &mut io),
        Command::Eval(a) => cmd_eval(a, &mut io),
        Command::Validate(a) => cmd_validate(a, &mut io),
        Command::Decompose(a) => cmd_decompose(a, &mut io),
        Command::Calibrate(a) => cmd_calibrate(a, &mut io),
        Command::Fv(a) => cmd_fv(a, &mut io),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if let Some(report) = &e.report {
                let _ = io.stdout(&to_json(report));
            }
            io.note(&format!("error: {}", e.message));
            e.code
        }
    }
}

/// Runs against the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(
            std::iter::once("sincov").chain(args.iter().copied()),
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
    fn usage_errors() {
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["fv", "--K", "1"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["decompose", "--input", "x.csv", "--anchor", "last"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn constant_rate_value() {
        let (code, out, _) = run_capture(&["fv", "--q", "1.02", "--K", "100", "--s", "0", "--t", "2"]);
        assert_eq!(code, 0);
        assert_eq!(out, "104.040000000\n");
        let (code, out, _) = run_capture(&["fv", "--q", "0", "--K", "100", "--s", "0", "--t", "2"]);
        assert_eq!(code, 0);
        assert_eq!(out, "0 WIPEOUT\n");
        let (code, _, _) = run_capture(&["fv", "--q", "1.02", "--K", "100", "--s", "2", "--t", "0"]);
        assert_eq!(code, EXIT_DOMAIN);
        let (code, _, _) = run_capture(&["fv", "--q", "1.02", "--K", "-1", "--s", "0", "--t", "1"]);
        assert_eq!(code, EXIT_FINANCE);
    }

    #[test]
    fn missing_input_is_exit_3() {
        for cmd in ["decompose", "validate", "calibrate", "eval"] {
            let mut args = vec![cmd, "--input", "/nonexistent/table.csv"];
            if cmd == "eval" {
                args.extend(["--s", "0", "--t", "1"]);
            }
            assert_eq!(run_capture(&args).0, EXIT_INPUT, "{cmd}");
        }
    }
}
