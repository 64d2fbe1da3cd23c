//! Command-line front end: argument parsing, layered configuration, and
//! atomic CSV/JSON output.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use wavicle::experiments::{
    self, ExperimentConfig, ExperimentKind, ResultRow, DEFAULT_CALIBRATION,
};
use wavicle::sampler::SamplingMode;
use wavicle::wavicle::Statistics;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "WAVICLE_SEED";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "wavicle",
    version,
    about = "Two-source, two-detector correlation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spin correlation scan over detector directions.
    Epr(RunArgs),
    /// Intensity correlation scan over detector separation.
    Hbt(RunArgs),
    /// Single-detector readings of spin-polarized flows.
    Spinflow(RunArgs),
    /// Exchange-channel noise statistics.
    Noise(RunArgs),
    /// Closed-form values on the configured grid, without sampling.
    OracleTable(OracleArgs),
    /// Oracle identities plus a short Monte Carlo smoke run.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct RunArgs {
    /// Flat JSON object of configuration keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Values are parsed as
    /// JSON when possible, otherwise taken as strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "N", allow_hyphen_values = true, value_parser = parse_positive)]
    trials: Option<u64>,
    #[arg(long, allow_hyphen_values = true, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_stats)]
    stats: Option<Statistics>,
    #[arg(long, value_name = "N", allow_hyphen_values = true, value_parser = parse_positive)]
    workers: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SamplingMode>,
    /// Output file; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format; inferred from the --out extension, else csv.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Experiment whose grid is tabulated.
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ExperimentKind>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, allow_hyphen_values = true, value_parser = parse_seed)]
    seed: Option<u64>,
    /// Replaces the exchange-reading calibration; lets tests corrupt it.
    #[arg(long, hide = true, allow_hyphen_values = true)]
    kappa_override: Option<f64>,
}

fn parse_positive(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err("expected a positive integer".into()),
    }
}

fn parse_seed(s: &str) -> Result<u64, String> {
    s.parse::<u64>()
        .map_err(|_| "expected an unsigned 64-bit integer".into())
}

fn parse_stats(s: &str) -> Result<Statistics, String> {
    s.parse().map_err(|e: wavicle::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e: wavicle::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: wavicle::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcmd {
    Run(ExperimentKind),
    OracleTable(Option<ExperimentKind>),
    Selftest,
}

/// A parsed command line. Explicit flags are kept apart from `--set`
/// overrides; both are applied after the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct CliInvocation {
    pub subcommand: Subcmd,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, Value)>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub seed: Option<u64>,
    pub kappa_override: Option<f64>,
}

/// Outcome of parsing: an invocation to run, or text to print before a
/// successful exit (help, version).
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Run(CliInvocation),
    Print(String),
}

/// Parses `argv` excluding the program name.
pub fn parse_invocation<I, T>(argv: I) -> Result<Parsed, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("wavicle")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return Ok(Parsed::Print(e.render().to_string()));
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            return Err(CliError::usage("missing subcommand; see wavicle --help"));
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::usage(
                line.trim_start_matches("error: ").to_string(),
            ));
        }
    };
    let (subcommand, run) = match cli.command {
        Command::Epr(run) => (Subcmd::Run(ExperimentKind::Epr), run),
        Command::Hbt(run) => (Subcmd::Run(ExperimentKind::Hbt), run),
        Command::Spinflow(run) => (Subcmd::Run(ExperimentKind::SpinFlow), run),
        Command::Noise(run) => (Subcmd::Run(ExperimentKind::Noise), run),
        Command::OracleTable(args) => (Subcmd::OracleTable(args.kind), args.run),
        Command::Selftest(args) => {
            return Ok(Parsed::Run(CliInvocation {
                subcommand: Subcmd::Selftest,
                config_path: None,
                overrides: Vec::new(),
                output_path: None,
                format: Format::Csv,
                seed: args.seed,
                kappa_override: args.kappa_override,
            }));
        }
    };

    let mut overrides = Vec::new();
    for item in &run.set {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        overrides.push((key.trim().to_string(), value));
    }
    if let Some(n) = run.trials {
        overrides.push(("trials".into(), json!(n)));
    }
    if let Some(s) = run.stats {
        overrides.push(("stats".into(), json!(s.name())));
    }
    if let Some(w) = run.workers {
        overrides.push(("workers".into(), json!(w)));
    }
    if let Some(m) = run.mode {
        overrides.push(("mode".into(), json!(m.name())));
    }
    let format = run.format.unwrap_or_else(|| match &run.out {
        Some(p)
            if p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("json")) =>
        {
            Format::Json
        }
        _ => Format::Csv,
    });
    Ok(Parsed::Run(CliInvocation {
        subcommand,
        config_path: run.config,
        overrides,
        output_path: run.out,
        format,
        seed: run.seed,
        kappa_override: None,
    }))
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            CliError::usage(format!(
                "{SEED_ENV}: expected an unsigned 64-bit integer, got {s:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(_) => Err(CliError::usage(format!("{SEED_ENV}: not valid unicode"))),
    }
}

/// Resolves the configuration: built-in defaults for `kind`, then
/// `default_seed`, then the file, then `overrides` in order. Keys are
/// applied one at a time so that a schema error names its key.
pub fn load_config(
    kind: ExperimentKind,
    default_seed: Option<u64>,
    path: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::for_kind(kind);
    if let Some(seed) = default_seed {
        cfg.seed = seed;
    }
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = if text.trim().is_empty() {
            Value::Object(Map::new())
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
        };
        let Value::Object(entries) = file else {
            return Err(CliError::usage(format!(
                "config {}: expected a JSON object",
                path.display()
            )));
        };
        for (key, value) in entries {
            if key == "kind" && value != json!(kind.name()) {
                return Err(CliError::usage(format!(
                    "config key kind: file says {value}, command runs {}",
                    kind.name()
                )));
            }
            cfg = apply_key(cfg, &key, value)?;
        }
    }
    for (key, value) in overrides {
        if key == "kind" {
            return Err(CliError::usage("config key kind: set by the subcommand"));
        }
        cfg = apply_key(cfg, key, value.clone())?;
    }
    cfg.validate().map_err(runtime)?;
    Ok(cfg)
}

fn apply_key(cfg: ExperimentConfig, key: &str, value: Value) -> Result<ExperimentConfig, CliError> {
    let Value::Object(mut map) = serde_json::to_value(&cfg).expect("config serializes") else {
        unreachable!("config serializes to an object")
    };
    if !map.contains_key(key) {
        return Err(CliError::usage(format!("config key {key}: unknown key")));
    }
    map.insert(key.to_string(), value);
    serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::usage(format!("config key {key}: {e}")))
}

/// Formats a real with 17 significant digits; empty for a missing value.
pub fn format_real(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

pub fn render_csv(columns: &[&str], rows: &[ResultRow]) -> String {
    let mut out = columns.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row
            .columns()
            .into_iter()
            .map(|(_, v)| format_real(v))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn json_real(x: Option<f64>) -> Value {
    x.and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

pub fn version_string() -> String {
    option_env!("WAVICLE_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

pub fn render_json(
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    extra: Option<(&str, Value)>,
) -> String {
    let mut metadata = Map::new();
    metadata.insert("seed".into(), json!(cfg.seed));
    metadata.insert("trials".into(), json!(cfg.trials));
    metadata.insert("version".into(), json!(version_string()));
    metadata.insert(
        "config".into(),
        serde_json::to_value(cfg).expect("config serializes"),
    );
    if let Some((key, value)) = extra {
        metadata.insert(key.into(), value);
    }
    let rows: Vec<Value> = rows
        .iter()
        .map(|row| {
            Value::Object(
                row.columns()
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), json_real(v)))
                    .collect(),
            )
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&json!({ "metadata": metadata, "rows": rows }))
        .expect("results serialize");
    text.push('\n');
    text
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failure leaves no partial output behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |e: &dyn std::fmt::Display| {
        CliError::runtime(format!("cannot write {}: {e}", path.display()))
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

/// Serializes `rows` in `format` and writes them to `path`, or to standard
/// output when `path` is `None`.
pub fn write_results(
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    format: Format,
    path: Option<&Path>,
    extra: Option<(&str, Value)>,
) -> Result<(), CliError> {
    let text = match format {
        Format::Csv => render_csv(&cfg.kind.columns(), rows),
        Format::Json => render_json(cfg, rows, extra),
    };
    match path {
        Some(path) => write_atomic(path, &text),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::runtime(format!("cannot write to stdout: {e}"))),
    }
}

/// Human-readable selftest report, one line per gate.
pub fn render_selftest(report: &experiments::SelfTestReport) -> String {
    let mut out = String::new();
    for gate in &report.gates {
        let verdict = if gate.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict} {}: {}", gate.name, gate.detail);
    }
    out
}

fn runtime(e: wavicle::Error) -> CliError {
    match e {
        wavicle::Error::Config(msg) => CliError::usage(format!("config key {msg}")),
        other => CliError::runtime(other.to_string()),
    }
}

/// Runs a parsed invocation. Standard output receives results when no
/// output path is given.
pub fn execute(inv: &CliInvocation) -> Result<(), CliError> {
    let default_seed = match inv.seed {
        Some(seed) => Some(seed),
        None => env_seed()?,
    };
    let kind = match inv.subcommand {
        Subcmd::Selftest => {
            let report = experiments::selftest(
                default_seed.unwrap_or(1),
                inv.kappa_override.unwrap_or(DEFAULT_CALIBRATION),
            );
            print!("{}", render_selftest(&report));
            let failed: Vec<&str> = report.failed().map(|g| g.name).collect();
            return if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::runtime(format!(
                    "selftest failed: {}",
                    failed.join(", ")
                )))
            };
        }
        Subcmd::Run(kind) => kind,
        Subcmd::OracleTable(kind) => {
            kind.map_or_else(|| file_kind(inv.config_path.as_deref()), Ok)?
        }
    };
    let cfg = load_config(
        kind,
        default_seed,
        inv.config_path.as_deref(),
        &inv.overrides,
    )?;
    let path = inv.output_path.as_deref();
    match inv.subcommand {
        Subcmd::OracleTable(_) => {
            let rows = experiments::oracle_table(&cfg).map_err(runtime)?;
            write_results(&cfg, &rows, inv.format, path, None)
        }
        _ if kind == ExperimentKind::Noise => {
            let report = experiments::run_noise_analysis(&cfg).map_err(runtime)?;
            let extra = serde_json::to_value(&report).expect("report serializes");
            write_results(&cfg, &report.rows, inv.format, path, Some(("noise", extra)))
        }
        _ => {
            let rows = experiments::run(&cfg).map_err(runtime)?;
            write_results(&cfg, &rows, inv.format, path, None)
        }
    }
}

/// The `kind` key of a config file, defaulting to EPR.
fn file_kind(path: Option<&Path>) -> Result<ExperimentKind, CliError> {
    let Some(path) = path else {
        return Ok(ExperimentKind::Epr);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if text.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?
    };
    match value.get("kind") {
        None => Ok(ExperimentKind::Epr),
        Some(Value::String(s)) => s
            .parse()
            .map_err(|e: wavicle::Error| CliError::usage(e.to_string())),
        Some(other) => Err(CliError::usage(format!(
            "config key kind: expected a string, got {other}"
        ))),
    }
}

/// Parses and runs `argv` (excluding the program name), printing
/// diagnostics to standard error. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = parse_invocation(argv).and_then(|parsed| match parsed {
        Parsed::Print(text) => {
            print!("{text}");
            Ok(())
        }
        Parsed::Run(inv) => execute(&inv),
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("wavicle: error: {}", e.message);
            e.code
        }
    }
}
