//! Experiment harness behind the `grokfit` binary.
//!
//! Subcommands: `linear-sweep`, `mlp-sweep`, `fit`, `plotdata`, `selfcheck`.
//! Exit status is 0 on success, 1 when an experiment (or part of one)
//! failed, 2 for usage, configuration or input errors.
//!
//! Configuration files are flat `key = value` lines in TOML syntax, e.g.
//!
//! ```text
//! lambda_list = [1.003, 1.01, 1.03, 1.05, 1.1]
//! eta0 = 0.01
//! epsilon = 1e-10
//! grid_points = 2000
//! ```
//!
//! and any key can be overridden with `--set key=value`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::curvefit::{erf_model, fit_erf, transition_window, AccuracyCurve, CurveKind, ErfFit, FitSpec};
use crate::error::Error;
use crate::linear_dynamics::{self, lambda_sweep, ltr_approx, midpoint_crossings, LinearConfig};
use crate::metrics::{loglog_fit, GrokkingMetrics, MetricsRecord, TrendFit};
use crate::parity_mlp::{concealment_sweep, summarize, FitOutcome, ParityConfig, SweepSummary, SweepUnit};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CURVE_HEADER: &str = "epoch,acc_train,acc_val";
pub const OVERLAY_HEADER: &str = "epoch,observed,fitted";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const LINEAR_KEYS: &[&str] = &["lambda_list", "eta0", "epsilon", "grid_points", "oracle_d_in", "oracle_seeds"];
const MLP_KEYS: &[&str] = &[
    "parity_bits",
    "spurious_list",
    "seeds",
    "train_size",
    "val_size",
    "hidden_width",
    "learning_rate",
    "weight_decay",
    "max_epochs",
    "record_every",
];
const ORACLE_POINTS: usize = 40;

#[derive(Debug, Parser)]
#[command(name = "grokfit", version, about = "Measure grokking by fitting error functions to accuracy curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replace existing output files.
    #[arg(long)]
    pub overwrite: bool,
    /// Skip SVG rendering.
    #[arg(long = "no-svg")]
    pub no_svg: bool,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic accuracy curves of the linear model over a list of λ.
    LinearSweep(CommonArgs),
    /// Concealed-parity MLP runs over spurious sizes and seeds.
    MlpSweep(CommonArgs),
    /// Fit the columns of a curve CSV.
    Fit {
        csv: PathBuf,
        /// Baseline accuracy c.
        #[arg(short = 'c', long = "baseline", default_value_t = 0.0, allow_negative_numbers = true)]
        baseline: f64,
        /// Maximum accuracy d.
        #[arg(short = 'd', long = "max-accuracy", default_value_t = 1.0)]
        max_accuracy: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Plot-ready tables (and SVGs) from a sweep directory.
    Plotdata {
        dir: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Validate emitted files against their schemas, or run internal checks.
    Selfcheck {
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Harness failure classes, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("grokfit: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::LinearSweep(common) => with_workers(common.workers, || cmd_linear_sweep(&common)),
        Command::MlpSweep(common) => with_workers(common.workers, || cmd_mlp_sweep(&common)),
        Command::Fit { csv, baseline, max_accuracy, common } => cmd_fit(&csv, baseline, max_accuracy, &common),
        Command::Plotdata { dir, common } => cmd_plotdata(&dir, &common),
        Command::Selfcheck { dir, .. } => cmd_selfcheck(dir.as_deref()),
    }
}

fn with_workers<F>(workers: Option<usize>, f: F) -> CliResult<i32>
where
    F: FnOnce() -> CliResult<i32> + Send,
{
    match workers {
        None => f(),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Failure(format!("cannot start worker pool: {e}")))?;
            pool.install(f)
        }
    }
}

/// Flat configuration: file entries with `--set` overrides applied.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, toml::Value>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        let mut entries = BTreeMap::new();
        for (k, v) in table {
            if v.is_table() {
                return Err(CliError::Usage(format!("config: section [{k}] not allowed, keys must be flat")));
            }
            entries.insert(k, v);
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut kv = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                KeyValues::parse(&text)?
            }
            None => KeyValues::default(),
        };
        for item in overrides {
            let Some((k, v)) = item.split_once('=') else {
                return Err(CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")));
            };
            let parsed = KeyValues::parse(&format!("{} = {}", k.trim(), v.trim()))?;
            kv.entries.extend(parsed.entries);
        }
        Ok(kv)
    }

    fn check_known(&self, known: &[&str]) -> CliResult<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    fn get(&self, key: &str) -> CliResult<&toml::Value> {
        self.entries.get(key).ok_or_else(|| CliError::Usage(format!("missing config key {key:?}")))
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        as_f64(self.get(key)?).ok_or_else(|| bad_type(key, "a number"))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        as_usize(self.get(key)?).ok_or_else(|| bad_type(key, "a non-negative integer"))
    }

    pub fn opt_f64(&self, key: &str, default: f64) -> CliResult<f64> {
        if self.entries.contains_key(key) { self.f64(key) } else { Ok(default) }
    }

    pub fn opt_usize(&self, key: &str, default: usize) -> CliResult<usize> {
        if self.entries.contains_key(key) { self.usize(key) } else { Ok(default) }
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        list(self.get(key)?, as_f64).ok_or_else(|| bad_type(key, "a non-empty list of numbers"))
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        list(self.get(key)?, as_usize).ok_or_else(|| bad_type(key, "a non-empty list of non-negative integers"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_usize(v: &toml::Value) -> Option<usize> {
    v.as_integer().and_then(|i| usize::try_from(i).ok())
}

fn list<T>(v: &toml::Value, item: fn(&toml::Value) -> Option<T>) -> Option<Vec<T>> {
    let out = v.as_array()?.iter().map(item).collect::<Option<Vec<T>>>()?;
    (!out.is_empty()).then_some(out)
}

fn bad_type(key: &str, what: &str) -> CliError {
    CliError::Usage(format!("config key {key:?} must be {what}"))
}

/// Output directory with atomic, overwrite-checked writes.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
    overwrite: bool,
}

impl OutDir {
    pub fn create(root: &Path, overwrite: bool) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), overwrite })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails (usage error) if any of `names` exists and overwriting is off.
    pub fn ensure_free<S: AsRef<str>>(&self, names: &[S]) -> CliResult<()> {
        if self.overwrite {
            return Ok(());
        }
        for name in names {
            let p = self.path(name.as_ref());
            if p.exists() {
                return Err(CliError::Usage(format!("{} exists; pass --overwrite to replace it", p.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        atomic_write(&self.path(name), bytes, self.overwrite).map_err(|e| CliError::Failure(format!("writing {name}: {e}")))
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8], overwrite: bool) -> std::io::Result<()> {
    if !overwrite && path.exists() {
        return Err(std::io::Error::new(std::io::ErrorKind::AlreadyExists, format!("{} exists", path.display())));
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| std::io::Error::other("path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Curve CSV text; a missing column is left empty.
pub fn curve_csv(epochs: &[f64], train: Option<&[f64]>, validation: Option<&[f64]>) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    let cell = |col: Option<&[f64]>, i: usize| col.map(|c| fmt_num(c[i])).unwrap_or_default();
    for (i, e) in epochs.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", fmt_num(*e), cell(train, i), cell(validation, i));
    }
    s
}

/// Columns read from a curve CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub epochs: Vec<f64>,
    pub train: Option<Vec<f64>>,
    pub validation: Option<Vec<f64>>,
}

/// Reads a curve CSV: an `epoch` column plus `acc_train` and/or `acc_val`.
/// Errors carry 1-based line numbers.
pub fn read_curve_csv(text: &str) -> crate::Result<CurveTable> {
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.get(0) != Some("epoch") {
        return Err(parse_err(1, format!("first column must be \"epoch\", got {:?}", header.get(0).unwrap_or(""))));
    }
    let mut cols: Vec<CurveKind> = Vec::new();
    for name in header.iter().skip(1) {
        let kind = match name {
            "acc_train" => CurveKind::Train,
            "acc_val" => CurveKind::Validation,
            other => return Err(parse_err(1, format!("unknown column {other:?}"))),
        };
        if cols.contains(&kind) {
            return Err(parse_err(1, format!("duplicate column {name:?}")));
        }
        cols.push(kind);
    }
    if cols.is_empty() {
        return Err(parse_err(1, "need an acc_train or acc_val column".into()));
    }

    let mut epochs = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); cols.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let number = |field: &str, what: &str| -> crate::Result<f64> {
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{what} {field:?} is not a finite number")))
        };
        let epoch = number(&record[0], "epoch")?;
        if epoch < 0.0 {
            return Err(parse_err(line, format!("epoch {epoch} is negative")));
        }
        if let Some(prev) = epochs.last() {
            if epoch <= *prev {
                return Err(parse_err(line, format!("epoch {epoch} does not increase")));
            }
        }
        epochs.push(epoch);
        for (j, col) in values.iter_mut().enumerate() {
            let field = &record[j + 1];
            if field.is_empty() {
                col.push(None);
                continue;
            }
            let v = number(field, "accuracy")?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(line, format!("accuracy {v} outside [0, 1]")));
            }
            col.push(Some(v));
        }
    }
    if epochs.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let mut table = CurveTable { epochs, train: None, validation: None };
    for (kind, col) in cols.into_iter().zip(values) {
        // an all-empty column counts as absent
        if col.iter().all(Option::is_none) {
            continue;
        }
        if let Some(i) = col.iter().position(Option::is_none) {
            return Err(parse_err(i + 2, format!("missing {} value", if kind == CurveKind::Train { "acc_train" } else { "acc_val" })));
        }
        let col: Vec<f64> = col.into_iter().map(|v| v.expect("checked")).collect();
        match kind {
            CurveKind::Train => table.train = Some(col),
            CurveKind::Validation => table.validation = Some(col),
        }
    }
    Ok(table)
}

/// Per-column fit result reported by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ColumnFit {
    Fitted { fit: ErfFit },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub baseline: f64,
    pub max_accuracy: f64,
    pub train: Option<ColumnFit>,
    pub validation: Option<ColumnFit>,
    pub metrics: Option<GrokkingMetrics>,
}

/// Fits whichever columns are present; metrics only when both fit.
pub fn fit_table(table: &CurveTable, spec: &FitSpec) -> FitReport {
    let fit_col = |col: &Option<Vec<f64>>, kind| -> Option<(ColumnFit, Option<ErfFit>)> {
        let values = col.as_ref()?;
        let result = AccuracyCurve::new(table.epochs.clone(), values.clone(), kind).and_then(|c| fit_erf(&c, spec));
        Some(match result {
            Ok(fit) => (ColumnFit::Fitted { fit }, Some(fit)),
            Err(e) => (ColumnFit::Failed { reason: e.to_string() }, None),
        })
    };
    let train = fit_col(&table.train, CurveKind::Train);
    let validation = fit_col(&table.validation, CurveKind::Validation);
    let metrics = match (train.as_ref().and_then(|t| t.1), validation.as_ref().and_then(|v| v.1)) {
        (Some(a), Some(b)) => GrokkingMetrics::from_fits(a, b).ok(),
        _ => None,
    };
    FitReport {
        baseline: spec.baseline,
        max_accuracy: spec.max_accuracy,
        train: train.map(|t| t.0),
        validation: validation.map(|v| v.0),
        metrics,
    }
}

pub fn cmd_fit(csv_path: &Path, baseline: f64, max_accuracy: f64, common: &CommonArgs) -> CliResult<i32> {
    let spec = FitSpec::new(baseline, max_accuracy).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = fs::read_to_string(csv_path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", csv_path.display())))?;
    let table = read_curve_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", csv_path.display())))?;
    let report = fit_table(&table, &spec);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    if let Some(out) = &common.out {
        let dir = OutDir::create(out, common.overwrite)?;
        let stem = csv_path.file_stem().map_or("curve".into(), |s| s.to_string_lossy().into_owned());
        let name = format!("fit_{stem}.json");
        dir.ensure_free(&[&name])?;
        dir.write(&name, format!("{json}\n").as_bytes())?;
    }
    let failed = [&report.train, &report.validation].iter().any(|c| matches!(c, Some(ColumnFit::Failed { .. })));
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

/// Written to every sweep directory so later commands know the fit range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub fit_baseline: f64,
    pub fit_max_accuracy: f64,
    pub config: BTreeMap<String, toml::Value>,
}

fn manifest_json(kind: &str, seed: u64, spec: &FitSpec, kv: &KeyValues) -> String {
    let m = Manifest {
        kind: kind.into(),
        seed,
        fit_baseline: spec.baseline,
        fit_max_accuracy: spec.max_accuracy,
        config: kv.entries.clone(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

fn require_out(common: &CommonArgs) -> CliResult<&Path> {
    common.out.as_deref().ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
}

/// Log-log trend coefficients for both sharpness measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trends {
    pub r_rel: Option<TrendFit>,
    pub r_abs: Option<TrendFit>,
    /// Rows left out because `m ≤ 0`.
    pub excluded_non_positive_m: usize,
}

pub fn trends_of(records: &[MetricsRecord]) -> Trends {
    let usable: Vec<&MetricsRecord> = records.iter().filter(|r| r.m > 0.0).collect();
    let excluded = records.len() - usable.len();
    if excluded > 0 {
        log::warn!("{excluded} row(s) with non-positive m left out of the log-log fits");
    }
    Trends {
        r_rel: loglog_fit(&usable.iter().map(|r| (r.m, r.r_rel)).collect::<Vec<_>>()).ok(),
        r_abs: loglog_fit(&usable.iter().map(|r| (r.m, r.r_abs)).collect::<Vec<_>>()).ok(),
        excluded_non_positive_m: excluded,
    }
}

pub fn linear_curve_name(lambda: f64) -> String {
    format!("linear_lambda{lambda}.csv")
}

pub fn cmd_linear_sweep(common: &CommonArgs) -> CliResult<i32> {
    let kv = KeyValues::load(common.config.as_deref(), &common.set)?;
    kv.check_known(LINEAR_KEYS)?;
    let lambdas = kv.f64_list("lambda_list")?;
    let template = LinearConfig {
        lambda: lambdas[0],
        eta0: kv.f64("eta0")?,
        epsilon: kv.f64("epsilon")?,
        grid_points: kv.usize("grid_points")?,
    };
    for &l in &lambdas {
        template.with_lambda(l).validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let oracle = match (kv.contains("oracle_d_in"), kv.contains("oracle_seeds")) {
        (true, true) => Some((kv.usize("oracle_d_in")?, kv.usize("oracle_seeds")?)),
        (false, false) => None,
        _ => return Err(CliError::Usage("oracle_d_in and oracle_seeds must be given together".into())),
    };
    let seed = common.seed.unwrap_or(0);
    let spec = FitSpec::unit_range();
    let out = OutDir::create(require_out(common)?, common.overwrite)?;

    let mut names: Vec<String> = lambdas.iter().map(|&l| linear_curve_name(l)).collect();
    names.extend(["summary.csv", "trends.json", METRICS_FILE, MANIFEST_FILE].map(String::from));
    if oracle.is_some() {
        names.extend(lambdas.iter().map(|l| format!("oracle_lambda{l}.csv")));
    }
    out.ensure_free(&names)?;

    let outcomes = lambda_sweep(&lambdas, &template, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut records = Vec::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["lambda", "m", "r_rel", "r_abs", "status"]).map_err(csv_err)?;
    let mut failures = 0;
    for o in &outcomes {
        match &o.result {
            Ok(run) => {
                out.write(
                    &linear_curve_name(o.lambda),
                    curve_csv(run.train.epochs(), Some(run.train.values()), Some(run.validation.values())).as_bytes(),
                )?;
                let rec = MetricsRecord::new(o.lambda, seed, &run.metrics);
                summary
                    .write_record([fmt_num(o.lambda), fmt_num(rec.m), fmt_num(rec.r_rel), fmt_num(rec.r_abs), "ok".into()])
                    .map_err(csv_err)?;
                records.push(rec);
            }
            Err(e) => {
                failures += 1;
                log::error!("lambda = {}: {e}", o.lambda);
                summary
                    .write_record([fmt_num(o.lambda), String::new(), String::new(), String::new(), format!("failed: {e}")])
                    .map_err(csv_err)?;
            }
        }
    }
    out.write(METRICS_FILE, jsonl(&records).as_bytes())?;
    out.write("summary.csv", &summary.into_inner().map_err(|e| CliError::Failure(e.to_string()))?)?;
    let trends = trends_of(&records);
    out.write("trends.json", (serde_json::to_string_pretty(&trends).expect("serializes") + "\n").as_bytes())?;
    out.write(MANIFEST_FILE, manifest_json("linear-sweep", seed, &spec, &kv).as_bytes())?;

    if let Some((d_in, n_seeds)) = oracle {
        for &lambda in &lambdas {
            match oracle_table(&template.with_lambda(lambda), d_in, n_seeds, seed) {
                Ok(text) => out.write(&format!("oracle_lambda{lambda}.csv"), text.as_bytes())?,
                Err(e) => {
                    failures += 1;
                    log::error!("oracle at lambda = {lambda}: {e}");
                }
            }
        }
    }

    for r in &records {
        println!("lambda={} m={} r_rel={} r_abs={}", fmt_num(r.lambda_or_input_size), fmt_num(r.m), fmt_num(r.r_rel), fmt_num(r.r_abs));
    }
    print_trends(&trends);
    Ok(if failures == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Failure(format!("csv: {e}"))
}

fn print_trends(t: &Trends) {
    for (name, fit) in [("r_rel", &t.r_rel), ("r_abs", &t.r_abs)] {
        match fit {
            Some(f) => println!("log-log {name}: slope={:.6} intercept={:.6} r2={:.6}", f.slope, f.intercept, f.r_squared),
            None => println!("log-log {name}: not enough positive points"),
        }
    }
}

/// Exact mean training loss against the long-time formula on
/// `η₀t ∈ [10√λ, η₀·t_mid_tr]`.
fn oracle_table(cfg: &LinearConfig, d_in: usize, n_seeds: usize, base_seed: u64) -> crate::Result<String> {
    let t_lo = linear_dynamics::VALIDITY_WARN * cfg.lambda.sqrt() / cfg.eta0;
    let t_hi = midpoint_crossings(cfg)?.train;
    if t_hi <= t_lo {
        return Err(Error::domain("training midpoint lies before the long-time regime"));
    }
    let times: Vec<f64> = (0..ORACLE_POINTS)
        .map(|i| (t_lo.ln() + (t_hi.ln() - t_lo.ln()) * i as f64 / (ORACLE_POINTS - 1) as f64).exp())
        .collect();
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| crate::rng::derive_seed(base_seed, i)).collect();
    let exact = linear_dynamics::mean_exact_train_loss(d_in, cfg.lambda, cfg.eta0, &seeds, &times)?;
    let mut s = String::from("time,eta0_t,ltr_approx,ltr_exact_mean,rel_diff\n");
    for (t, e) in times.iter().zip(&exact) {
        let a = ltr_approx(*t, cfg)?;
        let _ = writeln!(s, "{},{},{},{},{}", fmt_num(*t), fmt_num(cfg.eta0 * t), fmt_num(a), fmt_num(*e), fmt_num((e - a).abs() / a));
    }
    Ok(s)
}

pub fn mlp_unit_stem(spurious: usize, seed: u64) -> String {
    format!("mlp_s{spurious}_seed{seed}")
}

/// Per-run JSON file of an MLP sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config: ParityConfig,
    pub curve_file: String,
    pub status: String,
    pub epochs_run: Option<usize>,
    pub metrics: Option<MetricsRecord>,
    pub reason: Option<String>,
}

fn run_file(unit: &SweepUnit) -> (RunFile, Option<String>) {
    let stem = mlp_unit_stem(unit.spurious_dims, unit.seed);
    let curve_file = format!("{stem}.csv");
    match &unit.result {
        Ok(rec) => {
            let input_size = rec.config.input_dim() as f64;
            let csv = curve_csv(rec.train.epochs(), Some(rec.train.values()), Some(rec.validation.values()));
            let (status, metrics, reason) = match &rec.fit {
                FitOutcome::Fitted { metrics } => ("fitted", Some(MetricsRecord::new(input_size, unit.seed, metrics)), None),
                FitOutcome::Failed { reason } => ("fit_failed", None, Some(reason.clone())),
            };
            let file = RunFile { config: rec.config, curve_file, status: status.into(), epochs_run: Some(rec.epochs_run), metrics, reason };
            (file, Some(csv))
        }
        Err(e) => {
            let csv = match e {
                Error::Divergence { partial, .. } => {
                    Some(curve_csv(&partial.epochs, Some(&partial.train), Some(&partial.validation)))
                }
                _ => None,
            };
            let status = if matches!(e, Error::Divergence { .. }) { "diverged" } else { "error" };
            let file = RunFile {
                config: ParityConfig { spurious_dims: unit.spurious_dims, seed: unit.seed, ..ParityConfig::new(0, 0, 0) },
                curve_file,
                status: status.into(),
                epochs_run: None,
                metrics: None,
                reason: Some(e.to_string()),
            };
            (file, csv)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct MlpSummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a SweepSummary,
    warning: Option<&'a str>,
}

pub fn parity_template(kv: &KeyValues) -> CliResult<ParityConfig> {
    let d = ParityConfig::new(kv.usize("parity_bits")?, 0, 0);
    Ok(ParityConfig {
        train_size: kv.opt_usize("train_size", d.train_size)?,
        val_size: kv.opt_usize("val_size", d.val_size)?,
        hidden_width: kv.opt_usize("hidden_width", d.hidden_width)?,
        learning_rate: kv.opt_f64("learning_rate", d.learning_rate)?,
        weight_decay: kv.opt_f64("weight_decay", d.weight_decay)?,
        max_epochs: kv.opt_usize("max_epochs", d.max_epochs)?,
        record_every: kv.opt_usize("record_every", d.record_every)?,
        ..d
    })
}

pub fn cmd_mlp_sweep(common: &CommonArgs) -> CliResult<i32> {
    let kv = KeyValues::load(common.config.as_deref(), &common.set)?;
    kv.check_known(MLP_KEYS)?;
    let base = parity_template(&kv)?;
    let spurious = kv.usize_list("spurious_list")?;
    let seeds: Vec<u64> = match common.seed {
        Some(s) if !kv.contains("seeds") => vec![s],
        _ => kv.usize_list("seeds")?.into_iter().map(|s| s as u64).collect(),
    };
    for &s in &spurious {
        ParityConfig { spurious_dims: s, ..base }.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let spec = FitSpec::binary_chance();
    let out = OutDir::create(require_out(common)?, common.overwrite)?;
    let mut names: Vec<String> = Vec::new();
    for &s in &spurious {
        for &seed in &seeds {
            let stem = mlp_unit_stem(s, seed);
            names.push(format!("{stem}.json"));
            names.push(format!("{stem}.csv"));
        }
    }
    names.extend(["summary.json", "summary.csv", "trends.json", "timings.json", METRICS_FILE, MANIFEST_FILE].map(String::from));
    out.ensure_free(&names)?;

    let write_errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let sink = |unit: &SweepUnit| {
        let (file, csv) = run_file(unit);
        let stem = mlp_unit_stem(unit.spurious_dims, unit.seed);
        let mut result = Ok(());
        if let Some(csv) = csv {
            result = out.write(&format!("{stem}.csv"), csv.as_bytes());
        }
        if result.is_ok() {
            let json = serde_json::to_string_pretty(&file).expect("serializes") + "\n";
            result = out.write(&format!("{stem}.json"), json.as_bytes());
        }
        match result {
            Ok(()) => log::info!("{stem}: {}", file.status),
            Err(e) => write_errors.lock().expect("lock").push(e.to_string()),
        }
    };
    let units = concealment_sweep(&base, &spurious, &seeds, &spec, sink).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(e) = write_errors.into_inner().expect("lock").first() {
        return Err(CliError::Failure(e.clone()));
    }

    let files: Vec<RunFile> = units.iter().map(|u| run_file(u).0).collect();
    let records: Vec<MetricsRecord> = files.iter().filter_map(|f| f.metrics.clone()).collect();
    let summary = summarize(&units);
    let warning = summary.low_confidence.then_some("one seed per spurious size: rank correlations are low-confidence");
    if let Some(w) = warning {
        log::warn!("{w}");
    }
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["spurious_dims", "seed", "input_size", "status", "m", "r_rel", "r_abs"]).map_err(csv_err)?;
    for f in &files {
        let (m, rr, ra) = f
            .metrics
            .as_ref()
            .map_or((String::new(), String::new(), String::new()), |r| (fmt_num(r.m), fmt_num(r.r_rel), fmt_num(r.r_abs)));
        table
            .write_record([
                f.config.spurious_dims.to_string(),
                f.config.seed.to_string(),
                (base.parity_bits + f.config.spurious_dims).to_string(),
                f.status.clone(),
                m,
                rr,
                ra,
            ])
            .map_err(csv_err)?;
    }
    let timings: BTreeMap<String, f64> = units
        .iter()
        .filter_map(|u| u.result.as_ref().ok().map(|r| (mlp_unit_stem(u.spurious_dims, u.seed), r.wall_time)))
        .collect();
    let trends = trends_of(&records);
    out.write(METRICS_FILE, jsonl(&records).as_bytes())?;
    out.write("summary.csv", &table.into_inner().map_err(|e| CliError::Failure(e.to_string()))?)?;
    out.write(
        "summary.json",
        (serde_json::to_string_pretty(&MlpSummaryFile { summary: &summary, warning }).expect("serializes") + "\n").as_bytes(),
    )?;
    out.write("trends.json", (serde_json::to_string_pretty(&trends).expect("serializes") + "\n").as_bytes())?;
    out.write("timings.json", (serde_json::to_string_pretty(&timings).expect("serializes") + "\n").as_bytes())?;
    out.write(MANIFEST_FILE, manifest_json("mlp-sweep", common.seed.unwrap_or(0), &spec, &kv).as_bytes())?;

    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "fitted {}/{} runs; spearman(spurious, m)={} spearman(m, r_rel)={} spearman(m, r_abs)={}{}",
        summary.fitted,
        summary.units,
        show(summary.spearman_spurious_m),
        show(summary.spearman_m_r_rel),
        show(summary.spearman_m_r_abs),
        if summary.low_confidence { " (low confidence)" } else { "" }
    );
    print_trends(&trends);
    Ok(if summary.fitted == summary.units { EXIT_OK } else { EXIT_FAILURE })
}

pub fn read_metrics(text: &str) -> crate::Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn is_curve_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "csv")
        && fs::read_to_string(path).is_ok_and(|t| t.lines().next().map(str::trim) == Some(CURVE_HEADER))
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    v.sort();
    Ok(v)
}

fn overlay_csv(curve: &AccuracyCurve, fit: &ErfFit, spec: &FitSpec) -> crate::Result<String> {
    let window = transition_window(curve, spec)?;
    let mut s = String::from(OVERLAY_HEADER);
    s.push('\n');
    for i in window {
        let t = curve.epochs()[i];
        let _ = writeln!(s, "{},{},{}", fmt_num(t), fmt_num(curve.values()[i]), fmt_num(erf_model(fit, t)));
    }
    Ok(s)
}

pub fn cmd_plotdata(dir: &Path, common: &CommonArgs) -> CliResult<i32> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let metrics_path = dir.join(METRICS_FILE);
    let records = match fs::read_to_string(&metrics_path) {
        Ok(text) => read_metrics(&text).map_err(|e| CliError::Usage(format!("{}: {e}", metrics_path.display())))?,
        Err(_) => Vec::new(),
    };
    let curves: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_curve_file(p)).collect();
    if records.is_empty() && curves.is_empty() {
        return Err(CliError::Usage(format!("nothing to plot in {}", dir.display())));
    }
    let spec = read_manifest(dir)
        .and_then(|m| FitSpec::new(m.fit_baseline, m.fit_max_accuracy).ok())
        .unwrap_or_else(FitSpec::unit_range);
    let out_root = common.out.clone().unwrap_or_else(|| dir.join("plots"));
    let out = OutDir::create(&out_root, common.overwrite)?;

    let mut files: Vec<(String, String)> = Vec::new();
    let positive: Vec<&MetricsRecord> = records.iter().filter(|r| r.m > 0.0).collect();
    if positive.len() < records.len() {
        log::warn!("{} row(s) with non-positive m left out of the log-log tables", records.len() - positive.len());
    }
    for (name, pick) in [("r_rel", (|r: &MetricsRecord| r.r_rel) as fn(&MetricsRecord) -> f64), ("r_abs", |r| r.r_abs)] {
        let mut lin = format!("m,{name}\n");
        for r in &records {
            let _ = writeln!(lin, "{},{}", fmt_num(r.m), fmt_num(pick(r)));
        }
        let mut log = format!("log_m,log_{name}\n");
        for r in &positive {
            let _ = writeln!(log, "{},{}", fmt_num(r.m.ln()), fmt_num(pick(r).ln()));
        }
        files.push((format!("m_vs_{name}.csv"), lin));
        files.push((format!("loglog_m_vs_{name}.csv"), log));
        if !common.no_svg && !positive.is_empty() {
            let pts: Vec<(f64, f64)> = positive.iter().map(|r| (r.m, pick(r))).collect();
            let trend = loglog_fit(&pts).ok();
            files.push((format!("m_vs_{name}.svg"), svg_loglog(&format!("m vs {name}"), "m", name, &pts, trend.as_ref())));
        }
    }
    let trends = trends_of(&records);
    files.push(("trends.json".into(), serde_json::to_string_pretty(&trends).expect("serializes") + "\n"));

    let mut failures = 0;
    for path in &curves {
        let stem = path.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
        let table = match fs::read_to_string(path).map_err(Error::from).and_then(|t| read_curve_csv(&t)) {
            Ok(t) => t,
            Err(e) => {
                failures += 1;
                log::error!("{}: {e}", path.display());
                continue;
            }
        };
        for (suffix, col, kind) in [("train", &table.train, CurveKind::Train), ("val", &table.validation, CurveKind::Validation)] {
            let Some(values) = col else { continue };
            let overlay = AccuracyCurve::new(table.epochs.clone(), values.clone(), kind)
                .and_then(|c| fit_erf(&c, &spec).and_then(|f| overlay_csv(&c, &f, &spec)));
            match overlay {
                Ok(text) => files.push((format!("overlay_{stem}_{suffix}.csv"), text)),
                Err(e) => {
                    failures += 1;
                    log::warn!("{stem} {suffix}: no overlay ({e})");
                }
            }
        }
    }

    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    out.ensure_free(&names)?;
    for (name, text) in &files {
        out.write(name, text.as_bytes())?;
    }
    println!("wrote {} file(s) to {}", files.len(), out_root.display());
    Ok(if failures == 0 { EXIT_OK } else { EXIT_FAILURE })
}

/// Scatter of positive points on log-log axes with an optional trend line.
pub fn svg_loglog(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)], trend: Option<&TrendFit>) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo)) }
    };
    let (x0, x1) = range(&lx);
    let (y0, y1) = range(&ly);
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * PAD, H - 2.0 * PAD);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">ln {}</text>"#, W / 2.0, H - 15.0, xml_escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">ln {}</text>"#,
        H / 2.0,
        H / 2.0,
        xml_escape(ylabel)
    );
    if let Some(t) = trend {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            px(x0),
            py(t.intercept + t.slope * x0),
            px(x1),
            py(t.intercept + t.slope * x1)
        );
    }
    for (x, y) in lx.iter().zip(&ly) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(*x), py(*y));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Outcome of validating one file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileCheck {
    pub file: PathBuf,
    pub problem: Option<String>,
}

/// Checks every CSV and JSON-lines file in `dir` against its schema.
pub fn check_directory(dir: &Path) -> std::io::Result<Vec<FileCheck>> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        let name = path.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned());
        let text = fs::read_to_string(&path)?;
        let problem = if name.ends_with(".jsonl") {
            match read_metrics(&text) {
                Ok(rows) => rows
                    .iter()
                    .position(|r| ![r.m, r.r_rel, r.r_abs, r.s_train, r.s_gen, r.t_star_train, r.t_star_gen].iter().all(|v| v.is_finite()))
                    .map(|i| format!("row {} has non-finite values", i + 1)),
                Err(e) => Some(e.to_string()),
            }
        } else if name.ends_with(".csv") {
            match text.lines().next().map(str::trim) {
                Some(CURVE_HEADER) => read_curve_csv(&text).err().map(|e| e.to_string()),
                Some(OVERLAY_HEADER) => check_numeric_csv(&text, 3),
                _ => None,
            }
        } else {
            continue;
        };
        out.push(FileCheck { file: path, problem });
    }
    Ok(out)
}

fn check_numeric_csv(text: &str, columns: usize) -> Option<String> {
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns || fields.iter().any(|f| !f.trim().parse::<f64>().is_ok_and(f64::is_finite)) {
            return Some(format!("line {}: expected {columns} finite numbers", i + 1));
        }
    }
    None
}

/// Quick internal consistency checks used when no directory is given.
pub fn internal_checks() -> Vec<(&'static str, std::result::Result<(), String>)> {
    let mut checks: Vec<(&'static str, std::result::Result<(), String>)> = Vec::new();
    let spec = FitSpec::unit_range();
    let truth = ErfFit::from_parameters(0.01, 500.0, &spec);
    let epochs: Vec<f64> = (0..1000).map(f64::from).collect();
    let values: Vec<f64> = epochs.iter().map(|&t| erf_model(&truth, t)).collect();
    let recovered = AccuracyCurve::new(epochs.clone(), values.clone(), CurveKind::Train)
        .and_then(|c| fit_erf(&c, &spec))
        .map_err(|e| e.to_string())
        .and_then(|f| {
            let err = ((f.s - 0.01) / 0.01).abs().max(((f.t_star - 500.0) / 500.0).abs());
            if err <= 1e-6 { Ok(()) } else { Err(format!("relative error {err:e}")) }
        });
    checks.push(("noiseless fit recovery", recovered));

    let roundtrip = read_curve_csv(&curve_csv(&epochs, Some(&values), None))
        .map_err(|e| e.to_string())
        .and_then(|t| if t.train.as_deref() == Some(&values[..]) { Ok(()) } else { Err("values changed".into()) });
    checks.push(("curve CSV round-trip", roundtrip));

    let linear = linear_dynamics::run_lambda(&LinearConfig::reference(1.1), &spec).map_err(|e| e.to_string()).and_then(|r| {
        if r.metrics.m > 0.0 { Ok(()) } else { Err(format!("m = {}", r.metrics.m)) }
    });
    checks.push(("linear model at lambda 1.1 groks", linear));
    checks
}

pub fn cmd_selfcheck(dir: Option<&Path>) -> CliResult<i32> {
    let mut failed = 0;
    match dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
            }
            for check in check_directory(dir)? {
                match &check.problem {
                    None => println!("ok   {}", check.file.display()),
                    Some(p) => {
                        failed += 1;
                        println!("FAIL {}: {p}", check.file.display());
                    }
                }
            }
        }
        None => {
            for (name, result) in internal_checks() {
                match result {
                    Ok(()) => println!("ok   {name}"),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {name}: {e}");
                    }
                }
            }
        }
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}
