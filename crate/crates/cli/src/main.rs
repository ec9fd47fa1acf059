//! Experiment runner: single scenarios, parameter sweeps, plot-data export
//! and scenario validation.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical infeasibility,
//! 3 I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mmimo_core::precoding::Method;
use mmimo_core::rates::{
    closed_form_report, ergodic_rates_mc, RateReport, RateSource, ScenarioModel,
};
use mmimo_core::scenario::{validate, Scenario, ScenarioSpec, Severity};
use mmimo_core::matrix_core::QuadFormConvention;
use mmimo_core::Error as CoreError;

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "mmimo", about = "Massive-MIMO mixed-CSI precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print per-user rates.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write results as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write figure-ready CSV data.
    Sweep {
        /// Sweep TOML file.
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory for the CSV file (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a sweep CSV into one two-column file per curve.
    Plotdata {
        /// CSV produced by `sweep` or `run`.
        csv: PathBuf,
        /// Output directory for the .dat files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a scenario file and report diagnostics.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated method list (ZF, MRT, SBM, eZF, eMRT).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Cap the worker-thread count.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Core(CoreError),
    Io(String),
    Usage(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                CoreError::Validation(_) | CoreError::InvalidArgument(_) => EXIT_VALIDATION,
                _ => EXIT_NUMERICAL,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => {
                let hint = match e {
                    CoreError::NullSpaceExhausted { .. } | CoreError::InfeasibleDimensions { .. } => {
                        "\nhint: raise the antenna count or reduce the statistical covariance rank"
                    }
                    _ => "",
                };
                format!("{e}{hint}")
            }
            CliError::Io(m) | CliError::Usage(m) => m.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn load_scenario(path: &Path, overrides: &Overrides) -> Result<(ScenarioSpec, Scenario), CliError> {
    let text = read_file(path)?;
    let mut spec = ScenarioSpec::from_toml_str(&text)
        .map_err(|e| CliError::Core(CoreError::Validation(format!("{}: {e}", path.display()))))?;
    if let Some(seed) = overrides.seed {
        spec.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        spec.trials = trials;
    }
    let scenario = spec.build()?;
    let diags = validate(&scenario);
    for d in &diags {
        let tag = match d.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        eprintln!("{tag}: {}", d.message);
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CliError::Core(CoreError::Validation(format!(
            "{} failed validation",
            path.display()
        ))));
    }
    Ok((spec, scenario))
}

fn parse_methods(overrides: &Overrides) -> Result<Vec<Method>, CliError> {
    match &overrides.methods {
        None => Ok(Method::ALL.to_vec()),
        Some(names) => {
            if names.is_empty() {
                return Err(CliError::Usage("method list must not be empty".into()));
            }
            names.iter().map(|s| s.parse::<Method>().map_err(CliError::Core)).collect()
        }
    }
}

fn init_thread_pool(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure worker pool: {e}")))?;
    }
    Ok(())
}

/// One CSV output row; a report contributes one row per populated user class.
#[derive(Debug, Clone)]
struct Row {
    axis_value: f64,
    method: Method,
    source: RateSource,
    user_class: char,
    mean_rate: f64,
    std_err: f64,
    sum_rate: f64,
    spectral_efficiency: f64,
}

fn report_rows(axis_value: f64, report: &RateReport) -> Vec<Row> {
    let mut rows = Vec::new();
    if !report.per_user_c.is_empty() {
        rows.push(Row {
            axis_value,
            method: report.method,
            source: report.source,
            user_class: 'C',
            mean_rate: report.avg_c,
            std_err: report.std_err_c.unwrap_or(0.0),
            sum_rate: report.sum_rate,
            spectral_efficiency: report.spectral_efficiency,
        });
    }
    if !report.per_user_s.is_empty() {
        rows.push(Row {
            axis_value,
            method: report.method,
            source: report.source,
            user_class: 'S',
            mean_rate: report.avg_s,
            std_err: report.std_err_s.unwrap_or(0.0),
            sum_rate: report.sum_rate,
            spectral_efficiency: report.spectral_efficiency,
        });
    }
    rows
}

fn sort_rows(rows: &mut [Row]) {
    rows.sort_by(|a, b| {
        a.axis_value
            .total_cmp(&b.axis_value)
            .then_with(|| a.method.to_string().cmp(&b.method.to_string()))
            .then_with(|| a.source.to_string().cmp(&b.source.to_string()))
            .then_with(|| a.user_class.cmp(&b.user_class))
    });
}

fn write_csv(rows: &[Row], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    w.write_record([
        "axis_value",
        "method",
        "source",
        "user_class",
        "mean_rate",
        "std_err",
        "sum_rate",
        "spectral_efficiency",
    ])
    .map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record([
            format!("{:.6}", r.axis_value),
            r.method.to_string(),
            r.source.to_string(),
            r.user_class.to_string(),
            format!("{:.6}", r.mean_rate),
            format!("{:.6}", r.std_err),
            format!("{:.6}", r.sum_rate),
            format!("{:.6}", r.spectral_efficiency),
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn evaluate_point(
    spec: &ScenarioSpec,
    axis_value: f64,
    methods: &[Method],
    closed_form: bool,
) -> Result<Vec<Row>, CliError> {
    let scenario = spec.build()?;
    let model = ScenarioModel::new(&scenario)?;
    let mut rows = Vec::new();
    for &method in methods {
        let report = ergodic_rates_mc(&model, method, scenario.mc_trials)?;
        rows.extend(report_rows(axis_value, &report));
        if closed_form && method == Method::Sbm {
            let cf = closed_form_report(&model, QuadFormConvention::DiagonalCorrected)?;
            rows.extend(report_rows(axis_value, &cf));
        }
    }
    Ok(rows)
}

fn print_report(report: &RateReport) {
    for (k, r) in report.per_user_c.iter().enumerate() {
        println!("{:<6} {:<14} C{:<3} {:>10.4}", report.method, report.source, k, r);
    }
    for (n, r) in report.per_user_s.iter().enumerate() {
        println!("{:<6} {:<14} S{:<3} {:>10.4}", report.method, report.source, n, r);
    }
    println!(
        "{:<6} {:<14} sum  {:>10.4}   spectral efficiency {:>8.4}",
        report.method, report.source, report.sum_rate, report.spectral_efficiency
    );
}

fn cmd_run(path: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<(), CliError> {
    init_thread_pool(overrides.jobs)?;
    let methods = parse_methods(overrides)?;
    let (spec, scenario) = load_scenario(path, overrides)?;
    let model = ScenarioModel::new(&scenario)?;
    println!(
        "scenario: m={} k={} n={} trials={} seed={}",
        scenario.m, scenario.k, scenario.n, scenario.mc_trials, scenario.seed
    );
    println!("{:<6} {:<14} user {:>10}", "method", "source", "rate");
    let mut rows = Vec::new();
    for &method in &methods {
        let report = ergodic_rates_mc(&model, method, scenario.mc_trials)?;
        print_report(&report);
        rows.extend(report_rows(spec.p_d_db, &report));
        if method == Method::Sbm {
            let cf = closed_form_report(&model, QuadFormConvention::DiagonalCorrected)?;
            print_report(&cf);
            rows.extend(report_rows(spec.p_d_db, &cf));
        }
    }
    if let Some(out) = out {
        sort_rows(&mut rows);
        write_csv(&rows, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Sweep axis: which scenario key the value list replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum Axis {
    #[serde(rename = "p_d_db")]
    PdDb,
    #[serde(rename = "m")]
    M,
    #[serde(rename = "k")]
    K,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "t_pilot")]
    TPilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum OutputKind {
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "closed_form")]
    ClosedForm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    axis: Axis,
    values: Vec<f64>,
    methods: Vec<Method>,
    outputs: Vec<OutputKind>,
    base: ScenarioSpec,
}

impl SweepSpec {
    fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Usage("sweep values must not be empty".into()));
        }
        if !self.values.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Usage("sweep values must be strictly increasing".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Usage("sweep methods must not be empty".into()));
        }
        if self.outputs.is_empty() {
            return Err(CliError::Usage("sweep outputs must not be empty".into()));
        }
        if self.outputs.contains(&OutputKind::ClosedForm) && !self.methods.contains(&Method::Sbm) {
            return Err(CliError::Usage(
                "closed-form output is only available for SBM; add SBM to the method list".into(),
            ));
        }
        if matches!(self.axis, Axis::M | Axis::K | Axis::N | Axis::TPilot)
            && self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0)
        {
            return Err(CliError::Usage("this axis takes non-negative integer values".into()));
        }
        Ok(())
    }

    fn spec_for(&self, value: f64) -> ScenarioSpec {
        let mut s = self.base.clone();
        match self.axis {
            Axis::PdDb => s.p_d_db = value,
            Axis::M => s.m = value as usize,
            Axis::K => s.k = value as usize,
            Axis::N => s.n = value as usize,
            Axis::TPilot => s.t_pilot = value as u32,
        }
        s
    }
}

fn cmd_sweep(path: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<(), CliError> {
    init_thread_pool(overrides.jobs)?;
    let text = read_file(path)?;
    let mut sweep: SweepSpec = toml::from_str(&text)
        .map_err(|e| CliError::Core(CoreError::Validation(format!("{}: {e}", path.display()))))?;
    if let Some(seed) = overrides.seed {
        sweep.base.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        sweep.base.trials = trials;
    }
    let methods = match &overrides.methods {
        Some(_) => parse_methods(overrides)?,
        None => sweep.methods.clone(),
    };
    sweep.validate()?;
    let closed_form = sweep.outputs.contains(&OutputKind::ClosedForm);
    let mc = sweep.outputs.contains(&OutputKind::Mc);
    let run_methods: Vec<Method> = if mc { methods } else { vec![Method::Sbm] };

    let mut rows = Vec::new();
    for &value in &sweep.values {
        let spec = sweep.spec_for(value);
        // a failed point is reported and skipped; the sweep continues
        match evaluate_point(&spec, value, &run_methods, closed_form) {
            Ok(mut point_rows) => {
                if !mc {
                    point_rows.retain(|r| r.source == RateSource::ClosedForm);
                }
                rows.extend(point_rows);
            }
            Err(e) => eprintln!("point {value}: {}", e.message()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Core(CoreError::Validation(
            "every sweep point failed; no output written".into(),
        )));
    }
    sort_rows(&mut rows);
    let dir = out.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&rows, &csv_path)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_plotdata(csv_path: &Path, out: &Path) -> Result<(), CliError> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .clone();
    let idx = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("column '{name}' missing from {}", csv_path.display())))
    };
    let (i_axis, i_method, i_source, i_class, i_rate) = (
        idx("axis_value")?,
        idx("method")?,
        idx("source")?,
        idx("user_class")?,
        idx("mean_rate")?,
    );
    let mut curves: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        let key = format!("{}_{}_{}", &record[i_method], &record[i_class], &record[i_source]);
        curves
            .entry(key)
            .or_default()
            .push((record[i_axis].to_string(), record[i_rate].to_string()));
    }
    if curves.is_empty() {
        return Err(CliError::Usage(format!("{} contains no data rows", csv_path.display())));
    }
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    for (key, points) in &curves {
        let file = out.join(format!("{key}.dat"));
        let body: String = points.iter().map(|(x, y)| format!("{x} {y}\n")).collect();
        fs::write(&file, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", file.display())))?;
        println!("wrote {} ({} points)", file.display(), points.len());
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let text = read_file(path)?;
    let spec = ScenarioSpec::from_toml_str(&text)
        .map_err(|e| CliError::Core(CoreError::Validation(format!("{}: {e}", path.display()))))?;
    let scenario = spec.build()?;
    let diags = validate(&scenario);
    if diags.is_empty() {
        println!("{}: ok", path.display());
        return Ok(());
    }
    let mut failed = false;
    for d in &diags {
        match d.severity {
            Severity::Warning => println!("warning: {}", d.message),
            Severity::Error => {
                failed = true;
                println!("error: {}", d.message);
            }
        }
    }
    if failed {
        return Err(CliError::Core(CoreError::Validation(format!(
            "{} failed validation",
            path.display()
        ))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, overrides, out } => cmd_run(scenario, overrides, out.as_deref()),
        Command::Sweep { spec, overrides, out } => cmd_sweep(spec, overrides, out.as_deref()),
        Command::Plotdata { csv, out } => cmd_plotdata(csv, out),
        Command::Validate { scenario } => cmd_validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
