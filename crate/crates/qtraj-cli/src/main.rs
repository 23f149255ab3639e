//! Command line for the trajectory engine.
//!
//! * `simulate` runs a trajectory ensemble and writes `ensemble.csv` plus
//!   `ensemble.meta.json` into the output directory.
//! * `check-commute` decides joint realizability of a quadrature/counting
//!   selection and prints the closed-form report as JSON.
//! * `compare-kuramochi` runs the reflectivity-aware filter and the
//!   scaling-free comparison filter on shared noise streams and writes
//!   `comparison.csv` plus `comparison.meta.json`.
//! * `slh-compose` evaluates a series/concatenation expression over a table
//!   of scattering/coupling/Hamiltonian components and prints the composed
//!   triple as JSON.
//!
//! Exit codes are a stable contract: 0 success (including a commutative
//! verdict), 2 negative verdict, 1 usage/config/IO error, 3 numerical
//! failure (divergent integration or an oracle disagreement).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use qtraj::commute::{
    check_self_commutative, cross_validate, CommutativityReport, MeasurementSpec,
};
use qtraj::ensemble::{
    compare_filters, comparison_csv_bytes, comparison_metadata, ensemble_csv_bytes,
    ensemble_metadata, run_ensemble, write_table_with_metadata, SimulationConfig,
};
use qtraj::filter::RATE_DT_WARN;
use qtraj::network::{beam_splitter, concatenate, matrix_from_pairs, series, SlhJson, SlhModel};
use qtraj::{QtrajError, Result};

/// Probe-stream seed for `check-commute --oracle`; fixed so reruns agree.
const ORACLE_SEED: u64 = 0xC0FFEE;

/// Truncation leakage above this draws a stderr warning.
const LEAKAGE_WARN: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "qtraj",
    version,
    about = "Trajectory engine for jointly monitored open quantum systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write ensemble.csv + ensemble.meta.json
    Simulate(RunArgs),
    /// Decide joint realizability of a quadrature/counting selection
    CheckCommute(CheckArgs),
    /// Race the corrected filter against the scaling-free comparison filter
    CompareKuramochi(RunArgs),
    /// Evaluate a composition expression over S/L/H components
    SlhCompose(ComposeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Simulation configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving the CSV + metadata pair
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    /// Worker thread cap; falls back to QTRAJ_THREADS, then all cores
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config field, e.g. --set n_traj=500 --set filter=sme
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Measurement selection (JSON object with F and G as nested [re, im] pairs)
    #[arg(long)]
    config: PathBuf,
    /// Also cross-check the verdict on N random system instantiations
    #[arg(long, value_name = "N")]
    oracle: Option<usize>,
}

#[derive(Args)]
struct ComposeArgs {
    /// Component table plus composition expression (JSON)
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                QtrajError::IntegrationDiverged(_) | QtrajError::OracleMismatch { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::CheckCommute(args) => check_commute(args),
        Command::CompareKuramochi(args) => compare_kuramochi(args),
        Command::SlhCompose(args) => slh_compose(args),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| QtrajError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| QtrajError::Config(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(path: &Path, value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value)
        .map_err(|e| QtrajError::Config(format!("{}: {e}", path.display())))
}

/// Load a simulation config and apply `KEY=VALUE` overrides on top. Values
/// are parsed as JSON when possible and fall back to bare strings, so both
/// `--set dt=1e-4` and `--set filter=sme` work.
fn load_run_config(path: &Path, overrides: &[String]) -> Result<SimulationConfig> {
    let mut value = read_json(path)?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| QtrajError::Config("config root must be a JSON object".into()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| QtrajError::Config(format!("override '{item}' is not KEY=VALUE")))?;
        let parsed = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        map.insert(key.to_string(), parsed);
    }
    from_value(path, value)
}

fn thread_cap(flag: Option<usize>) -> Result<Option<usize>> {
    let cap = match flag {
        Some(n) => Some(n),
        None => match std::env::var("QTRAJ_THREADS") {
            Ok(raw) => Some(raw.trim().parse::<usize>().map_err(|_| {
                QtrajError::Config(format!(
                    "QTRAJ_THREADS must be a positive integer, got '{raw}'"
                ))
            })?),
            Err(_) => None,
        },
    };
    if cap == Some(0) {
        return Err(QtrajError::Config("thread cap must be at least 1".into()));
    }
    Ok(cap)
}

fn warn_diagnostics(leakage_max: f64, rate_warning_steps: usize) {
    if leakage_max > LEAKAGE_WARN {
        eprintln!("warning: truncation leakage reached {leakage_max:.3e}; raise dim");
    }
    if rate_warning_steps > 0 {
        eprintln!(
            "warning: {rate_warning_steps} steps had click probability above {RATE_DT_WARN}; shrink dt"
        );
    }
}

fn simulate(args: RunArgs) -> Result<ExitCode> {
    let config = load_run_config(&args.config, &args.set)?;
    let threads = thread_cap(args.threads)?;
    let summary = run_ensemble(&config, threads)?;
    let csv = ensemble_csv_bytes(&summary)?;
    let meta = ensemble_metadata(&summary, "ensemble.csv", &csv);
    let (csv_path, meta_path) =
        write_table_with_metadata(&args.output_dir, "ensemble", &csv, &meta)?;
    warn_diagnostics(summary.leakage_max, summary.rate_warning_steps);
    println!("{}", csv_path.display());
    println!("{}", meta_path.display());
    Ok(ExitCode::SUCCESS)
}

fn compare_kuramochi(args: RunArgs) -> Result<ExitCode> {
    let config = load_run_config(&args.config, &args.set)?;
    let threads = thread_cap(args.threads)?;
    let report = compare_filters(&config, threads)?;
    let csv = comparison_csv_bytes(&report)?;
    let meta = comparison_metadata(&report, "comparison.csv", &csv);
    let (csv_path, meta_path) =
        write_table_with_metadata(&args.output_dir, "comparison", &csv, &meta)?;
    warn_diagnostics(report.leakage_max, report.rate_warning_steps);
    println!("{}", csv_path.display());
    println!("{}", meta_path.display());
    println!(
        "max |z|: corrected {:.3}, kuramochi {:.3}",
        report.max_abs_z_corrected(),
        report.max_abs_z_kuramochi()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementFile {
    #[serde(rename = "F")]
    f: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "G")]
    g: Vec<Vec<[f64; 2]>>,
    /// Optional verdict tolerance; defaults to the entry-scaled value.
    #[serde(default)]
    tol: Option<f64>,
}

fn report_json(report: &CommutativityReport) -> serde_json::Value {
    serde_json::json!({
        "commutative": report.commutative,
        "conditions": {
            "F": report.condition_f,
            "G_Fstar": report.condition_g_fstar,
            "G_F": report.condition_g_f,
        },
        "violations": {
            "F": report.violations.condition_f,
            "G_Fstar": report.violations.condition_g_fstar,
            "G_F": report.violations.condition_g_f,
        },
        "tol": report.tol,
    })
}

fn check_commute(args: CheckArgs) -> Result<ExitCode> {
    let file: MeasurementFile = from_value(&args.config, read_json(&args.config)?)?;
    let spec = MeasurementSpec::new(matrix_from_pairs(&file.f)?, matrix_from_pairs(&file.g)?)?;
    let report = check_self_commutative(&spec, file.tol);
    let mut out = report_json(&report);
    if let Some(trials) = args.oracle {
        let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
        cross_validate(&spec, trials, &mut rng)?;
        out["oracle"] = serde_json::json!({ "trials": trials, "agrees": true });
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if report.commutative {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeFile {
    components: BTreeMap<String, ComponentSpec>,
    expression: Expr,
}

/// One named component: either an explicit {S, L, H} triple, a beam
/// splitter, or a passive pass-through.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentSpec {
    #[serde(rename = "S", default)]
    s: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(rename = "L", default)]
    l: Option<Vec<Vec<Vec<[f64; 2]>>>>,
    #[serde(rename = "H", default)]
    h: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    beam_splitter: Option<BeamSplitterSpec>,
    #[serde(default)]
    passive: Option<PassiveSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BeamSplitterSpec {
    r: f64,
    theta: f64,
    dim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PassiveSpec {
    channels: usize,
    dim: usize,
}

impl ComponentSpec {
    fn build(&self, name: &str) -> Result<SlhModel> {
        match (&self.s, &self.l, &self.h, &self.beam_splitter, &self.passive) {
            (Some(s), Some(l), Some(h), None, None) => {
                let s = matrix_from_pairs(s)?;
                let l = l
                    .iter()
                    .map(|m| matrix_from_pairs(m))
                    .collect::<Result<Vec<_>>>()?;
                let h = matrix_from_pairs(h)?;
                SlhModel::new(s, l, h)
            }
            (None, None, None, Some(bs), None) => beam_splitter(bs.r, bs.theta, bs.dim),
            (None, None, None, None, Some(p)) => SlhModel::passive(p.channels, p.dim),
            _ => Err(QtrajError::Config(format!(
                "component '{name}' must be exactly one of {{S, L, H}}, {{beam_splitter}}, {{passive}}"
            ))),
        }
    }
}

/// Composition expression: a component name, or a node applying one
/// operation to two or more operands, folded left to right. `series` feeds
/// each operand's output into the next one.
#[derive(Deserialize)]
#[serde(untagged)]
enum Expr {
    Name(String),
    Node(ExprNode),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprNode {
    #[serde(default)]
    series: Option<Vec<Expr>>,
    #[serde(default)]
    concat: Option<Vec<Expr>>,
}

fn eval_expr(expr: &Expr, components: &BTreeMap<String, SlhModel>) -> Result<SlhModel> {
    match expr {
        Expr::Name(name) => components
            .get(name)
            .cloned()
            .ok_or_else(|| QtrajError::Config(format!("unknown component '{name}'"))),
        Expr::Node(node) => {
            let (op, operands) = match (&node.series, &node.concat) {
                (Some(v), None) => ("series", v),
                (None, Some(v)) => ("concat", v),
                _ => {
                    return Err(QtrajError::Config(
                        "expression node must have exactly one of 'series' or 'concat'".into(),
                    ))
                }
            };
            if operands.len() < 2 {
                return Err(QtrajError::Config(format!(
                    "'{op}' needs at least two operands"
                )));
            }
            let mut acc = eval_expr(&operands[0], components)?;
            for next in &operands[1..] {
                let rhs = eval_expr(next, components)?;
                acc = if op == "series" {
                    series(&acc, &rhs)?
                } else {
                    concatenate(&acc, &rhs)?
                };
            }
            Ok(acc)
        }
    }
}

fn slh_compose(args: ComposeArgs) -> Result<ExitCode> {
    let file: ComposeFile = from_value(&args.config, read_json(&args.config)?)?;
    let mut built = BTreeMap::new();
    for (name, spec) in &file.components {
        built.insert(name.clone(), spec.build(name)?);
    }
    let model = eval_expr(&file.expression, &built)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&SlhJson::from_model(&model))?
    );
    Ok(ExitCode::SUCCESS)
}
