//! Command-line surface: simulation drivers, FDP estimation on user data,
//! dependence-adjusted p-values, and manifest-based reruns.
//!
//! Every command writes its outputs plus a `manifest.json` into the output
//! directory; `rerun --manifest` replays a manifest and reproduces the
//! result files byte for byte. All files are written atomically (temp file
//! then rename) with '.' decimals, 17 significant digits and LF endings.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{FdpError, Result};
use crate::pfa::{
    adjusted_statistics, estimate_w, fdp_adjusted_estimate, fdp_curve, pvalues,
    rejection_counts, FactorRepresentation, WMethod,
};
use crate::poet::{poet_covariance, to_correlation, KChoice, PoetConfig, ThresholdRule};
use crate::sim::{
    run_fdp_experiment, run_power_experiment, ExperimentResult, SigmaUKind, SimulationConfig,
};
use crate::types::{DataMatrix, TestVector};

const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Estimates the false discovery proportion of large-scale dependent tests.
#[derive(Debug, Parser)]
#[command(name = "fdp", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a seeded simulation experiment and write per-round results.
    Simulate(SimulateArgs),
    /// Estimate the FDP curve for a data matrix.
    Fdp(AnalyzeArgs),
    /// Emit dependence-adjusted statistics and a side-by-side FDP report.
    Adjust(AnalyzeArgs),
    /// Replay a previous run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetArg {
    /// FDP estimation study: 50 unit signals, t = 0.01.
    Table2,
    /// Power study: 200 weak signals, adjusted procedure at t = 0.001.
    Table3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Strict,
    Approximate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ls,
    Lad,
    Scad,
}

impl From<MethodArg> for WMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ls => WMethod::LeastSquares,
            MethodArg::Lad => WMethod::Lad,
            MethodArg::Scad => WMethod::PenalizedScad,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Hard,
    Soft,
    Scad,
}

impl From<RuleArg> for ThresholdRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Hard => ThresholdRule::Hard,
            RuleArg::Soft => ThresholdRule::Soft,
            RuleArg::Scad => ThresholdRule::Scad,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "table2")]
    pub preset: PresetArg,
    /// Residual covariance of the generating model.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rejection threshold (adjusted-procedure threshold for table3).
    #[arg(long)]
    pub t: Option<f64>,
    /// Number of factors for the covariance fit: an integer or 'auto'.
    #[arg(long, value_parser = parse_k)]
    pub k: Option<KChoice>,
    #[arg(long, value_enum, default_value = "ls")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "soft")]
    pub rule: RuleArg,
    /// Threshold constant of the covariance fit.
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_k: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV data matrix: header row of variable names, one sample per row.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV with one group label per sample row (two-sample statistic).
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Thresholds: comma-separated values or ranges like 1e-4:1e-1:20log.
    #[arg(long, value_parser = parse_thresholds, default_value = "0.01")]
    pub t: ThresholdList,
    /// Number of factors: an integer or 'auto'.
    #[arg(long, value_parser = parse_k, default_value = "auto")]
    pub k: KChoice,
    #[arg(long, value_enum, default_value = "ls")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "soft")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_k: f64,
    /// Write the m most significant variables to ranking.csv.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Skip marginal standardization of the statistics.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ThresholdList(pub Vec<f64>);

fn parse_k(s: &str) -> std::result::Result<KChoice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(KChoice::Auto);
    }
    s.parse::<usize>()
        .map(KChoice::Fixed)
        .map_err(|_| format!("expected a nonnegative integer or 'auto', got '{s}'"))
}

fn parse_thresholds(s: &str) -> std::result::Result<ThresholdList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err("empty threshold entry".into());
        }
        if part.contains(':') {
            let pieces: Vec<&str> = part.split(':').collect();
            if pieces.len() != 3 {
                return Err(format!("range must be lo:hi:count[log], got '{part}'"));
            }
            let lo: f64 = pieces[0].parse().map_err(|_| format!("bad bound '{}'", pieces[0]))?;
            let hi: f64 = pieces[1].parse().map_err(|_| format!("bad bound '{}'", pieces[1]))?;
            let (count_str, log) = match pieces[2].strip_suffix("log") {
                Some(c) => (c, true),
                None => (pieces[2], false),
            };
            let count: usize = count_str
                .parse()
                .map_err(|_| format!("bad count '{count_str}'"))?;
            if count < 2 || !(lo < hi) {
                return Err(format!("range needs lo < hi and count >= 2, got '{part}'"));
            }
            for i in 0..count {
                let frac = i as f64 / (count - 1) as f64;
                out.push(if log {
                    (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + frac * (hi - lo)
                });
            }
        } else {
            out.push(part.parse().map_err(|_| format!("bad threshold '{part}'"))?);
        }
    }
    if out.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err("thresholds must lie strictly inside (0, 1)".into());
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup();
    Ok(ThresholdList(out))
}

/// Record that reproduces a run: command name, full resolved config, and
/// derived quantities for inspection. The creation timestamp is the only
/// field that differs between a run and its replay.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub derived: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateSpec {
    preset: PresetArg,
    sim: SimulationConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnalyzeSpec {
    data: PathBuf,
    groups: Option<PathBuf>,
    thresholds: Vec<f64>,
    poet: PoetConfig,
    method: WMethod,
    rank: Option<usize>,
    standardize: bool,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let spec = simulate_spec(&a)?;
            cmd_simulate(&spec, &a.out_dir)
        }
        Command::Fdp(a) => {
            let out = a.out_dir.clone();
            cmd_analyze(&analyze_spec(a), &out, false)
        }
        Command::Adjust(a) => {
            let out = a.out_dir.clone();
            cmd_analyze(&analyze_spec(a), &out, true)
        }
        Command::Rerun(a) => cmd_rerun(&a.manifest, &a.out_dir),
    }
}

fn simulate_spec(a: &SimulateArgs) -> Result<SimulateSpec> {
    let rounds = a.rounds.unwrap_or(1000);
    let kind = match (a.preset, a.model) {
        (_, Some(ModelArg::Strict)) => SigmaUKind::StrictIdentity,
        (_, Some(ModelArg::Approximate)) => SigmaUKind::Approximate,
        (PresetArg::Table2, None) => SigmaUKind::StrictIdentity,
        (PresetArg::Table3, None) => SigmaUKind::Approximate,
    };
    let mut sim = match a.preset {
        PresetArg::Table2 => SimulationConfig::table2_defaults(a.n, kind, rounds, a.seed),
        PresetArg::Table3 => SimulationConfig {
            sigma_u_kind: kind,
            ..SimulationConfig::table3_defaults(a.n, rounds, a.seed)
        },
    };
    if let Some(p) = a.p {
        sim.p = p;
    }
    if let Some(p1) = a.p1 {
        sim.p1 = p1;
    }
    if let Some(t) = a.t {
        sim.t = t;
    }
    if let Some(k) = a.k {
        sim.poet.k = k;
    }
    sim.poet.c = a.c;
    sim.poet.rule = a.rule.into();
    sim.poet.epsilon_k = a.epsilon_k;
    sim.method = a.method.into();
    Ok(SimulateSpec {
        preset: a.preset,
        sim,
    })
}

fn analyze_spec(a: AnalyzeArgs) -> AnalyzeSpec {
    AnalyzeSpec {
        data: a.data,
        groups: a.groups,
        thresholds: a.t.0,
        poet: PoetConfig {
            k: a.k,
            c: a.c,
            rule: a.rule.into(),
            epsilon_k: a.epsilon_k,
            ..PoetConfig::default()
        },
        method: a.method.into(),
        rank: a.rank,
        standardize: !a.no_standardize,
        seed: 0,
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes bytes through a temp file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    derived: serde_json::Value,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        seed,
        created_unix: now_unix(),
        config,
        derived,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join("manifest.json"), &bytes)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| FdpError::Numeric(format!("CSV buffer error: {e}")))?;
    write_atomic(path, &bytes)
}

fn write_rounds_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["round", "fdp_true", "fdp_A", "fdp_poet", "DE", "RE"])?;
    for r in &result.records {
        w.write_record([
            r.round.to_string(),
            fmt_float(r.fdp_true),
            fmt_float(r.fdp_a),
            fmt_float(r.fdp_poet),
            fmt_float(r.de),
            fmt_float(r.re),
        ])?;
    }
    finish_csv(w, path)
}

fn cmd_simulate(spec: &SimulateSpec, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let result = match spec.preset {
        PresetArg::Table2 => run_fdp_experiment(&spec.sim)?,
        PresetArg::Table3 => run_power_experiment(&spec.sim)?,
    };
    write_rounds_csv(&result, &out_dir.join("rounds.csv"))?;

    let aggregates = json!({
        "poet": result.poet,
        "known": result.known,
        "power": result.power,
        "completed_rounds": result.records.len(),
        "failures": result.failures,
    });
    let mut bytes = serde_json::to_vec_pretty(&aggregates)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join("aggregates.json"), &bytes)?;

    let k_counts: Vec<usize> = result.records.iter().map(|r| r.k_used).collect();
    write_manifest(
        out_dir,
        "simulate",
        spec.sim.seed,
        serde_json::to_value(spec)?,
        json!({
            "completed_rounds": result.records.len(),
            "failed_rounds": result.failures.len(),
            "k_used": k_counts,
        }),
    )
}

/// Loaded analysis input: variable names, the unstandardized statistic,
/// and the rows the covariance fit runs on (centered within each group in
/// the two-sample case).
struct AnalysisInput {
    names: Vec<String>,
    raw_z: Vec<f64>,
    fit_data: DataMatrix,
    two_sample_scale: Option<f64>,
    shape: serde_json::Value,
}

fn load_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(FdpError::Shape(format!("{}: no columns", path.display())));
    }
    let mut rows = Vec::new();
    for (ridx, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(FdpError::Parse {
                row: ridx + 1,
                col: record.len(),
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(names.len());
        for (cidx, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| FdpError::Parse {
                row: ridx + 1,
                col: cidx + 1,
                message: format!("not a number: '{field}'"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok((names, rows))
}

fn load_labels(path: &Path, expected_rows: usize) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut labels = Vec::new();
    for (ridx, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 1 {
            return Err(FdpError::Parse {
                row: ridx + 1,
                col: record.len(),
                message: "group file must have exactly one column".into(),
            });
        }
        labels.push(record[0].trim().to_string());
    }
    if labels.len() != expected_rows {
        return Err(FdpError::Shape(format!(
            "{} group labels for {} data rows",
            labels.len(),
            expected_rows
        )));
    }
    Ok(labels)
}

fn to_matrix(rows: &[Vec<f64>], p: usize) -> Result<DataMatrix> {
    let n = rows.len();
    let mut m = ndarray::Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    DataMatrix::new(m)
}

fn load_input(spec: &AnalyzeSpec) -> Result<AnalysisInput> {
    let (names, rows) = load_matrix(&spec.data)?;
    let p = names.len();
    match &spec.groups {
        None => {
            let data = to_matrix(&rows, p)?;
            let n = data.n();
            let sqrt_n = (n as f64).sqrt();
            let raw_z: Vec<f64> = data.column_means().iter().map(|&m| sqrt_n * m).collect();
            Ok(AnalysisInput {
                names,
                raw_z,
                fit_data: data,
                two_sample_scale: None,
                shape: json!({ "n": n, "p": p }),
            })
        }
        Some(groups_path) => {
            let labels = load_labels(groups_path, rows.len())?;
            let mut levels: Vec<String> = labels.clone();
            levels.sort();
            levels.dedup();
            if levels.len() != 2 {
                return Err(FdpError::Parameter(format!(
                    "need exactly 2 group levels, found {}",
                    levels.len()
                )));
            }
            let split = |level: &str| -> Vec<Vec<f64>> {
                rows.iter()
                    .zip(&labels)
                    .filter(|(_, l)| l.as_str() == level)
                    .map(|(r, _)| r.clone())
                    .collect()
            };
            let xr = split(&levels[0]);
            let yr = split(&levels[1]);
            if xr.len() < 2 || yr.len() < 2 {
                return Err(FdpError::InsufficientData(format!(
                    "each group needs at least 2 samples, got {} and {}",
                    xr.len(),
                    yr.len()
                )));
            }
            let x = to_matrix(&xr, p)?;
            let y = to_matrix(&yr, p)?;
            let z = crate::sim::two_sample_statistics(&x, &y)?;
            let (n, m) = (x.n() as f64, y.n() as f64);
            let scale = (n * m / (n + m)).sqrt();

            // Covariance is fitted on within-group centered rows, pooling
            // both groups.
            let xc = x.centered();
            let yc = y.centered();
            let mut pooled = ndarray::Array2::zeros((x.n() + y.n(), p));
            pooled.slice_mut(ndarray::s![..x.n(), ..]).assign(&xc);
            pooled.slice_mut(ndarray::s![x.n().., ..]).assign(&yc);
            Ok(AnalysisInput {
                names,
                raw_z: z.as_slice().to_vec(),
                fit_data: DataMatrix::new(pooled)?,
                two_sample_scale: Some(scale),
                shape: json!({
                    "n": x.n(), "m": y.n(), "p": p,
                    "group_levels": levels,
                }),
            })
        }
    }
}

fn write_ranking(
    names: &[String],
    stats: &[f64],
    pv: &[f64],
    m: usize,
    path: &Path,
) -> Result<()> {
    let mut order: Vec<usize> = (0..pv.len()).collect();
    order.sort_by(|&a, &b| pv[a].total_cmp(&pv[b]).then(a.cmp(&b)));
    let mut w = csv_writer();
    w.write_record(["rank", "variable", "statistic", "p_value"])?;
    for (rank, &i) in order.iter().take(m).enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            names[i].clone(),
            fmt_float(stats[i]),
            fmt_float(pv[i]),
        ])?;
    }
    finish_csv(w, path)
}

fn cmd_analyze(spec: &AnalyzeSpec, out_dir: &Path, adjust: bool) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let input = load_input(spec)?;
    let fit = poet_covariance(&input.fit_data, &spec.poet)?;
    let (corr, sds) = to_correlation(&fit.covariance)?;
    let z_vals: Vec<f64> = if spec.standardize {
        input.raw_z.iter().zip(&sds).map(|(z, d)| z / d).collect()
    } else {
        input.raw_z.clone()
    };
    let z = TestVector::new(z_vals)?;
    let fr = FactorRepresentation::from_correlation(&corr, fit.k_used)?;
    let w = estimate_w(&fr, &z, spec.method)?;

    let report = fdp_curve(&z, &fr, &w, &spec.thresholds, None)?;
    let pv = pvalues(&z);

    if adjust {
        let z_adj = adjusted_statistics(&fr, &w, &z)?;
        let pv_adj = pvalues(&z_adj);

        let mut wtr = csv_writer();
        wtr.write_record([
            "t",
            "R",
            "V_hat",
            "fdp_hat",
            "fdp_hat_capped",
            "R_adj",
            "V_hat_adj",
            "fdp_hat_adj",
            "fdp_hat_adj_capped",
        ])?;
        for row in &report.rows {
            let (r_adj, _) = rejection_counts(&pv_adj, row.t, None)?;
            // The numerator is the estimate evaluated with R = 1.
            let v_adj = fdp_adjusted_estimate(&fr, &w, row.t, 1)?;
            let fdp_adj = if r_adj == 0 { 0.0 } else { v_adj / r_adj as f64 };
            wtr.write_record([
                fmt_float(row.t),
                row.r.to_string(),
                fmt_float(row.v_hat),
                fmt_float(row.fdp_hat),
                fmt_float(row.fdp_hat_capped),
                r_adj.to_string(),
                fmt_float(v_adj),
                fmt_float(fdp_adj),
                fmt_float(fdp_adj.min(1.0)),
            ])?;
        }
        finish_csv(wtr, &out_dir.join("adjusted_report.csv"))?;

        let mut stw = csv_writer();
        stw.write_record(["variable", "z", "p_value", "z_adj", "p_value_adj"])?;
        for i in 0..input.names.len() {
            stw.write_record([
                input.names[i].clone(),
                fmt_float(z.as_slice()[i]),
                fmt_float(pv.as_slice()[i]),
                fmt_float(z_adj.as_slice()[i]),
                fmt_float(pv_adj.as_slice()[i]),
            ])?;
        }
        finish_csv(stw, &out_dir.join("adjusted_statistics.csv"))?;

        if let Some(m) = spec.rank {
            write_ranking(
                &input.names,
                z_adj.as_slice(),
                pv_adj.as_slice(),
                m,
                &out_dir.join("ranking.csv"),
            )?;
        }
    } else {
        let mut wtr = csv_writer();
        wtr.write_record(["t", "R", "V_hat", "fdp_hat", "fdp_hat_capped"])?;
        for row in &report.rows {
            wtr.write_record([
                fmt_float(row.t),
                row.r.to_string(),
                fmt_float(row.v_hat),
                fmt_float(row.fdp_hat),
                fmt_float(row.fdp_hat_capped),
            ])?;
        }
        finish_csv(wtr, &out_dir.join("fdp_report.csv"))?;

        if let Some(m) = spec.rank {
            write_ranking(
                &input.names,
                z.as_slice(),
                pv.as_slice(),
                m,
                &out_dir.join("ranking.csv"),
            )?;
        }
    }

    write_manifest(
        out_dir,
        if adjust { "adjust" } else { "fdp" },
        spec.seed,
        serde_json::to_value(spec)?,
        json!({
            "shape": input.shape,
            "k_hat": fit.k_used,
            "c_used": fit.c_used,
            "omega": fit.omega,
            "min_residual_eigenvalue": fit.min_residual_eigenvalue,
            "pd_warning": fit.pd_warning,
            "two_sample_scale": input.two_sample_scale,
            "standardized": spec.standardize,
        }),
    )
}

fn cmd_rerun(manifest_path: &Path, out_dir: &Path) -> Result<()> {
    let bytes = fs::read(manifest_path)?;
    let manifest: RunManifest = serde_json::from_slice(&bytes)?;
    match manifest.command.as_str() {
        "simulate" => {
            let spec: SimulateSpec = serde_json::from_value(manifest.config)?;
            cmd_simulate(&spec, out_dir)
        }
        "fdp" => {
            let spec: AnalyzeSpec = serde_json::from_value(manifest.config)?;
            cmd_analyze(&spec, out_dir, false)
        }
        "adjust" => {
            let spec: AnalyzeSpec = serde_json::from_value(manifest.config)?;
            cmd_analyze(&spec, out_dir, true)
        }
        other => Err(FdpError::Parameter(format!(
            "manifest has unknown command '{other}'"
        ))),
    }
}
