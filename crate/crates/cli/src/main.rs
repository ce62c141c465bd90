//! `diagmap` command-line front end.

mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use diagmap::model::{FittedModel, SavedModel};
use diagmap::pit::ConstantFamily;
use diagmap::recalibrate::RecalibratedDistribution;
use diagmap::scoring::{crps, distribution_mean, ScoreConfig, ScoreRow, ScoreTable};
use diagmap::synthetic::{convergence_experiment, gen_sas_dataset, pca2_lds_map, SasDesign};
use diagmap::tc::{self, MapMethod};
use diagmap::{
    compute_pit, diagnostic_curve, fit_nonparametric, fit_parametric, lds, CalibrationSet, IdentityMap, PitMap,
    ScalarDistribution, TrainConfig,
};

use config::{Command, Overrides, Resolved, SimulateKind, OUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "diagmap", version, about = "Conditional PIT diagnostics and recalibration")]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Output directory (overrides DIAGMAP_OUT and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input data CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Saved model JSON.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Covariate CSV.
    #[arg(long, global = true)]
    x: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum CommandArg {
    /// Generate a synthetic data set.
    Simulate,
    /// Fit a PIT map to a calibration CSV.
    Fit,
    /// Write diagnostic curves and local discrepancy scores.
    Diagnose,
    /// Write recalibrated CDFs and densities on a y grid.
    Recalibrate,
    /// Score base and recalibrated predictions on labelled data.
    Score,
    /// Run the ISE convergence experiment on the SAS design.
    Convergence,
    /// Evaluate maps on storm sequences and emit the category table.
    TcEval,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Parametric,
    Nonparametric,
}

/// Machine-readable failure written to stderr.
#[derive(Debug, Serialize)]
struct Failure {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<String>,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            error: "runtime",
            message: message.into(),
            violations: Vec::new(),
        }
    }
}

impl From<diagmap::Error> for Failure {
    fn from(e: diagmap::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        CommandArg::Simulate => Command::Simulate,
        CommandArg::Fit => Command::Fit,
        CommandArg::Diagnose => Command::Diagnose,
        CommandArg::Recalibrate => Command::Recalibrate,
        CommandArg::Score => Command::Score,
        CommandArg::Convergence => Command::Convergence,
        CommandArg::TcEval => Command::TcEval,
    };
    let result = config::load(cli.config.as_deref())
        .map_err(|m| Failure {
            error: "config",
            message: m,
            violations: Vec::new(),
        })
        .and_then(|file| {
            let flags = Overrides {
                seed: cli.seed,
                method: cli.method.map(|m| match m {
                    MethodArg::Parametric => MapMethod::Parametric,
                    MethodArg::Nonparametric => MapMethod::Nonparametric,
                }),
                out: cli.out,
                data: cli.data,
                model: cli.model,
                x: cli.x,
            };
            let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
            config::resolve(command, file, flags, env_out).map_err(|violations| Failure {
                error: "config",
                message: format!("{} invalid field(s)", violations.len()),
                violations,
            })
        })
        .and_then(run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).expect("failure serializes"));
            ExitCode::from(if f.error == "config" { 2 } else { 1 })
        }
    }
}

fn run(r: Resolved) -> Outcome<()> {
    std::fs::create_dir_all(&r.out)?;
    match r.command {
        Command::Simulate => simulate(&r),
        Command::Fit => fit(&r),
        Command::Diagnose => diagnose(&r),
        Command::Recalibrate => recalibrate(&r),
        Command::Score => score(&r),
        Command::Convergence => convergence(&r),
        Command::TcEval => tc_eval(&r),
    }
}

fn create(r: &Resolved, name: &str) -> Outcome<(PathBuf, BufWriter<File>)> {
    let path = r.out.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn report(path: &Path, what: &str) {
    println!("wrote {} ({what})", path.display());
}

/// Reads a numeric CSV. Every column other than `y` is a covariate; the
/// responses are empty when `y` is absent and not required.
fn read_table(path: &Path, require_y: bool) -> Outcome<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let y_col = headers.iter().position(|h| h.trim() == "y");
    if require_y && y_col.is_none() {
        return Err(Failure::runtime(format!("{}: no `y` column", path.display())));
    }
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Failure::runtime(format!("{}: line {}: column {}: not a number", path.display(), i + 2, j + 1))
            })?;
            if Some(j) == y_col {
                ys.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::runtime(format!("{}: no data rows", path.display())));
    }
    Ok((rows, ys))
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("checked during resolution")
}

fn simulate(r: &Resolved) -> Outcome<()> {
    let c = &r.config.simulate;
    match c.kind {
        SimulateKind::Sas => {
            let data = gen_sas_dataset::<f64>(&SasDesign::new(c.n, r.seed)?)?;
            let (path, w) = create(r, "sas_data.csv")?;
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["x1", "x2", "x3", "x4", "y"])?;
            for (row, y) in data.rows().zip(data.responses()) {
                let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
                rec.push(y.to_string());
                out.write_record(&rec)?;
            }
            out.flush()?;
            report(&path, &format!("{} SAS pairs", data.len()));
        }
        SimulateKind::Tc => {
            let cfg = tc::TcFixtureConfig {
                seed: r.seed,
                ..c.tc.clone()
            };
            let rows = tc::generate_fixture(&cfg)?;
            let (path, w) = create(r, "tc_sequences.csv")?;
            tc::write_fixture_csv(&rows, w)?;
            report(&path, &format!("{} storm rows", rows.len()));
        }
    }
    Ok(())
}

fn fit(r: &Resolved) -> Outcome<()> {
    let c = &r.config.fit;
    let method = r.config.method.expect("checked during resolution");
    let (rows, ys) = read_table(required(&c.data), true)?;
    let calib = CalibrationSet::new(rows, ys)?;
    let family = ConstantFamily(c.base.gaussian::<f64>()?);
    let pit = compute_pit(&family, &calib)?;
    let defaults = match method {
        MapMethod::Parametric => TrainConfig::parametric(),
        MapMethod::Nonparametric => TrainConfig::nonparametric(),
    };
    let train = TrainConfig {
        seed: r.seed,
        ..c.train.clone().unwrap_or(defaults)
    };
    let model = match method {
        MapMethod::Parametric => FittedModel::Parametric(fit_parametric(&calib, &pit, &train)?),
        MapMethod::Nonparametric => FittedModel::Nonparametric(fit_nonparametric(&calib, &pit, &train)?),
    };
    let path = r.out.join("model.json");
    SavedModel::new(c.base, model).save(&path)?;
    report(&path, &format!("{} map fit on {} pairs", method.label(), calib.len()));
    Ok(())
}

fn load_model(path: &Path) -> Outcome<SavedModel<f64>> {
    SavedModel::load(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn diagnose(r: &Resolved) -> Outcome<()> {
    let c = &r.config.diagnose;
    let saved = load_model(required(&c.model))?;
    let (rows, _) = read_table(required(&c.x), false)?;
    let width = (rows.len().saturating_sub(1)).to_string().len().max(3);
    let (lds_path, w) = create(r, "lds.csv")?;
    let mut summary = csv::Writer::from_writer(w);
    summary.write_record(["x_index", "lds", "failure_mode", "fallback"])?;
    for (i, x) in rows.iter().enumerate() {
        let curve = diagnostic_curve(&saved.model, x, c.grid_size)?;
        let (_, w) = create(r, &format!("curve_{i:0width$}.csv"))?;
        curve.write_csv(w)?;
        summary.write_record([
            i.to_string(),
            lds(&curve)?.to_string(),
            serde_json::to_value(curve.failure_mode())
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            curve.fallback.to_string(),
        ])?;
    }
    summary.flush()?;
    println!("wrote {} curve_*.csv files in {}", rows.len(), r.out.display());
    report(&lds_path, "local discrepancy scores");
    if c.pca {
        let data = CalibrationSet::new(rows.clone(), vec![0.0; rows.len()])?;
        let map = pca2_lds_map(&data, &saved.model, c.grid_size)?;
        let (path, w) = create(r, "pca_lds.csv")?;
        map.write_csv(w)?;
        report(&path, "PCA projection with LDS");
    }
    Ok(())
}

fn recalibrate(r: &Resolved) -> Outcome<()> {
    let c = &r.config.recalibrate;
    let saved = load_model(required(&c.model))?;
    let base = saved.base.gaussian::<f64>()?;
    let (rows, _) = read_table(required(&c.x), false)?;
    let (path, w) = create(r, "recalibrated.csv")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x_index", "y", "base_cdf", "recal_cdf", "recal_pdf"])?;
    let step = (c.y_max - c.y_min) / (c.y_points - 1) as f64;
    for (i, x) in rows.iter().enumerate() {
        let rd = RecalibratedDistribution::new(base, &saved.model, x)?;
        for k in 0..c.y_points {
            let y = if k + 1 == c.y_points { c.y_max } else { c.y_min + step * k as f64 };
            out.write_record([
                i.to_string(),
                y.to_string(),
                base.cdf(y).to_string(),
                rd.recalibrated_cdf(y)?.to_string(),
                rd.recalibrated_pdf(y)?.to_string(),
            ])?;
        }
    }
    out.flush()?;
    report(&path, &format!("{} x rows × {} y points", rows.len(), c.y_points));
    Ok(())
}

fn method_label(m: &FittedModel<f64>) -> &'static str {
    match m {
        FittedModel::Parametric(_) => "parametric",
        FittedModel::Nonparametric(_) => "nonparametric",
    }
}

fn score(r: &Resolved) -> Outcome<()> {
    let c = &r.config.score;
    let saved = load_model(required(&c.model))?;
    let base = saved.base.gaussian::<f64>()?;
    let (rows, ys) = read_table(required(&c.data), true)?;
    let cfg = ScoreConfig::default();
    let mut table = ScoreTable::default();
    let methods: [(&str, &dyn PitMap<f64>); 2] = [("base", &IdentityMap), (method_label(&saved.model), &saved.model)];
    for (label, map) in methods {
        let (mut total_crps, mut total_se) = (0.0, 0.0);
        for (x, &y) in rows.iter().zip(&ys) {
            let rd = RecalibratedDistribution::new(base, map, x)?;
            total_crps += crps(&rd, y, &cfg)?;
            total_se += (distribution_mean(&rd)? - y).powi(2);
        }
        let n = ys.len() as f64;
        for (metric, value) in [("crps", total_crps / n), ("rmse", (total_se / n).sqrt())] {
            table.rows.push(ScoreRow {
                category: "Overall".into(),
                method: label.into(),
                metric: metric.into(),
                value: Some(value),
                pct_change_vs_base: None,
            });
        }
    }
    table.fill_percent_change("base");
    let (path, w) = create(r, "scores.csv")?;
    table.write_csv(w)?;
    report(&path, &format!("scores on {} pairs", ys.len()));
    Ok(())
}

fn convergence(r: &Resolved) -> Outcome<()> {
    let spec = diagmap::synthetic::ConvergenceSpec {
        seed: r.seed,
        ..r.config.convergence.clone()
    };
    let result = convergence_experiment(&spec)?;
    let (path, w) = create(r, "ise_records.csv")?;
    result.write_records_csv(w)?;
    report(&path, &format!("{} ISE records", result.records.len()));
    let (path, w) = create(r, "ise_summary.csv")?;
    result.write_summary_csv(w)?;
    report(&path, "ISE summary");
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    sequences: usize,
    rows_read: usize,
    dropped_all_null: usize,
    dropped_missing_target: usize,
    dropped_incomplete: usize,
    imputed_values: usize,
    errors: &'a [tc::RowError],
    base_sd: f64,
    calibration_sequences: usize,
    test_sequences: usize,
    calibration_storms: usize,
    test_storms: usize,
    category_counts: &'a [(String, usize)],
}

fn tc_eval(r: &Resolved) -> Outcome<()> {
    let c = &r.config.tc;
    let ingest = tc::ingest_sequences(required(&c.data), &c.schema)?;
    let mut eval = tc::TcEvalConfig {
        seed: r.seed,
        ..c.eval.clone()
    };
    if let Some(m) = r.config.method {
        eval.methods = vec![m];
    }
    let result = tc::evaluate_table(&ingest.sequences, &eval)?;
    let (path, w) = create(r, "tc_table.csv")?;
    result.table.write_csv(w)?;
    report(&path, "category CRPS/RMSE table");
    let summary = IngestSummary {
        sequences: ingest.sequences.len(),
        rows_read: ingest.rows_read,
        dropped_all_null: ingest.dropped_all_null,
        dropped_missing_target: ingest.dropped_missing_target,
        dropped_incomplete: ingest.dropped_incomplete,
        imputed_values: ingest.imputed_values,
        errors: &ingest.errors,
        base_sd: result.base_sd,
        calibration_sequences: result.calibration_sequences,
        test_sequences: result.test_sequences,
        calibration_storms: result.calibration_storms.len(),
        test_storms: result.test_storms.len(),
        category_counts: &result.category_counts,
    };
    let path = r.out.join("tc_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("report serializes") + "\n")?;
    report(&path, "ingest and split report");
    Ok(())
}
