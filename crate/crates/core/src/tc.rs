//! Tropical-cyclone intensity-error post-processing.
//!
//! Each input sequence holds 14 predictors at `t−12`, `t−6` and `t`; the
//! outcome is the official forecast's intensity error at `t+24` in knots.
//! The base model is a Gaussian error law constant in the predictors, and
//! the fitted PIT maps reshape it per sequence.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Gaussian;
use crate::nn::TemporalMixer;
use crate::nonparametric::fit_nonparametric;
use crate::parametric::{fit_parametric, TrainConfig};
use crate::pit::{compute_pit, CalibrationSet, ConstantFamily, IdentityMap, PitMap};
use crate::recalibrate::RecalibratedDistribution;
use crate::scoring::{crps, distribution_mean, ScoreConfig, ScoreRow, ScoreTable};
use crate::{rng, Error, Result};

/// Predictor columns in input order.
pub const PREDICTORS: [&str; 14] = [
    "max_surface_wind_kt",
    "shear_850_200_kt10",
    "shear_850_200_200_800km_kt10",
    "shear_vortex_removed_kt10",
    "rh_850_700_pct",
    "rh_700_500_pct",
    "rh_500_300_pct",
    "max_potential_intensity_kt",
    "zonal_wind_200hpa_kt10",
    "intensity_change_kt",
    "distance_to_land_km",
    "latitude_deg10",
    "longitude_deg10",
    "tc_intensity_kt",
];
pub const N_PREDICTORS: usize = PREDICTORS.len();
/// Timestep labels, oldest first.
pub const TIMESTEPS: [&str; 3] = ["t-12", "t-6", "t"];
pub const N_STEPS: usize = TIMESTEPS.len();
/// Value marking a null entry.
pub const SENTINEL: f64 = 9999.0;

/// Column names of the input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcSchema {
    pub storm_id: String,
    pub date: String,
    pub hour: String,
    pub timestep: String,
    pub predictors: Vec<String>,
    pub intensity: String,
    pub target_error: String,
    pub year: String,
    /// Optional realized 24-hour intensity change used for RI/RW tags.
    pub intensity_change_24h: String,
}

impl Default for TcSchema {
    fn default() -> Self {
        Self {
            storm_id: "storm_id".into(),
            date: "date".into(),
            hour: "hour".into(),
            timestep: "timestep".into(),
            predictors: PREDICTORS.iter().map(|s| s.to_string()).collect(),
            intensity: "intensity_kt".into(),
            target_error: "target_error_kt".into(),
            year: "year".into(),
            intensity_change_24h: "intensity_change_24h_kt".into(),
        }
    }
}

/// One 12-hour input sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormSequence {
    pub storm_id: String,
    pub date: String,
    pub hour: u32,
    pub year: i32,
    /// `3 × 14` predictors, timestep-major, oldest timestep first.
    pub predictors: Vec<f64>,
    /// Intensity at `t−12`, `t−6`, `t`.
    pub intensity: [f64; 3],
    pub target_error: f64,
    pub intensity_change_24h: Option<f64>,
}

impl StormSequence {
    pub fn predictor(&self, step: usize, k: usize) -> f64 {
        self.predictors[step * N_PREDICTORS + k]
    }

    /// Intensity at `t`.
    pub fn current_intensity(&self) -> f64 {
        self.intensity[N_STEPS - 1]
    }
}

/// A row that could not be used, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub sequences: Vec<StormSequence>,
    pub rows_read: usize,
    /// Sequences with some predictor null at every timestep.
    pub dropped_all_null: usize,
    pub dropped_missing_target: usize,
    /// Sequences lacking one of the three timesteps.
    pub dropped_incomplete: usize,
    /// Entries filled from a neighbouring timestep.
    pub imputed_values: usize,
    pub errors: Vec<RowError>,
}

fn is_null(v: Option<f64>) -> bool {
    match v {
        None => true,
        Some(x) => !x.is_finite() || (x - SENTINEL).abs() < 1e-9,
    }
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| format!("not a number: {s:?}"))
}

#[derive(Default)]
struct Pending {
    steps: [Option<StepRow>; 3],
    duplicate: bool,
}

#[derive(Clone)]
struct StepRow {
    values: Vec<Option<f64>>,
    intensity: Option<f64>,
    target: Option<f64>,
    change: Option<f64>,
    year: i32,
}

/// Reads sequences from a CSV file.
pub fn ingest_sequences(path: &Path, schema: &TcSchema) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

/// Reads sequences from CSV text; see [`ingest_sequences`].
///
/// Nulls at `t−6` or `t` are copied from the previous timestep, nulls at
/// `t−12` from the next one.
pub fn ingest_reader<R: Read>(reader: R, schema: &TcSchema) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let mut col = |name: &str| {
        let idx = find(name);
        if idx.is_none() {
            missing.push(name.to_string());
        }
        idx.unwrap_or(0)
    };
    let c_storm = col(&schema.storm_id);
    let c_date = col(&schema.date);
    let c_hour = col(&schema.hour);
    let c_step = col(&schema.timestep);
    let c_pred: Vec<usize> = schema.predictors.iter().map(|p| col(p)).collect();
    let c_int = col(&schema.intensity);
    let c_target = col(&schema.target_error);
    let c_year = col(&schema.year);
    if schema.predictors.len() != N_PREDICTORS {
        missing.push(format!("expected {N_PREDICTORS} predictor columns, schema lists {}", schema.predictors.len()));
    }
    if !missing.is_empty() {
        return Err(Error::Invalid(format!("input header lacks columns: {}", missing.join(", "))));
    }
    let c_change = find(&schema.intensity_change_24h);

    let mut report = IngestReport::default();
    let mut order: Vec<(String, String, u32)> = Vec::new();
    let mut pending: HashMap<(String, String, u32), Pending> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(RowError {
                    line: e.position().map_or(line, |p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        };
        report.rows_read += 1;
        let parsed = (|| -> std::result::Result<((String, String, u32), usize, StepRow), String> {
            let get = |c: usize| rec.get(c).ok_or_else(|| format!("row has {} fields", rec.len()));
            let storm = get(c_storm)?.trim().to_string();
            if storm.is_empty() {
                return Err("empty storm id".into());
            }
            let date = get(c_date)?.trim().to_string();
            let hour: u32 = get(c_hour)?.trim().parse().map_err(|_| "hour is not an integer".to_string())?;
            let step_label = get(c_step)?.trim();
            let step = TIMESTEPS
                .iter()
                .position(|s| *s == step_label)
                .ok_or_else(|| format!("unknown timestep {step_label:?}"))?;
            let year: i32 = get(c_year)?.trim().parse().map_err(|_| "year is not an integer".to_string())?;
            let values = c_pred
                .iter()
                .map(|&c| parse_opt(get(c)?))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let intensity = parse_opt(get(c_int)?)?;
            let target = parse_opt(get(c_target)?)?;
            let change = match c_change {
                Some(c) => parse_opt(get(c)?)?,
                None => None,
            };
            Ok((
                (storm, date, hour),
                step,
                StepRow {
                    values,
                    intensity,
                    target,
                    change,
                    year,
                },
            ))
        })();
        match parsed {
            Ok((key, step, row)) => {
                let entry = pending.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    Pending::default()
                });
                if entry.steps[step].is_some() {
                    entry.duplicate = true;
                    report.errors.push(RowError {
                        line,
                        message: format!("duplicate timestep {}", TIMESTEPS[step]),
                    });
                } else {
                    entry.steps[step] = Some(row);
                }
            }
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }

    for key in order {
        let p = pending.remove(&key).expect("key recorded");
        if p.duplicate || p.steps.iter().any(Option::is_none) {
            report.dropped_incomplete += 1;
            continue;
        }
        let steps: Vec<StepRow> = p.steps.into_iter().map(|s| s.expect("checked")).collect();
        let now = &steps[N_STEPS - 1];
        if is_null(now.target) {
            report.dropped_missing_target += 1;
            continue;
        }
        let mut columns: Vec<[Option<f64>; 3]> = (0..N_PREDICTORS)
            .map(|k| [steps[0].values[k], steps[1].values[k], steps[2].values[k]])
            .collect();
        columns.push([steps[0].intensity, steps[1].intensity, steps[2].intensity]);
        if columns.iter().any(|c| c.iter().all(|v| is_null(*v))) {
            report.dropped_all_null += 1;
            continue;
        }
        let mut filled: Vec<[f64; 3]> = Vec::with_capacity(columns.len());
        for c in &columns {
            let mut out = [0.0; 3];
            for s in 0..N_STEPS {
                out[s] = if !is_null(c[s]) {
                    c[s].expect("not null")
                } else if s > 0 {
                    report.imputed_values += 1;
                    out[s - 1]
                } else {
                    report.imputed_values += 1;
                    let next = (1..N_STEPS).find(|&j| !is_null(c[j])).expect("some entry present");
                    c[next].expect("not null")
                };
            }
            filled.push(out);
        }
        let mut predictors = vec![0.0; N_STEPS * N_PREDICTORS];
        for (k, col) in filled.iter().take(N_PREDICTORS).enumerate() {
            for s in 0..N_STEPS {
                predictors[s * N_PREDICTORS + k] = col[s];
            }
        }
        let (storm_id, date, hour) = key;
        report.sequences.push(StormSequence {
            storm_id,
            date,
            hour,
            year: now.year,
            predictors,
            intensity: filled[N_PREDICTORS],
            target_error: now.target.expect("checked"),
            intensity_change_24h: now.change.filter(|v| !is_null(Some(*v))),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryTag {
    #[serde(rename = "TS")]
    TropicalStorm,
    #[serde(rename = "Cat1-2")]
    Cat12,
    #[serde(rename = "Cat3-5")]
    Cat35,
    #[serde(rename = "RI")]
    RapidIntensification,
    #[serde(rename = "RW")]
    RapidWeakening,
}

impl CategoryTag {
    pub const ALL: [CategoryTag; 5] = [
        CategoryTag::TropicalStorm,
        CategoryTag::Cat12,
        CategoryTag::Cat35,
        CategoryTag::RapidIntensification,
        CategoryTag::RapidWeakening,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CategoryTag::TropicalStorm => "TS",
            CategoryTag::Cat12 => "Cat1-2",
            CategoryTag::Cat35 => "Cat3-5",
            CategoryTag::RapidIntensification => "RI",
            CategoryTag::RapidWeakening => "RW",
        }
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Change in knots over 24 hours that counts as rapid.
pub const RAPID_CHANGE_KT: f64 = 30.0;

/// Intensity class at `t` plus RI/RW from the realized 24-hour change.
pub fn categorize(seq: &StormSequence) -> BTreeSet<CategoryTag> {
    let mut tags = BTreeSet::new();
    let v = seq.current_intensity();
    tags.insert(if v < 64.0 {
        CategoryTag::TropicalStorm
    } else if v <= 95.0 {
        CategoryTag::Cat12
    } else {
        CategoryTag::Cat35
    });
    if let Some(d) = seq.intensity_change_24h {
        if d >= RAPID_CHANGE_KT {
            tags.insert(CategoryTag::RapidIntensification);
        } else if d <= -RAPID_CHANGE_KT {
            tags.insert(CategoryTag::RapidWeakening);
        }
    }
    tags
}

/// Gaussian error law `N(m, σ²)`, constant in the predictors.
pub fn base_error_model(mean: f64, sd: f64) -> Result<ConstantFamily<Gaussian<f64>>> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::param("sd", "must be positive"));
    }
    Ok(ConstantFamily(Gaussian::new(mean, sd)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaEstimator {
    /// Sample standard deviation of the errors.
    #[default]
    StdDev,
    /// `√(π/2)` times the mean absolute error (exact for centred Gaussians).
    MeanAbsError,
}

pub fn estimate_sigma(errors: &[f64], estimator: SigmaEstimator) -> Result<f64> {
    if errors.len() < 2 {
        return Err(Error::DegenerateData("need at least 2 errors to estimate a scale".into()));
    }
    let n = errors.len() as f64;
    let s = match estimator {
        SigmaEstimator::StdDev => {
            let m = errors.iter().sum::<f64>() / n;
            (errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        }
        SigmaEstimator::MeanAbsError => errors.iter().map(|e| e.abs()).sum::<f64>() / n * (std::f64::consts::PI / 2.0).sqrt(),
    };
    if !(s > 0.0) {
        return Err(Error::DegenerateData("errors have zero spread".into()));
    }
    Ok(s)
}

/// Per-predictor standardization pooled over the three timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl PredictorScaler {
    pub fn fit(seqs: &[&StormSequence]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::DegenerateData("no sequences to standardize".into()));
        }
        let count = (seqs.len() * N_STEPS) as f64;
        let mut mean = vec![0.0; N_PREDICTORS];
        for s in seqs {
            for (i, v) in s.predictors.iter().enumerate() {
                mean[i % N_PREDICTORS] += v / count;
            }
        }
        let mut var = vec![0.0; N_PREDICTORS];
        for s in seqs {
            for (i, v) in s.predictors.iter().enumerate() {
                var[i % N_PREDICTORS] += (v - mean[i % N_PREDICTORS]).powi(2) / count;
            }
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    /// Flattened, standardized `3 × 14` feature vector.
    pub fn features(&self, seq: &StormSequence) -> Vec<f64> {
        seq.predictors
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % N_PREDICTORS]) / self.scale[i % N_PREDICTORS])
            .collect()
    }
}

/// The temporal mixing stage used for sequence inputs.
pub fn sequence_mixer() -> TemporalMixer {
    TemporalMixer {
        steps: N_STEPS,
        channels: N_PREDICTORS,
        filters: 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMethod {
    Parametric,
    Nonparametric,
}

impl MapMethod {
    pub fn label(self) -> &'static str {
        match self {
            MapMethod::Parametric => "parametric",
            MapMethod::Nonparametric => "nonparametric",
        }
    }
}

/// Inclusive year range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Era {
    pub first: i32,
    pub last: i32,
}

impl Era {
    pub fn new(first: i32, last: i32) -> Self {
        Self { first, last }
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.first && year <= self.last
    }

    pub fn overlaps(&self, other: &Era) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcEvalConfig {
    pub calibration: Era,
    pub test: Era,
    pub base_mean: f64,
    /// Fixed base scale; estimated on the calibration era when absent.
    pub base_sd: Option<f64>,
    pub sigma_estimator: SigmaEstimator,
    pub methods: Vec<MapMethod>,
    pub parametric: TrainConfig,
    pub nonparametric: TrainConfig,
    pub seed: u64,
}

impl Default for TcEvalConfig {
    fn default() -> Self {
        Self {
            calibration: Era::new(2000, 2015),
            test: Era::new(2016, 2022),
            base_mean: 0.0,
            base_sd: None,
            sigma_estimator: SigmaEstimator::StdDev,
            methods: vec![MapMethod::Nonparametric, MapMethod::Parametric],
            parametric: TrainConfig {
                weight_decay: TC_PARAMETRIC_PRIOR_PRECISION,
                validation_fraction: TC_VALIDATION_FRACTION,
                ..TrainConfig::parametric()
            },
            nonparametric: TrainConfig {
                validation_fraction: TC_VALIDATION_FRACTION,
                ..TrainConfig::nonparametric()
            },
            seed: 0,
        }
    }
}

/// Prior precision of the parametric map on 42-dimensional sequence inputs,
/// where the error signal is weak relative to the noise.
pub const TC_PARAMETRIC_PRIOR_PRECISION: f64 = 30.0;
/// Holdout share for early stopping of both maps on sequence inputs.
pub const TC_VALIDATION_FRACTION: f64 = 0.2;

impl TcEvalConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, e) in [("calibration", &self.calibration), ("test", &self.test)] {
            if e.first > e.last {
                out.push(format!("{name}: first year after last year"));
            }
        }
        if self.calibration.overlaps(&self.test) {
            out.push("calibration/test: eras must be disjoint".to_string());
        }
        if let Some(s) = self.base_sd {
            if !(s > 0.0 && s.is_finite()) {
                out.push("base_sd: must be positive".to_string());
            }
        }
        if !self.base_mean.is_finite() {
            out.push("base_mean: must be finite".to_string());
        }
        for (name, cfg) in [("parametric", &self.parametric), ("nonparametric", &self.nonparametric)] {
            if let Err(e) = cfg.validate() {
                out.push(format!("{name}: {e}"));
            }
        }
        out
    }
}

/// Row categories of the evaluation table, in order.
pub const TABLE_CATEGORIES: [&str; 6] = ["Overall", "TS", "Cat1-2", "Cat3-5", "RI", "RW"];
pub const BASE_METHOD: &str = "base";
pub const CRPS_METRIC: &str = "crps_x100";
pub const RMSE_METRIC: &str = "rmse";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcEvaluation {
    pub table: ScoreTable,
    pub base_sd: f64,
    pub calibration_sequences: usize,
    pub test_sequences: usize,
    pub calibration_storms: BTreeSet<String>,
    pub test_storms: BTreeSet<String>,
    /// Test sequences per category label.
    pub category_counts: Vec<(String, usize)>,
}

/// Storm id → era year (year of the storm's earliest sequence).
fn storm_years(data: &[StormSequence]) -> HashMap<&str, i32> {
    let mut out: HashMap<&str, i32> = HashMap::new();
    for s in data {
        out.entry(&s.storm_id)
            .and_modify(|y| *y = (*y).min(s.year))
            .or_insert(s.year);
    }
    out
}

/// Splits sequences into calibration and test sets by storm era.
pub fn split_eras<'a>(
    data: &'a [StormSequence],
    calibration: Era,
    test: Era,
) -> (Vec<&'a StormSequence>, Vec<&'a StormSequence>) {
    let years = storm_years(data);
    let mut cal = Vec::new();
    let mut tst = Vec::new();
    for s in data {
        let y = years[s.storm_id.as_str()];
        if calibration.contains(y) {
            cal.push(s);
        } else if test.contains(y) {
            tst.push(s);
        }
    }
    (cal, tst)
}

/// Per-sequence CRPS and mean of a recalibrated base.
fn score_sequences(
    model: &(dyn PitMap<f64> + Sync),
    base: Gaussian<f64>,
    features: &[Vec<f64>],
    outcomes: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let cfg = ScoreConfig::default();
    features
        .par_iter()
        .zip(outcomes.par_iter())
        .map(|(x, &y)| {
            let rd = RecalibratedDistribution::new(base, model, x)?;
            Ok((crps(&rd, y, &cfg)?, distribution_mean(&rd)?))
        })
        .collect()
}

/// Fits the requested maps on the calibration era and scores the test era
/// per category.
///
/// Every method, including the base, is scored through the same
/// recalibration path, so an identity map reproduces the base row exactly.
pub fn evaluate_table(data: &[StormSequence], config: &TcEvalConfig) -> Result<TcEvaluation> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(Error::Invalid(v.join("; ")));
    }
    let (cal, tst) = split_eras(data, config.calibration, config.test);
    if cal.len() < 2 {
        return Err(Error::DegenerateData("calibration era has fewer than 2 sequences".into()));
    }
    if tst.is_empty() {
        return Err(Error::DegenerateData("test era has no sequences".into()));
    }
    let cal_errors: Vec<f64> = cal.iter().map(|s| s.target_error).collect();
    let sd = match config.base_sd {
        Some(s) => s,
        None => estimate_sigma(&cal_errors, config.sigma_estimator)?,
    };
    let family = base_error_model(config.base_mean, sd)?;
    let scaler = PredictorScaler::fit(&cal)?;
    let cal_x: Vec<Vec<f64>> = cal.iter().map(|s| scaler.features(s)).collect();
    let calib = CalibrationSet::new(cal_x, cal_errors)?;
    let pit = compute_pit(&family, &calib)?;

    let test_x: Vec<Vec<f64>> = tst.iter().map(|s| scaler.features(s)).collect();
    let test_y: Vec<f64> = tst.iter().map(|s| s.target_error).collect();
    let mut scored: Vec<(String, Vec<(f64, f64)>)> = vec![(
        BASE_METHOD.to_string(),
        score_sequences(&IdentityMap, family.0, &test_x, &test_y)?,
    )];
    for &method in &config.methods {
        let model: Box<dyn PitMap<f64> + Sync> = match method {
            MapMethod::Parametric => {
                let cfg = TrainConfig {
                    temporal: Some(sequence_mixer()),
                    seed: rng::derive_seed(config.seed, "tc/parametric", &[]),
                    ..config.parametric.clone()
                };
                Box::new(fit_parametric(&calib, &pit, &cfg)?)
            }
            MapMethod::Nonparametric => {
                let cfg = TrainConfig {
                    temporal: Some(sequence_mixer()),
                    seed: rng::derive_seed(config.seed, "tc/nonparametric", &[]),
                    ..config.nonparametric.clone()
                };
                Box::new(fit_nonparametric(&calib, &pit, &cfg)?)
            }
        };
        scored.push((
            method.label().to_string(),
            score_sequences(model.as_ref(), family.0, &test_x, &test_y)?,
        ));
    }

    let tags: Vec<BTreeSet<CategoryTag>> = tst.iter().map(|s| categorize(s)).collect();
    let member = |cat: &str, i: usize| cat == "Overall" || tags[i].iter().any(|t| t.label() == cat);
    let mut rows = Vec::new();
    let mut category_counts = Vec::new();
    for cat in TABLE_CATEGORIES {
        let idx: Vec<usize> = (0..tst.len()).filter(|&i| member(cat, i)).collect();
        category_counts.push((cat.to_string(), idx.len()));
        for (method, scores) in &scored {
            let (crps_v, rmse_v) = if idx.is_empty() {
                (None, None)
            } else {
                let n = idx.len() as f64;
                let c = idx.iter().map(|&i| scores[i].0).sum::<f64>() / n;
                let r = (idx.iter().map(|&i| (scores[i].1 - test_y[i]).powi(2)).sum::<f64>() / n).sqrt();
                (Some(100.0 * c), Some(r))
            };
            for (metric, value) in [(CRPS_METRIC, crps_v), (RMSE_METRIC, rmse_v)] {
                rows.push(ScoreRow {
                    category: cat.to_string(),
                    method: method.clone(),
                    metric: metric.to_string(),
                    value,
                    pct_change_vs_base: None,
                });
            }
        }
    }
    let mut table = ScoreTable { rows };
    table.fill_percent_change(BASE_METHOD);
    Ok(TcEvaluation {
        table,
        base_sd: sd,
        calibration_sequences: cal.len(),
        test_sequences: tst.len(),
        calibration_storms: cal.iter().map(|s| s.storm_id.clone()).collect(),
        test_storms: tst.iter().map(|s| s.storm_id.clone()).collect(),
        category_counts,
    })
}

/// Settings of the synthetic sequence generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcFixtureConfig {
    pub storms: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// Mean of the realized errors relative to a zero-mean base.
    pub bias_kt: f64,
    /// Error scale at the centre of the predictor range.
    pub error_sd_kt: f64,
    /// Relative growth of the error scale with the standardized shear.
    pub dispersion: f64,
    /// Probability that a single predictor value is reported as null.
    pub null_rate: f64,
    pub seed: u64,
}

impl Default for TcFixtureConfig {
    fn default() -> Self {
        Self {
            storms: 120,
            first_year: 2000,
            last_year: 2022,
            bias_kt: 5.0,
            error_sd_kt: 10.0,
            dispersion: 0.5,
            null_rate: 0.01,
            seed: 0,
        }
    }
}

/// One input CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TcRow {
    pub storm_id: String,
    pub date: String,
    pub hour: u32,
    pub timestep: &'static str,
    pub predictors: [f64; N_PREDICTORS],
    pub intensity: f64,
    pub target_error: f64,
    pub year: i32,
    pub intensity_change_24h: f64,
}

const MONTH_DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

fn calendar_date(year: i32, day_of_year: u32) -> String {
    let mut d = day_of_year;
    for (m, len) in MONTH_DAYS.iter().enumerate() {
        if d < *len {
            return format!("{year:04}-{:02}-{:02}", m + 1, d + 1);
        }
        d -= len;
    }
    format!("{year:04}-12-31")
}

/// Smooth random path: AR(1) with strong persistence around `mean`.
fn smooth_path(r: &mut ChaCha8Rng, len: usize, mean: f64, sd: f64) -> Vec<f64> {
    let phi: f64 = 0.9;
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut v = mean + sd * (r.gen::<f64>() * 2.0 - 1.0);
    (0..len)
        .map(|_| {
            v = mean + phi * (v - mean) + innov * (r.gen::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
            v
        })
        .collect()
}

/// Generates rows for storms with smooth predictor paths and errors whose
/// mean and spread depend on the environment.
pub fn generate_fixture(cfg: &TcFixtureConfig) -> Result<Vec<TcRow>> {
    if cfg.storms == 0 {
        return Err(Error::param("storms", "must be positive"));
    }
    if cfg.first_year > cfg.last_year {
        return Err(Error::param("first_year", "must not exceed last_year"));
    }
    if !(cfg.error_sd_kt > 0.0) || !(0.0..1.0).contains(&cfg.null_rate) || cfg.dispersion < 0.0 {
        return Err(Error::param("fixture", "need error_sd_kt > 0, dispersion ≥ 0, null_rate in [0, 1)"));
    }
    let mut rows = Vec::new();
    let span = (cfg.last_year - cfg.first_year + 1) as usize;
    for k in 0..cfg.storms {
        let mut r = rng::stream(cfg.seed, "tc/fixture", &[k as u64]);
        let year = cfg.first_year + (k % span) as i32;
        let storm_id = format!("AL{:02}{year}", k / span + 1);
        let len: usize = r.gen_range(10..30);
        let start_day: u32 = r.gen_range(150..290);
        // Intensity: a rise to a storm-specific peak and a decay, plus noise.
        let peak: f64 = r.gen_range(45.0..140.0);
        let t_peak = r.gen_range(0.3..0.7) * len as f64;
        let width = r.gen_range(0.2..0.4) * len as f64;
        let wobble = smooth_path(&mut r, len, 0.0, 4.0);
        let intensity: Vec<f64> = (0..len)
            .map(|i| {
                let d = (i as f64 - t_peak) / width;
                (30.0 + (peak - 30.0) * (-0.5 * d * d).exp() + wobble[i]).round().max(25.0)
            })
            .collect();
        let shear = smooth_path(&mut r, len, 150.0, 60.0);
        let shear_ring = smooth_path(&mut r, len, 140.0, 55.0);
        let shear_vortex = smooth_path(&mut r, len, 120.0, 50.0);
        let rh_low = smooth_path(&mut r, len, 70.0, 8.0);
        let rh_mid = smooth_path(&mut r, len, 55.0, 10.0);
        let rh_high = smooth_path(&mut r, len, 45.0, 10.0);
        let mpi = smooth_path(&mut r, len, 130.0, 20.0);
        let zonal = smooth_path(&mut r, len, 50.0, 80.0);
        let land = smooth_path(&mut r, len, 800.0, 400.0);
        let lat0: f64 = r.gen_range(120.0..250.0);
        let lon0: f64 = r.gen_range(450.0..800.0);
        // Physical-time values, then nulls, then emission per sequence.
        let mut series: Vec<[f64; N_PREDICTORS]> = (0..len)
            .map(|i| {
                let change = if i >= 2 { intensity[i] - intensity[i - 2] } else { 0.0 };
                [
                    intensity[i],
                    shear[i],
                    shear_ring[i],
                    shear_vortex[i],
                    rh_low[i],
                    rh_mid[i],
                    rh_high[i],
                    mpi[i],
                    zonal[i],
                    change,
                    land[i].max(0.0),
                    lat0 + 4.0 * i as f64,
                    lon0 - 3.0 * i as f64,
                    intensity[i],
                ]
            })
            .collect();
        for row in series.iter_mut() {
            for v in row.iter_mut().take(N_PREDICTORS - 1) {
                if r.gen::<f64>() < cfg.null_rate {
                    *v = SENTINEL;
                }
            }
        }
        for t in 2..len.saturating_sub(4) {
            let z_shear = (shear[t] - 150.0) / 60.0;
            let z_rh = (rh_mid[t] - 55.0) / 10.0;
            let change = intensity[t + 4] - intensity[t];
            let mean = cfg.bias_kt + 3.0 * z_shear - 2.0 * z_rh;
            let sd = cfg.error_sd_kt * (1.0 + cfg.dispersion * z_shear.abs()).max(0.2);
            let u: f64 = r.gen::<f64>().max(1e-12);
            let noise = crate::special::std_normal_quantile(u);
            let target = (mean + sd * noise).round();
            let minutes = (t as u32) * 6;
            let day = start_day + minutes / 24;
            let date = calendar_date(year, day.min(364));
            let hour = minutes % 24;
            for (s, label) in TIMESTEPS.iter().enumerate() {
                let i = t + s - 2;
                rows.push(TcRow {
                    storm_id: storm_id.clone(),
                    date: date.clone(),
                    hour,
                    timestep: label,
                    predictors: series[i],
                    intensity: intensity[i],
                    target_error: target,
                    year,
                    intensity_change_24h: change,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes rows in the default input schema.
pub fn write_fixture_csv<W: Write>(rows: &[TcRow], w: W) -> Result<()> {
    let schema = TcSchema::default();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![schema.storm_id, schema.date, schema.hour, schema.timestep];
    header.extend(schema.predictors);
    header.extend([schema.intensity, schema.target_error, schema.year, schema.intensity_change_24h]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.storm_id.clone(), r.date.clone(), r.hour.to_string(), r.timestep.to_string()];
        rec.extend(r.predictors.iter().map(|v| v.to_string()));
        rec.extend([
            r.intensity.to_string(),
            r.target_error.to_string(),
            r.year.to_string(),
            r.intensity_change_24h.to_string(),
        ]);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
