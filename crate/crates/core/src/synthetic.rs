//! Sinh-arcsinh benchmark: data generation, the analytic PIT-CDF oracle,
//! the convergence experiment and the two-component LDS map.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Gaussian, ScalarDistribution, SinhArcsinh};
use crate::nonparametric::fit_nonparametric;
use crate::parametric::{fit_parametric, TrainConfig};
use crate::pit::{
    check_alpha, check_dim, compute_pit, diagnostic_curve, lds, CalibrationSet, ConditionalFamily,
    ConstantFamily, LocalPitMap, PitMap,
};
use crate::scoring::{ise_pit, DEFAULT_ISE_GRID};
use crate::special::{std_normal_pdf, std_normal_quantile};
use crate::{rng, Error, Real, Result};

/// Covariate dimension of the benchmark.
pub const SAS_DIM: usize = 4;
/// Half-width of the location and skew ranges.
pub const LOCATION_RANGE: f64 = 2.0;
/// Upper end of the scale and tail-weight ranges.
pub const SCALE_RANGE: f64 = 2.0;

/// Benchmark design: `x` uniform on `[−2,2]×(0,2]×[−2,2]×(0,2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SasDesign {
    pub n: usize,
    pub seed: u64,
}

impl SasDesign {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        Ok(Self { n, seed })
    }
}

/// Whether `x` lies in the design box.
pub fn in_design_box<T: Real>(x: &[T]) -> bool {
    let l = T::of(LOCATION_RANGE);
    let s = T::of(SCALE_RANGE);
    x.len() == SAS_DIM
        && x[0] >= -l
        && x[0] <= l
        && x[1] > T::zero()
        && x[1] <= s
        && x[2] >= -l
        && x[2] <= l
        && x[3] > T::zero()
        && x[3] <= s
}

/// `F(·|x)`: the sinh-arcsinh law with `(μ, σ, ε, δ) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SasFamily;

impl<T: Real> ConditionalFamily<T> for SasFamily {
    type Dist = SinhArcsinh<T>;

    fn at(&self, x: &[T]) -> Result<SinhArcsinh<T>> {
        check_dim(Some(SAS_DIM), x)?;
        SinhArcsinh::new(x[0], x[1], x[2], x[3])
    }
}

/// The standard normal base model, constant in `x`.
pub fn standard_normal_base<T: Real>() -> ConstantFamily<Gaussian<T>> {
    ConstantFamily(Gaussian::standard())
}

fn draw_x<T: Real, R: Rng>(r: &mut R) -> Vec<T> {
    // 2·(1 − U) with U ∈ [0,1) lands in (0, 2].
    let l = LOCATION_RANGE;
    vec![
        T::of(r.gen_range(-l..=l)),
        T::of(SCALE_RANGE * (1.0 - r.gen::<f64>())),
        T::of(r.gen_range(-l..=l)),
        T::of(SCALE_RANGE * (1.0 - r.gen::<f64>())),
    ]
}

/// Draws `n` covariates uniformly from the design box.
pub fn sample_design_points<T: Real>(n: usize, seed: u64, label: &str) -> Vec<Vec<T>> {
    let mut r = rng::stream(seed, label, &[]);
    (0..n).map(|_| draw_x(&mut r)).collect()
}

/// Draws `(x, y)` pairs with `y` sampled by inversion from `F(·|x)`.
pub fn gen_sas_dataset<T: Real>(design: &SasDesign) -> Result<CalibrationSet<T>> {
    if design.n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut r = rng::stream(design.seed, "sas/data", &[]);
    let mut rows = Vec::with_capacity(design.n);
    let mut ys = Vec::with_capacity(design.n);
    while rows.len() < design.n {
        let x: Vec<f64> = draw_x(&mut r);
        let u: f64 = r.gen();
        if u == 0.0 {
            continue;
        }
        // Tail weights near 0 can push the quantile past the largest float;
        // such pairs are redrawn.
        let y = SasFamily.at(&x)?.quantile(u)?;
        if !T::of(y).is_finite() {
            continue;
        }
        ys.push(T::of(y));
        rows.push(x.into_iter().map(T::of).collect());
    }
    CalibrationSet::new(rows, ys)
}

/// True PIT-CDF under the standard normal base: `G(α|x) = F(Φ⁻¹(α)|x)`.
pub fn true_pit_cdf<T: Real>(alpha: T, x: &[T]) -> Result<T> {
    check_alpha(alpha)?;
    Ok(TrueLocal(SasFamily.at(x)?).g(alpha))
}

struct TrueLocal<T: Real>(SinhArcsinh<T>);

impl<T: Real> LocalPitMap<T> for TrueLocal<T> {
    fn g(&self, alpha: T) -> T {
        if alpha <= T::zero() {
            return T::zero();
        }
        if alpha >= T::one() {
            return T::one();
        }
        self.0.cdf(std_normal_quantile(alpha))
    }

    fn density(&self, alpha: T) -> Option<T> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Some(T::zero());
        }
        let q = std_normal_quantile(alpha);
        Some(self.0.pdf(q) / std_normal_pdf(q))
    }
}

/// The oracle map `G(·|x)` as a [`PitMap`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TruePitMap;

impl<T: Real> PitMap<T> for TruePitMap {
    fn input_dim(&self) -> Option<usize> {
        Some(SAS_DIM)
    }

    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        Ok(Box::new(TrueLocal(SasFamily.at(x)?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Parametric,
    Nonparametric,
    True,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Parametric => "parametric",
            Method::Nonparametric => "nonparametric",
            Method::True => "true",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Two reference covariates: a left-skewed heavy-tailed law centred at the
/// base mean, and a shifted, overdispersed law with Gaussian tails.
pub fn designated_test_points() -> Vec<Vec<f64>> {
    vec![vec![0.0, 1.0, -1.0, 0.5], vec![-1.0, 1.5, 0.0, 1.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceSpec {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub test_points: Vec<Vec<f64>>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub parametric: TrainConfig,
    pub nonparametric: TrainConfig,
    pub ise_grid: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            n_grid: vec![5, 10, 25, 50, 100, 200],
            replicates: 10,
            test_points: designated_test_points(),
            methods: vec![Method::Parametric, Method::Nonparametric, Method::True],
            seed: 0,
            parametric: TrainConfig::parametric(),
            nonparametric: TrainConfig::nonparametric(),
            ise_grid: DEFAULT_ISE_GRID,
        }
    }
}

impl ConvergenceSpec {
    /// Collects every violated field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.replicates < 2 {
            out.push("replicates: must be at least 2".to_string());
        }
        if self.n_grid.is_empty() {
            out.push("n_grid: must not be empty".to_string());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            out.push("n_grid: must be strictly increasing".to_string());
        }
        if self.n_grid.first().is_some_and(|&n| n < 2) {
            out.push("n_grid: sizes must be at least 2".to_string());
        }
        if self.test_points.is_empty() {
            out.push("test_points: must not be empty".to_string());
        }
        for (i, x) in self.test_points.iter().enumerate() {
            if !in_design_box(x) {
                out.push(format!("test_points[{i}]: must lie in the design box"));
            }
        }
        if self.methods.is_empty() {
            out.push("methods: must not be empty".to_string());
        }
        if self.ise_grid == 0 {
            out.push("ise_grid: must be positive".to_string());
        }
        for (name, cfg) in [("parametric", &self.parametric), ("nonparametric", &self.nonparametric)] {
            if let Err(e) = cfg.validate() {
                out.push(format!("{name}: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v.join("; ")))
        }
    }
}

/// ISE of one fitted map at one test point; failed fits carry the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseRecord {
    pub method: Method,
    pub n: usize,
    pub replicate: usize,
    pub test_point: usize,
    pub ise: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseSummary {
    pub method: Method,
    pub n: usize,
    pub test_point: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<IseRecord>,
    pub summary: Vec<IseSummary>,
}

impl ExperimentResult {
    pub fn mean(&self, method: Method, n: usize, test_point: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.n == n && s.test_point == test_point)
            .and_then(|s| s.mean)
    }

    /// Per-record CSV: method, N, replicate, test_point, ise.
    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "N", "replicate", "test_point", "ise"])?;
        for r in &self.records {
            out.write_record([
                r.method.label().to_string(),
                r.n.to_string(),
                r.replicate.to_string(),
                r.test_point.to_string(),
                r.ise.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Summary CSV: method, N, test_point, mean, sd.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "N", "test_point", "mean", "sd"])?;
        for s in &self.summary {
            out.write_record([
                s.method.label().to_string(),
                s.n.to_string(),
                s.test_point.to_string(),
                s.mean.map(|v| v.to_string()).unwrap_or_default(),
                s.sd.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn method_index(m: Method) -> u64 {
    match m {
        Method::Parametric => 0,
        Method::Nonparametric => 1,
        Method::True => 2,
    }
}

/// Fits a map by `method` on a PIT sample from the standard normal base.
fn fit_cell<T: Real>(
    method: Method,
    calib: &CalibrationSet<T>,
    config: &TrainConfig,
) -> Result<Box<dyn PitMap<T>>> {
    let pit = compute_pit(&standard_normal_base::<T>(), calib)?;
    Ok(match method {
        Method::Parametric => Box::new(fit_parametric(calib, &pit, config)?),
        Method::Nonparametric => Box::new(fit_nonparametric(calib, &pit, config)?),
        Method::True => Box::new(TruePitMap),
    })
}

/// Runs every `(method, N, replicate)` cell in parallel.
///
/// The calibration set of a cell depends on `(seed, N, replicate)` only, so
/// all methods see the same data; the training seed also depends on the method.
pub fn convergence_experiment(spec: &ConvergenceSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &n in &spec.n_grid {
            for rep in 0..spec.replicates {
                cells.push((method, n, rep));
            }
        }
    }
    let base = Gaussian::<f64>::standard();
    let mut records: Vec<IseRecord> = cells
        .par_iter()
        .flat_map_iter(|&(method, n, rep)| {
            let data_seed = rng::derive_seed(spec.seed, "convergence/data", &[n as u64, rep as u64]);
            let train_seed = rng::derive_seed(
                spec.seed,
                "convergence/train",
                &[method_index(method), n as u64, rep as u64],
            );
            let mut config = match method {
                Method::Nonparametric => spec.nonparametric.clone(),
                _ => spec.parametric.clone(),
            };
            config.seed = train_seed;
            let fitted = SasDesign::new(n, data_seed)
                .and_then(|d| gen_sas_dataset::<f64>(&d))
                .and_then(|c| fit_cell(method, &c, &config));
            let outcome: Vec<(usize, Result<f64>)> = spec
                .test_points
                .iter()
                .enumerate()
                .map(|(tp, x)| {
                    let ise = match &fitted {
                        Ok(model) => (|| {
                            let hat = model.localize(x)?;
                            let truth = TruePitMap.localize(x)?;
                            Ok(ise_pit(hat.as_ref(), truth.as_ref(), &base, spec.ise_grid)?.ise)
                        })(),
                        Err(e) => Err(Error::Invalid(e.to_string())),
                    };
                    (tp, ise)
                })
                .collect();
            outcome.into_iter().map(move |(tp, r)| IseRecord {
                method,
                n,
                replicate: rep,
                test_point: tp,
                error: r.as_ref().err().map(|e| e.to_string()),
                ise: r.ok(),
            })
        })
        .collect();
    records.sort_by_key(|r| (r.method, r.n, r.replicate, r.test_point));

    let mut summary = Vec::new();
    for &method in &spec.methods {
        for &n in &spec.n_grid {
            for tp in 0..spec.test_points.len() {
                let cell: Vec<&IseRecord> = records
                    .iter()
                    .filter(|r| r.method == method && r.n == n && r.test_point == tp)
                    .collect();
                let vals: Vec<f64> = cell.iter().filter_map(|r| r.ise).collect();
                let failures = cell.len() - vals.len();
                let (mean, sd) = mean_sd(&vals);
                summary.push(IseSummary {
                    method,
                    n,
                    test_point: tp,
                    mean,
                    sd,
                    failures,
                });
            }
        }
    }
    Ok(ExperimentResult { records, summary })
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(mean), sd)
}

/// Projection of the covariates onto their leading principal directions,
/// paired with the local discrepancy score at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaLdsMap {
    /// Unit principal directions, leading first.
    pub directions: Vec<Vec<f64>>,
    /// Variance along each direction.
    pub variances: Vec<f64>,
    /// One row per point: projected coordinates, then LDS.
    pub coords: Vec<Vec<f64>>,
    pub lds: Vec<f64>,
    /// Set when fewer than two nondegenerate components exist.
    pub rank_deficient: bool,
}

impl PcaLdsMap {
    /// CSV with columns pc1, pc2, lds; a missing component is left empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pc1", "pc2", "lds"])?;
        for (c, l) in self.coords.iter().zip(&self.lds) {
            let cell = |i: usize| c.get(i).map(|v| v.to_string()).unwrap_or_default();
            out.write_record([cell(0), cell(1), l.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mat_vec(c: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| (0..d).map(|j| c[i * d + j] * v[j]).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Leading eigenvector of a symmetric PSD matrix orthogonal to `previous`.
fn power_iteration(c: &[f64], d: usize, previous: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let project_out = |v: &mut Vec<f64>| {
        for p in previous {
            let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
        }
    };
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    project_out(&mut v);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let mut w = mat_vec(c, d, &v);
        project_out(&mut w);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (v, 0.0);
        }
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        lambda = norm;
        if delta < 1e-13 {
            break;
        }
    }
    (v, lambda)
}

/// Projects `data` onto its two leading principal directions and attaches
/// the LDS of `model` at each point.
pub fn pca2_lds_map<M: PitMap<f64> + ?Sized>(
    data: &CalibrationSet<f64>,
    model: &M,
    grid_size: usize,
) -> Result<PcaLdsMap> {
    let n = data.len();
    if n < 3 {
        return Err(Error::DegenerateData("at least 3 points are required".into()));
    }
    let d = data.dim();
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    let centered: Vec<Vec<f64>> = data
        .rows()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / (n - 1) as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    let mut variances = Vec::new();
    for _ in 0..d.min(2) {
        let (v, lambda) = power_iteration(&cov, d, &directions);
        if !(lambda > 1e-12 * trace.max(f64::MIN_POSITIVE)) {
            break;
        }
        directions.push(v);
        variances.push(lambda);
    }
    if variances.len() == 2 && variances[1] > variances[0] {
        directions.swap(0, 1);
        variances.swap(0, 1);
    }
    let coords: Vec<Vec<f64>> = centered
        .iter()
        .map(|r| {
            directions
                .iter()
                .map(|v| r.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let lds_values: Vec<f64> = data
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| diagnostic_curve(model, x, grid_size).and_then(|c| lds(&c)))
        .collect::<Result<_>>()?;
    Ok(PcaLdsMap {
        rank_deficient: directions.len() < 2,
        directions,
        variances,
        coords,
        lds: lds_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pit::IdentityMap;
    use crate::special::std_normal_cdf;

    #[test]
    fn dataset_inside_box_and_reproducible() {
        let d = SasDesign::new(500, 3).unwrap();
        let a = gen_sas_dataset::<f64>(&d).unwrap();
        let b = gen_sas_dataset::<f64>(&d).unwrap();
        assert_eq!(a, b);
        assert!(a.rows().all(in_design_box));
        assert!(a.responses().iter().all(|y| y.is_finite()));
        assert!(SasDesign::new(0, 1).is_err());
    }

    #[test]
    fn oracle_is_identity_for_standard_normal() {
        let x = [0.0, 1.0, 0.0, 1.0];
        for i in 0..=20 {
            let a = i as f64 / 20.0;
            assert!((true_pit_cdf(a, &x).unwrap() - a).abs() < 1e-12);
        }
        let x = [0.7_f64, 0.4, -1.2, 1.7];
        let f = SasFamily.at(&x).unwrap();
        assert!((true_pit_cdf(0.5, &x).unwrap() - f.cdf(0.0)).abs() < 1e-15);
        assert!(true_pit_cdf(1.5, &x).is_err());
    }

    #[test]
    fn oracle_density_matches_finite_difference() {
        let x = [0.3_f64, 0.8, 1.1, 0.7];
        let local = TruePitMap.localize(&x).unwrap();
        for a in [0.1_f64, 0.4, 0.8] {
            let h = 1e-6;
            let fd = (local.g(a + h) - local.g(a - h)) / (2.0 * h);
            assert!((local.density(a).unwrap() - fd).abs() < 1e-5 * fd.max(1.0));
        }
        assert!((std_normal_cdf(0.0_f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spec_validation_collects_all_errors() {
        let spec = ConvergenceSpec {
            replicates: 1,
            n_grid: vec![10, 5],
            test_points: vec![vec![9.0, 1.0, 0.0, 1.0]],
            ..ConvergenceSpec::default()
        };
        assert_eq!(spec.violations().len(), 3);
        assert!(ConvergenceSpec::default().validate().is_ok());
    }

    #[test]
    fn true_method_has_zero_ise() {
        let spec = ConvergenceSpec {
            n_grid: vec![5, 10],
            replicates: 2,
            methods: vec![Method::True],
            ..ConvergenceSpec::default()
        };
        let r = convergence_experiment(&spec).unwrap();
        assert_eq!(r.records.len(), 8);
        assert!(r.records.iter().all(|rec| rec.ise == Some(0.0)));
        assert!(r.summary.iter().all(|s| s.mean == Some(0.0) && s.sd == Some(0.0)));
    }

    #[test]
    fn pca_map_properties() {
        let data = gen_sas_dataset::<f64>(&SasDesign::new(200, 11).unwrap()).unwrap();
        let map = pca2_lds_map(&data, &IdentityMap, 21).unwrap();
        assert!(!map.rank_deficient);
        for k in 0..2 {
            let m: f64 = map.coords.iter().map(|c| c[k]).sum::<f64>() / 200.0;
            assert!(m.abs() < 1e-10);
        }
        let dot: f64 = map.directions[0].iter().zip(&map.directions[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-8);
        for v in &map.directions {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-8);
        }
        assert!(map.variances[0] >= map.variances[1]);
        assert!(map.lds.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn pca_flags_rank_deficiency() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let data = CalibrationSet::new(rows, vec![0.0; 10]).unwrap();
        let map = pca2_lds_map(&data, &IdentityMap, 11).unwrap();
        assert!(map.rank_deficient);
        assert_eq!(map.directions.len(), 1);
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().contains(",,"));
    }
}
