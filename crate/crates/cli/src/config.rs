//! Run configuration: one JSON document, with flags taking precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diagmap::model::BaseSpec;
use diagmap::synthetic::ConvergenceSpec;
use diagmap::tc::{MapMethod, TcEvalConfig, TcFixtureConfig, TcSchema};
use diagmap::TrainConfig;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "DIAGMAP_OUT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub method: Option<MapMethod>,
    pub out: Option<PathBuf>,
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub diagnose: DiagnoseConfig,
    pub recalibrate: RecalibrateConfig,
    pub score: ScoreCommandConfig,
    pub convergence: ConvergenceSpec,
    pub tc: TcCommandConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulateKind {
    #[default]
    Sas,
    Tc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub kind: SimulateKind,
    /// Number of pairs for the SAS design.
    pub n: usize,
    pub tc: TcFixtureConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            kind: SimulateKind::Sas,
            n: 100,
            tc: TcFixtureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// CSV of covariate columns plus a final `y` column.
    pub data: Option<PathBuf>,
    pub base: BaseSpec,
    /// Training settings; the method's defaults when absent.
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub model: Option<PathBuf>,
    /// CSV of covariate rows; a `y` column is ignored.
    pub x: Option<PathBuf>,
    pub grid_size: usize,
    /// Also write the two-component PCA map of the LDS over these rows.
    pub pca: bool,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            model: None,
            x: None,
            grid_size: 101,
            pca: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecalibrateConfig {
    pub model: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub y_min: f64,
    pub y_max: f64,
    pub y_points: usize,
}

impl Default for RecalibrateConfig {
    fn default() -> Self {
        Self {
            model: None,
            x: None,
            y_min: -5.0,
            y_max: 5.0,
            y_points: 201,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreCommandConfig {
    pub model: Option<PathBuf>,
    /// CSV of covariates plus the observed `y`.
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcCommandConfig {
    pub data: Option<PathBuf>,
    pub schema: TcSchema,
    pub eval: TcEvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Diagnose,
    Recalibrate,
    Score,
    Convergence,
    TcEval,
}

impl Command {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Command::Simulate | Command::Fit | Command::Convergence | Command::TcEval)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<MapMethod>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub x: Option<PathBuf>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

/// Merges flags, the environment and the file, then checks every field
/// relevant to `command`, returning all violations at once.
pub fn resolve(
    command: Command,
    mut config: RunConfig,
    flags: Overrides,
    env_out: Option<PathBuf>,
) -> Result<Resolved, Vec<String>> {
    if flags.seed.is_some() {
        config.seed = flags.seed;
    }
    if flags.method.is_some() {
        config.method = flags.method;
    }
    let out = flags
        .out
        .or(env_out)
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut v = Vec::new();
    {
        let (data, model, x) = path_slots(command, &mut config);
        for (name, target, value) in [("data", data, flags.data), ("model", model, flags.model), ("x", x, flags.x)] {
            match (target, value) {
                (Some(t), Some(p)) => *t = Some(p),
                (None, Some(_)) => v.push(format!("--{name}: not used by this command")),
                _ => {}
            }
        }
    }
    let (data, model, x) = path_slots(command, &mut config);
    for (name, p) in [("data", data), ("model", model), ("x", x)] {
        if let Some(p) = p {
            match p {
                Some(path) if !path.is_file() => v.push(format!("{name}: file not found: {}", path.display())),
                None => v.push(format!("{name}: a path is required")),
                _ => {}
            }
        }
    }
    if command.is_stochastic() && config.seed.is_none() {
        v.push("seed: required for this command".to_string());
    }
    if out.exists() && !out.is_dir() {
        v.push(format!("out: not a directory: {}", out.display()));
    }
    check_command(command, &config, &mut v);
    if !v.is_empty() {
        return Err(v);
    }
    Ok(Resolved {
        command,
        seed: config.seed.unwrap_or(0),
        config,
        out,
    })
}

type Slot<'a> = Option<&'a mut Option<PathBuf>>;

/// The data, model and x path fields a command reads, if any.
fn path_slots(command: Command, c: &mut RunConfig) -> (Slot<'_>, Slot<'_>, Slot<'_>) {
    match command {
        Command::Fit => (Some(&mut c.fit.data), None, None),
        Command::Diagnose => (None, Some(&mut c.diagnose.model), Some(&mut c.diagnose.x)),
        Command::Recalibrate => (None, Some(&mut c.recalibrate.model), Some(&mut c.recalibrate.x)),
        Command::Score => (Some(&mut c.score.data), Some(&mut c.score.model), None),
        Command::TcEval => (Some(&mut c.tc.data), None, None),
        Command::Simulate | Command::Convergence => (None, None, None),
    }
}

fn check_base(base: &BaseSpec, v: &mut Vec<String>) {
    match *base {
        BaseSpec::Gaussian { mean, sd } => {
            if !mean.is_finite() {
                v.push("fit.base.mean: must be finite".to_string());
            }
            if !(sd > 0.0 && sd.is_finite()) {
                v.push("fit.base.sd: must be positive".to_string());
            }
        }
    }
}

fn check_command(command: Command, c: &RunConfig, v: &mut Vec<String>) {
    match command {
        Command::Simulate => match c.simulate.kind {
            SimulateKind::Sas if c.simulate.n == 0 => v.push("simulate.n: must be positive".to_string()),
            SimulateKind::Tc => {
                let t = &c.simulate.tc;
                if t.storms == 0 {
                    v.push("simulate.tc.storms: must be positive".to_string());
                }
                if t.first_year > t.last_year {
                    v.push("simulate.tc.first_year: must not exceed last_year".to_string());
                }
                if !(t.error_sd_kt > 0.0) {
                    v.push("simulate.tc.error_sd_kt: must be positive".to_string());
                }
                if !(0.0..1.0).contains(&t.null_rate) {
                    v.push("simulate.tc.null_rate: must lie in [0, 1)".to_string());
                }
                if !(t.dispersion >= 0.0) {
                    v.push("simulate.tc.dispersion: must be non-negative".to_string());
                }
            }
            _ => {}
        },
        Command::Fit => {
            check_base(&c.fit.base, v);
            if c.method.is_none() {
                v.push("method: required for fit".to_string());
            }
            if let Some(t) = &c.fit.train {
                if let Err(e) = t.validate() {
                    v.push(format!("fit.train: {e}"));
                }
            }
        }
        Command::Diagnose => {
            if c.diagnose.grid_size < 2 {
                v.push("diagnose.grid_size: must be at least 2".to_string());
            }
        }
        Command::Recalibrate => {
            let r = &c.recalibrate;
            if !(r.y_min.is_finite() && r.y_max.is_finite() && r.y_min < r.y_max) {
                v.push("recalibrate.y_min/y_max: need finite y_min < y_max".to_string());
            }
            if r.y_points < 2 {
                v.push("recalibrate.y_points: must be at least 2".to_string());
            }
        }
        Command::Score => {}
        Command::Convergence => {
            v.extend(c.convergence.violations().into_iter().map(|e| format!("convergence.{e}")));
        }
        Command::TcEval => {
            v.extend(c.tc.eval.violations().into_iter().map(|e| format!("tc.eval.{e}")));
            if c.tc.schema.predictors.len() != diagmap::tc::N_PREDICTORS {
                v.push(format!("tc.schema.predictors: expected {} names", diagmap::tc::N_PREDICTORS));
            }
        }
    }
}

/// Reads a config file; a missing path yields the defaults.
pub fn load(path: Option<&Path>) -> Result<RunConfig, String> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("config: cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_violation_is_reported() {
        let mut c = RunConfig::default();
        c.convergence.replicates = 1;
        c.convergence.n_grid = vec![10, 5];
        let err = resolve(Command::Convergence, c, Overrides::default(), None).unwrap_err();
        assert!(err.iter().any(|e| e.starts_with("seed")));
        assert!(err.iter().any(|e| e.contains("replicates")));
        assert!(err.iter().any(|e| e.contains("n_grid")));
    }

    #[test]
    fn precedence_flag_env_file() {
        let c = RunConfig {
            out: Some("file".into()),
            seed: Some(3),
            ..RunConfig::default()
        };
        let r = resolve(Command::Simulate, c.clone(), Overrides::default(), Some("env".into())).unwrap();
        assert_eq!(r.out, PathBuf::from("env"));
        assert_eq!(r.seed, 3);
        let flags = Overrides {
            out: Some("flag".into()),
            seed: Some(9),
            ..Overrides::default()
        };
        let r = resolve(Command::Simulate, c.clone(), flags, Some("env".into())).unwrap();
        assert_eq!((r.out, r.seed), (PathBuf::from("flag"), 9));
        let r = resolve(Command::Simulate, c, Overrides::default(), None).unwrap();
        assert_eq!(r.out, PathBuf::from("file"));
    }

    #[test]
    fn missing_paths_and_unused_flags() {
        let flags = Overrides {
            x: Some("nowhere.csv".into()),
            ..Overrides::default()
        };
        let err = resolve(Command::Fit, RunConfig::default(), flags, None).unwrap_err();
        assert!(err.contains(&"--x: not used by this command".to_string()));
        assert!(err.contains(&"data: a path is required".to_string()));
        assert!(err.contains(&"method: required for fit".to_string()));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 1, "simulate": {"n": 7}}"#).unwrap();
        assert_eq!((c.seed, c.simulate.n), (Some(1), 7));
    }
}
