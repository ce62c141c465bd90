//! JSON envelope for fitted maps and the base model they recalibrate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::Gaussian;
use crate::nonparametric::MonotoneNet;
use crate::parametric::ParametricPitModel;
use crate::pit::{LocalPitMap, PitMap};
use crate::{Error, Real, Result};

/// Envelope version written by [`SavedModel::save`].
pub const FORMAT_VERSION: u32 = 1;

/// Base predictive model constant in x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseSpec {
    Gaussian { mean: f64, sd: f64 },
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec::Gaussian { mean: 0.0, sd: 1.0 }
    }
}

impl BaseSpec {
    pub fn gaussian<T: Real>(&self) -> Result<Gaussian<T>> {
        match *self {
            BaseSpec::Gaussian { mean, sd } => Gaussian::new(T::of(mean), T::of(sd)),
        }
    }
}

/// A fitted PIT map of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "")]
pub enum FittedModel<T: Real> {
    Parametric(ParametricPitModel<T>),
    Nonparametric(MonotoneNet<T>),
}

impl<T: Real> PitMap<T> for FittedModel<T> {
    fn input_dim(&self) -> Option<usize> {
        match self {
            FittedModel::Parametric(m) => m.input_dim(),
            FittedModel::Nonparametric(m) => m.input_dim(),
        }
    }

    fn localize(&self, x: &[T]) -> Result<Box<dyn LocalPitMap<T> + '_>> {
        match self {
            FittedModel::Parametric(m) => m.localize(x),
            FittedModel::Nonparametric(m) => m.localize(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SavedModel<T: Real> {
    pub format_version: u32,
    pub base: BaseSpec,
    pub model: FittedModel<T>,
}

impl<T: Real> SavedModel<T> {
    pub fn new(base: BaseSpec, model: FittedModel<T>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            base,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametric::{fit_parametric, TrainConfig};
    use crate::pit::{CalibrationSet, PitSample};

    #[test]
    fn roundtrip_preserves_map() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let z: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64 / 40.0 + 0.01).collect();
        let calib = CalibrationSet::new(rows, vec![0.0; 40]).unwrap();
        let pit = PitSample::new(z).unwrap();
        let cfg = TrainConfig {
            hidden: vec![4],
            epochs: 5,
            ..TrainConfig::default()
        };
        let saved = SavedModel::new(
            BaseSpec::default(),
            FittedModel::Parametric(fit_parametric(&calib, &pit, &cfg).unwrap()),
        );
        let text = saved.to_json().unwrap();
        assert!(text.contains("\"kind\": \"parametric\""));
        let back = SavedModel::<f64>::from_json(&text).unwrap();
        assert_eq!(back, saved);
        let a = saved.model.localize(&[0.3]).unwrap().g(0.4);
        let b = back.model.localize(&[0.3]).unwrap().g(0.4);
        assert_eq!(a, b);
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(SavedModel::<f64>::from_json(&bumped).is_err());
    }
}
