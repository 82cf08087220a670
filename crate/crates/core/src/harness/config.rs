use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMapKind;
use crate::optimize::OptimConfig;
use crate::synth::ToyProblem;

/// The seven test algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MeFull,
    MeGrid,
    ScfFull,
    ScfGrid,
    MmdLin,
    MmdQuad,
    T2,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::MeFull,
        Method::MeGrid,
        Method::ScfFull,
        Method::ScfGrid,
        Method::MmdLin,
        Method::MmdQuad,
        Method::T2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MeFull => "me-full",
            Method::MeGrid => "me-grid",
            Method::ScfFull => "scf-full",
            Method::ScfGrid => "scf-grid",
            Method::MmdLin => "mmd-lin",
            Method::MmdQuad => "mmd-quad",
            Method::T2 => "t2",
        }
    }

    /// Feature map, for the methods that have test locations.
    pub fn feature_kind(self) -> Option<FeatureMapKind> {
        match self {
            Method::MeFull | Method::MeGrid => Some(FeatureMapKind::Me),
            Method::ScfFull | Method::ScfGrid => Some(FeatureMapKind::Scf),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Where each trial's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Fresh draws each trial: 2·n_test points per sample, split in half.
    Toy(ToyProblem),
    /// Fixed data re-split each trial.
    Files {
        x: PathBuf,
        y: PathBuf,
        #[serde(default)]
        has_header: bool,
        /// Subsample the larger sample to the size of the smaller one.
        #[serde(default)]
        subsample_to_min: bool,
    },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Toy(p) => p.kind.to_string(),
            DataSource::Files { x, y, .. } => format!("{}|{}", x.display(), y.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub source: DataSource,
    /// Size of each test half; toy trials draw twice this many points.
    pub n_test: usize,
    pub j: usize,
    pub alpha: f64,
    pub trials: usize,
    pub master_seed: u64,
    /// γ_n used by the test. `None` derives it from the features.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_permutations() -> usize {
    400
}

impl ExperimentConfig {
    pub fn toy(method: Method, problem: ToyProblem, n_test: usize, j: usize, trials: usize, master_seed: u64) -> Self {
        Self {
            method,
            source: DataSource::Toy(problem),
            n_test,
            j,
            alpha: 0.01,
            trials,
            master_seed,
            gamma: None,
            optim: OptimConfig::default(),
            permutations: default_permutations(),
            workers: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.method.feature_kind().is_some() && self.j == 0 {
            return Err(Error::Config("J must be >= 1".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Config("permutations must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if let DataSource::Toy(_) = self.source {
            if self.n_test < 2 {
                return Err(Error::Config("n_test must be >= 2".into()));
            }
        }
        Ok(())
    }

    /// Overlays the keys of a JSON object onto this config.
    pub fn apply_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(extra) = overrides else {
            return Err(Error::Config("config file must hold a JSON object".into()));
        };
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, extra);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }
}

fn merge(base: &mut serde_json::Value, extra: &serde_json::Map<String, serde_json::Value>) {
    let serde_json::Value::Object(map) = base else {
        return;
    };
    for (k, v) in extra {
        match (map.get_mut(k), v) {
            (Some(existing @ serde_json::Value::Object(_)), serde_json::Value::Object(inner)) => merge(existing, inner),
            _ => {
                map.insert(k.clone(), v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("me".parse::<Method>().is_err());
    }

    #[test]
    fn overrides_merge_nested_keys() {
        let cfg = ExperimentConfig::toy(Method::MeFull, ToyProblem::gmd(2), 100, 2, 10, 1);
        let patched = cfg
            .apply_overrides(&serde_json::json!({"trials": 3, "optim": {"max_iters": 7}}))
            .unwrap();
        assert_eq!(patched.trials, 3);
        assert_eq!(patched.optim.max_iters, 7);
        assert_eq!(patched.optim.step_size, cfg.optim.step_size);
        assert!(cfg.apply_overrides(&serde_json::json!([1])).is_err());
        assert!(cfg.apply_overrides(&serde_json::json!({"trials": "x"})).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::toy(Method::MeFull, ToyProblem::gmd(2), 100, 2, 10, 1);
        assert!(cfg.validate().is_ok());
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
