//! Run configuration: one JSON file holding every tunable of the pipeline.
//!
//! Parsing is per key so that a bad file reports all of its problems at
//! once instead of stopping at the first.

use std::path::{Path, PathBuf};

use braingnn::community::DecomposeConfig;
use braingnn::model::ModelConfig;
use braingnn::synthetic::SyntheticSpec;
use braingnn::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub density: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            graphs: 10,
            min_nodes: 4,
            max_nodes: 12,
            density: 0.4,
            step: 1e-6,
            tolerance: 1e-5,
        }
    }
}

impl GradcheckConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.graphs == 0 {
            out.push("gradcheck.graphs must be positive".into());
        }
        if self.min_nodes == 0 || self.min_nodes > self.max_nodes {
            out.push("gradcheck.min_nodes must lie in [1, max_nodes]".into());
        }
        if !(0.0..=1.0).contains(&self.density) {
            out.push("gradcheck.density must lie in [0, 1]".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            out.push("gradcheck.step must be positive".into());
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            out.push("gradcheck.tolerance must be positive".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Workspace directory holding every artifact.
    pub out: PathBuf,
    /// Input dataset; defaults to `<out>/dataset.json`.
    pub dataset: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            dataset: None,
        }
    }
}

/// Root seed, then one section per pipeline stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub decompose: DecomposeConfig,
    pub gradcheck: GradcheckConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(CliError::Config)
    }

    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let root: Value =
            serde_json::from_str(text).map_err(|e| vec![format!("not valid JSON: {e}")])?;
        let Value::Object(map) = root else {
            return Err(vec!["config must be a JSON object".into()]);
        };
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        for (key, value) in map {
            let p = &mut problems;
            match key.as_str() {
                "seed" => match serde_json::from_value(value) {
                    Ok(s) => cfg.seed = s,
                    Err(e) => p.push(format!("seed: {e}")),
                },
                "model" => section(&mut cfg.model, "model", value, p),
                "train" => section(&mut cfg.train, "train", value, p),
                "synthetic" => section(&mut cfg.synthetic, "synthetic", value, p),
                "decompose" => section(&mut cfg.decompose, "decompose", value, p),
                "gradcheck" => section(&mut cfg.gradcheck, "gradcheck", value, p),
                "paths" => section(&mut cfg.paths, "paths", value, p),
                other => p.push(format!("{other}: unknown key")),
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            let seed = cfg.seed;
            Ok(cfg.with_seed(seed))
        } else {
            Err(problems)
        }
    }

    /// Sets the root seed and propagates it to the stages that draw from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.model.problems();
        out.extend(self.train.problems());
        out.extend(self.synthetic.problems());
        out.extend(self.decompose.problems());
        out.extend(self.gradcheck.problems());
        if self.model.node_dim != braingnn::graph::NODE_DIM {
            out.push(format!(
                "model.node_dim must equal the dataset width {}",
                braingnn::graph::NODE_DIM
            ));
        }
        if self.model.edge_dim != braingnn::graph::EDGE_DIM {
            out.push(format!(
                "model.edge_dim must equal the dataset width {}",
                braingnn::graph::EDGE_DIM
            ));
        }
        out
    }
}

/// Overlays the keys of `value` on `target` one at a time, recording a
/// message for every key that is unknown or fails to deserialize.
fn section<T>(target: &mut T, name: &str, value: Value, problems: &mut Vec<String>)
where
    T: Serialize + DeserializeOwned,
{
    let Value::Object(fields) = value else {
        problems.push(format!("{name}: expected an object"));
        return;
    };
    let Ok(Value::Object(mut base)) = serde_json::to_value(&*target) else {
        unreachable!("config sections serialize to objects");
    };
    for (key, v) in fields {
        if !base.contains_key(&key) {
            problems.push(format!("{name}.{key}: unknown key"));
            continue;
        }
        if key == "seed" {
            problems.push(format!("{name}.seed: set the root `seed` instead"));
            continue;
        }
        let mut trial: Map<String, Value> = base.clone();
        trial.insert(key.clone(), v);
        match serde_json::from_value::<T>(Value::Object(trial.clone())) {
            Ok(_) => base = trial,
            Err(e) => problems.push(format!("{name}.{key}: {e}")),
        }
    }
    *target = serde_json::from_value(Value::Object(base)).expect("every key validated");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::parse("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.hidden1, 16);
        assert_eq!(cfg.model.hidden2, 8);
        assert_eq!(cfg.model.pool_ratio, 0.5);
        assert_eq!(cfg.model.reg_weight, 0.001);
        assert_eq!(cfg.train.lr0, 0.001);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.train.folds, 5);
    }

    #[test]
    fn every_problem_is_listed() {
        let text = r#"{
            "model": {"hidden1": "wide", "pool_ratio": 2.0},
            "train": {"epochs": -1, "bogus": 1},
            "synthetic": {"seed": 4},
            "extra": true
        }"#;
        let problems = RunConfig::parse(text).unwrap_err();
        let has = |s: &str| problems.iter().any(|p| p.starts_with(s));
        assert!(has("model.hidden1:"), "{problems:?}");
        assert!(has("model.pool_ratio"), "{problems:?}");
        assert!(has("train.epochs:"), "{problems:?}");
        assert!(has("train.bogus: unknown key"), "{problems:?}");
        assert!(has("synthetic.seed:"), "{problems:?}");
        assert!(has("extra: unknown key"), "{problems:?}");
        assert_eq!(problems.len(), 6, "{problems:?}");
    }

    #[test]
    fn root_seed_reaches_every_stage() {
        let cfg = RunConfig::parse(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.synthetic.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr0, 0.001);
    }

    #[test]
    fn non_object_rejected() {
        assert!(RunConfig::parse("[1]").is_err());
        assert!(RunConfig::parse("{").is_err());
        assert!(RunConfig::parse(r#"{"model": 3}"#).is_err());
    }
}
