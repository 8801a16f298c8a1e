use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{GNNModel, ModelConfig, ModelError, Params};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model: version, config, then every parameter tensor flat and
/// row-major, in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<ParamRecord>,
}

impl From<&GNNModel> for ModelFile {
    fn from(m: &GNNModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            config: m.config.clone(),
            parameters: m
                .params
                .entries()
                .into_iter()
                .map(|(name, t)| ParamRecord {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for GNNModel {
    type Error = ModelError;

    fn try_from(f: ModelFile) -> Result<Self, ModelError> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::File(format!(
                "unsupported format_version {}",
                f.format_version
            )));
        }
        let problems = f.config.problems();
        if !problems.is_empty() {
            return Err(ModelError::Config(problems.join("; ")));
        }
        // A zero-initialized model of this config fixes names and shapes.
        let template = Params::zeros(&f.config);
        let expected = template.entries();
        if expected.len() != f.parameters.len() {
            return Err(ModelError::File(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                f.parameters.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for ((name, t), rec) in expected.iter().zip(f.parameters) {
            if *name != rec.name || t.shape().as_slice() != rec.shape.as_slice() {
                return Err(ModelError::File(format!(
                    "expected {name} {:?}, found {} {:?}",
                    t.shape(),
                    rec.name,
                    rec.shape
                )));
            }
            tensors.push(Tensor::new(rec.shape[0], rec.shape[1], rec.data)?);
        }
        let params = template.rebuild(tensors).expect("count checked");
        Ok(GNNModel {
            config: f.config,
            params,
        })
    }
}

impl GNNModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let f: ModelFile = serde_json::from_str(s).map_err(|e| ModelError::File(e.to_string()))?;
        f.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()).map_err(|e| ModelError::File(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = fs::read_to_string(path)
            .map_err(|e| ModelError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
