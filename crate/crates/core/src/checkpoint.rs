//! JSON checkpoint documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::Gmm1d;
use crate::model::{Dense, ModelConfig, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStage {
    Pretrained,
    Adapted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub layers: Vec<LayerRecord>,
    pub training_stage: TrainingStage,
    pub seed: u64,
    /// Validation macro F1 recorded when the checkpoint was selected.
    pub validation_macro_f1: f64,
    pub epoch: usize,
    /// Ordered mixture used for soft labels in the selected epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<Gmm1d>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<Vec<f64>>,
}

fn layer_name(index: usize, total_extractor: usize) -> String {
    if index < total_extractor {
        format!("extractor.{index}")
    } else if index == total_extractor {
        "classifier".into()
    } else {
        "ranker".into()
    }
}

impl Checkpoint {
    pub fn new(params: &ModelParams, stage: TrainingStage, seed: u64, validation_macro_f1: f64, epoch: usize) -> Self {
        let n = params.extractor.len();
        let layers = params
            .layers()
            .enumerate()
            .map(|(i, d)| LayerRecord {
                name: layer_name(i, n),
                inputs: d.inputs,
                outputs: d.outputs,
                weights: d.weights.clone(),
                bias: d.bias.clone(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            model_config: params.config.clone(),
            layers,
            training_stage: stage,
            seed,
            validation_macro_f1,
            epoch,
            gmm: None,
            prototypes: None,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let mut params = ModelParams::zeros(&self.model_config)?;
        let expected = params.layers().count();
        if self.layers.len() != expected {
            return Err(Error::Shape(format!(
                "checkpoint has {} layers, config implies {expected}",
                self.layers.len()
            )));
        }
        for (dst, rec) in params.layers_mut().zip(&self.layers) {
            if (dst.inputs, dst.outputs) != (rec.inputs, rec.outputs)
                || rec.weights.len() != rec.inputs * rec.outputs
                || rec.bias.len() != rec.outputs
            {
                return Err(Error::Shape(format!("layer {} has inconsistent shape", rec.name)));
            }
            *dst = Dense {
                inputs: rec.inputs,
                outputs: rec.outputs,
                weights: rec.weights.clone(),
                bias: rec.bias.clone(),
            };
        }
        if !params.is_finite() {
            return Err(Error::Numerical("checkpoint contains non-finite parameters".into()));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
