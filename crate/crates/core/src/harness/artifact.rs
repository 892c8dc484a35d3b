//! On-disk model artifacts.
//!
//! An artifact directory holds `model.json` (schema version, model kind,
//! config echo and the fitted model), `history.csv` (training trace) and
//! `manifest.json` (seed, config hash, data hashes, crate version).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boost2wl::{write_history_csv, TwoWlModel};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::fusionnet::{write_epoch_csv, FusionModel, Variant};
use crate::gbm::GbmModel;
use crate::harness::config::{ExperimentConfig, ModelKind};

pub const SCHEMA_VERSION: u32 = 1;

pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainedModel {
    Boosted {
        model: TwoWlModel<f64>,
    },
    Fusion {
        model: FusionModel<f64>,
        gbm: Option<GbmModel<f64>>,
    },
    Gbm {
        model: GbmModel<f64>,
    },
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrainedModel::Boosted { model } => model.validate(),
            TrainedModel::Fusion { model, gbm } => {
                model.validate()?;
                match (model.variant, gbm) {
                    (Variant::Bfv, Some(g)) => {
                        g.validate()?;
                        if g.bfv_len() != model.branch_s.input_dim() {
                            return Err(Error::Corrupt("BFV width does not match branch 2".into()));
                        }
                        Ok(())
                    }
                    (Variant::Bfv, None) => Err(Error::Corrupt("BFV model without its GBM".into())),
                    (Variant::Baseline, Some(_)) => Err(Error::Corrupt("baseline model carries a GBM".into())),
                    (Variant::Baseline, None) => Ok(()),
                }
            }
            TrainedModel::Gbm { model } => model.validate(),
        }
    }

    /// Class predictions; boosted models use their best-validation prefix.
    pub fn predict(&self, data: &Dataset<f64>) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Boosted { model } => model.predict_best(data),
            TrainedModel::Fusion { model, gbm } => model.predict(data, gbm.as_ref()),
            TrainedModel::Gbm { model } => model.predict(&data.x_s()),
        }
    }

    pub fn history_csv(&self) -> String {
        let mut buf = Vec::new();
        match self {
            TrainedModel::Boosted { model } => {
                let inner = !model.inner_risks.is_empty();
                write_history_csv(&mut buf, &model.history, inner)
            }
            TrainedModel::Fusion { model, .. } => write_epoch_csv(&mut buf, &model.history),
            TrainedModel::Gbm { model } => {
                use std::io::Write;
                let mut res = writeln!(buf, "stage,train_loss");
                for (i, l) in model.train_loss().iter().enumerate() {
                    res = res.and_then(|_| writeln!(buf, "{i},{l}"));
                }
                res
            }
        }
        .expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }

    /// `(minutes, validation metric)` points for trace plots.
    pub fn trace(&self) -> Vec<(f64, f64)> {
        match self {
            TrainedModel::Boosted { model } => model
                .history
                .iter()
                .filter_map(|r| r.val_metric.map(|v| (r.seconds / 60.0, v)))
                .collect(),
            TrainedModel::Fusion { model, .. } => model
                .history
                .iter()
                .filter_map(|r| r.val_metric.map(|v| (r.seconds / 60.0, v)))
                .collect(),
            TrainedModel::Gbm { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub config: ExperimentConfig,
    pub model: TrainedModel,
}

impl ModelArtifact {
    pub fn new(config: ExperimentConfig, model: TrainedModel) -> Self {
        ModelArtifact {
            schema_version: SCHEMA_VERSION,
            kind: config.kind,
            config,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates; the schema version is checked before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing schema_version".into()))?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
        let art: ModelArtifact =
            serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("model.json: {e}")))?;
        if art.kind != art.config.kind {
            return Err(Error::Corrupt("kind tag disagrees with config echo".into()));
        }
        art.model.validate()?;
        Ok(art)
    }

    pub fn predict(&self, data: &Dataset<f64>) -> Result<Vec<usize>> {
        self.model.predict(data)
    }
}

/// Writes `model.json` and `history.csv` into `dir`.
pub fn serialize_model(artifact: &ModelArtifact, dir: &Path) -> Result<()> {
    let model_path = dir.join(MODEL_FILE);
    fs::write(&model_path, artifact.to_json()?).map_err(|e| Error::io(&model_path, e))?;
    let hist_path = dir.join(HISTORY_FILE);
    fs::write(&hist_path, artifact.model.history_csv()).map_err(|e| Error::io(&hist_path, e))?;
    Ok(())
}

pub fn deserialize_model(dir: &Path) -> Result<ModelArtifact> {
    let path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    ModelArtifact::from_json(&text)
}
