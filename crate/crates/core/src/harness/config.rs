//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted by section
//! (`data.*`, `model.*`, `mlp.*`, `tree.*`, `step.*`, `gbm.*`, `fusion.*`,
//! `compare.*`) plus the top-level `seed` and `metric`. Unknown or repeated
//! keys are errors. See the README for the full key list.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{GenKind, GenSpec};
use crate::error::{Error, Result};
use crate::fusionnet::{Fusion, FusionConfig};
use crate::gbm::GbmConfig;
use crate::metrics::MetricKind;
use crate::stepsearch::{StepConfig, StepMode};
use crate::weaklearners::{MlpConfig, OptimizerKind, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "bfvdnn")]
    BfvDnn,
    #[serde(rename = "2wl")]
    TwoWl,
    #[serde(rename = "2wl2o")]
    TwoWl2o,
    #[serde(rename = "2wl_fix")]
    TwoWlFix,
    #[serde(rename = "2wl2o_fix")]
    TwoWl2oFix,
    #[serde(rename = "1wl_s")]
    OneWlS,
    #[serde(rename = "1wl_u")]
    OneWlU,
    #[serde(rename = "gbm_only")]
    GbmOnly,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Baseline,
        ModelKind::BfvDnn,
        ModelKind::TwoWl,
        ModelKind::TwoWl2o,
        ModelKind::TwoWlFix,
        ModelKind::TwoWl2oFix,
        ModelKind::OneWlS,
        ModelKind::OneWlU,
        ModelKind::GbmOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::BfvDnn => "bfvdnn",
            ModelKind::TwoWl => "2wl",
            ModelKind::TwoWl2o => "2wl2o",
            ModelKind::TwoWlFix => "2wl_fix",
            ModelKind::TwoWl2oFix => "2wl2o_fix",
            ModelKind::OneWlS => "1wl_s",
            ModelKind::OneWlU => "1wl_u",
            ModelKind::GbmOnly => "gbm_only",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generated(GenSpec),
    Files { train: PathBuf, valid: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub kind: ModelKind,
    /// Boosting iterations (outer iterations for the second-order trainer).
    pub iterations: usize,
    /// Inner iterations of the second-order trainer.
    pub inner: usize,
    pub eps0: f64,
    pub delta0: f64,
    pub seed: u64,
    pub metric: MetricKind,
    pub mlp: MlpConfig,
    pub tree: TreeConfig,
    pub step: StepConfig,
    pub gbm: GbmConfig,
    pub fusion: FusionConfig,
    pub roster: Vec<ModelKind>,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Generated(GenSpec::default()),
            kind: ModelKind::TwoWl,
            iterations: 20,
            inner: 1,
            eps0: 0.1,
            delta0: 0.1,
            seed: 0,
            metric: MetricKind::F1,
            mlp: MlpConfig::default(),
            tree: TreeConfig::default(),
            step: StepConfig::default(),
            gbm: GbmConfig::default(),
            fusion: FusionConfig::default(),
            roster: vec![
                ModelKind::Baseline,
                ModelKind::BfvDnn,
                ModelKind::TwoWl,
                ModelKind::TwoWl2o,
                ModelKind::TwoWlFix,
                ModelKind::TwoWl2oFix,
                ModelKind::OneWlS,
                ModelKind::OneWlU,
            ],
            repeats: 1,
        }
    }
}

impl ExperimentConfig {
    /// Copy with the model kind replaced and the seed shifted by `repeat`.
    pub fn for_run(&self, kind: ModelKind, repeat: usize) -> Self {
        let mut c = self.clone();
        c.kind = kind;
        c.seed = self.seed.wrapping_add(repeat as u64);
        c.sync_seeds();
        c
    }

    fn sync_seeds(&mut self) {
        self.mlp.seed = self.seed;
        self.step.seed = self.seed;
        self.fusion.seed = self.seed;
        self.fusion.metric = self.metric;
    }

    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        self.fusion.validate()?;
        if self.inner == 0 {
            return Err(Error::Config("model.inner must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("compare.repeats must be at least 1".into()));
        }
        if self.mlp.epochs == 0 {
            return Err(Error::Config("mlp.epochs must be at least 1".into()));
        }
        match &self.data {
            DataSource::Generated(spec) => spec.validate()?,
            DataSource::Files { train, valid } => {
                for p in [train, valid] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data file {} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::Parse {
        line,
        message: format!("bad value `{raw}` for `{key}`: {e}"),
    })
}

fn list<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s, line))
        .collect()
}

fn optimizer_kind(raw: &str, line: usize) -> Result<OptimizerKind> {
    match raw {
        "sgd" => Ok(OptimizerKind::Sgd),
        "rmsprop" => Ok(OptimizerKind::RmsProp),
        other => Err(Error::Parse {
            line,
            message: format!("unknown optimizer `{other}`"),
        }),
    }
}

fn at_line(e: Error, line: usize) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    }
}

/// Splits config text into `(line number, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key".into(),
            });
        }
        if !seen.insert(k.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{k}`"),
            });
        }
        out.push((line, k, v));
    }
    Ok(out)
}

/// Applies one `data.*` key (without the prefix) to a generator spec.
fn apply_data_key(spec: &mut GenSpec, key: &str, v: &str, line: usize) -> Result<bool> {
    let full = format!("data.{key}");
    match key {
        "kind" => spec.kind = GenKind::parse(v).map_err(|e| at_line(e, line))?,
        "n_train" => spec.n_train = value(&full, v, line)?,
        "n_valid" => spec.n_valid = value(&full, v, line)?,
        "dim_u" => spec.dim_u = value(&full, v, line)?,
        "dim_s" => spec.dim_s = value(&full, v, line)?,
        "classes" => spec.num_classes = value(&full, v, line)?,
        "noise" => spec.noise_rate = value(&full, v, line)?,
        "seed" => spec.seed = value(&full, v, line)?,
        "class0_prior" => spec.class0_prior = value(&full, v, line)?,
        "blob_mean" => spec.blob_mean = value(&full, v, line)?,
        "image_side" => spec.image_side = value(&full, v, line)?,
        "class_separation" => spec.class_separation = value(&full, v, line)?,
        "blob_noise" => spec.blob_noise = value(&full, v, line)?,
        "leakage" => spec.leakage = value(&full, v, line)?,
        "importance_split" => spec.importance_split = value(&full, v, line)?,
        "source" => spec.source = Some(v.to_string()),
        _ => return Ok(false),
    }
    Ok(true)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Parses a generator spec file (`data.*` keys only).
pub fn parse_gen_spec(text: &str, base_dir: &Path) -> Result<GenSpec> {
    let mut spec = GenSpec::default();
    for (line, k, v) in parse_pairs(text)? {
        let known = match k.strip_prefix("data.") {
            Some(rest) => apply_data_key(&mut spec, rest, &v, line)?,
            None => false,
        };
        if !known {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{k}` in dataset spec"),
            });
        }
    }
    if let Some(src) = &spec.source {
        spec.source = Some(resolve(base_dir, src).to_string_lossy().into_owned());
    }
    spec.validate()?;
    Ok(spec)
}

/// Parses an experiment config; relative data paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    let mut spec = GenSpec::default();
    let mut train_path = None;
    let mut valid_path = None;
    let mut saw_generator_key = false;
    for (line, k, v) in parse_pairs(text)? {
        let v = v.as_str();
        let key = k.as_str();
        match key {
            "seed" => c.seed = value(key, v, line)?,
            "metric" => c.metric = MetricKind::parse(v).map_err(|e| at_line(e, line))?,
            "data.train" => train_path = Some(resolve(base_dir, v)),
            "data.valid" => valid_path = Some(resolve(base_dir, v)),
            "model.kind" => c.kind = v.parse().map_err(|e| at_line(e, line))?,
            "model.iterations" => c.iterations = value(key, v, line)?,
            "model.inner" => c.inner = value(key, v, line)?,
            "model.eps0" => c.eps0 = value(key, v, line)?,
            "model.delta0" => c.delta0 = value(key, v, line)?,
            "mlp.hidden" => c.mlp.hidden = list(key, v, line)?,
            "mlp.optimizer" => c.mlp.optimizer.kind = optimizer_kind(v, line)?,
            "mlp.lr" => c.mlp.optimizer.learning_rate = value(key, v, line)?,
            "mlp.epochs" => c.mlp.epochs = value(key, v, line)?,
            "mlp.batch" => c.mlp.batch_size = value(key, v, line)?,
            "tree.max_depth" => c.tree.max_depth = value(key, v, line)?,
            "tree.min_samples_leaf" => c.tree.min_samples_leaf = value(key, v, line)?,
            "step.mode" => c.step.mode = StepMode::parse(v).map_err(|e| at_line(e, line))?,
            "step.eps" => c.step.eps = value(key, v, line)?,
            "step.delta" => c.step.delta = value(key, v, line)?,
            "step.eps_max" => c.step.eps_max = value(key, v, line)?,
            "step.delta_max" => c.step.delta_max = value(key, v, line)?,
            "step.bound" => {
                let b: f64 = value(key, v, line)?;
                c.step.eps_max = b;
                c.step.delta_max = b;
            }
            "step.grid" => c.step.grid_points = value(key, v, line)?,
            "step.explore" => c.step.explore = value(key, v, line)?,
            "step.refine" => c.step.refine = value(key, v, line)?,
            "gbm.stages" => c.gbm.stages = value(key, v, line)?,
            "gbm.lr" => c.gbm.learning_rate = value(key, v, line)?,
            "gbm.max_depth" => c.gbm.tree.max_depth = value(key, v, line)?,
            "gbm.min_samples_leaf" => c.gbm.tree.min_samples_leaf = value(key, v, line)?,
            "fusion.mode" => c.fusion.fusion = Fusion::parse(v).map_err(|e| at_line(e, line))?,
            "fusion.branch_u" => c.fusion.branch_u = list(key, v, line)?,
            "fusion.branch_s" => c.fusion.branch_s = list(key, v, line)?,
            "fusion.head" => c.fusion.head = list(key, v, line)?,
            "fusion.optimizer" => c.fusion.optimizer.kind = optimizer_kind(v, line)?,
            "fusion.lr" => c.fusion.optimizer.learning_rate = value(key, v, line)?,
            "fusion.epochs" => c.fusion.epochs = value(key, v, line)?,
            "fusion.batch" => c.fusion.batch_size = value(key, v, line)?,
            "fusion.standardize_bfv" => c.fusion.standardize_bfv = value(key, v, line)?,
            "compare.roster" => {
                c.roster = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e| at_line(e, line)))
                    .collect::<Result<_>>()?;
            }
            "compare.repeats" => c.repeats = value(key, v, line)?,
            _ => {
                let known = match key.strip_prefix("data.") {
                    Some(rest) => apply_data_key(&mut spec, rest, v, line)?,
                    None => false,
                };
                if !known {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key `{key}`"),
                    });
                }
                saw_generator_key = true;
            }
        }
    }
    c.data = match (train_path, valid_path) {
        (Some(train), Some(valid)) => {
            if saw_generator_key {
                return Err(Error::Config(
                    "data.train/data.valid cannot be combined with generator keys".into(),
                ));
            }
            DataSource::Files { train, valid }
        }
        (None, None) => {
            if let Some(src) = &spec.source {
                spec.source = Some(resolve(base_dir, src).to_string_lossy().into_owned());
            }
            DataSource::Generated(spec)
        }
        _ => return Err(Error::Config("data.train and data.valid must be given together".into())),
    };
    if c.roster.is_empty() {
        return Err(Error::Config("compare.roster is empty".into()));
    }
    c.sync_seeds();
    c.validate()?;
    Ok(c)
}
