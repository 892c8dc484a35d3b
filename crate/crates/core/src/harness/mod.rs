//! Experiment orchestration behind the CLI: data loading, training every
//! model kind, evaluation, roster comparison and artifact output.

pub mod artifact;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boost2wl::{train_2wl, Mode, TwoWlConfig};
use crate::boost2wl2o::{train_2wl2o, TwoWl2oConfig};
use crate::datasets::{generate, load_dataset, save_dataset};
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::fusionnet::train_fusion;
use crate::gbm::fit_gbm;
use crate::metrics::{relative_improvement, MetricKind};
use crate::stepsearch::StepConfig;

pub use artifact::{deserialize_model, serialize_model, ModelArtifact, TrainedModel, SCHEMA_VERSION};
pub use config::{parse_config, parse_gen_spec, DataSource, ExperimentConfig, ModelKind};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let text = read(path)?;
    let cfg = parse_config(&text, &base_dir(path))?;
    Ok((cfg, text))
}

/// `(train, valid)` for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let (train, valid) = match &cfg.data {
        DataSource::Generated(spec) => generate(spec)?,
        DataSource::Files { train, valid } => (load_dataset(train)?, load_dataset(valid)?),
    };
    train.check_compatible(&valid)?;
    Ok((train, valid))
}

fn boost_config(cfg: &ExperimentConfig, mode: Mode, step: StepConfig) -> TwoWlConfig {
    TwoWlConfig {
        iterations: cfg.iterations,
        mode,
        mlp: cfg.mlp.clone(),
        tree: cfg.tree,
        step,
        metric: cfg.metric,
        seed: cfg.seed,
    }
}

fn second_order_config(cfg: &ExperimentConfig, step: StepConfig) -> TwoWl2oConfig {
    TwoWl2oConfig {
        outer: cfg.iterations,
        inner: cfg.inner,
        eps0: cfg.eps0,
        delta0: cfg.delta0,
        mode: Mode::Both,
        mlp: cfg.mlp.clone(),
        tree: cfg.tree,
        step,
        metric: cfg.metric,
        seed: cfg.seed,
    }
}

/// Trains the model kind named in `cfg`.
pub fn train_model(cfg: &ExperimentConfig, train: &Dataset<f64>, valid: &Dataset<f64>) -> Result<TrainedModel> {
    let fixed = StepConfig {
        seed: cfg.step.seed,
        ..StepConfig::fixed(cfg.step.eps, cfg.step.delta)
    };
    Ok(match cfg.kind {
        ModelKind::Baseline => TrainedModel::Fusion {
            model: train_fusion(train, Some(valid), None, &cfg.fusion)?,
            gbm: None,
        },
        ModelKind::BfvDnn => {
            let gbm = fit_gbm(&train.x_s(), &train.labels(), train.num_classes, cfg.gbm)?;
            let model = train_fusion(train, Some(valid), Some(&gbm), &cfg.fusion)?;
            TrainedModel::Fusion { model, gbm: Some(gbm) }
        }
        ModelKind::TwoWl => TrainedModel::Boosted {
            model: train_2wl(train, Some(valid), &boost_config(cfg, Mode::Both, cfg.step))?,
        },
        ModelKind::TwoWlFix => TrainedModel::Boosted {
            model: train_2wl(train, Some(valid), &boost_config(cfg, Mode::Both, fixed))?,
        },
        ModelKind::OneWlS => TrainedModel::Boosted {
            model: train_2wl(train, Some(valid), &boost_config(cfg, Mode::OnlyS, cfg.step))?,
        },
        ModelKind::OneWlU => TrainedModel::Boosted {
            model: train_2wl(train, Some(valid), &boost_config(cfg, Mode::OnlyG, cfg.step))?,
        },
        ModelKind::TwoWl2o => TrainedModel::Boosted {
            model: train_2wl2o(train, Some(valid), &second_order_config(cfg, cfg.step))?,
        },
        ModelKind::TwoWl2oFix => {
            // Fixed steps must still admit the initial steps.
            let c = TwoWl2oConfig {
                eps0: cfg.step.eps,
                delta0: cfg.step.delta,
                ..second_order_config(cfg, fixed)
            };
            TrainedModel::Boosted {
                model: train_2wl2o(train, Some(valid), &c)?,
            }
        }
        ModelKind::GbmOnly => TrainedModel::Gbm {
            model: fit_gbm(&train.x_s(), &train.labels(), train.num_classes, cfg.gbm)?,
        },
    })
}

pub fn evaluate(model: &TrainedModel, data: &Dataset<f64>, metric: MetricKind) -> Result<f64> {
    metric.evaluate(&model.predict(data)?, &data.labels(), data.num_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub config_sha256: String,
    /// `(file, sha256)` of external data files, empty for generated data.
    pub data_sha256: Vec<(String, String)>,
    pub crate_version: String,
}

/// Creates `out` by filling a sibling temporary directory and renaming it,
/// so a failure never leaves partial output. An existing `out` is replaced
/// only if it is empty or contains `marker` from an earlier run.
pub fn write_atomically(out: &Path, marker: &str, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    if out.exists() {
        let empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !empty && !out.join(marker).exists() {
            return Err(Error::Config(format!(
                "{} exists and is not an earlier output; refusing to overwrite",
                out.display()
            )));
        }
    }
    let tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    fill(tmp.path())?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let kept = tmp.keep();
    fs::rename(&kept, out).map_err(|e| Error::io(out, e))?;
    Ok(())
}

/// `gen-data`: writes `train.txt` and `valid.txt` into `out`.
pub fn run_gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = parse_gen_spec(&read(spec_path)?, &base_dir(spec_path))?;
    let (train, valid) = generate::<f64>(&spec)?;
    write_atomically(out, "train.txt", |dir| {
        save_dataset(&train, &dir.join("train.txt"))?;
        save_dataset(&valid, &dir.join("valid.txt"))
    })
}

/// `train`: fits the configured model and writes its artifact directory.
pub fn run_train(config_path: &Path, out: &Path) -> Result<ModelArtifact> {
    let (cfg, text) = load_config(config_path)?;
    let (train, valid) = load_data(&cfg)?;
    let started = Instant::now();
    let model = train_model(&cfg, &train, &valid)?;
    log::info!("trained {} in {:.1}s", cfg.kind, started.elapsed().as_secs_f64());
    let data_sha256 = match &cfg.data {
        DataSource::Files { train, valid } => [train, valid]
            .into_iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok((p.display().to_string(), sha256_hex(&bytes)))
            })
            .collect::<Result<_>>()?,
        DataSource::Generated(_) => Vec::new(),
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind,
        seed: cfg.seed,
        config_sha256: sha256_hex(text.as_bytes()),
        data_sha256,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let artifact = ModelArtifact::new(cfg, model);
    write_atomically(out, artifact::MANIFEST_FILE, |dir| {
        serialize_model(&artifact, dir)?;
        let path = dir.join(artifact::MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    })?;
    Ok(artifact)
}

/// `eval`: metric of a saved model on a dataset file.
pub fn run_eval(model_dir: &Path, data_path: &Path) -> Result<(MetricKind, f64)> {
    let artifact = deserialize_model(model_dir)?;
    let data = load_dataset(data_path)?;
    let metric = artifact.config.metric;
    Ok((metric, evaluate(&artifact.model, &data, metric)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub kind: ModelKind,
    /// Validation metric of each repeat.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Percent change of `mean` over the reference row.
    pub relative: f64,
    pub seconds: f64,
    /// `(minutes, metric)` trace of the first repeat.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub metric: MetricKind,
    /// The row improvements are measured against.
    pub reference: ModelKind,
    pub rows: Vec<CompareRow>,
}

struct RunResult {
    value: f64,
    seconds: f64,
    trace: Vec<(f64, f64)>,
}

/// Trains every roster entry `repeats` times on one dataset. Runs execute on
/// a small thread pool; each is fully determined by its own seed.
pub fn compare(cfg: &ExperimentConfig, repeats: usize, train: &Dataset<f64>, valid: &Dataset<f64>) -> Result<CompareTable> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.roster.len())
        .flat_map(|r| (0..repeats).map(move |k| (r, k)))
        .collect();
    let results: Vec<Mutex<Option<Result<RunResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(r, k)) = jobs.get(i) else { break };
                let run_cfg = cfg.for_run(cfg.roster[r], k);
                let started = Instant::now();
                let res = train_model(&run_cfg, train, valid).and_then(|m| {
                    Ok(RunResult {
                        value: evaluate(&m, valid, cfg.metric)?,
                        seconds: started.elapsed().as_secs_f64(),
                        trace: m.trace(),
                    })
                });
                log::info!("{} repeat {k} finished", run_cfg.kind);
                *results[i].lock().expect("unpoisoned") = Some(res);
            });
        }
    });
    let mut runs = results
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every job ran"));
    let mut rows = Vec::with_capacity(cfg.roster.len());
    for &kind in &cfg.roster {
        let mut values = Vec::with_capacity(repeats);
        let mut seconds = 0.0;
        let mut trace = Vec::new();
        for k in 0..repeats {
            let run = runs.next().expect("one result per job").map_err(|e| {
                Error::Config(format!("{kind} failed: {e}"))
            })?;
            values.push(run.value);
            seconds += run.seconds;
            if k == 0 {
                trace = run.trace;
            }
        }
        let mean = values.iter().sum::<f64>() / repeats as f64;
        rows.push(CompareRow {
            kind,
            values,
            mean,
            relative: 0.0,
            seconds: seconds / repeats as f64,
            trace,
        });
    }
    let reference = if cfg.roster.contains(&ModelKind::Baseline) {
        ModelKind::Baseline
    } else {
        cfg.roster[0]
    };
    let base = rows.iter().find(|r| r.kind == reference).expect("reference in roster").mean;
    for row in &mut rows {
        row.relative = relative_improvement(row.mean, base)?;
    }
    Ok(CompareTable {
        metric: cfg.metric,
        reference,
        rows,
    })
}

impl CompareTable {
    pub fn get(&self, kind: ModelKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// Fixed-width text table: model, metric, relative improvement (%).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let metric = self.metric.name();
        let _ = writeln!(s, "{:<10} {:>10} {:>12} {:>10}", "model", metric, "rel_impr_%", "seconds");
        for r in &self.rows {
            let _ = writeln!(s, "{:<10} {:>10.4} {:>12.2} {:>10.1}", r.kind.name(), r.mean, r.relative, r.seconds);
        }
        let _ = writeln!(s, "(relative improvement against {})", self.reference);
        s
    }

    /// Full-precision CSV: `model,metric,value,relative_improvement,seconds,repeats`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,metric,value,relative_improvement,seconds,repeats\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.kind.name(),
                self.metric.name(),
                r.mean,
                r.relative,
                r.seconds,
                r.values.len()
            );
        }
        s
    }
}

/// Line chart of validation metric against minutes, one polyline per row.
pub fn render_svg(table: &CompareTable) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 9] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    ];
    let points: Vec<&(f64, f64)> = table.rows.iter().flat_map(|r| &r.trace).collect();
    let x_max = points.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-9);
    let y_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(1.0);
    let y_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).max(y_min + 1e-9);
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_min) / (y_max - y_min) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">minutes (max {x_max:.2})</text>"#, W / 2.0 - 40.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="5" y="{}" font-size="12">{} [{y_min:.3}, {y_max:.3}]</text>"#,
        PAD - 10.0,
        table.metric.name()
    );
    for (i, r) in table.rows.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !r.trace.is_empty() {
            let pts: Vec<String> = r.trace.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, pts.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - PAD + 5.0 - 90.0,
            PAD + 14.0 * i as f64,
            r.kind.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `compare`: trains the roster and writes `table.txt`, `table.csv` (and
/// `plot.svg` when asked) into `out`. Returns the table.
pub fn run_compare(config_path: &Path, repeats: Option<usize>, out: Option<&Path>, plot: bool) -> Result<CompareTable> {
    let (cfg, _) = load_config(config_path)?;
    let (train, valid) = load_data(&cfg)?;
    let table = compare(&cfg, repeats.unwrap_or(cfg.repeats), &train, &valid)?;
    if let Some(out) = out {
        write_atomically(out, "table.csv", |dir| {
            let put = |name: &str, body: String| {
                let p = dir.join(name);
                fs::write(&p, body).map_err(|e| Error::io(&p, e))
            };
            put("table.txt", table.to_text())?;
            put("table.csv", table.to_csv())?;
            if plot {
                put("plot.svg", render_svg(&table))?;
            }
            Ok(())
        })?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{GenKind, GenSpec};

    pub(crate) fn tiny_config(kind: ModelKind) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            data: DataSource::Generated(GenSpec {
                kind: GenKind::XorBimodal,
                n_train: 80,
                n_valid: 40,
                ..GenSpec::default()
            }),
            iterations: 3,
            ..ExperimentConfig::default()
        };
        c.mlp.hidden = vec![4];
        c.mlp.epochs = 2;
        c.gbm.stages = 4;
        c.fusion.branch_u = vec![4];
        c.fusion.branch_s = vec![4];
        c.fusion.head = vec![];
        c.fusion.epochs = 3;
        c.for_run(kind, 0)
    }

    #[test]
    fn every_kind_round_trips_through_json() {
        for kind in ModelKind::ALL {
            let cfg = tiny_config(kind);
            let (train, valid) = load_data(&cfg).unwrap();
            let model = train_model(&cfg, &train, &valid).unwrap();
            let art = ModelArtifact::new(cfg.clone(), model);
            let back = ModelArtifact::from_json(&art.to_json().unwrap()).unwrap();
            assert_eq!(back.config, cfg, "{kind}");
            assert_eq!(back.predict(&valid).unwrap(), art.predict(&valid).unwrap(), "{kind}");
        }
    }

    #[test]
    fn schema_version_is_checked_first() {
        let cfg = tiny_config(ModelKind::GbmOnly);
        let (train, valid) = load_data(&cfg).unwrap();
        let art = ModelArtifact::new(cfg.clone(), train_model(&cfg, &train, &valid).unwrap());
        let text = art.to_json().unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(matches!(
            ModelArtifact::from_json(&text),
            Err(Error::SchemaVersion { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn compare_reference_row_is_zero() {
        let mut cfg = tiny_config(ModelKind::Baseline);
        cfg.roster = vec![ModelKind::Baseline, ModelKind::OneWlS, ModelKind::GbmOnly];
        let (train, valid) = load_data(&cfg).unwrap();
        let t = compare(&cfg, 2, &train, &valid).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.get(ModelKind::Baseline).unwrap().relative, 0.0);
        for r in &t.rows {
            assert_eq!(r.values.len(), 2);
            assert_eq!(r.relative, relative_improvement(r.mean, t.rows[0].mean).unwrap());
        }
        let svg = render_svg(&t);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
