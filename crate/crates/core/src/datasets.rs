//! Synthetic bimodal datasets, tabular modality splitting, and the dataset
//! text format.
//!
//! Every generator is a pure function of its [`GenSpec`]: global parameters
//! (separators, class means) come from ChaCha stream 0 of the seed and sample
//! `i` draws from stream `i + 1`, so output never depends on evaluation order.
//!
//! Dataset file layout: a header line `M dim_u dim_s n`, then one line per
//! sample holding the label, `dim_u` values and `dim_s` values, separated by
//! single spaces. Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{BimodalSample, Dataset, DatasetMeta, Matrix};
use crate::error::{Error, Result};
use crate::gbm::{fit_gbm, GbmConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    SplitTabular,
    LinearMargin,
    Shapes,
    XorBimodal,
}

impl GenKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "split_tabular" => Ok(GenKind::SplitTabular),
            "linear_margin" => Ok(GenKind::LinearMargin),
            "shapes" => Ok(GenKind::Shapes),
            "xor_bimodal" => Ok(GenKind::XorBimodal),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n_train: usize,
    pub n_valid: usize,
    pub dim_u: usize,
    pub dim_s: usize,
    pub num_classes: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// linear_margin: prior of class 0.
    pub class0_prior: f64,
    /// linear_margin: unstructured blobs are centred at `+-blob_mean * 1`.
    pub blob_mean: f64,
    /// shapes: raster side length.
    pub image_side: usize,
    /// shapes: spread of the class-conditional structured means.
    pub class_separation: f64,
    /// xor_bimodal: standard deviation around the +-1 latent-bit coordinate.
    pub blob_noise: f64,
    /// xor_bimodal: label signal on each modality's leakage coordinate.
    pub leakage: f64,
    /// split_tabular: rank columns by GBM gain instead of shuffling.
    pub importance_split: bool,
    /// split_tabular: optional CSV source (header row, `label` column).
    pub source: Option<String>,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            kind: GenKind::XorBimodal,
            n_train: 1000,
            n_valid: 200,
            dim_u: 4,
            dim_s: 4,
            num_classes: 2,
            noise_rate: 0.09,
            seed: 0,
            class0_prior: 0.47,
            blob_mean: 0.5,
            image_side: 32,
            class_separation: 1.0,
            blob_noise: 0.3,
            leakage: 0.5,
            importance_split: false,
            source: None,
        }
    }
}

impl GenSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_valid
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must lie in [0, 1), got {}",
                self.noise_rate
            )));
        }
        if self.dim_u == 0 || self.dim_s == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Shape drawn into a raster by [`gen_shapes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Triangle,
    Rectangle,
}

struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn global(&self) -> ChaCha8Rng {
        self.stream(0)
    }

    fn sample(&self, i: usize) -> ChaCha8Rng {
        self.stream(i as u64 + 1)
    }

    fn stream(&self, s: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(s);
        r.set_word_pos(0);
        r
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// With probability `rate`, replaces `label` by a uniformly chosen different class.
fn inject_noise(label: usize, m: usize, rate: f64, rng: &mut impl Rng) -> usize {
    if rate > 0.0 && rng.random::<f64>() < rate {
        (label + 1 + rng.random_range(0..m - 1)) % m
    } else {
        label
    }
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::c(*x)).collect()
}

fn finish<T: Scalar>(
    spec: &GenSpec,
    samples: Vec<BimodalSample<T>>,
    clean: Vec<usize>,
    dim_u: usize,
    dim_s: usize,
) -> Result<Dataset<T>> {
    let mut ds = Dataset::new(samples, spec.num_classes, dim_u, dim_s)?;
    ds.seed = Some(spec.seed);
    ds.meta.clean_labels = Some(clean);
    Ok(ds)
}

/// Binary data whose structured modality is linearly separable by a fixed
/// unit vector `w` (`w.x_s > 0` exactly for class 0 before noise).
pub fn gen_linear_margin<T: Scalar>(spec: &GenSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    if spec.num_classes != 2 {
        return Err(Error::Config("linear_margin is binary".into()));
    }
    let streams = Streams::new(spec.seed);
    let separator = separator(spec);
    let _ = streams.global();
    let mut samples = Vec::with_capacity(spec.total());
    let mut clean = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let mut rng = streams.sample(i);
        let class = usize::from(rng.random::<f64>() >= spec.class0_prior);
        let mut x_s: Vec<f64>;
        loop {
            x_s = (0..spec.dim_s).map(|_| normal(&mut rng)).collect();
            let side: f64 = x_s.iter().zip(&separator).map(|(a, b)| a * b).sum();
            if side == 0.0 {
                continue;
            }
            if (side > 0.0) != (class == 0) {
                x_s.iter_mut().for_each(|v| *v = -*v);
            }
            break;
        }
        let centre = if class == 0 { spec.blob_mean } else { -spec.blob_mean };
        let x_u: Vec<f64> = (0..spec.dim_u).map(|_| centre + normal(&mut rng)).collect();
        let label = inject_noise(class, 2, spec.noise_rate, &mut rng);
        clean.push(class);
        samples.push(BimodalSample {
            x_u: to_t(&x_u),
            x_s: to_t(&x_s),
            label,
        });
    }
    finish(spec, samples, clean, spec.dim_u, spec.dim_s)
}

/// The fixed unit separator used by [`gen_linear_margin`].
pub fn separator(spec: &GenSpec) -> Vec<f64> {
    let mut rng = Streams::new(spec.seed).global();
    loop {
        let w: Vec<f64> = (0..spec.dim_s).map(|_| normal(&mut rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return w.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Bounding-box side limits `(min, max)` for a class at the given raster side.
fn shape_size_limits(class: usize, side: usize) -> (usize, usize) {
    // Minimums at the 128-pixel reference size, per class.
    const MIN_AT_128: [f64; 3] = [10.0, 20.0, 15.0];
    let max = (side / 2).max(2);
    let min = ((MIN_AT_128[class] * side as f64 / 128.0).round() as usize).clamp(2, max);
    (min, max)
}

fn draw_shape(img: &mut [f64], side: usize, kind: ShapeKind, min: usize, max: usize, rng: &mut impl Rng) {
    let w = rng.random_range(min..=max);
    let h = rng.random_range(min..=max);
    let x0 = rng.random_range(0..=side - w);
    let y0 = rng.random_range(0..=side - h);
    match kind {
        ShapeKind::Rectangle => {
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    img[y * side + x] = 0.0;
                }
            }
        }
        ShapeKind::Triangle => {
            // Upright triangle: apex centred on the top edge, base on the bottom edge.
            let (ax, ay) = (x0 as f64 + (w - 1) as f64 / 2.0, y0 as f64);
            let (bx, by) = (x0 as f64, (y0 + h - 1) as f64);
            let (cx, cy) = ((x0 + w - 1) as f64, (y0 + h - 1) as f64);
            let edge = |px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64| {
                (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            };
            let area = edge(cx, cy, ax, ay, bx, by);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    let (px, py) = (x as f64, y as f64);
                    let e0 = edge(px, py, ax, ay, bx, by) * area.signum();
                    let e1 = edge(px, py, bx, by, cx, cy) * area.signum();
                    let e2 = edge(px, py, cx, cy, ax, ay) * area.signum();
                    if e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0 {
                        img[y * side + x] = 0.0;
                    }
                }
            }
        }
    }
}

/// Renders one raster for `class`; returns the pixels and the kinds drawn.
fn render_shapes(class: usize, side: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<ShapeKind>) {
    let (min, max) = shape_size_limits(class, side);
    loop {
        let count = rng.random_range(1..=10);
        let mut img = vec![1.0; side * side];
        let mut kinds = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = match class {
                1 => ShapeKind::Triangle,
                2 => ShapeKind::Rectangle,
                _ => {
                    if rng.random::<bool>() {
                        ShapeKind::Triangle
                    } else {
                        ShapeKind::Rectangle
                    }
                }
            };
            draw_shape(&mut img, side, kind, min, max, rng);
            kinds.push(kind);
        }
        if img.contains(&1.0) {
            return (img, kinds);
        }
    }
}

/// Three-class rasters (mixed / triangles / rectangles on white) paired with
/// class-conditional Gaussian structured features.
pub fn gen_shapes<T: Scalar>(spec: &GenSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    if spec.num_classes != 3 {
        return Err(Error::Config("shapes has exactly 3 classes".into()));
    }
    if spec.image_side < 8 {
        return Err(Error::Config(format!(
            "image side must be at least 8, got {}",
            spec.image_side
        )));
    }
    let side = spec.image_side;
    let streams = Streams::new(spec.seed);
    let mut g = streams.global();
    let means: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..spec.dim_s)
                .map(|_| spec.class_separation * normal(&mut g))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.total());
    let mut clean = Vec::with_capacity(spec.total());
    let mut kinds_all = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let mut rng = streams.sample(i);
        let class = rng.random_range(0..3);
        let (img, kinds) = render_shapes(class, side, &mut rng);
        let x_s: Vec<f64> = means[class].iter().map(|m| m + normal(&mut rng)).collect();
        let label = inject_noise(class, 3, spec.noise_rate, &mut rng);
        clean.push(class);
        kinds_all.push(kinds);
        samples.push(BimodalSample {
            x_u: to_t(&img),
            x_s: to_t(&x_s),
            label,
        });
    }
    let mut ds = finish(spec, samples, clean, side * side, spec.dim_s)?;
    ds.meta.shape_kinds = Some(kinds_all);
    Ok(ds)
}

/// Binary XOR of two latent bits, one carried by each modality. Coordinate 0
/// of each modality encodes its bit as `+-1` plus Gaussian noise; coordinate 1
/// (when present) carries `leakage * (+-1)` of the label plus unit noise; the
/// rest is nuisance noise.
pub fn gen_xor_bimodal<T: Scalar>(spec: &GenSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    if spec.num_classes != 2 {
        return Err(Error::Config("xor_bimodal is binary".into()));
    }
    let streams = Streams::new(spec.seed);
    let mut samples = Vec::with_capacity(spec.total());
    let mut clean = Vec::with_capacity(spec.total());
    let modality = |bit: usize, label: usize, dim: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
        (0..dim)
            .map(|j| match j {
                0 => sign(bit) + spec.blob_noise * normal(rng),
                1 => spec.leakage * sign(label) + normal(rng),
                _ => normal(rng),
            })
            .collect()
    };
    for i in 0..spec.total() {
        let mut rng = streams.sample(i);
        let b_s = usize::from(rng.random::<bool>());
        let b_u = usize::from(rng.random::<bool>());
        let class = b_s ^ b_u;
        let x_s = modality(b_s, class, spec.dim_s, &mut rng);
        let x_u = modality(b_u, class, spec.dim_u, &mut rng);
        let label = inject_noise(class, 2, spec.noise_rate, &mut rng);
        clean.push(class);
        samples.push(BimodalSample {
            x_u: to_t(&x_u),
            x_s: to_t(&x_s),
            label,
        });
    }
    finish(spec, samples, clean, spec.dim_u, spec.dim_s)
}

/// Synthetic census-like tabular source: `dim_u + dim_s` standard-normal
/// columns and a binary label from a sparse linear score with decaying weights.
pub fn gen_tabular_source(spec: &GenSpec) -> Result<(Matrix<f64>, Vec<usize>)> {
    spec.validate()?;
    let d = spec.dim_u + spec.dim_s;
    let streams = Streams::new(spec.seed);
    let mut g = streams.global();
    let mut weights: Vec<f64> = (0..d).map(|j| 2.0 / (1.0 + j as f64)).collect();
    weights.shuffle(&mut g);
    let mut data = Vec::with_capacity(spec.total() * d);
    let mut labels = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let mut rng = streams.sample(i);
        let row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let score: f64 = row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + normal(&mut rng);
        let class = usize::from(score > 0.0);
        labels.push(inject_noise(class, 2, spec.noise_rate, &mut rng));
        data.extend(row);
    }
    Ok((Matrix::from_vec(spec.total(), d, data)?, labels))
}

/// Splits tabular columns into the structured (`S`) and unstructured (`U`)
/// modalities: `ceil(d/2)` columns go to `S`, either at random or by GBM gain.
pub fn split_tabular<T: Scalar>(
    features: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
    importance_split: bool,
    split_seed: u64,
    gbm: GbmConfig,
) -> Result<Dataset<T>> {
    let d = features.cols();
    if d < 2 {
        return Err(Error::Config(format!(
            "need at least 2 columns to split, got {d}"
        )));
    }
    if labels.len() != features.rows() {
        return Err(Error::dim("tabular labels", features.rows(), labels.len()));
    }
    let n_s = d.div_ceil(2);
    let mut order: Vec<usize> = (0..d).collect();
    if importance_split {
        let model = fit_gbm(features, labels, num_classes, gbm)?;
        let gains = model.feature_importance();
        order.sort_by(|&a, &b| {
            gains[b]
                .partial_cmp(&gains[a])
                .expect("finite gains")
                .then(a.cmp(&b))
        });
    } else {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    }
    let mut s_cols = order[..n_s].to_vec();
    let mut u_cols = order[n_s..].to_vec();
    s_cols.sort_unstable();
    u_cols.sort_unstable();
    let samples = (0..features.rows())
        .map(|i| {
            let row = features.row(i);
            BimodalSample {
                x_u: u_cols.iter().map(|&j| row[j]).collect(),
                x_s: s_cols.iter().map(|&j| row[j]).collect(),
                label: labels[i],
            }
        })
        .collect();
    let mut ds = Dataset::new(samples, num_classes, u_cols.len(), s_cols.len())?;
    ds.seed = Some(split_seed);
    ds.meta.column_split = Some((s_cols, u_cols));
    Ok(ds)
}

/// Reads numeric CSV with a header row; the `label` column holds class indices.
pub fn read_tabular_csv(path: &Path) -> Result<(Matrix<f64>, Vec<usize>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let label_col = names.iter().position(|n| n == "label").ok_or(Error::Parse {
        line: 1,
        message: "no `label` column".into(),
    })?;
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_col)
        .map(|(_, n)| n.clone())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::Parse {
                line: ln + 1,
                message: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        for (j, c) in cells.iter().enumerate() {
            if j == label_col {
                labels.push(c.parse::<usize>().map_err(|e| Error::Parse {
                    line: ln + 1,
                    message: format!("bad label `{c}`: {e}"),
                })?);
            } else {
                data.push(c.parse::<f64>().map_err(|e| Error::Parse {
                    line: ln + 1,
                    message: format!("bad value `{c}`: {e}"),
                })?);
            }
        }
    }
    let rows = labels.len();
    Ok((Matrix::from_vec(rows, feature_names.len(), data)?, labels, feature_names))
}

/// Generates the dataset described by `spec` and splits it into
/// `(train, valid)` with the first `n_train` samples for training.
pub fn generate<T: Scalar>(spec: &GenSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    let full: Dataset<T> = match spec.kind {
        GenKind::LinearMargin => gen_linear_margin(spec)?,
        GenKind::Shapes => gen_shapes(spec)?,
        GenKind::XorBimodal => gen_xor_bimodal(spec)?,
        GenKind::SplitTabular => {
            let (x, y, m) = match &spec.source {
                Some(path) => {
                    let (x, y, _) = read_tabular_csv(Path::new(path))?;
                    let m = y.iter().max().map_or(2, |v| v + 1).max(2);
                    (x, y, m)
                }
                None => {
                    let (x, y) = gen_tabular_source(spec)?;
                    (x, y, 2)
                }
            };
            let x_t = Matrix::from_vec(
                x.rows(),
                x.cols(),
                x.as_slice().iter().map(|v| T::c(*v)).collect(),
            )?;
            let gbm = GbmConfig {
                stages: 30,
                ..GbmConfig::default()
            };
            split_tabular(&x_t, &y, m, spec.importance_split, spec.seed, gbm)?
        }
    };
    Ok(split_at(full, spec.n_train))
}

/// Splits off the first `n` samples; metadata is split alongside.
pub fn split_at<T: Scalar>(mut ds: Dataset<T>, n: usize) -> (Dataset<T>, Dataset<T>) {
    let n = n.min(ds.len());
    let tail = ds.samples.split_off(n);
    let mut meta_tail = DatasetMeta {
        column_split: ds.meta.column_split.clone(),
        ..DatasetMeta::default()
    };
    if let Some(c) = ds.meta.clean_labels.as_mut() {
        meta_tail.clean_labels = Some(c.split_off(n));
    }
    if let Some(k) = ds.meta.shape_kinds.as_mut() {
        meta_tail.shape_kinds = Some(k.split_off(n));
    }
    let valid = Dataset {
        samples: tail,
        num_classes: ds.num_classes,
        dim_u: ds.dim_u,
        dim_s: ds.dim_s,
        seed: ds.seed,
        meta: meta_tail,
    };
    (ds, valid)
}

pub fn format_dataset<T: Scalar>(ds: &Dataset<T>) -> String {
    let mut out = String::new();
    writeln!(out, "{} {} {} {}", ds.num_classes, ds.dim_u, ds.dim_s, ds.len()).expect("string write");
    for s in &ds.samples {
        write!(out, "{}", s.label).expect("string write");
        for v in s.x_u.iter().chain(&s.x_s) {
            write!(out, " {v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    fs::write(path, format_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn parse_dataset<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header `{header}`: {e}"),
        })?;
    let [m, dim_u, dim_s, n] = fields[..] else {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `M dim_u dim_s n`, got `{header}`"),
        });
    };
    let width = 1 + dim_u + dim_s;
    let mut samples = Vec::with_capacity(n);
    for row in 0..n {
        let line_no = row + 2;
        let line = lines.next().ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("file truncated: expected {n} samples, found {row}"),
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "sample row {row} has {} fields, header implies {width}",
                    tokens.len()
                ),
            });
        }
        let label = tokens[0].parse::<usize>().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad label `{}`: {e}", tokens[0]),
        })?;
        let mut values = Vec::with_capacity(dim_u + dim_s);
        for tok in &tokens[1..] {
            values.push(tok.parse::<T>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad value `{tok}`"),
            })?);
        }
        let x_s = values.split_off(dim_u);
        samples.push(BimodalSample {
            x_u: values,
            x_s,
            label,
        });
    }
    if let Some((extra, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Parse {
            line: n + 2 + extra,
            message: "unexpected data after the last sample".into(),
        });
    }
    Dataset::new(samples, m, dim_u, dim_s).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}
