//! Two-branch joint networks.
//!
//! Branch 1 embeds the unstructured features, branch 2 embeds either the raw
//! structured features (the baseline) or the standardized boosted feature
//! vectors of a fitted GBM (BFV+DNN). The two embeddings are fused by
//! concatenation or element-wise product and a head network maps the result
//! to `M` logits, trained end to end with softmax cross-entropy.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{argmax, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::gbm::GbmModel;
use crate::metrics::MetricKind;
use crate::scalar::Scalar;
use crate::weaklearners::{Activation, DenseStack, Optimizer, OptimizerConfig, StackGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Concat,
    Product,
}

impl Fusion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Fusion::Concat),
            "product" => Ok(Fusion::Product),
            other => Err(Error::Config(format!("unknown fusion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Raw structured features feed branch 2.
    Baseline,
    /// Boosted feature vectors feed branch 2.
    Bfv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Layer widths of branch 1 after its input; the last is the embedding size.
    pub branch_u: Vec<usize>,
    /// Layer widths of branch 2 after its input.
    pub branch_s: Vec<usize>,
    /// Hidden widths of the head; the `M`-wide output layer is appended.
    pub head: Vec<usize>,
    pub fusion: Fusion,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub metric: MetricKind,
    pub standardize_bfv: bool,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            branch_u: vec![32, 16],
            branch_s: vec![32, 16],
            head: vec![16],
            fusion: Fusion::Concat,
            optimizer: OptimizerConfig {
                learning_rate: 3e-3,
                ..OptimizerConfig::default()
            },
            epochs: 50,
            batch_size: 32,
            metric: MetricKind::F1,
            standardize_bfv: true,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branch_u.is_empty() || self.branch_s.is_empty() {
            return Err(Error::Config("each branch needs at least one layer".into()));
        }
        if self.branch_u.iter().chain(&self.branch_s).chain(&self.head).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.fusion == Fusion::Product && self.branch_u.last() != self.branch_s.last() {
            return Err(Error::Config(format!(
                "product fusion needs equal branch outputs, got {} and {}",
                self.branch_u.last().expect("non-empty"),
                self.branch_s.last().expect("non-empty")
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn fused_dim(&self) -> usize {
        let a = *self.branch_u.last().expect("validated");
        let b = *self.branch_s.last().expect("validated");
        match self.fusion {
            Fusion::Concat => a + b,
            Fusion::Product => a,
        }
    }
}

/// Per-dimension affine map to zero mean and unit variance on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    /// Reciprocal standard deviation; 1 for constant columns.
    pub inv_std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &Matrix<T>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyInput("standardizer input"));
        }
        let n = T::from_usize_lossy(x.rows());
        let mut mean = vec![T::zero(); x.cols()];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (*v - *m) * (*v - *m);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > T::epsilon() {
                    T::one() / sd
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Standardizer { mean, inv_std })
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.mean.len() {
            return Err(Error::dim("standardizer input", self.mean.len(), x.cols()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - *m) * *s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

/// Gradients of the mean cross-entropy with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads<T> {
    pub branch_u: StackGrads<T>,
    pub branch_s: StackGrads<T>,
    pub head: StackGrads<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FusionModel<T> {
    pub variant: Variant,
    pub num_classes: usize,
    pub dim_u: usize,
    pub dim_s: usize,
    pub branch_u: DenseStack<T>,
    pub branch_s: DenseStack<T>,
    pub head: DenseStack<T>,
    pub fusion: Fusion,
    pub standardizer: Option<Standardizer<T>>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl<T: Scalar> FusionModel<T> {
    /// Randomly initialised network for the given input widths.
    pub fn build(
        variant: Variant,
        num_classes: usize,
        dim_u: usize,
        dim_s: usize,
        branch_s_input: usize,
        config: &FusionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = |input: usize, rest: &[usize]| {
            let mut v = vec![input];
            v.extend_from_slice(rest);
            v
        };
        let branch_u = DenseStack::random(&sizes(dim_u, &config.branch_u), Activation::Relu, &mut rng)?;
        let branch_s = DenseStack::random(&sizes(branch_s_input, &config.branch_s), Activation::Relu, &mut rng)?;
        let mut head_sizes = sizes(config.fused_dim(), &config.head);
        head_sizes.push(num_classes);
        let head = DenseStack::random(&head_sizes, Activation::Identity, &mut rng)?;
        Ok(FusionModel {
            variant,
            num_classes,
            dim_u,
            dim_s,
            branch_u,
            branch_s,
            head,
            fusion: config.fusion,
            standardizer: None,
            history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("branch 1", &self.branch_u), ("branch 2", &self.branch_s), ("head", &self.head)] {
            s.validate().map_err(|e| Error::Corrupt(format!("{name}: {e}")))?;
        }
        if self.branch_u.input_dim() != self.dim_u {
            return Err(Error::Corrupt("branch 1 input width".into()));
        }
        if self.variant == Variant::Baseline && self.branch_s.input_dim() != self.dim_s {
            return Err(Error::Corrupt("branch 2 input width".into()));
        }
        let fused = match self.fusion {
            Fusion::Concat => self.branch_u.output_dim() + self.branch_s.output_dim(),
            Fusion::Product => {
                if self.branch_u.output_dim() != self.branch_s.output_dim() {
                    return Err(Error::Corrupt("product fusion with unequal branch widths".into()));
                }
                self.branch_u.output_dim()
            }
        };
        if self.head.input_dim() != fused || self.head.output_dim() != self.num_classes {
            return Err(Error::Corrupt("head shape".into()));
        }
        if let Some(st) = &self.standardizer {
            let w = self.branch_s.input_dim();
            if st.mean.len() != w || st.inv_std.len() != w {
                return Err(Error::Corrupt("standardizer width".into()));
            }
            if st.mean.iter().chain(&st.inv_std).any(|v| !v.is_finite()) {
                return Err(Error::Corrupt("standardizer is not finite".into()));
            }
        }
        Ok(())
    }

    /// Branch-2 input for raw structured features.
    pub fn structured_input(&self, x_s: &Matrix<T>, gbm: Option<&GbmModel<T>>) -> Result<Matrix<T>> {
        let raw = match self.variant {
            Variant::Baseline => x_s.clone(),
            Variant::Bfv => {
                let gbm = gbm.ok_or_else(|| Error::State("BFV model needs its GBM".into()))?;
                gbm.extract_bfv_matrix(x_s)?
            }
        };
        match &self.standardizer {
            Some(st) => st.apply(&raw),
            None => Ok(raw),
        }
    }

    fn fuse(&self, a: &[T], b: &[T]) -> Vec<T> {
        match self.fusion {
            Fusion::Concat => a.iter().chain(b).copied().collect(),
            Fusion::Product => a.iter().zip(b).map(|(x, y)| *x * *y).collect(),
        }
    }

    /// Head logits for already-prepared branch inputs.
    pub fn logits(&self, x_u: &[T], s_in: &[T]) -> Vec<T> {
        let a = self.branch_u.forward(x_u);
        let b = self.branch_s.forward(s_in);
        self.head.forward(&self.fuse(&a, &b))
    }

    /// Class probabilities for prepared inputs (`n x M`).
    pub fn probabilities(&self, x_u: &Matrix<T>, s_in: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_inputs(x_u, s_in)?;
        let mut out = Matrix::zeros(x_u.rows(), self.num_classes);
        for i in 0..x_u.rows() {
            out.row_mut(i).copy_from_slice(&softmax(&self.logits(x_u.row(i), s_in.row(i))));
        }
        Ok(out)
    }

    fn check_inputs(&self, x_u: &Matrix<T>, s_in: &Matrix<T>) -> Result<()> {
        if x_u.cols() != self.branch_u.input_dim() {
            return Err(Error::dim("branch 1 input", self.branch_u.input_dim(), x_u.cols()));
        }
        if s_in.cols() != self.branch_s.input_dim() {
            return Err(Error::dim("branch 2 input", self.branch_s.input_dim(), s_in.cols()));
        }
        if x_u.rows() != s_in.rows() {
            return Err(Error::dim("branch rows", x_u.rows(), s_in.rows()));
        }
        Ok(())
    }

    pub fn predict_prepared(&self, x_u: &Matrix<T>, s_in: &Matrix<T>) -> Result<Vec<usize>> {
        self.check_inputs(x_u, s_in)?;
        Ok((0..x_u.rows())
            .map(|i| argmax(&self.logits(x_u.row(i), s_in.row(i))))
            .collect())
    }

    pub fn predict(&self, data: &Dataset<T>, gbm: Option<&GbmModel<T>>) -> Result<Vec<usize>> {
        if data.dim_u != self.dim_u {
            return Err(Error::dim("unstructured features", self.dim_u, data.dim_u));
        }
        if data.dim_s != self.dim_s {
            return Err(Error::dim("structured features", self.dim_s, data.dim_s));
        }
        let s_in = self.structured_input(&data.x_s(), gbm)?;
        self.predict_prepared(&data.x_u(), &s_in)
    }

    /// Mean cross-entropy over `rows` and its gradient, accumulated into `grads`.
    fn accumulate(
        &self,
        x_u: &Matrix<T>,
        s_in: &Matrix<T>,
        labels: &[usize],
        rows: &[usize],
        grads: &mut FusionGrads<T>,
    ) -> T {
        let inv = T::one() / T::from_usize_lossy(rows.len().max(1));
        let mut loss = T::zero();
        for &i in rows {
            let ta = self.branch_u.forward_trace(x_u.row(i));
            let tb = self.branch_s.forward_trace(s_in.row(i));
            let (a, b) = (ta.output(), tb.output());
            let z = self.fuse(a, b);
            let th = self.head.forward_trace(&z);
            let p = softmax(th.output());
            let y = labels[i];
            loss -= p[y].max(T::min_positive_value()).ln();
            let mut d_logits: Vec<T> = p.iter().map(|v| *v * inv).collect();
            d_logits[y] -= inv;
            let dz = self.head.backward(&th, &d_logits, &mut grads.head);
            let (da, db): (Vec<T>, Vec<T>) = match self.fusion {
                Fusion::Concat => (dz[..a.len()].to_vec(), dz[a.len()..].to_vec()),
                Fusion::Product => (
                    dz.iter().zip(b).map(|(d, v)| *d * *v).collect(),
                    dz.iter().zip(a).map(|(d, v)| *d * *v).collect(),
                ),
            };
            self.branch_u.backward(&ta, &da, &mut grads.branch_u);
            self.branch_s.backward(&tb, &db, &mut grads.branch_s);
        }
        loss * inv
    }

    fn zero_grads(&self) -> FusionGrads<T> {
        FusionGrads {
            branch_u: StackGrads::zeros_like(&self.branch_u),
            branch_s: StackGrads::zeros_like(&self.branch_s),
            head: StackGrads::zeros_like(&self.head),
        }
    }

    /// Mean cross-entropy over all rows of prepared inputs and its gradient.
    pub fn loss_and_gradients(
        &self,
        x_u: &Matrix<T>,
        s_in: &Matrix<T>,
        labels: &[usize],
    ) -> Result<(T, FusionGrads<T>)> {
        self.check_inputs(x_u, s_in)?;
        if labels.len() != x_u.rows() {
            return Err(Error::dim("fusion labels", x_u.rows(), labels.len()));
        }
        let mut grads = self.zero_grads();
        let rows: Vec<usize> = (0..x_u.rows()).collect();
        let loss = self.accumulate(x_u, s_in, labels, &rows, &mut grads);
        Ok((loss, grads))
    }

    fn is_finite(&self) -> bool {
        self.branch_u.is_finite() && self.branch_s.is_finite() && self.head.is_finite()
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|v| (*v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|v| v / total).collect()
}

/// Trains a baseline (`gbm = None`) or BFV+DNN (`gbm = Some`) network and keeps
/// the weights of the epoch with the best validation metric.
pub fn train_fusion<T: Scalar>(
    train: &Dataset<T>,
    valid: Option<&Dataset<T>>,
    gbm: Option<&GbmModel<T>>,
    config: &FusionConfig,
) -> Result<FusionModel<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("fusion training set"));
    }
    if let Some(v) = valid {
        train.check_compatible(v)?;
    }
    let variant = if gbm.is_some() { Variant::Bfv } else { Variant::Baseline };
    let x_s = train.x_s();
    let s_raw = match gbm {
        Some(g) => g.extract_bfv_matrix(&x_s)?,
        None => x_s,
    };
    let mut model = FusionModel::build(variant, train.num_classes, train.dim_u, train.dim_s, s_raw.cols(), config)?;
    if variant == Variant::Bfv && config.standardize_bfv {
        model.standardizer = Some(Standardizer::fit(&s_raw)?);
    }
    let s_in = match &model.standardizer {
        Some(st) => st.apply(&s_raw)?,
        None => s_raw,
    };
    let x_u = train.x_u();
    let labels = train.labels();
    let valid_in = match valid {
        Some(v) => Some((v.x_u(), model.structured_input(&v.x_s(), gbm)?, v.labels(), v.num_classes)),
        None => None,
    };

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf05e_d0e5);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, FusionModel<T>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            grads.branch_u.clear();
            grads.branch_s.clear();
            grads.head.clear();
            let loss = model.accumulate(&x_u, &s_in, &labels, batch, &mut grads);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let FusionModel { branch_u, branch_s, head, .. } = &mut model;
            optimizer.step(
                &mut [branch_u, branch_s, head],
                &[&grads.branch_u, &grads.branch_s, &grads.head],
            );
            total += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_metric = match &valid_in {
            Some((vu, vs, vl, m)) => Some(config.metric.evaluate(&model.predict_prepared(vu, vs)?, vl, *m)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: (total / T::from_usize_lossy(batches)).to_f64_lossy(),
            val_metric,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("fusion epoch {epoch}: loss {} val {val_metric:?}", history[epoch - 1].train_loss);
        // Without a validation set the last epoch wins.
        let score = val_metric.unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(s, _)| score > *s || val_metric.is_none()) {
            let mut snapshot = model.clone();
            snapshot.best_epoch = epoch;
            best = Some((score, snapshot));
        }
    }
    let (_, mut kept) = best.expect("at least one epoch");
    kept.history = history;
    Ok(kept)
}

pub fn predict_fusion<T: Scalar>(
    model: &FusionModel<T>,
    data: &Dataset<T>,
    gbm: Option<&GbmModel<T>>,
) -> Result<Vec<usize>> {
    model.predict(data, gbm)
}

/// Writes `epoch,train_loss,val_metric,seconds`.
pub fn write_epoch_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_metric,seconds")?;
    for r in history {
        let val = r.val_metric.map_or_else(String::new, |v| v.to_string());
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, val, r.seconds)?;
    }
    Ok(())
}
