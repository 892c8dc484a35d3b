//! First-order boosting with two weak learners.
//!
//! Starting from `f = 0`, every iteration computes the pseudo-residuals `w`
//! at the current scores, fits a network `g` on the unstructured features and
//! a tree `h` on the structured features to `w` by squared error, then picks
//! steps `(eps, delta)` minimising the training risk of
//! `f + eps * g(x_u) + delta * h(x_s)`.
//!
//! [`Mode::OnlyG`] and [`Mode::OnlyS`] drop one family, which reduces the loop
//! to single-learner gradient-descent boosting; [`train_gd_mcboost`] is that
//! loop written out on its own for cross-checking.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{classify, Codebook, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::mcloss::{compute_w, loss, risk};
use crate::metrics::MetricKind;
use crate::scalar::Scalar;
use crate::stepsearch::{search_steps, Axes, StepConfig};
use crate::weaklearners::{fit_mlp, fit_tree, MlpConfig, MlpLearner, RegressionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Both,
    /// Network on the unstructured modality only.
    OnlyG,
    /// Tree on the structured modality only.
    OnlyS,
}

impl Mode {
    pub fn uses_g(self) -> bool {
        self != Mode::OnlyS
    }

    pub fn uses_h(self) -> bool {
        self != Mode::OnlyG
    }

    pub fn axes(self) -> Axes {
        match self {
            Mode::Both => Axes::Both,
            Mode::OnlyG => Axes::EpsOnly,
            Mode::OnlyS => Axes::DeltaOnly,
        }
    }
}

/// One boosting stage: `eps * g(x_u) + delta * h(x_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StagePair<T> {
    pub g: Option<MlpLearner<T>>,
    pub h: Option<RegressionTree<T>>,
    pub eps: T,
    pub delta: T,
}

impl<T: Scalar> StagePair<T> {
    /// Adds this stage's contribution to `scores` (one row per sample).
    pub fn accumulate(&self, x_u: &Matrix<T>, x_s: &Matrix<T>, scores: &mut Matrix<T>) -> Result<()> {
        if let Some(g) = &self.g {
            add_scaled(scores, &g.predict(x_u)?, self.eps);
        }
        if let Some(h) = &self.h {
            add_scaled(scores, &h.predict(x_s)?, self.delta);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    /// 1-based iteration index.
    pub iter: usize,
    /// Total training risk after the update.
    pub risk: f64,
    pub eps: f64,
    pub delta: f64,
    /// Wall-clock seconds since training started. Not serialized so that
    /// model files stay byte-identical across runs.
    #[serde(skip)]
    pub seconds: f64,
    /// Validation metric after the update, when a validation set is given.
    pub val_metric: Option<f64>,
    /// Selected inner iteration (second-order trainer only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_j: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWlConfig {
    pub iterations: usize,
    pub mode: Mode,
    pub mlp: MlpConfig,
    pub tree: TreeConfig,
    pub step: StepConfig,
    pub metric: MetricKind,
    pub seed: u64,
}

impl Default for TwoWlConfig {
    fn default() -> Self {
        TwoWlConfig {
            iterations: 20,
            mode: Mode::Both,
            mlp: MlpConfig::default(),
            tree: TreeConfig::default(),
            step: StepConfig::default(),
            metric: MetricKind::F1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TwoWlModel<T> {
    pub num_classes: usize,
    pub dim_u: usize,
    pub dim_s: usize,
    pub mode: Mode,
    pub stages: Vec<StagePair<T>>,
    pub history: Vec<IterRecord>,
    /// Risk of the zero predictor on the training set.
    pub initial_risk: f64,
    /// Number of leading stages with the best validation metric.
    pub best_stages: usize,
    /// Inner risks `R_j` per outer iteration (second-order trainer only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner_risks: Vec<Vec<f64>>,
}

impl<T: Scalar> TwoWlModel<T> {
    pub fn empty(num_classes: usize, dim_u: usize, dim_s: usize, mode: Mode) -> Self {
        TwoWlModel {
            num_classes,
            dim_u,
            dim_s,
            mode,
            stages: Vec::new(),
            history: Vec::new(),
            initial_risk: 0.0,
            best_stages: 0,
            inner_risks: Vec::new(),
        }
    }

    pub fn codebook(&self) -> Result<Codebook<T>> {
        Codebook::new(self.num_classes)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Structural checks used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Corrupt("fewer than two classes".into()));
        }
        if self.history.len() != self.stages.len() {
            return Err(Error::Corrupt(format!(
                "{} history rows for {} stages",
                self.history.len(),
                self.stages.len()
            )));
        }
        if self.best_stages > self.stages.len() {
            return Err(Error::Corrupt("best stage count exceeds stage count".into()));
        }
        for (t, s) in self.stages.iter().enumerate() {
            if s.g.is_none() && s.h.is_none() {
                return Err(Error::Corrupt(format!("stage {t} has no learner")));
            }
            if !s.eps.is_finite() || !s.delta.is_finite() {
                return Err(Error::Corrupt(format!("stage {t} has non-finite steps")));
            }
            if let Some(g) = &s.g {
                g.net.validate().map_err(|e| Error::Corrupt(format!("stage {t} network: {e}")))?;
                if g.input_dim() != self.dim_u || g.output_dim() != self.num_classes {
                    return Err(Error::Corrupt(format!("stage {t} network has wrong shape")));
                }
                if !g.net.is_finite() {
                    return Err(Error::Corrupt(format!("stage {t} network is not finite")));
                }
            }
            if let Some(h) = &s.h {
                h.validate()?;
                if h.n_features() != self.dim_s || h.n_outputs() != self.num_classes {
                    return Err(Error::Corrupt(format!("stage {t} tree has wrong shape")));
                }
            }
        }
        Ok(())
    }

    /// Scores `f(x)` using the first `k` stages.
    pub fn scores_at(&self, x_u: &Matrix<T>, x_s: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
        if x_u.rows() != x_s.rows() {
            return Err(Error::dim("modality rows", x_u.rows(), x_s.rows()));
        }
        if x_u.cols() != self.dim_u {
            return Err(Error::dim("unstructured features", self.dim_u, x_u.cols()));
        }
        if x_s.cols() != self.dim_s {
            return Err(Error::dim("structured features", self.dim_s, x_s.cols()));
        }
        let mut scores = Matrix::zeros(x_u.rows(), self.num_classes);
        for stage in self.stages.iter().take(k) {
            stage.accumulate(x_u, x_s, &mut scores)?;
        }
        Ok(scores)
    }

    pub fn scores(&self, x_u: &Matrix<T>, x_s: &Matrix<T>) -> Result<Matrix<T>> {
        self.scores_at(x_u, x_s, self.stages.len())
    }

    pub fn predict_at(&self, data: &Dataset<T>, k: usize) -> Result<Vec<usize>> {
        let cb = self.codebook()?;
        let scores = self.scores_at(&data.x_u(), &data.x_s(), k)?;
        scores.iter_rows().map(|f| classify(f, &cb)).collect()
    }

    /// Predictions of the full model.
    pub fn predict(&self, data: &Dataset<T>) -> Result<Vec<usize>> {
        self.predict_at(data, self.stages.len())
    }

    /// Predictions of the best-validation prefix.
    pub fn predict_best(&self, data: &Dataset<T>) -> Result<Vec<usize>> {
        self.predict_at(data, self.best_stages)
    }
}

/// `predict_2wl`: class indices under the full model.
pub fn predict_2wl<T: Scalar>(model: &TwoWlModel<T>, data: &Dataset<T>) -> Result<Vec<usize>> {
    model.predict(data)
}

fn add_scaled<T: Scalar>(scores: &mut Matrix<T>, out: &Matrix<T>, step: T) {
    for (s, o) in scores.as_mut_slice().iter_mut().zip(out.as_slice()) {
        *s += step * *o;
    }
}

/// Mixes `(seed, t, j)` into a learner seed.
pub(crate) fn derive_seed(seed: u64, t: usize, j: usize) -> u64 {
    let mut z = seed
        ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `w_i` for every row of `scores`.
pub(crate) fn residual_matrix<T: Scalar>(
    scores: &Matrix<T>,
    labels: &[usize],
    cb: &Codebook<T>,
) -> Result<Matrix<T>> {
    let mut w = Matrix::zeros(scores.rows(), scores.cols());
    for (i, &y) in labels.iter().enumerate() {
        w.row_mut(i).copy_from_slice(&compute_w(scores.row(i), y, cb)?);
    }
    Ok(w)
}

/// Training risk of `scores + eps * g + delta * h`; non-finite on overflow.
pub(crate) fn stepped_risk<T: Scalar>(
    scores: &Matrix<T>,
    g: Option<&Matrix<T>>,
    h: Option<&Matrix<T>>,
    labels: &[usize],
    cb: &Codebook<T>,
    eps: T,
    delta: T,
) -> T {
    let m = scores.cols();
    let mut buf = vec![T::zero(); m];
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        buf.copy_from_slice(scores.row(i));
        if let Some(g) = g {
            for (b, v) in buf.iter_mut().zip(g.row(i)) {
                *b += eps * *v;
            }
        }
        if let Some(h) = h {
            for (b, v) in buf.iter_mut().zip(h.row(i)) {
                *b += delta * *v;
            }
        }
        match loss(&buf, y, cb) {
            Ok(l) => total += l,
            Err(_) => return T::nan(),
        }
    }
    total
}

/// Fitted learners and their outputs on the training and validation sets.
pub(crate) struct Fitted<T> {
    pub g: Option<MlpLearner<T>>,
    pub h: Option<RegressionTree<T>>,
    pub g_train: Option<Matrix<T>>,
    pub h_train: Option<Matrix<T>>,
}

/// State shared by the first- and second-order trainers: cached inputs and
/// incrementally maintained scores for both splits.
pub(crate) struct Booster<'a, T> {
    pub cb: Codebook<T>,
    pub mode: Mode,
    pub metric: MetricKind,
    pub labels: Vec<usize>,
    pub x_u: Matrix<T>,
    pub x_s: Matrix<T>,
    pub scores: Matrix<T>,
    pub valid: Option<(&'a Dataset<T>, Matrix<T>, Matrix<T>, Matrix<T>)>,
    pub model: TwoWlModel<T>,
    started: Instant,
    best_metric: f64,
}

impl<'a, T: Scalar> Booster<'a, T> {
    pub fn new(
        train: &Dataset<T>,
        valid: Option<&'a Dataset<T>>,
        mode: Mode,
        metric: MetricKind,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("boosting training set"));
        }
        if let Some(v) = valid {
            train.check_compatible(v)?;
        }
        let m = train.num_classes;
        let cb: Codebook<T> = Codebook::new(m)?;
        let labels = train.labels();
        let scores = Matrix::zeros(train.len(), m);
        let mut model = TwoWlModel::empty(m, train.dim_u, train.dim_s, mode);
        model.initial_risk = risk(&scores, &labels, &cb)?.total_risk.to_f64_lossy();
        let valid = valid.map(|v| (v, v.x_u(), v.x_s(), Matrix::zeros(v.len(), m)));
        Ok(Booster {
            cb,
            mode,
            metric,
            labels,
            x_u: train.x_u(),
            x_s: train.x_s(),
            scores,
            valid,
            model,
            started: Instant::now(),
            best_metric: f64::NEG_INFINITY,
        })
    }

    pub fn residuals(&self) -> Result<Matrix<T>> {
        residual_matrix(&self.scores, &self.labels, &self.cb)
    }

    /// Fits the active learners to `g_targets` / `h_targets`.
    pub fn fit(
        &self,
        g_targets: &Matrix<T>,
        h_targets: &Matrix<T>,
        mlp: &MlpConfig,
        tree: TreeConfig,
        seed: u64,
    ) -> Result<Fitted<T>> {
        let (g, g_train) = if self.mode.uses_g() {
            let cfg = MlpConfig {
                seed,
                ..mlp.clone()
            };
            let g = fit_mlp(&self.x_u, g_targets, &cfg)?;
            let out = g.predict(&self.x_u)?;
            (Some(g), Some(out))
        } else {
            (None, None)
        };
        let (h, h_train) = if self.mode.uses_h() {
            let h = fit_tree(&self.x_s, h_targets, tree)?;
            let out = h.predict(&self.x_s)?;
            (Some(h), Some(out))
        } else {
            (None, None)
        };
        Ok(Fitted { g, h, g_train, h_train })
    }

    pub fn search(&self, fitted: &Fitted<T>, step: &StepConfig, seed: u64) -> Result<(T, T, T)> {
        let cfg = StepConfig { seed, ..*step };
        let res = search_steps(
            |e, d| {
                stepped_risk(
                    &self.scores,
                    fitted.g_train.as_ref(),
                    fitted.h_train.as_ref(),
                    &self.labels,
                    &self.cb,
                    e,
                    d,
                )
            },
            &cfg,
            self.mode.axes(),
        )?;
        Ok((res.eps, res.delta, res.risk_at_optimum))
    }

    /// Appends the stage, updates both score caches and records history.
    pub fn commit(&mut self, fitted: Fitted<T>, eps: T, delta: T, inner_j: Option<usize>) -> Result<()> {
        let eps = if fitted.g.is_some() { eps } else { T::zero() };
        let delta = if fitted.h.is_some() { delta } else { T::zero() };
        if let Some(g) = &fitted.g_train {
            add_scaled(&mut self.scores, g, eps);
        }
        if let Some(h) = &fitted.h_train {
            add_scaled(&mut self.scores, h, delta);
        }
        let stage = StagePair {
            g: fitted.g,
            h: fitted.h,
            eps,
            delta,
        };
        let val_metric = match &mut self.valid {
            Some((v, vu, vs, vscores)) => {
                stage.accumulate(vu, vs, vscores)?;
                let preds = vscores
                    .iter_rows()
                    .map(|f| classify(f, &self.cb))
                    .collect::<Result<Vec<_>>>()?;
                Some(self.metric.evaluate(&preds, &v.labels(), v.num_classes)?)
            }
            None => None,
        };
        let total = risk(&self.scores, &self.labels, &self.cb)?.total_risk;
        self.model.stages.push(stage);
        let iter = self.model.stages.len();
        if let Some(v) = val_metric {
            if v > self.best_metric {
                self.best_metric = v;
                self.model.best_stages = iter;
            }
        } else {
            self.model.best_stages = iter;
        }
        self.model.history.push(IterRecord {
            iter,
            risk: total.to_f64_lossy(),
            eps: eps.to_f64_lossy(),
            delta: delta.to_f64_lossy(),
            seconds: self.started.elapsed().as_secs_f64(),
            val_metric,
            inner_j,
        });
        log::debug!(
            "iteration {iter}: risk {} eps {eps} delta {delta} val {val_metric:?}",
            total
        );
        Ok(())
    }

    pub fn finish(self) -> TwoWlModel<T> {
        self.model
    }
}

/// Runs first-order two-learner boosting for `config.iterations` iterations.
pub fn train_2wl<T: Scalar>(
    train: &Dataset<T>,
    valid: Option<&Dataset<T>>,
    config: &TwoWlConfig,
) -> Result<TwoWlModel<T>> {
    config.step.validate()?;
    let mut b = Booster::new(train, valid, config.mode, config.metric)?;
    for t in 0..config.iterations {
        let mut step = || -> Result<()> {
            let w = b.residuals()?;
            let fitted = b.fit(&w, &w, &config.mlp, config.tree, derive_seed(config.seed, t, 0))?;
            let (eps, delta, _) = b.search(&fitted, &config.step, derive_seed(config.seed ^ 0x57e9, t, 0))?;
            b.commit(fitted, eps, delta, None)
        };
        step().map_err(|e| e.at_iteration(t + 1))?;
    }
    Ok(b.finish())
}

/// Single-learner gradient-descent boosting with trees on the structured
/// modality: fit a tree to `w`, then search `delta` alone. Returns the
/// `(tree, delta)` sequence.
pub fn train_gd_mcboost<T: Scalar>(
    train: &Dataset<T>,
    iterations: usize,
    tree: TreeConfig,
    step: &StepConfig,
    seed: u64,
) -> Result<Vec<(RegressionTree<T>, T)>> {
    step.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("boosting training set"));
    }
    let cb = Codebook::new(train.num_classes)?;
    let labels = train.labels();
    let x = train.x_s();
    let mut f = Matrix::zeros(train.len(), train.num_classes);
    let mut out = Vec::with_capacity(iterations);
    for t in 0..iterations {
        let w = residual_matrix(&f, &labels, &cb)?;
        let h = fit_tree(&x, &w, tree).map_err(|e| e.at_iteration(t + 1))?;
        let h_out = h.predict(&x)?;
        let cfg = StepConfig {
            seed: derive_seed(seed ^ 0x57e9, t, 0),
            ..*step
        };
        let res = search_steps(
            |_, d| stepped_risk(&f, None, Some(&h_out), &labels, &cb, T::zero(), d),
            &cfg,
            Axes::DeltaOnly,
        )
        .map_err(|e| e.at_iteration(t + 1))?;
        add_scaled(&mut f, &h_out, res.delta);
        out.push((h, res.delta));
    }
    Ok(out)
}

/// Writes `iter,risk,eps,delta,seconds,val_metric` (plus `inner_j` when asked).
pub fn write_history_csv<W: Write>(mut out: W, history: &[IterRecord], with_inner: bool) -> std::io::Result<()> {
    write!(out, "iter,risk,eps,delta,seconds,val_metric")?;
    if with_inner {
        write!(out, ",inner_j")?;
    }
    writeln!(out)?;
    for r in history {
        let val = r.val_metric.map_or_else(String::new, |v| v.to_string());
        write!(out, "{},{},{},{},{},{}", r.iter, r.risk, r.eps, r.delta, r.seconds, val)?;
        if with_inner {
            write!(out, ",{}", r.inner_j.map_or_else(String::new, |j| j.to_string()))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
