//! Gradient-boosted tree classifier over structured features and the
//! boosted-feature-vector (BFV) extraction built on it.
//!
//! Binary problems fit one tree per stage on the logistic-loss residual;
//! `M > 2` classes fit one tree per class per stage on softmax residuals.
//! Leaf values are a single Newton step per leaf (with the `(M-1)/M`
//! correction in the multiclass case) and are stored *without* the
//! learning-rate factor, which is what the BFV exposes. Consequently
//!
//! `predict_raw(x)[i] == init[i] + learning_rate * sum_j bfv(x)[j][i]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{argmax, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weaklearners::{fit_tree, Node, RegressionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    pub stages: usize,
    pub learning_rate: f64,
    pub tree: TreeConfig,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            stages: 100,
            learning_rate: 0.1,
            tree: TreeConfig {
                max_depth: 3,
                min_samples_leaf: 1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GbmModel<T> {
    num_classes: usize,
    n_features: usize,
    learning_rate: T,
    init_scores: Vec<T>,
    /// `trees[stage][class]`; one class slot in the binary case.
    trees: Vec<Vec<RegressionTree<T>>>,
    config: Option<GbmConfig>,
    /// Training loss (mean logistic / cross-entropy) after each stage, starting
    /// with the initial scores.
    train_loss: Vec<f64>,
}

/// Raw leaf values of one sample, `stages x outputs`, stored stage-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedFeatureVector<T> {
    pub outputs: usize,
    pub stages: usize,
    values: Vec<T>,
}

impl<T: Scalar> BoostedFeatureVector<T> {
    /// Leaf value of tree (class `class`, stage `stage`).
    pub fn get(&self, class: usize, stage: usize) -> T {
        self.values[stage * self.outputs + class]
    }

    /// Flattened, stage-major: stage 0 classes 0..M, then stage 1, ...
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softmax_into<T: Scalar>(scores: &[T], out: &mut [T]) {
    let max = scores.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
    let mut total = T::zero();
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (*s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Mean logistic (binary) or cross-entropy (multiclass) loss of raw scores.
fn mean_loss<T: Scalar>(raw: &Matrix<T>, labels: &[usize], num_classes: usize) -> f64 {
    let n = labels.len().max(1) as f64;
    let mut total = 0.0;
    if num_classes == 2 {
        for (i, &y) in labels.iter().enumerate() {
            let s = raw.get(i, 0).to_f64_lossy();
            // log(1 + exp(-s)) for y = 1, log(1 + exp(s)) for y = 0
            let z = if y == 1 { -s } else { s };
            total += z.max(0.0) + (-z.abs()).exp().ln_1p();
        }
    } else {
        for (i, &y) in labels.iter().enumerate() {
            let row: Vec<f64> = raw.row(i).iter().map(|v| v.to_f64_lossy()).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
    }
    total / n
}

/// Assigns a Newton-step value to every leaf of `tree` from the samples routed to it.
fn set_newton_leaves<T: Scalar>(
    tree: &mut RegressionTree<T>,
    features: &Matrix<T>,
    residual: &[T],
    hessian: &[T],
    factor: T,
) {
    let mut num = vec![T::zero(); tree.nodes().len()];
    let mut den = vec![T::zero(); tree.nodes().len()];
    for i in 0..features.rows() {
        let leaf = tree.leaf_index(features.row(i));
        num[leaf] += residual[i];
        den[leaf] += hessian[i];
    }
    let leaves: Vec<usize> = tree
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, Node::Leaf { .. }))
        .map(|(i, _)| i)
        .collect();
    for leaf in leaves {
        let value = if den[leaf].abs() < T::c(1e-150).max(T::min_positive_value()) {
            T::zero()
        } else {
            factor * num[leaf] / den[leaf]
        };
        tree.set_leaf_value(leaf, vec![value]);
    }
}

pub fn fit_gbm<T: Scalar>(
    features: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
    config: GbmConfig,
) -> Result<GbmModel<T>> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::dim("gbm labels", n, labels.len()));
    }
    if n < 2 {
        return Err(Error::EmptyInput("gbm needs at least two samples"));
    }
    if num_classes < 2 {
        return Err(Error::Config("gbm needs at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Domain(format!("label {bad} out of range")));
    }
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Err(Error::DegenerateLabels);
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Config("gbm learning rate must be positive".into()));
    }

    let outputs = if num_classes == 2 { 1 } else { num_classes };
    let lr = T::c(config.learning_rate);
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let init_scores: Vec<T> = if num_classes == 2 {
        let p = counts[1] as f64 / n as f64;
        vec![T::c((p / (1.0 - p)).ln())]
    } else {
        counts
            .iter()
            .map(|&c| T::c((c.max(1) as f64 / n as f64).ln()))
            .collect()
    };

    let mut raw = Matrix::zeros(n, outputs);
    for i in 0..n {
        raw.row_mut(i).copy_from_slice(&init_scores);
    }
    let mut train_loss = vec![mean_loss(&raw, labels, num_classes)];
    let mut trees = Vec::with_capacity(config.stages);
    let mut residual = vec![T::zero(); n];
    let mut hessian = vec![T::zero(); n];
    let mut target = Matrix::zeros(n, 1);
    let mut probs = Matrix::zeros(n, outputs);

    for _stage in 0..config.stages {
        for i in 0..n {
            if num_classes == 2 {
                probs.set(i, 0, sigmoid(raw.get(i, 0)));
            } else {
                let mut p = vec![T::zero(); outputs];
                softmax_into(raw.row(i), &mut p);
                probs.row_mut(i).copy_from_slice(&p);
            }
        }
        let factor = if num_classes == 2 {
            T::one()
        } else {
            T::c((num_classes as f64 - 1.0) / num_classes as f64)
        };
        let mut stage_trees = Vec::with_capacity(outputs);
        for k in 0..outputs {
            let positive = if num_classes == 2 { 1 } else { k };
            for i in 0..n {
                let y = if labels[i] == positive { T::one() } else { T::zero() };
                let p = probs.get(i, k);
                residual[i] = y - p;
                hessian[i] = if num_classes == 2 {
                    p * (T::one() - p)
                } else {
                    residual[i].abs() * (T::one() - residual[i].abs())
                };
                target.set(i, 0, residual[i]);
            }
            let mut tree = fit_tree(features, &target, config.tree)?;
            set_newton_leaves(&mut tree, features, &residual, &hessian, factor);
            stage_trees.push(tree);
        }
        for i in 0..n {
            for (k, tree) in stage_trees.iter().enumerate() {
                let leaf = tree.predict_row(features.row(i))?[0];
                let v = raw.get(i, k) + lr * leaf;
                raw.set(i, k, v);
            }
        }
        train_loss.push(mean_loss(&raw, labels, num_classes));
        trees.push(stage_trees);
    }

    Ok(GbmModel {
        num_classes,
        n_features: features.cols(),
        learning_rate: lr,
        init_scores,
        trees,
        config: Some(config),
        train_loss,
    })
}

impl<T: Scalar> GbmModel<T> {
    /// Assembles a model from explicit parts (trees must have scalar leaves).
    pub fn from_parts(
        num_classes: usize,
        n_features: usize,
        learning_rate: T,
        init_scores: Vec<T>,
        trees: Vec<Vec<RegressionTree<T>>>,
    ) -> Result<Self> {
        let model = GbmModel {
            num_classes,
            n_features,
            learning_rate,
            init_scores,
            trees,
            config: None,
            train_loss: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_fitted()?;
        let outputs = self.outputs();
        if self.init_scores.len() != outputs {
            return Err(Error::Corrupt("gbm init scores have wrong length".into()));
        }
        for stage in &self.trees {
            if stage.len() != outputs {
                return Err(Error::Corrupt("gbm stage has wrong tree count".into()));
            }
            for t in stage {
                t.validate()?;
                if t.n_outputs() != 1 || t.n_features() != self.n_features {
                    return Err(Error::Corrupt("gbm tree has wrong shape".into()));
                }
            }
        }
        Ok(())
    }

    fn check_fitted(&self) -> Result<()> {
        if self.num_classes < 2 || self.init_scores.is_empty() {
            return Err(Error::State("gbm model is not fitted".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_stages(&self) -> usize {
        self.trees.len()
    }

    /// Score columns: 1 for binary, `M` otherwise.
    pub fn outputs(&self) -> usize {
        if self.num_classes == 2 {
            1
        } else {
            self.num_classes
        }
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn init_scores(&self) -> &[T] {
        &self.init_scores
    }

    pub fn trees(&self) -> &[Vec<RegressionTree<T>>] {
        &self.trees
    }

    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    /// Length of a flattened BFV: `outputs * stages`.
    pub fn bfv_len(&self) -> usize {
        self.outputs() * self.num_stages()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        self.check_fitted()?;
        if cols != self.n_features {
            return Err(Error::dim("gbm input", self.n_features, cols));
        }
        Ok(())
    }

    /// Staged decision function: `init + learning_rate * sum of leaf values`.
    pub fn predict_raw(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(features.cols())?;
        let outputs = self.outputs();
        let mut raw = Matrix::zeros(features.rows(), outputs);
        for i in 0..features.rows() {
            let x = features.row(i);
            let row = raw.row_mut(i);
            row.copy_from_slice(&self.init_scores);
            for stage in &self.trees {
                for (k, tree) in stage.iter().enumerate() {
                    row[k] += self.learning_rate * tree.predict_row(x)?[0];
                }
            }
        }
        Ok(raw)
    }

    pub fn predict(&self, features: &Matrix<T>) -> Result<Vec<usize>> {
        let raw = self.predict_raw(features)?;
        Ok(raw
            .iter_rows()
            .map(|r| {
                if self.num_classes == 2 {
                    usize::from(r[0] > T::zero())
                } else {
                    argmax(r)
                }
            })
            .collect())
    }

    pub fn extract_bfv(&self, x_s: &[T]) -> Result<BoostedFeatureVector<T>> {
        self.check_input(x_s.len())?;
        let outputs = self.outputs();
        let mut values = Vec::with_capacity(outputs * self.num_stages());
        for stage in &self.trees {
            for tree in stage {
                values.push(tree.predict_row(x_s)?[0]);
            }
        }
        Ok(BoostedFeatureVector {
            outputs,
            stages: self.num_stages(),
            values,
        })
    }

    /// Flattened BFVs for every row, `n x (outputs * stages)`.
    pub fn extract_bfv_matrix(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(features.cols())?;
        let mut out = Matrix::zeros(features.rows(), self.bfv_len());
        for i in 0..features.rows() {
            let bfv = self.extract_bfv(features.row(i))?;
            out.row_mut(i).copy_from_slice(bfv.as_slice());
        }
        Ok(out)
    }

    /// Summed split gain per input feature over every tree.
    pub fn feature_importance(&self) -> Vec<T> {
        let mut total = vec![T::zero(); self.n_features];
        for stage in &self.trees {
            for tree in stage {
                for (t, g) in total.iter_mut().zip(tree.feature_gains()) {
                    *t += g;
                }
            }
        }
        total
    }
}

/// Writes BFVs as CSV with header `bfv_0,...,bfv_{K-1}`.
pub fn write_bfv_csv<T: Scalar, W: Write>(mut out: W, bfv: &Matrix<T>) -> std::io::Result<()> {
    let header: Vec<String> = (0..bfv.cols()).map(|j| format!("bfv_{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in bfv.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
