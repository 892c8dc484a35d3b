//! Vector-output CART regression trees.
//!
//! Splits are chosen greedily to maximise the reduction in squared error
//! summed over every output component. Candidate thresholds are midpoints
//! between consecutive distinct feature values; a sample goes left when its
//! feature is strictly below the threshold. Ties between equally good splits
//! go to the lowest feature index, then the lowest threshold.

use serde::{Deserialize, Serialize};

use crate::domain::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum Node<T> {
    Leaf {
        value: Vec<T>,
    },
    Split {
        feature: usize,
        threshold: T,
        /// Squared-error reduction achieved by this split.
        gain: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
    n_features: usize,
    n_outputs: usize,
    config: TreeConfig,
}

struct SplitCandidate<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

pub fn fit_tree<T: Scalar>(
    features: &Matrix<T>,
    targets: &Matrix<T>,
    config: TreeConfig,
) -> Result<RegressionTree<T>> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput("tree training set"));
    }
    if targets.rows() != n {
        return Err(Error::dim("tree targets", n, targets.rows()));
    }
    if features.cols() == 0 {
        return Err(Error::Config("tree needs at least one feature".into()));
    }
    if targets.cols() == 0 {
        return Err(Error::Config("tree needs at least one output".into()));
    }
    if !targets.is_finite() || !features.is_finite() {
        return Err(Error::Numeric("tree inputs must be finite".into()));
    }
    let mut tree = RegressionTree {
        nodes: Vec::new(),
        n_features: features.cols(),
        n_outputs: targets.cols(),
        config: TreeConfig {
            max_depth: config.max_depth,
            min_samples_leaf: config.min_samples_leaf.max(1),
        },
    };
    let idx: Vec<usize> = (0..n).collect();
    tree.grow(features, targets, idx, 0);
    Ok(tree)
}

impl<T: Scalar> RegressionTree<T> {
    /// Builds a tree from an explicit node arena (root at index 0).
    pub fn from_nodes(
        nodes: Vec<Node<T>>,
        n_features: usize,
        n_outputs: usize,
        config: TreeConfig,
    ) -> Result<Self> {
        let tree = RegressionTree {
            nodes,
            n_features,
            n_outputs,
            config,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Structural checks used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Corrupt("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { value } => {
                    if value.len() != self.n_outputs {
                        return Err(Error::Corrupt(format!(
                            "leaf {i} has {} outputs, expected {}",
                            value.len(),
                            self.n_outputs
                        )));
                    }
                    if value.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Corrupt(format!("leaf {i} is not finite")));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= self.n_features
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                        || !threshold.is_finite()
                    {
                        return Err(Error::Corrupt(format!("split node {i} is malformed")));
                    }
                }
            }
        }
        Ok(())
    }

    fn grow(
        &mut self,
        features: &Matrix<T>,
        targets: &Matrix<T>,
        idx: Vec<usize>,
        depth: usize,
    ) -> usize {
        let node_id = self.nodes.len();
        let m = targets.cols();
        let mut mean = vec![T::zero(); m];
        for &i in &idx {
            for (acc, v) in mean.iter_mut().zip(targets.row(i)) {
                *acc += *v;
            }
        }
        let count = T::from_usize_lossy(idx.len());
        for v in &mut mean {
            *v /= count;
        }
        self.nodes.push(Node::Leaf {
            value: mean.clone(),
        });

        if depth >= self.config.max_depth || idx.len() < 2 * self.config.min_samples_leaf {
            return node_id;
        }
        let Some(split) = self.best_split(features, targets, &idx, &mean) else {
            return node_id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| features.get(i, split.feature) < split.threshold);
        drop(idx);
        let left = self.grow(features, targets, left_idx, depth + 1);
        let right = self.grow(features, targets, right_idx, depth + 1);
        self.nodes[node_id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left,
            right,
        };
        node_id
    }

    fn best_split(
        &self,
        features: &Matrix<T>,
        targets: &Matrix<T>,
        idx: &[usize],
        mean: &[T],
    ) -> Option<SplitCandidate<T>> {
        let n = idx.len();
        let m = mean.len();
        let min_leaf = self.config.min_samples_leaf;
        // Centre the targets so that the parent sum vanishes and the gain is
        // |S_l|^2/n_l + |S_r|^2/n_r.
        let mut centred = vec![T::zero(); n * m];
        let mut energy = T::zero();
        let mut total = vec![T::zero(); m];
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..m {
                let y = targets.get(i, c);
                energy += y * y;
                let v = y - mean[c];
                centred[r * m + c] = v;
                total[c] += v;
            }
        }
        if energy == T::zero() {
            return None;
        }
        let tol = T::epsilon() * T::c(64.0) * energy;

        let mut best: Option<SplitCandidate<T>> = None;
        let mut order: Vec<usize> = (0..n).collect();
        let mut left_sum = vec![T::zero(); m];
        for f in 0..features.cols() {
            order.sort_by(|&a, &b| {
                features
                    .get(idx[a], f)
                    .partial_cmp(&features.get(idx[b], f))
                    .expect("finite features")
            });
            left_sum.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..n - 1 {
                let r = order[k];
                for c in 0..m {
                    left_sum[c] += centred[r * m + c];
                }
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                let lo = features.get(idx[r], f);
                let hi = features.get(idx[order[k + 1]], f);
                if !(lo < hi) {
                    continue;
                }
                let mut l2 = T::zero();
                let mut r2 = T::zero();
                for c in 0..m {
                    let right = total[c] - left_sum[c];
                    l2 += left_sum[c] * left_sum[c];
                    r2 += right * right;
                }
                let gain = l2 / T::from_usize_lossy(n_left) + r2 / T::from_usize_lossy(n_right);
                if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = (lo + hi) * T::c(0.5);
                    if threshold <= lo {
                        threshold = hi;
                    }
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Arena index of the leaf that `x` reaches.
    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, x: &[T]) -> Result<&[T]> {
        if x.len() != self.n_features {
            return Err(Error::dim("tree input", self.n_features, x.len()));
        }
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => Ok(value),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        if features.cols() != self.n_features {
            return Err(Error::dim("tree input", self.n_features, features.cols()));
        }
        let mut out = Matrix::zeros(features.rows(), self.n_outputs);
        for i in 0..features.rows() {
            out.row_mut(i).copy_from_slice(self.predict_row(features.row(i))?);
        }
        Ok(out)
    }

    /// Overwrites the value of leaf `node`.
    pub(crate) fn set_leaf_value(&mut self, node: usize, value: Vec<T>) {
        match &mut self.nodes[node] {
            Node::Leaf { value: v } => *v = value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    /// Total split gain attributed to each feature.
    pub fn feature_gains(&self) -> Vec<T> {
        let mut gains = vec![T::zero(); self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                gains[*feature] += *gain;
            }
        }
        gains
    }
}
