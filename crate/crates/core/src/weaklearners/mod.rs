//! The two weak-learner families: CART regression trees for the structured
//! modality and small MLPs for the unstructured one. Both fit `n x M`
//! targets by squared error and predict an `n x M` [`LearnerOutput`].

pub mod mlp;
pub mod tree;

pub use mlp::{
    fit_mlp, Activation, Dense, DenseStack, MlpConfig, MlpLearner, Optimizer, OptimizerConfig,
    OptimizerKind, StackGrads,
};
pub use tree::{fit_tree, Node, RegressionTree, TreeConfig};

/// Per-sample learner predictions, one row per input sample.
pub type LearnerOutput<T> = crate::domain::Matrix<T>;
