//! Joint learning over a structured and an unstructured feature modality.
//!
//! Three model families share this crate:
//!
//! * BFV+DNN: a gradient-boosted tree model on the structured features
//!   supplies boosted feature vectors to one branch of a two-branch network
//!   ([`gbm`], [`fusionnet`]).
//! * First-order two-weak-learner boosting: every stage fits a network on the
//!   unstructured features and a tree on the structured features to the same
//!   pseudo-residuals, then searches both step sizes ([`boost2wl`]).
//! * Second-order two-weak-learner boosting: an inner loop alternates between
//!   fitting both learners to curvature-corrected targets and re-searching
//!   the steps ([`boost2wl2o`]).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the instantiations the CLI uses.

pub mod boost2wl;
pub mod boost2wl2o;
pub mod datasets;
pub mod domain;
pub mod error;
pub mod fusionnet;
pub mod gbm;
pub mod harness;
pub mod mcloss;
pub mod metrics;
pub mod scalar;
pub mod stepsearch;
pub mod weaklearners;

pub use domain::{classify, BimodalSample, Codebook, Dataset, Matrix, ScoreVector};
pub use error::{Error, Result};
pub use metrics::{confusion_and_metrics, relative_improvement, MetricKind};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Codebook64 = Codebook<f64>;
pub type RegressionTree64 = weaklearners::RegressionTree<f64>;
pub type MlpLearner64 = weaklearners::MlpLearner<f64>;
pub type GbmModel64 = gbm::GbmModel<f64>;
pub type TwoWlModel64 = boost2wl::TwoWlModel<f64>;
pub type TwoWlModel32 = boost2wl::TwoWlModel<f32>;
pub type FusionModel64 = fusionnet::FusionModel<f64>;
