//! Model-based clustering of multivariate functional data with unsupervised
//! binary trees (fCUBT).
//!
//! The pipeline goes: noisy discrete observations are smoothed into curves
//! ([`smoothing`]), curves are reduced to score vectors by multivariate
//! functional PCA ([`ufpca`], [`mfpca`]), and a binary tree is grown by
//! recursively testing each node's scores for a Gaussian-mixture structure
//! with BIC ([`gmm`], [`fcubt`]). Terminal nodes are then re-merged by a
//! joining step, and the resulting partition classifies new curves through
//! probabilistic descent of the tree.
//!
//! [`simulate`] provides seeded generators for the benchmark scenarios and
//! [`metrics`] the Adjusted Rand Index used to evaluate partitions.

pub use nalgebra;

pub mod error;
pub mod fcubt;
pub mod fdata;
pub mod gmm;
pub mod metrics;
pub mod mfpca;
pub mod seed;
pub mod simulate;
pub mod smoothing;
pub mod ufpca;

pub use error::{Error, Result};
pub use fcubt::{FcubtConfig, FcubtFit, Partition, Prediction, Tree, TreeNode};
pub use fdata::{MultiCurve, MultiFunData, RawComponent, RawCurve, SamplingGrid, UnivariateSample};
pub use gmm::{EmConfig, EmFit, GaussianMixture, KSelection};
pub use mfpca::{MfpcaFit, MfpcaModel, Truncation};
pub use simulate::ScenarioSample;
pub use smoothing::{Kernel, SmootherConfig};
pub use ufpca::UnivariateBasis;
