//! Federated transfer learning for sparse high-dimensional generalized linear
//! models.
//!
//! The library fits L1-penalized GLMs (gaussian and logistic) on data that is
//! split two ways at once: across *sites* (hospitals, biobanks — data cannot
//! leave a site) and across *populations* (one target population of interest
//! plus one or more source populations whose coefficients may differ from the
//! target's by a sparse shift).  Estimation proceeds in communication rounds:
//! sites exchange only gradients and Hessians of their local losses evaluated
//! at shared anchor points, the coordinator assembles quadratic surrogate
//! losses from those summaries, and all penalized model fitting happens on the
//! surrogates.  A final aggregation step guards against negative transfer by
//! selecting, on held-out validation data, between the transfer estimate and a
//! target-only estimate.
//!
//! Module map:
//!
//! * [`glm`] — losses, gradients, Hessians of canonical-link GLMs over row
//!   subsets of a site/population-partitioned dataset.
//! * [`solver`] — accelerated proximal-gradient solver for L1-penalized smooth
//!   objectives, soft/hard thresholding, cross-validation.
//! * [`federation`] — site nodes, the gradient/Hessian wire format, quadratic
//!   surrogates, and the communication ledger.
//! * [`estimators`] — pooled and federated transfer-learning estimators,
//!   initialization strategies, and the negative-transfer-robust aggregation.
//! * [`sim`] — synthetic genotype scenario generator (block-AR covariances,
//!   Hardy-Weinberg categorization, sparse coefficient settings).
//! * [`metrics`] — estimation error, AUC, and quintile odds-ratio metrics.
//! * [`experiment`] — replicated experiment runner with CSV/JSON reporting.
//!
//! Numeric kernels (`glm`, `solver`, `metrics`) are generic over the scalar
//! type through [`scalar::Scalar`]; the federation layer and everything above
//! it is fixed to `f64` because the wire format transmits little-endian
//! float64 payloads.  The crate-root aliases below pin the concrete types used
//! throughout the higher layers.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod federation;
pub mod glm;
pub mod metrics;
pub mod scalar;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete scalar type used by the federation layer and the estimators.
pub type Real = f64;
/// Dense vector of [`Real`].
pub type Vector = ndarray::Array1<Real>;
/// Dense row-major matrix of [`Real`].
pub type Matrix = ndarray::Array2<Real>;
/// Site/population-partitioned dataset over [`Real`].
pub type Dataset = glm::PartitionedDataset<Real>;
