//! Gaussian-process score tests for nonlinear effects, built on REML-fitted
//! null models and cross-validated kernel ensembles.
//!
//! The crate provides:
//!
//! - [`kernel`]: kernel families (linear, quadratic, RBF, Matérn, arcsine
//!   neural-network) and Gram-matrix construction, plus Hadamard products and
//!   double centering.
//! - [`null_model`]: restricted-maximum-likelihood fits of the null model
//!   `y = μ·1 + h + ε` with `h ~ N(0, τK₀)` and `ε ~ N(0, σ²I)`.
//! - [`score`]: the variance-component score statistic for an added kernel
//!   direction, its Satterthwaite reference distribution, and p-values.
//! - [`ensemble`]: cross-validated kernel ensembles — per-kernel ridge tuning
//!   by leave-one-out cross validation, ensemble weights on the nonnegative
//!   unit sphere, and reconstruction of the implied kernel matrix.
//! - [`interaction`]: null/derivative kernel construction for the
//!   nonlinear-interaction hypothesis and the end-to-end interaction test.
//! - [`simulate`]: Monte-Carlo scenarios that estimate rejection rates of the
//!   interaction test under configurable ground-truth kernels.
//! - [`strategy`]: named modeling strategies (fixed kernels, median/REML
//!   bandwidth selection, ensemble libraries) shared by the simulator and the
//!   command-line front end.

pub mod ensemble;
pub mod error;
pub mod interaction;
pub mod kernel;
pub mod linalg;
pub mod null_model;
pub mod score;
pub mod simulate;
pub mod strategy;

pub use ensemble::{cvek, BaseKernelFit, EnsembleFit};
pub use error::{Error, Result};
pub use interaction::{
    build_interaction_kernels, interaction_test, interaction_test_cvek, InteractionKernels,
};
pub use kernel::{center_gram, eval_kernel, gram_matrix, hadamard, GramMatrix, KernelSpec};
pub use null_model::{fit_null_reml, posterior_mean, reml_objective, NullModelFit};
pub use score::{
    effective_information, pvalue, satterthwaite, score_statistic, variance_component_test,
    TestResult,
};
pub use simulate::{generate_dataset, run_scenario, sample_gp_function, SimReport, SimScenario};
pub use strategy::Strategy;
