//! Kernel construction and score tests for the nonlinear-interaction
//! hypothesis.
//!
//! For two feature groups with kernels `k₁` and `k₂`, the null model is the
//! additive space with kernel `k₀ = k₁ + k₂`, and the interaction direction
//! is the product kernel `k₁₂ = k₁·k₂`, realized on a shared sample as the
//! Hadamard product of the group Gram matrices. Embedding both in the family
//! `k_δ = k₀ + δ·k₁₂`, the derivative in `δ` at the null is exactly `K₁₂`,
//! so testing `δ = 0` is a variance-component score test with `∂K₀ = K₁₂`.
//!
//! Group Gram matrices are double-centered by default so that constants and
//! main effects are excluded from the product space; without centering,
//! `k₁·k₂` retains main-effect components and the interaction direction
//! overlaps the null space.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::cvek_from_grams;
use crate::error::{Error, Result};
use crate::kernel::{center_gram, gram_matrix, hadamard, sum_grams, GramMatrix, KernelSpec};
use crate::score::{variance_component_test, TestResult};

/// Null and derivative kernel matrices for the interaction test.
#[derive(Debug, Clone)]
pub struct InteractionKernels {
    /// Additive null kernel `K₀ = K₁ + K₂`.
    pub k0: GramMatrix,
    /// Pure-interaction kernel `K₁₂ = K₁ ∘ K₂`.
    pub k12: GramMatrix,
    /// Group-1 Gram matrix (centered when requested).
    pub k1: GramMatrix,
    /// Group-2 Gram matrix (centered when requested).
    pub k2: GramMatrix,
}

/// Builds the group, null, and interaction Gram matrices for two feature
/// groups observed on the same samples.
///
/// With `center` set (the default used throughout), each group Gram matrix is
/// double-centered before the sum and product are formed.
pub fn build_interaction_kernels(
    spec1: &KernelSpec,
    spec2: &KernelSpec,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    center: bool,
) -> Result<InteractionKernels> {
    if x1.nrows() != x2.nrows() {
        return Err(Error::InvalidInput(format!(
            "feature groups must share samples; got {} and {} rows",
            x1.nrows(),
            x2.nrows()
        )));
    }
    let mut k1 = gram_matrix(spec1, x1)?;
    let mut k2 = gram_matrix(spec2, x2)?;
    if center {
        k1 = center_gram(&k1);
        k2 = center_gram(&k2);
    }
    let k0 = sum_grams(&k1, &k2)?;
    let k12 = hadamard(&k1, &k2)?;
    Ok(InteractionKernels { k0, k12, k1, k2 })
}

/// Tests for a nonlinear interaction between the two groups: a
/// variance-component score test of the product-kernel direction `K₁₂`
/// against the additive null `K₀`.
pub fn interaction_test(kernels: &InteractionKernels, y: &DVector<f64>) -> Result<TestResult> {
    variance_component_test(kernels.k0.clone(), &kernels.k12, y)
}

/// Interaction test with an ensemble null kernel.
///
/// Each library entry defines a candidate additive kernel
/// `K₀_d = K₁_d + K₂_d` over centered group Gram matrices; the ensemble
/// stages run over these candidates, and the derivative kernel is the
/// weight-matched combination `∂K̂₀ = Σ_d û_d·(K₁_d ∘ K₂_d)`, keeping the
/// tested direction consistent with the ensemble's implied product space.
pub fn interaction_test_cvek(
    library: &[KernelSpec],
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<TestResult> {
    if library.is_empty() {
        return Err(Error::InvalidInput("empty kernel library".into()));
    }
    if x1.nrows() != x2.nrows() || x1.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "rows of both groups and the response must match; got {}, {}, {}",
            x1.nrows(),
            x2.nrows(),
            y.len()
        )));
    }
    let mut nulls = Vec::with_capacity(library.len());
    let mut products = Vec::with_capacity(library.len());
    for spec in library {
        let kernels = build_interaction_kernels(spec, spec, x1, x2, true)?;
        nulls.push(kernels.k0);
        products.push(kernels.k12);
    }
    let ensemble = cvek_from_grams(library, &nulls, y)?;
    let n = y.len();
    let mut dk_values = DMatrix::zeros(n, n);
    for (product, &w) in products.iter().zip(ensemble.weights.iter()) {
        dk_values += product.values() * w;
    }
    let dk0 = GramMatrix::new_unchecked(dk_values, "ensemble-interaction");
    variance_component_test(ensemble.k_hat.clone(), &dk0, y)
}
