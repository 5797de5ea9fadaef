//! Cross-validated kernel ensembles.
//!
//! Three stages turn a library of kernel specs into a single data-adaptive
//! kernel matrix:
//!
//! 1. For each base kernel, tune the ridge penalty `λ_d` by minimizing the
//!    leave-one-out cross-validation error, computed with the closed-form
//!    shortcut `e_i = (y_i − ĥ_i)/(1 − A_ii)` where `A = K(K + λI)⁻¹`.
//! 2. Find ensemble weights `û = argmin ‖Σ_d u_d·ε̂_d‖²` over the nonnegative
//!    unit sphere `{u : u ≥ 0, ‖u‖₂ = 1}`, and form `Â = Σ_d û_d·A_d`.
//! 3. Reconstruct the kernel matrix implied by the ensemble hat matrix:
//!    eigendecompose `Â = U·diag(δ)·Uᵀ`, clip `δ` into `[0, 1−1e−6]`, and
//!    return `K̂ = U·diag(δ/(1−δ))·Uᵀ`, which satisfies `K̂(K̂ + I)⁻¹ = Â`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, GramMatrix, KernelSpec};
use crate::linalg::{log_spaced, scale_columns, sym_eigen_sorted};

/// Number of points on the ridge-penalty grid.
const LAMBDA_GRID_SIZE: usize = 30;

/// Hat-matrix eigenvalue ceiling used when reconstructing the kernel.
const EIG_CEILING: f64 = 1.0 - 1e-6;

/// Largest library size solved by exact support enumeration; beyond this a
/// projected-gradient solver takes over.
const ENUMERATION_LIMIT: usize = 12;

/// One tuned base kernel of the ensemble.
#[derive(Debug, Clone)]
pub struct BaseKernelFit {
    /// The kernel this fit belongs to.
    pub spec: KernelSpec,
    /// Ridge penalty selected by LOOCV.
    pub lambda_hat: f64,
    /// Hat matrix `A_d = K_d(K_d + λ̂_d·I)⁻¹`.
    pub a_d: DMatrix<f64>,
    /// Leave-one-out residual vector at `λ̂_d`.
    pub loocv_vec: DVector<f64>,
}

/// A fitted kernel ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    /// Ensemble weights on the nonnegative unit sphere.
    pub weights: DVector<f64>,
    /// Ensemble hat matrix `Â = Σ_d u_d·A_d`.
    pub a_hat: DMatrix<f64>,
    /// Kernel matrix reconstructed from `Â`.
    pub k_hat: GramMatrix,
    /// Per-kernel tuning results.
    pub base_fits: Vec<BaseKernelFit>,
    /// How many eigenvalues of `Â` required clipping during reconstruction.
    pub clip_events: usize,
}

/// The built-in RBF library: `σ = e^k` for `k ∈ {−2, −1, 0, 1, 2}`.
pub fn rbf_library() -> Vec<KernelSpec> {
    (-2..=2)
        .map(|k| KernelSpec::Rbf {
            sigma: (k as f64).exp(),
        })
        .collect()
}

/// The built-in neural-network library: `σ ∈ {0.1, 1, 10, 50}`.
pub fn nn_library() -> Vec<KernelSpec> {
    [0.1, 1.0, 10.0, 50.0]
        .into_iter()
        .map(|sigma| KernelSpec::NeuralNet { sigma })
        .collect()
}

/// Eigendecomposition-backed ridge smoother pieces for one kernel matrix.
struct RidgePieces {
    u: DMatrix<f64>,
    d: DVector<f64>,
    /// `Uᵀy`.
    z: DVector<f64>,
}

impl RidgePieces {
    fn new(k: &GramMatrix, y: &DVector<f64>) -> Result<Self> {
        if k.dim() != y.len() {
            return Err(Error::InvalidInput(format!(
                "kernel dimension {} does not match response length {}",
                k.dim(),
                y.len()
            )));
        }
        let (u, mut d) = sym_eigen_sorted(k.values());
        let max_eig = d[d.len() - 1].max(0.0);
        if d[0] < -1e-8 * max_eig.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "kernel matrix `{}` is not PSD",
                k.spec_tag()
            )));
        }
        d.iter_mut().for_each(|v| *v = v.max(0.0));
        let z = u.transpose() * y;
        Ok(RidgePieces { u, d, z })
    }

    /// Shrinkage factors `d_i/(d_i + λ)`.
    fn shrinkage(&self, lambda: f64) -> DVector<f64> {
        DVector::from_iterator(self.d.len(), self.d.iter().map(|&d| d / (d + lambda)))
    }

    /// Leave-one-out residuals at the given penalty via the closed-form
    /// shortcut.
    fn loocv(&self, lambda: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = y.len();
        let s = self.shrinkage(lambda);
        let h = &self.u * DVector::from_iterator(n, self.z.iter().zip(s.iter()).map(|(&z, &s)| z * s));
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let a_ii: f64 = (0..n).map(|k| self.u[(i, k)] * self.u[(i, k)] * s[k]).sum();
            if a_ii >= 1.0 - 1e-12 {
                return Err(Error::Degenerate(format!(
                    "hat diagonal reaches 1 at observation {i} (lambda = {lambda:.3e})"
                )));
            }
            out[i] = (y[i] - h[i]) / (1.0 - a_ii);
        }
        Ok(out)
    }

    /// Dense hat matrix at the given penalty.
    fn hat_matrix(&self, lambda: f64) -> DMatrix<f64> {
        let s = self.shrinkage(lambda);
        scale_columns(&self.u, &s) * self.u.transpose()
    }
}

/// Leave-one-out residuals `(y_i − ĥ_i)/(1 − A_ii)` for kernel ridge
/// regression with penalty `lambda`; equals the residuals of `n` explicit
/// refits, each omitting one observation.
pub fn loocv_vector(k_d: &GramMatrix, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive; got {lambda}")));
    }
    RidgePieces::new(k_d, y)?.loocv(lambda, y)
}

/// The default ridge-penalty grid for a kernel matrix: 30 log-spaced values
/// in `[1e−5, 1e3]` scaled by `trace(K)/n`.
pub fn lambda_grid(k_d: &GramMatrix) -> Result<Vec<f64>> {
    let scale = k_d.values().trace() / k_d.dim() as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Tuning(format!(
            "kernel `{}` has nonpositive trace; nothing to tune",
            k_d.spec_tag()
        )));
    }
    Ok(log_spaced(1e-5, 1e3, LAMBDA_GRID_SIZE)
        .into_iter()
        .map(|g| g * scale)
        .collect())
}

/// Selects the ridge penalty minimizing the squared LOOCV error over an
/// explicit grid; returns the winner and its residual vector.
pub fn tune_lambda_on_grid(
    k_d: &GramMatrix,
    y: &DVector<f64>,
    grid: &[f64],
) -> Result<(f64, DVector<f64>)> {
    if grid.is_empty() {
        return Err(Error::Tuning("empty penalty grid".into()));
    }
    let pieces = RidgePieces::new(k_d, y)?;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for &lambda in grid {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Tuning(format!("invalid grid penalty {lambda}")));
        }
        let vec = match pieces.loocv(lambda, y) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        let sse = vec.norm_squared();
        if best.as_ref().map_or(true, |(s, _, _)| sse < *s) {
            best = Some((sse, lambda, vec));
        }
    }
    best.map(|(_, lambda, vec)| (lambda, vec)).ok_or_else(|| {
        Error::Tuning(format!(
            "all penalty grid points degenerate for kernel `{}`",
            k_d.spec_tag()
        ))
    })
}

/// Selects the ridge penalty on the default grid (see [`lambda_grid`]).
pub fn tune_lambda(k_d: &GramMatrix, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    if y.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "tuning needs at least 5 observations; got {}",
            y.len()
        )));
    }
    let grid = lambda_grid(k_d)?;
    tune_lambda_on_grid(k_d, y, &grid)
}

/// A candidate solution of the weight problem.
#[derive(Debug, Clone)]
struct WeightCandidate {
    weights: DVector<f64>,
    objective: f64,
    support_size: usize,
    support_mask: u32,
    uniform: bool,
}

fn objective(g: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    (u.transpose() * g * u)[(0, 0)]
}

/// Clamps tiny negative entries to zero and renormalizes onto the unit
/// sphere; returns None for vectors that are substantially negative or zero.
fn feasible_unit(u: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = u.amax();
    if scale <= 0.0 {
        return None;
    }
    if u.iter().any(|&v| v < -1e-10 * scale) {
        return None;
    }
    let mut out = u.map(|v| v.max(0.0));
    let norm = out.norm();
    if norm <= 0.0 {
        return None;
    }
    out /= norm;
    Some(out)
}

/// Embeds a support-restricted vector into the full dimension.
fn embed(full_dim: usize, support: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(full_dim);
    for (slot, &d) in support.iter().enumerate() {
        out[d] = v[slot];
    }
    out
}

/// Exact minimization by enumerating all nonempty supports: on each support,
/// the sphere-constrained minimizer is the smallest eigenvector of the
/// restricted Gram block, kept when it is (sign-flipped) nonnegative.
fn weights_by_enumeration(g: &DMatrix<f64>) -> DVector<f64> {
    let dim = g.nrows();
    let mut candidates: Vec<WeightCandidate> = Vec::new();
    for mask in 1u32..(1u32 << dim) {
        let support: Vec<usize> = (0..dim).filter(|d| mask & (1 << d) != 0).collect();
        let m = support.len();
        let g_ss = DMatrix::from_fn(m, m, |a, b| g[(support[a], support[b])]);
        let (vecs, vals) = sym_eigen_sorted(&g_ss);
        let scale = vals[m - 1].abs().max(1e-300);
        let min_val = vals[0];
        let mut tied_columns: Vec<usize> = Vec::new();
        for idx in 0..m {
            if vals[idx] <= min_val + 1e-12 * scale {
                tied_columns.push(idx);
            }
        }
        for &idx in &tied_columns {
            let mut v: DVector<f64> = vecs.column(idx).into();
            if v.sum() < 0.0 {
                v = -v;
            }
            if let Some(unit) = feasible_unit(&v) {
                let full = embed(dim, &support, &unit);
                candidates.push(WeightCandidate {
                    objective: objective(g, &full),
                    weights: full,
                    support_size: m,
                    support_mask: mask,
                    uniform: false,
                });
            }
        }
        if tied_columns.len() > 1 {
            // Degenerate smallest eigenvalue: prefer the uniform combination
            // within the minimizing eigenspace when it is feasible.
            let uniform = DVector::from_element(m, 1.0 / (m as f64).sqrt());
            let mut projected = DVector::zeros(m);
            for &idx in &tied_columns {
                let v: DVector<f64> = vecs.column(idx).into();
                projected += &v * v.dot(&uniform);
            }
            if let Some(unit) = feasible_unit(&projected) {
                let full = embed(dim, &support, &unit);
                candidates.push(WeightCandidate {
                    objective: objective(g, &full),
                    weights: full,
                    support_size: m,
                    support_mask: mask,
                    uniform: true,
                });
            }
        }
    }
    // Single-kernel corners are always feasible, so candidates is nonempty.
    let scale = candidates
        .iter()
        .map(|c| c.objective.abs())
        .fold(1e-300, f64::max);
    let mut best = candidates[0].clone();
    for cand in candidates.into_iter().skip(1) {
        let better = if cand.objective < best.objective - 1e-12 * scale {
            true
        } else if cand.objective <= best.objective + 1e-12 * scale {
            // Tie-break: larger support, then uniform combinations, then the
            // lexicographically first support.
            (cand.support_size, cand.uniform, std::cmp::Reverse(cand.support_mask))
                > (best.support_size, best.uniform, std::cmp::Reverse(best.support_mask))
        } else {
            false
        };
        if better {
            best = cand;
        }
    }
    best.weights
}

/// Projected-gradient fallback for large libraries.
fn weights_by_projected_gradient(g: &DMatrix<f64>) -> DVector<f64> {
    let dim = g.nrows();
    let lipschitz = g.trace().max(1e-12);
    let mut starts: Vec<DVector<f64>> = (0..dim.min(10))
        .map(|d| {
            let mut u = DVector::zeros(dim);
            u[d] = 1.0;
            u
        })
        .collect();
    starts.push(DVector::from_element(dim, 1.0 / (dim as f64).sqrt()));

    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in starts {
        let mut u = start;
        let step = 1.0 / lipschitz;
        for _ in 0..2000 {
            let grad = g * &u * 2.0;
            let mut next = &u - &grad * step;
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            let norm = next.norm();
            if norm <= 0.0 {
                break;
            }
            next /= norm;
            if (&next - &u).amax() < 1e-14 {
                u = next;
                break;
            }
            u = next;
        }
        let obj = objective(g, &u);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, u));
        }
    }
    best.expect("at least one start").1
}

/// Ensemble weights minimizing `uᵀ(EᵀE)u` over the nonnegative unit sphere,
/// where the columns of `E` are the per-kernel LOOCV residual vectors.
pub fn ensemble_weights(loocv_matrix: &DMatrix<f64>) -> DVector<f64> {
    let dim = loocv_matrix.ncols();
    assert!(dim >= 1, "need at least one kernel");
    if dim == 1 {
        return DVector::from_element(1, 1.0);
    }
    let g = loocv_matrix.transpose() * loocv_matrix;
    if dim <= ENUMERATION_LIMIT {
        weights_by_enumeration(&g)
    } else {
        weights_by_projected_gradient(&g)
    }
}

/// The ensemble hat matrix `Â = Σ_d u_d·A_d`.
pub fn ensemble_hat(base_fits: &[BaseKernelFit], weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    if base_fits.is_empty() || base_fits.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "got {} base fits and {} weights",
            base_fits.len(),
            weights.len()
        )));
    }
    let n = base_fits[0].a_d.nrows();
    let mut a_hat = DMatrix::zeros(n, n);
    for (fit, &w) in base_fits.iter().zip(weights.iter()) {
        a_hat += &fit.a_d * w;
    }
    Ok(a_hat)
}

/// Reconstructs the kernel matrix implied by an ensemble hat matrix, and
/// counts how many eigenvalues needed clipping into `[0, 1 − 1e−6]`.
pub fn reconstruct_kernel(a_hat: &DMatrix<f64>) -> (GramMatrix, usize) {
    let n = a_hat.nrows();
    // Guard against floating-point asymmetry before factorizing.
    let sym = (a_hat + a_hat.transpose()) * 0.5;
    let (u, d) = sym_eigen_sorted(&sym);
    let mut clip_events = 0;
    let ratios = DVector::from_iterator(
        n,
        d.iter().map(|&v| {
            if !(-1e-12..=EIG_CEILING + 1e-12).contains(&v) {
                clip_events += 1;
            }
            let clipped = v.clamp(0.0, EIG_CEILING);
            clipped / (1.0 - clipped)
        }),
    );
    let mut k = scale_columns(&u, &ratios) * u.transpose();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    (GramMatrix::new_unchecked(k, "ensemble"), clip_events)
}

/// Runs all three ensemble stages over pre-built Gram matrices.
///
/// `specs` records which kernel produced each Gram matrix; callers that
/// transform the matrices first (for example centering, or composing group
/// kernels) pass the originating specs for provenance.
pub fn cvek_from_grams(
    specs: &[KernelSpec],
    grams: &[GramMatrix],
    y: &DVector<f64>,
) -> Result<EnsembleFit> {
    if specs.is_empty() || specs.len() != grams.len() {
        return Err(Error::InvalidInput(format!(
            "got {} specs and {} gram matrices",
            specs.len(),
            grams.len()
        )));
    }
    let n = y.len();
    let mut base_fits = Vec::with_capacity(specs.len());
    let mut loocv_matrix = DMatrix::zeros(n, specs.len());
    for (d, (spec, gram)) in specs.iter().zip(grams.iter()).enumerate() {
        let pieces = RidgePieces::new(gram, y)?;
        let grid = lambda_grid(gram).map_err(|e| e.at_step(&spec.to_string()))?;
        let mut best: Option<(f64, f64, DVector<f64>)> = None;
        for &lambda in &grid {
            match pieces.loocv(lambda, y) {
                Ok(vec) => {
                    let sse = vec.norm_squared();
                    if best.as_ref().map_or(true, |(s, _, _)| sse < *s) {
                        best = Some((sse, lambda, vec));
                    }
                }
                Err(Error::Degenerate(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let (_, lambda_hat, loocv_vec) = best.ok_or_else(|| {
            Error::Tuning(format!("all penalty grid points degenerate for `{spec}`"))
        })?;
        loocv_matrix.set_column(d, &loocv_vec);
        base_fits.push(BaseKernelFit {
            spec: spec.clone(),
            lambda_hat,
            a_d: pieces.hat_matrix(lambda_hat),
            loocv_vec,
        });
    }
    let weights = ensemble_weights(&loocv_matrix);
    let a_hat = ensemble_hat(&base_fits, &weights)?;
    let (k_hat, clip_events) = reconstruct_kernel(&a_hat);
    Ok(EnsembleFit {
        weights,
        a_hat,
        k_hat,
        base_fits,
        clip_events,
    })
}

/// Cross-validated kernel ensemble over a library of kernel specs evaluated
/// on the rows of `x`.
pub fn cvek(library: &[KernelSpec], x: &DMatrix<f64>, y: &DVector<f64>) -> Result<EnsembleFit> {
    if library.is_empty() {
        return Err(Error::InvalidInput("empty kernel library".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "input rows {} do not match response length {}",
            x.nrows(),
            y.len()
        )));
    }
    let grams = library
        .iter()
        .map(|spec| gram_matrix(spec, x))
        .collect::<Result<Vec<_>>>()?;
    cvek_from_grams(library, &grams, y)
}
