//! Restricted-maximum-likelihood fits of the Gaussian-process null model.
//!
//! The model is `y = μ·1 + h + ε` with `h ~ N(0, τK₀)` and `ε ~ N(0, σ²I)`,
//! so `y ~ N(μ·1, V)` with `V = τK₀ + σ²I`. The REML objective maximized here
//! is
//!
//! ```text
//! L(μ, τ, σ²) = −log|V| − log(1ᵀV⁻¹1) − (y − μ·1)ᵀV⁻¹(y − μ·1)
//! ```
//!
//! For fixed `(τ, σ²)` the optimal intercept has the closed form
//! `μ̂ = (1ᵀV⁻¹1)⁻¹·1ᵀV⁻¹y`, so the fit optimizes the profiled objective over
//! `(log τ, log σ²)` by quasi-Newton with deterministic restarts, and also
//! evaluates the `τ = 0` boundary, keeping the better of the two.
//!
//! All `V` computations run through a single eigendecomposition of `K₀`:
//! with `K₀ = U·diag(d)·Uᵀ`, every `V = τK₀ + σ²I` shares the eigenvectors
//! `U` and has eigenvalues `τ·d_i + σ²`, making each objective evaluation
//! `O(n)` after the one-time `O(n³)` factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg::{minimize_bfgs, scale_columns, sym_eigen_sorted};

/// Tolerance on the gradient max-norm (in log-parameters) for a fit to count
/// as converged.
const GRAD_TOL: f64 = 1e-5;

/// Deterministic quasi-Newton restart offsets in `(log τ, log σ²)`, each
/// shifted by `log var(y)`.
const RESTARTS: [(f64, f64); 3] = [(0.0, 0.0), (-2.0, 0.0), (2.0, -2.0)];

/// Eigendecomposition of the null kernel matrix, reused for every solve with
/// `V₀ = τK₀ + σ²I`.
#[derive(Debug, Clone)]
pub struct SpectralFactor {
    u: DMatrix<f64>,
    d: DVector<f64>,
}

impl SpectralFactor {
    /// Factors a PSD kernel matrix, clamping small negative eigenvalues
    /// (within the PSD tolerance) to zero.
    fn new(k: &GramMatrix) -> Result<Self> {
        let (u, mut d) = sym_eigen_sorted(k.values());
        let max_eig = d[d.len() - 1].max(0.0);
        if d[0] < -1e-8 * max_eig.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "kernel matrix `{}` is not PSD (min eigenvalue {:.3e})",
                k.spec_tag(),
                d[0]
            )));
        }
        d.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(SpectralFactor { u, d })
    }

    /// Eigenvalues of `K₀`, ascending, clamped nonnegative.
    pub fn kernel_eigenvalues(&self) -> &DVector<f64> {
        &self.d
    }

    /// Orthonormal eigenvectors of `K₀` (columns, matching the eigenvalues).
    pub fn kernel_eigenvectors(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Applies `(τK₀ + σ²I)⁻¹` to a vector.
    fn v_solve(&self, tau: f64, sigma2: f64, b: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.u.transpose() * b;
        let scaled = DVector::from_iterator(
            self.d.len(),
            coeffs
                .iter()
                .zip(self.d.iter())
                .map(|(&c, &d)| c / (tau * d + sigma2)),
        );
        &self.u * scaled
    }

    /// Dense `(τK₀ + σ²I)⁻¹`.
    fn v_inverse(&self, tau: f64, sigma2: f64) -> DMatrix<f64> {
        let inv = DVector::from_iterator(
            self.d.len(),
            self.d.iter().map(|&d| 1.0 / (tau * d + sigma2)),
        );
        scale_columns(&self.u, &inv) * self.u.transpose()
    }
}

/// A fitted null model: REML estimates, the null covariance and its
/// factorization, and the model residuals.
#[derive(Debug, Clone)]
pub struct NullModelFit {
    /// Estimated intercept `μ̂`.
    pub mu_hat: f64,
    /// Estimated kernel variance component `τ̂ ≥ 0`.
    pub tau_hat: f64,
    /// Estimated noise variance `σ̂² > 0`.
    pub sigma2_hat: f64,
    /// Dense null covariance `V₀ = τ̂K₀ + σ̂²I`.
    pub v0: DMatrix<f64>,
    /// Residuals `ε̂ = y − μ̂·1 − ĥ`.
    pub residuals: DVector<f64>,
    /// The kernel matrix the model was fit against.
    pub k0: GramMatrix,
    /// REML objective value at the optimum.
    pub reml_value: f64,
    factor: SpectralFactor,
}

impl NullModelFit {
    /// Sample size.
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// The ridge parameter `λ̂ = σ̂²/τ̂`, or `None` at the `τ̂ = 0` boundary.
    pub fn lambda(&self) -> Option<f64> {
        (self.tau_hat > 0.0).then(|| self.sigma2_hat / self.tau_hat)
    }

    /// Applies `V₀⁻¹` to a vector through the cached factorization.
    pub fn v0_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.v_solve(self.tau_hat, self.sigma2_hat, b)
    }

    /// Dense `V₀⁻¹` through the cached factorization.
    pub fn v0_inverse(&self) -> DMatrix<f64> {
        self.factor.v_inverse(self.tau_hat, self.sigma2_hat)
    }

    /// The cached eigendecomposition of `K₀`.
    pub fn factor(&self) -> &SpectralFactor {
        &self.factor
    }

    /// Builds a fit at externally supplied parameter values (no
    /// optimization). Useful for diagnostics and reference-distribution
    /// checks against known ground truth.
    pub fn from_parameters(
        k0: GramMatrix,
        y: &DVector<f64>,
        mu: f64,
        tau: f64,
        sigma2: f64,
    ) -> Result<Self> {
        if y.len() != k0.dim() {
            return Err(Error::InvalidInput(format!(
                "response length {} does not match kernel dimension {}",
                y.len(),
                k0.dim()
            )));
        }
        if !(tau >= 0.0) || !(sigma2 > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "invalid parameters mu={mu}, tau={tau}, sigma2={sigma2}"
            )));
        }
        let factor = SpectralFactor::new(&k0)?;
        let transformed = TransformedData::new(&factor, y);
        let reml_value = transformed.objective_at(mu, tau, sigma2);
        Ok(assemble_fit(k0, y, factor, mu, tau, sigma2, reml_value))
    }
}

/// `y` and the intercept column rotated into the eigenbasis of `K₀`.
struct TransformedData {
    /// `z = Uᵀy`.
    z: DVector<f64>,
    /// `w = Uᵀ1`.
    w: DVector<f64>,
    /// Eigenvalues `d` of `K₀`.
    d: DVector<f64>,
}

impl TransformedData {
    fn new(factor: &SpectralFactor, y: &DVector<f64>) -> Self {
        let ones = DVector::from_element(y.len(), 1.0);
        TransformedData {
            z: factor.u.transpose() * y,
            w: factor.u.transpose() * ones,
            d: factor.d.clone(),
        }
    }

    /// The REML objective at explicit `(μ, τ, σ²)`.
    fn objective_at(&self, mu: f64, tau: f64, sigma2: f64) -> f64 {
        let mut log_det = 0.0;
        let mut s_ww = 0.0;
        let mut quad = 0.0;
        for i in 0..self.d.len() {
            let v = tau * self.d[i] + sigma2;
            log_det += v.ln();
            s_ww += self.w[i] * self.w[i] / v;
            let e = self.z[i] - mu * self.w[i];
            quad += e * e / v;
        }
        -log_det - s_ww.ln() - quad
    }

    /// Profiled intercept `μ̂(τ, σ²) = (1ᵀV⁻¹1)⁻¹·1ᵀV⁻¹y`.
    fn profiled_mu(&self, tau: f64, sigma2: f64) -> f64 {
        let mut s_ww = 0.0;
        let mut s_wz = 0.0;
        for i in 0..self.d.len() {
            let v = tau * self.d[i] + sigma2;
            s_ww += self.w[i] * self.w[i] / v;
            s_wz += self.w[i] * self.z[i] / v;
        }
        s_wz / s_ww
    }

    /// Negated profiled objective and its gradient in `(log τ, log σ²)`.
    ///
    /// Returns `+∞` (with an unusable gradient) outside the numerical domain;
    /// the line search treats that as a rejected step.
    fn neg_profiled_with_grad(&self, log_tau: f64, log_sigma2: f64) -> (f64, Vec<f64>) {
        let tau = log_tau.exp();
        let sigma2 = log_sigma2.exp();
        if !tau.is_finite() || !sigma2.is_finite() || sigma2 <= 0.0 {
            return (f64::INFINITY, vec![f64::NAN, f64::NAN]);
        }
        let n = self.d.len();
        let (mut log_det, mut s_ww, mut s_wz) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let v = tau * self.d[i] + sigma2;
            if !(v > 0.0) || !v.is_finite() {
                return (f64::INFINITY, vec![f64::NAN, f64::NAN]);
            }
            log_det += v.ln();
            s_ww += self.w[i] * self.w[i] / v;
            s_wz += self.w[i] * self.z[i] / v;
        }
        let mu = s_wz / s_ww;
        let (mut quad, mut g_tau, mut g_sigma2) = (0.0, 0.0, 0.0);
        let (mut s_ww_d, mut s_ww_1) = (0.0, 0.0);
        for i in 0..n {
            let v = tau * self.d[i] + sigma2;
            let e = self.z[i] - mu * self.w[i];
            let e2v2 = e * e / (v * v);
            quad += e * e / v;
            // d/dτ and d/dσ² of −log|V| and −(z−μ̂w)ᵀV⁻¹(z−μ̂w) (envelope in μ̂).
            g_tau += -self.d[i] / v + e2v2 * self.d[i];
            g_sigma2 += -1.0 / v + e2v2;
            s_ww_d += self.w[i] * self.w[i] * self.d[i] / (v * v);
            s_ww_1 += self.w[i] * self.w[i] / (v * v);
        }
        // d/dθ of −log(1ᵀV⁻¹1) = +Σ w²·(∂v/∂θ)/v² / s_ww.
        g_tau += s_ww_d / s_ww;
        g_sigma2 += s_ww_1 / s_ww;
        let value = -(-log_det - s_ww.ln() - quad);
        if !value.is_finite() {
            return (f64::INFINITY, vec![f64::NAN, f64::NAN]);
        }
        // Negated objective, chain rule into log-parameters.
        (value, vec![-tau * g_tau, -sigma2 * g_sigma2])
    }

    /// Objective and parameters of the `τ = 0` boundary solution.
    fn boundary_candidate(&self) -> (f64, f64, f64) {
        let n = self.d.len() as f64;
        // At τ = 0, μ̂ = ȳ and σ̂² = Σ(y_i − ȳ)²/(n − 1).
        let mu = self.profiled_mu(0.0, 1.0);
        let ss: f64 = (0..self.d.len())
            .map(|i| {
                let e = self.z[i] - mu * self.w[i];
                e * e
            })
            .sum();
        let sigma2 = ss / (n - 1.0);
        let value = -(n - 1.0) * sigma2.ln() - n.ln() - (n - 1.0);
        (value, mu, sigma2)
    }
}

/// Evaluates the REML log-likelihood at explicit parameter values.
///
/// This is the exact objective the fit maximizes; it is exposed for
/// diagnostics and cross-checks.
pub fn reml_objective(mu: f64, tau: f64, sigma2: f64, k: &GramMatrix, y: &DVector<f64>) -> Result<f64> {
    if y.len() != k.dim() {
        return Err(Error::InvalidInput(format!(
            "response length {} does not match kernel dimension {}",
            y.len(),
            k.dim()
        )));
    }
    if !(tau >= 0.0) || !(sigma2 > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid parameters mu={mu}, tau={tau}, sigma2={sigma2}"
        )));
    }
    let factor = SpectralFactor::new(k)?;
    let transformed = TransformedData::new(&factor, y);
    let value = transformed.objective_at(mu, tau, sigma2);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Factorization(
            "null covariance is numerically singular at the requested parameters".into(),
        ))
    }
}

/// The profiled REML objective (intercept optimized out in closed form) and
/// its analytic gradient in `(log τ, log σ²)`.
pub fn reml_profiled_with_grad(
    k: &GramMatrix,
    y: &DVector<f64>,
    tau: f64,
    sigma2: f64,
) -> Result<(f64, [f64; 2])> {
    if y.len() != k.dim() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    if !(tau > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "profiled objective needs tau > 0 and sigma2 > 0; got tau={tau}, sigma2={sigma2}"
        )));
    }
    let factor = SpectralFactor::new(k)?;
    let transformed = TransformedData::new(&factor, y);
    let (neg, g) = transformed.neg_profiled_with_grad(tau.ln(), sigma2.ln());
    if !neg.is_finite() {
        return Err(Error::Factorization(
            "objective is not finite at the requested parameters".into(),
        ));
    }
    Ok((-neg, [-g[0], -g[1]]))
}

fn assemble_fit(
    k0: GramMatrix,
    y: &DVector<f64>,
    factor: SpectralFactor,
    mu: f64,
    tau: f64,
    sigma2: f64,
    reml_value: f64,
) -> NullModelFit {
    let n = y.len();
    let r0 = y - DVector::from_element(n, mu);
    let h = if tau > 0.0 {
        let coeffs = factor.u.transpose() * &r0;
        let scaled = DVector::from_iterator(
            n,
            coeffs
                .iter()
                .zip(factor.d.iter())
                .map(|(&c, &d)| c * tau * d / (tau * d + sigma2)),
        );
        &factor.u * scaled
    } else {
        DVector::zeros(n)
    };
    let residuals = &r0 - &h;
    let mut v0 = k0.values() * tau;
    for i in 0..n {
        v0[(i, i)] += sigma2;
    }
    NullModelFit {
        mu_hat: mu,
        tau_hat: tau,
        sigma2_hat: sigma2,
        v0,
        residuals,
        k0,
        reml_value,
        factor,
    }
}

/// Fits the null model by REML.
///
/// The intercept is profiled out in closed form; `(log τ, log σ²)` are
/// optimized by BFGS from three deterministic restarts scaled by `var(y)`,
/// and the `τ = 0` boundary is evaluated explicitly, keeping the better
/// objective. At the reported optimum either the gradient max-norm is below
/// `1e−5` or `τ̂` sits at the boundary.
pub fn fit_null_reml(k0: GramMatrix, y: &DVector<f64>) -> Result<NullModelFit> {
    let n = y.len();
    if n < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 observations; got {n}")));
    }
    if k0.dim() != n {
        return Err(Error::InvalidInput(format!(
            "kernel dimension {} does not match response length {n}",
            k0.dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response contains non-finite values".into()));
    }
    let y_bar = y.mean();
    let var_y = y.iter().map(|v| (v - y_bar) * (v - y_bar)).sum::<f64>() / (n as f64 - 1.0);
    if var_y <= 0.0 {
        return Err(Error::InvalidInput("response is constant".into()));
    }

    let factor = SpectralFactor::new(&k0)?;
    let transformed = TransformedData::new(&factor, y);
    let log_var = var_y.ln();

    let mut best_interior: Option<(f64, f64, f64, bool)> = None; // (L, τ, σ², converged)
    for (a, b) in RESTARTS {
        let x0 = [a + log_var, b + log_var];
        let out = minimize_bfgs(
            |x| transformed.neg_profiled_with_grad(x[0], x[1]),
            &x0,
            GRAD_TOL * 0.1,
            300,
        );
        if !out.value.is_finite() {
            continue;
        }
        let value = -out.value;
        let converged =
            out.converged || out.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())) <= GRAD_TOL;
        let candidate = (value, out.x[0].exp(), out.x[1].exp(), converged);
        let better = match &best_interior {
            None => true,
            // Prefer converged candidates; break ties on the objective.
            Some((lv, _, _, lc)) => (converged, value) > (*lc, *lv),
        };
        if better {
            best_interior = Some(candidate);
        }
    }

    let (boundary_value, boundary_mu, boundary_sigma2) = transformed.boundary_candidate();

    let interior = best_interior.filter(|(value, tau, sigma2, _)| {
        // An interior iterate with vanishing τ relative to σ² is the boundary
        // in disguise; fold it in rather than reporting a spurious interior
        // optimum.
        let d_max = factor.d[factor.d.len() - 1].max(0.0);
        *value > boundary_value + 1e-9 && tau * d_max > 1e-12 * sigma2
    });

    match interior {
        Some((value, tau, sigma2, converged)) => {
            if !converged {
                return Err(Error::FitNonConvergence(format!(
                    "gradient tolerance not met; best iterate tau={tau:.6e}, sigma2={sigma2:.6e}, reml={value:.6}"
                )));
            }
            let mu = transformed.profiled_mu(tau, sigma2);
            Ok(assemble_fit(k0, y, factor, mu, tau, sigma2, value))
        }
        None => Ok(assemble_fit(
            k0,
            y,
            factor,
            boundary_mu,
            0.0,
            boundary_sigma2,
            boundary_value,
        )),
    }
}

/// The posterior mean of the kernel component, `ĥ = τ̂K₀V₀⁻¹(y − μ̂·1)`.
///
/// Equals `K₀(K₀ + λ̂I)⁻¹(y − μ̂·1)` with `λ̂ = σ̂²/τ̂` when `τ̂ > 0`; returns
/// the zero vector for a boundary fit.
pub fn posterior_mean(fit: &NullModelFit, y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    if fit.tau_hat == 0.0 {
        return DVector::zeros(n);
    }
    let r0 = y - DVector::from_element(n, fit.mu_hat);
    let coeffs = fit.factor.u.transpose() * r0;
    let scaled = DVector::from_iterator(
        n,
        coeffs.iter().zip(fit.factor.d.iter()).map(|(&c, &d)| {
            c * fit.tau_hat * d / (fit.tau_hat * d + fit.sigma2_hat)
        }),
    );
    &fit.factor.u * scaled
}
