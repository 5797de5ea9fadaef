//! Variance-component score test with a Satterthwaite reference distribution.
//!
//! Given a null fit against `K₀` and a derivative kernel `∂K₀` describing the
//! added variance direction under test, the statistic is
//!
//! ```text
//! T₀ = (τ̂/2)·(y − μ̂·1)ᵀ V₀⁻¹ ∂K₀ V₀⁻¹ (y − μ̂·1)
//!    = (τ̂/(2σ̂⁴))·ε̂ᵀ ∂K₀ ε̂
//! ```
//!
//! the derivative of the REML log-likelihood in the added component at zero,
//! up to its deterministic trace part. Its null distribution is approximated
//! by `κ·χ²_ν` with `κ̂, ν̂` chosen to match the first two moments:
//! `κ̂ = Ĩ_δδ/[τ̂·tr(V₀⁻¹∂K₀)]` and `ν̂ = [τ̂·tr(V₀⁻¹∂K₀)]²/(2·Ĩ_δδ)`, where
//! `Ĩ_δδ` is the effective (nuisance-corrected) REML information of the added
//! component.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg::trace_prod;
use crate::null_model::{fit_null_reml, NullModelFit};

/// Caveats attached to a test outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFlags {
    /// The null fit sat at the `τ̂ = 0` boundary; the statistic is
    /// identically zero and the p-value is 1.
    pub degenerate_fit: bool,
    /// `τ̂·tr(V₀⁻¹∂K₀) ≤ 0`, so no reference distribution exists; the
    /// p-value is reported as 1.
    pub nonpositive_trace: bool,
}

impl TestFlags {
    /// True when no caveat is set.
    pub fn is_empty(&self) -> bool {
        !self.degenerate_fit && !self.nonpositive_trace
    }

    /// Stable labels for report output.
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.degenerate_fit {
            out.push("degenerate_fit");
        }
        if self.nonpositive_trace {
            out.push("nonpositive_trace");
        }
        out
    }
}

/// Outcome of a variance-component score test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestResult {
    /// Score statistic `T₀ ≥ 0` (for PSD derivative kernels).
    pub t0: f64,
    /// Satterthwaite scale `κ̂` (NaN when flagged degenerate).
    pub kappa: f64,
    /// Satterthwaite degrees of freedom `ν̂` (NaN when flagged degenerate).
    pub nu: f64,
    /// Upper-tail p-value `P(κ̂·χ²_ν̂ > T₀)`.
    pub p_value: f64,
    /// Effective information `Ĩ_δδ` used for the moment match.
    pub info: f64,
    /// Caveats (degenerate fit, nonpositive trace).
    pub flags: TestFlags,
}

/// The score statistic `T₀ = (τ̂/2)·rᵀV₀⁻¹∂K₀V₀⁻¹r` with `r = y − μ̂·1`.
pub fn score_statistic(fit: &NullModelFit, dk0: &GramMatrix, y: &DVector<f64>) -> Result<f64> {
    let n = fit.n();
    if dk0.dim() != n || y.len() != n {
        return Err(Error::InvalidInput(format!(
            "score statistic needs matching dimensions; fit {n}, dK0 {}, y {}",
            dk0.dim(),
            y.len()
        )));
    }
    if fit.tau_hat == 0.0 {
        return Ok(0.0);
    }
    let r = y - DVector::from_element(n, fit.mu_hat);
    let a = fit.v0_solve(&r);
    Ok(0.5 * fit.tau_hat * (a.transpose() * dk0.values() * &a)[(0, 0)])
}

/// Intermediate moment quantities shared by the Satterthwaite match.
struct MomentPieces {
    /// Effective information `Ĩ_δδ` (clamped at zero).
    info: f64,
    /// `τ̂·tr(V₀⁻¹∂K₀)`.
    trace_term: f64,
}

fn moment_pieces(fit: &NullModelFit, dk0: &GramMatrix) -> Result<MomentPieces> {
    let n = fit.n();
    if dk0.dim() != n {
        return Err(Error::InvalidInput(format!(
            "derivative kernel dimension {} does not match fit dimension {n}",
            dk0.dim()
        )));
    }
    if fit.tau_hat == 0.0 {
        return Ok(MomentPieces {
            info: 0.0,
            trace_term: 0.0,
        });
    }
    let v_inv = fit.v0_inverse();
    let ones = DVector::from_element(n, 1.0);
    let w = &v_inv * &ones;
    let s = w.dot(&ones);
    // REML projection P = V₀⁻¹ − V₀⁻¹1(1ᵀV₀⁻¹1)⁻¹1ᵀV₀⁻¹.
    let p = &v_inv - (&w * w.transpose()) / s;

    let dv_delta = dk0.values() * fit.tau_hat;
    let m_delta = &p * &dv_delta;
    let m_tau = &p * fit.k0.values();
    let m_sigma = p;

    // Information elements I_ab = ½·tr(P·∂V_a·P·∂V_b).
    let i_dd = 0.5 * trace_prod(&m_delta, &m_delta);
    let i_dt = 0.5 * trace_prod(&m_delta, &m_tau);
    let i_ds = 0.5 * trace_prod(&m_delta, &m_sigma);
    let i_tt = 0.5 * trace_prod(&m_tau, &m_tau);
    let i_ts = 0.5 * trace_prod(&m_tau, &m_sigma);
    let i_ss = 0.5 * trace_prod(&m_sigma, &m_sigma);

    // Schur complement against the (τ, σ²) nuisance block.
    let det = i_tt * i_ss - i_ts * i_ts;
    if !(det > 1e-12 * i_tt.abs().max(1e-300) * i_ss.abs().max(1e-300)) {
        return Err(Error::Information(format!(
            "nuisance information block is singular (det = {det:.3e})"
        )));
    }
    let b1 = i_dt;
    let b2 = i_ds;
    let correction = (i_ss * b1 * b1 - 2.0 * i_ts * b1 * b2 + i_tt * b2 * b2) / det;
    let info = (i_dd - correction).max(0.0);

    let trace_term = fit.tau_hat * trace_prod(&v_inv, dk0.values());
    Ok(MomentPieces { info, trace_term })
}

/// The effective information `Ĩ_δδ = I_δδ − I_δθ·I_θθ⁻¹·I_θδ` of the added
/// component, with the `(τ, σ²)` nuisance block projected out.
pub fn effective_information(fit: &NullModelFit, dk0: &GramMatrix) -> Result<f64> {
    moment_pieces(fit, dk0).map(|p| p.info)
}

/// Solves the two moment equations `κν = E(T)` and `2κ²ν = Var(T)`.
fn satterthwaite_from_pieces(info: f64, trace_term: f64) -> (f64, f64) {
    let kappa = info / trace_term;
    let nu = trace_term * trace_term / (2.0 * info);
    (kappa, nu)
}

/// Satterthwaite scale and degrees of freedom for the null distribution of
/// the score statistic: `κ̂ = Ĩ_δδ/[τ̂·tr(V₀⁻¹∂K₀)]`,
/// `ν̂ = [τ̂·tr(V₀⁻¹∂K₀)]²/(2·Ĩ_δδ)`.
pub fn satterthwaite(fit: &NullModelFit, dk0: &GramMatrix) -> Result<(f64, f64)> {
    let pieces = moment_pieces(fit, dk0)?;
    if pieces.trace_term <= 0.0 {
        return Err(Error::Distribution(format!(
            "nonpositive moment trace {:.3e}; no reference distribution",
            pieces.trace_term
        )));
    }
    if pieces.info <= 0.0 {
        return Err(Error::Information(
            "effective information vanished with a positive moment trace".into(),
        ));
    }
    Ok(satterthwaite_from_pieces(pieces.info, pieces.trace_term))
}

/// Upper-tail p-value `P(κ·χ²_ν > T₀) = Q(ν/2, T₀/(2κ))` with `Q` the
/// regularized upper incomplete gamma function.
pub fn pvalue(t0: f64, kappa: f64, nu: f64) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() || !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Distribution(format!(
            "reference distribution needs kappa > 0 and nu > 0; got kappa={kappa}, nu={nu}"
        )));
    }
    if !t0.is_finite() {
        return Err(Error::Distribution(format!("non-finite statistic {t0}")));
    }
    if t0 <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(nu / 2.0, t0 / (2.0 * kappa)).clamp(0.0, 1.0))
}

fn degenerate_result(flags: TestFlags, info: f64) -> TestResult {
    TestResult {
        t0: 0.0,
        kappa: f64::NAN,
        nu: f64::NAN,
        p_value: 1.0,
        info,
        flags,
    }
}

/// Runs the full variance-component score test: REML null fit, score
/// statistic, Satterthwaite moment match, p-value.
pub fn variance_component_test(
    k0: GramMatrix,
    dk0: &GramMatrix,
    y: &DVector<f64>,
) -> Result<TestResult> {
    let fit = fit_null_reml(k0, y).map_err(|e| e.at_step("null fit"))?;
    test_with_fit(&fit, dk0, y)
}

/// As [`variance_component_test`], reusing an existing null fit.
pub fn test_with_fit(fit: &NullModelFit, dk0: &GramMatrix, y: &DVector<f64>) -> Result<TestResult> {
    if fit.tau_hat == 0.0 {
        return Ok(degenerate_result(
            TestFlags {
                degenerate_fit: true,
                ..TestFlags::default()
            },
            0.0,
        ));
    }
    let t0 = score_statistic(fit, dk0, y).map_err(|e| e.at_step("score statistic"))?;
    let pieces = moment_pieces(fit, dk0).map_err(|e| e.at_step("information"))?;
    if pieces.trace_term <= 0.0 {
        return Ok(degenerate_result(
            TestFlags {
                nonpositive_trace: true,
                ..TestFlags::default()
            },
            pieces.info,
        ));
    }
    if pieces.info <= 0.0 {
        return Err(Error::Information(
            "effective information vanished with a positive moment trace".into(),
        ));
    }
    let (kappa, nu) = satterthwaite_from_pieces(pieces.info, pieces.trace_term);
    let p_value = pvalue(t0, kappa, nu).map_err(|e| e.at_step("p-value"))?;
    Ok(TestResult {
        t0,
        kappa,
        nu,
        p_value,
        info: pieces.info,
        flags: TestFlags::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{center_gram, gram_matrix, hadamard, sum_grams, KernelSpec};
    use crate::linalg::psd_sqrt;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    fn normal_mat(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// A null kernel / derivative kernel pair from two feature groups.
    fn kernel_pair(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> (GramMatrix, GramMatrix) {
        let x1 = normal_mat(rng, n, 2);
        let x2 = normal_mat(rng, n, 2);
        let k1 = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma }, &x1).unwrap());
        let k2 = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma }, &x2).unwrap());
        let k0 = sum_grams(&k1, &k2).unwrap();
        let k12 = hadamard(&k1, &k2).unwrap();
        (k0, k12)
    }

    fn signal_response(rng: &mut ChaCha8Rng, k0: &GramMatrix) -> DVector<f64> {
        let n = k0.dim();
        let b = psd_sqrt(k0.values());
        &b * normal_vec(rng, n) * 0.8 + normal_vec(rng, n)
    }

    #[test]
    fn zero_derivative_kernel_gives_null_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let n = 30;
        let (k0, _) = kernel_pair(&mut rng, n, 1.0);
        let y = signal_response(&mut rng, &k0);
        let zero = GramMatrix::new_unchecked(DMatrix::zeros(n, n), "zero");
        let fit = fit_null_reml(k0, &y).unwrap();
        assert_eq!(score_statistic(&fit, &zero, &y).unwrap(), 0.0);
        assert_eq!(effective_information(&fit, &zero).unwrap(), 0.0);
        let result = test_with_fit(&fit, &zero, &y).unwrap();
        assert_eq!(result.p_value, 1.0);
        assert!(result.flags.nonpositive_trace);
    }

    #[test]
    fn boundary_fit_gives_degenerate_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let n = 20;
        let y = normal_vec(&mut rng, n);
        let k0 = GramMatrix::new_unchecked(DMatrix::zeros(n, n), "zero");
        let dk0 = {
            let x = normal_mat(&mut rng, n, 1);
            gram_matrix(&KernelSpec::Rbf { sigma: 1.0 }, &x).unwrap()
        };
        let result = variance_component_test(k0, &dk0, &y).unwrap();
        assert!(result.flags.degenerate_fit);
        assert_eq!(result.t0, 0.0);
        assert_eq!(result.p_value, 1.0);
    }

    #[test]
    fn quadratic_form_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 8;
        let (k0, k12) = kernel_pair(&mut rng, n, 0.7);
        let y = signal_response(&mut rng, &k0);
        let fit = crate::null_model::NullModelFit::from_parameters(k0, &y, 0.2, 0.9, 0.8).unwrap();
        let t_fast = score_statistic(&fit, &k12, &y).unwrap();
        let v_inv = fit.v0.clone().try_inverse().unwrap();
        let r = &y - DVector::from_element(n, fit.mu_hat);
        let a = &v_inv * &r;
        let t_dense = 0.5 * fit.tau_hat * (a.transpose() * k12.values() * &a)[(0, 0)];
        assert!((t_fast - t_dense).abs() < 1e-9 * (1.0 + t_dense.abs()));
    }

    #[test]
    fn statistic_equals_residual_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..10 {
            let n = 10 + (rng.random::<u32>() % 41) as usize;
            let (k0, k12) = kernel_pair(&mut rng, n, 1.0);
            let y = signal_response(&mut rng, &k0);
            let fit = fit_null_reml(k0, &y).unwrap();
            if fit.tau_hat == 0.0 {
                continue;
            }
            let t = score_statistic(&fit, &k12, &y).unwrap();
            let eps = &fit.residuals;
            let s4 = fit.sigma2_hat * fit.sigma2_hat;
            let t_residual =
                0.5 * fit.tau_hat / s4 * (eps.transpose() * k12.values() * eps)[(0, 0)];
            assert!(
                (t - t_residual).abs() <= 1e-8 * t.abs().max(t_residual.abs()).max(1e-300),
                "quadratic form {t} vs residual form {t_residual}"
            );
        }
    }

    #[test]
    fn effective_information_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let n = 8;
        let (k0, k12) = kernel_pair(&mut rng, n, 0.9);
        let y = signal_response(&mut rng, &k0);
        let fit = crate::null_model::NullModelFit::from_parameters(k0.clone(), &y, 0.1, 1.3, 0.7).unwrap();
        let fast = effective_information(&fit, &k12).unwrap();

        // Independent dense construction of the same quantity.
        let v = k0.values() * fit.tau_hat + DMatrix::<f64>::identity(n, n) * fit.sigma2_hat;
        let v_inv = v.try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let s = (ones.transpose() * &v_inv * &ones)[(0, 0)];
        let p = &v_inv - (&v_inv * &ones * ones.transpose() * &v_inv) / s;
        let dvs = [
            k12.values() * fit.tau_hat,
            k0.values().clone(),
            DMatrix::identity(n, n),
        ];
        let mut im = DMatrix::zeros(3, 3);
        for a in 0..3 {
            for b in 0..3 {
                im[(a, b)] = 0.5 * (&p * &dvs[a] * &p * &dvs[b]).trace();
            }
        }
        let theta = DMatrix::from_row_slice(2, 2, &[im[(1, 1)], im[(1, 2)], im[(2, 1)], im[(2, 2)]]);
        let bvec = DVector::from_column_slice(&[im[(0, 1)], im[(0, 2)]]);
        let dense = im[(0, 0)] - (bvec.transpose() * theta.try_inverse().unwrap() * &bvec)[(0, 0)];
        assert!(
            (fast - dense).abs() < 1e-9 * (1.0 + dense.abs()),
            "fast {fast} vs dense {dense}"
        );
    }

    #[test]
    fn projection_strictly_reduces_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..5 {
            let n = 15;
            let (k0, _) = kernel_pair(&mut rng, n, 1.1);
            let y = signal_response(&mut rng, &k0);
            let fit =
                crate::null_model::NullModelFit::from_parameters(k0.clone(), &y, 0.0, 1.0, 1.0)
                    .unwrap();
            // ∂K₀ = K₀ is fully confounded with the τ nuisance direction.
            let effective = effective_information(&fit, &k0).unwrap();
            let v_inv = fit.v0_inverse();
            let ones = DVector::from_element(n, 1.0);
            let w = &v_inv * &ones;
            let p = &v_inv - (&w * w.transpose()) / w.dot(&ones);
            let m = &p * (k0.values() * fit.tau_hat);
            let raw = 0.5 * crate::linalg::trace_prod(&m, &m);
            assert!(effective < raw, "effective {effective} not below raw {raw}");
            assert!(effective < 1e-6 * raw, "confounded direction should vanish");
        }
    }

    #[test]
    fn satterthwaite_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let n = 25;
        let (k0, k12) = kernel_pair(&mut rng, n, 1.0);
        let y = signal_response(&mut rng, &k0);
        let fit = crate::null_model::NullModelFit::from_parameters(k0, &y, 0.0, 0.7, 1.1).unwrap();
        let (kappa, nu) = satterthwaite(&fit, &k12).unwrap();
        let info = effective_information(&fit, &k12).unwrap();
        let v_inv = fit.v0_inverse();
        let trace_term = fit.tau_hat * crate::linalg::trace_prod(&v_inv, k12.values());
        assert!((kappa - info / trace_term).abs() < 1e-10 * kappa.abs());
        assert!((nu - trace_term * trace_term / (2.0 * info)).abs() < 1e-10 * nu.abs());
        assert!((kappa * kappa * nu - info / 2.0).abs() < 1e-10 * info);
        assert!(kappa > 0.0 && nu > 0.0);
    }

    #[test]
    fn satterthwaite_formula_algebra() {
        let (kappa, nu) = satterthwaite_from_pieces(3.0, 3.0);
        assert!((kappa - 1.0).abs() < 1e-15);
        assert!((nu - 1.5).abs() < 1e-15);
        // Doubling the information doubles κ and halves ν.
        let (k1, n1) = satterthwaite_from_pieces(2.0, 5.0);
        let (k2, n2) = satterthwaite_from_pieces(4.0, 5.0);
        assert!((k2 - 2.0 * k1).abs() < 1e-15);
        assert!((n2 - 0.5 * n1).abs() < 1e-15);
        assert!((k1 * n1 - k2 * n2).abs() < 1e-15);
    }

    #[test]
    fn pvalue_basics() {
        assert_eq!(pvalue(0.0, 1.0, 5.0).unwrap(), 1.0);
        // χ²₂ has median 2·ln 2.
        let p = pvalue(2.0 * 2.0_f64.ln(), 1.0, 2.0).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        // Monotone decreasing in the statistic.
        let mut last = 1.0;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let p = pvalue(t, 0.4, 7.3).unwrap();
            assert!(p < last);
            last = p;
        }
        assert!(pvalue(1.0, 0.0, 2.0).is_err());
        assert!(pvalue(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn derivative_kernel_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let n = 30;
        let (k0, k12) = kernel_pair(&mut rng, n, 1.0);
        let y = signal_response(&mut rng, &k0);
        let c = 4.0;
        let k12_scaled = GramMatrix::new_unchecked(k12.values() * c, "scaled");
        let r1 = variance_component_test(k0.clone(), &k12, &y).unwrap();
        let r2 = variance_component_test(k0, &k12_scaled, &y).unwrap();
        assert!((r2.t0 - c * r1.t0).abs() < 1e-9 * (1.0 + r1.t0.abs() * c));
        assert!((r2.kappa - c * r1.kappa).abs() < 1e-9 * (1.0 + r1.kappa.abs() * c));
        assert!((r2.nu - r1.nu).abs() < 1e-9 * (1.0 + r1.nu.abs()));
        assert!((r2.p_value - r1.p_value).abs() < 1e-9);
    }

    #[test]
    fn composition_matches_individual_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let n = 8;
        let (k0, k12) = kernel_pair(&mut rng, n, 0.8);
        let y = signal_response(&mut rng, &k0);
        let composed = variance_component_test(k0.clone(), &k12, &y).unwrap();
        let fit = fit_null_reml(k0, &y).unwrap();
        let t0 = score_statistic(&fit, &k12, &y).unwrap();
        let (kappa, nu) = satterthwaite(&fit, &k12).unwrap();
        let p = pvalue(t0, kappa, nu).unwrap();
        assert_eq!(composed.t0, t0);
        assert_eq!(composed.kappa, kappa);
        assert_eq!(composed.nu, nu);
        assert_eq!(composed.p_value, p);
    }
}
