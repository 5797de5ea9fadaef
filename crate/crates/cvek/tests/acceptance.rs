//! End-to-end acceptance checks for the library's numerical claims.
//!
//! Every check compares production code against an independently written
//! oracle (see `common/`) or against a Monte-Carlo experiment with a pinned
//! seed, and prints one `[acceptance] criterion NN …: PASS/FAIL` line. Run
//! with `--nocapture` to see the lines for passing checks too:
//!
//! ```text
//! cargo test -p cvek --test acceptance -- --nocapture
//! ```
//!
//! The Monte-Carlo checks (criteria 05–08) are the slow ones; the whole
//! target finishes in a few minutes on one core.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cvek::interaction::build_interaction_kernels;
use cvek::kernel::{center_gram, eval_kernel, gram_matrix, GramMatrix, KernelSpec, MaternNu};
use cvek::linalg::psd_sqrt;
use cvek::null_model::{fit_null_reml, reml_profiled_with_grad, NullModelFit};
use cvek::score::{satterthwaite, score_statistic};
use cvek::simulate::{replicate_rng, run_scenario, SimReport, SimScenario, Standardization};
use cvek::strategy::Strategy;
use cvek::ensemble::{ensemble_weights, loocv_vector, reconstruct_kernel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the per-criterion verdict line and panics on failure so the test
/// harness records it.
fn verdict(number: u32, label: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[acceptance] criterion {number:02} ({label}): {status} — {detail}");
    assert!(pass, "criterion {number:02} ({label}) failed: {detail}");
}

/// Enforces the stated runtime budget for the fast, deterministic checks.
fn within_budget(elapsed: Duration, budget: Duration) -> bool {
    elapsed <= budget
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Gram of an RBF kernel with a random bandwidth on random planar inputs.
/// Unlike an unstructured PSD draw, its decaying spectrum leaves near-null
/// directions that pin down the REML noise variance, keeping fits away from
/// the ill-conditioned zero-noise ridge.
fn random_gram<R: Rng>(rng: &mut R, n: usize) -> GramMatrix {
    let x = common::normal_mat(rng, n, 2);
    // Bandwidths are capped low enough that the gram never degenerates toward
    // the identity, which would blur the τ/σ² split even at small n.
    let sigma = 10f64.powf(rng.random_range(-1.5..-0.5));
    gram_matrix(&KernelSpec::Rbf { sigma }, &x).expect("rbf gram")
}

/// A response with a smooth component drawn from the given Gram plus noise;
/// exercises both interior and boundary REML fits.
fn structured_response<R: Rng>(rng: &mut R, k: &GramMatrix, signal: f64) -> DVector<f64> {
    let n = k.dim();
    let smooth = psd_sqrt(k.values()) * common::normal_vec(rng, n);
    smooth * signal + common::normal_vec(rng, n) * 0.7
        + DVector::from_element(n, 0.3)
}

// ---------------------------------------------------------------------------
// 01. The two algebraic forms of the score statistic agree.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_score_statistic_forms_agree() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for instance in 0..100 {
        let n = 10 + instance % 41; // n ∈ [10, 50]
        let k0 = random_gram(&mut rng, n);
        let dk = random_gram(&mut rng, n);
        // Alternate signal strength so some fits land on the τ̂ = 0 boundary.
        let signal = if instance % 2 == 0 { 1.5 } else { 0.0 };
        let y = structured_response(&mut rng, &k0, signal);
        let fit = fit_null_reml(k0.clone(), &y).expect("null fit");

        let t_quadratic = score_statistic(&fit, &dk, &y).expect("score statistic");

        // Residual form, built only from dense inverses: V₀⁻¹r = ε̂/σ̂², so
        // the statistic equals (τ̂/2)·ε̂ᵀ∂K₀ε̂/σ̂⁴ with ε̂ = r − ĥ.
        let v0 = k0.values() * fit.tau_hat + DMatrix::identity(n, n) * fit.sigma2_hat;
        let v0_inv = v0.try_inverse().expect("dense inverse");
        let r = &y - DVector::from_element(n, fit.mu_hat);
        let eps = &r - k0.values() * (&v0_inv * &r) * fit.tau_hat;
        let t_residual = 0.5 * fit.tau_hat / (fit.sigma2_hat * fit.sigma2_hat)
            * (eps.transpose() * dk.values() * &eps)[(0, 0)];

        worst = worst.max(rel_diff(t_quadratic, t_residual));
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "score statistic forms",
        worst <= 1e-8 && within_budget(elapsed, Duration::from_secs(30)),
        &format!("max relative gap {worst:.2e} over 100 fits in {elapsed:.2?} (gate 1e-8, budget 30s)"),
    );
}

// ---------------------------------------------------------------------------
// 02. The closed-form LOOCV vector equals explicit leave-one-out refits.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_loocv_shortcut_matches_refits() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    for instance in 0..50 {
        let n = 8 + instance % 23; // n ≤ 30
        let p = 1 + instance % 3;
        let x = common::normal_mat(&mut rng, n, p);
        let spec = match instance % 3 {
            0 => KernelSpec::Rbf { sigma: 0.4 + 0.1 * (instance % 5) as f64 },
            1 => KernelSpec::Quadratic,
            _ => KernelSpec::Matern { nu: MaternNu::ThreeHalves, sigma: 1.0 },
        };
        let gram = gram_matrix(&spec, &x).expect("gram");
        let y = structured_response(&mut rng, &gram, 1.0);
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));

        let shortcut = loocv_vector(&gram, &y, lambda).expect("loocv shortcut");
        let refit = common::loo_residuals_by_refit(gram.values(), &y, lambda);

        for i in 0..n {
            let gap = (shortcut[i] - refit[i]).abs()
                / shortcut[i].abs().max(refit[i].abs()).max(1.0);
            worst = worst.max(gap);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "loocv shortcut vs refits",
        worst <= 1e-8 && within_budget(elapsed, Duration::from_secs(60)),
        &format!("max residual gap {worst:.2e} over 50 instances in {elapsed:.2?} (gate 1e-8, budget 60s)"),
    );
}

// ---------------------------------------------------------------------------
// 03. Kernel reconstruction from a hat matrix round-trips exactly.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_hat_matrix_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    let mut clip_total = 0usize;
    for instance in 0..50 {
        let n = 5 + instance % 36;
        // Random symmetric matrix with spectrum inside [0, 0.9]: random
        // orthogonal basis from a QR factorization, eigenvalues uniform.
        let q = common::normal_mat(&mut rng, n, n).qr().q();
        let mut vals = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(0.0..0.9)));
        vals[0] = 0.0; // exercise both spectrum endpoints
        if n > 1 {
            vals[1] = 0.9;
        }
        let a_hat = &q * DMatrix::from_diagonal(&vals) * q.transpose();
        let a_hat = (&a_hat + a_hat.transpose()) * 0.5;

        let (k_hat, clips) = reconstruct_kernel(&a_hat);
        clip_total += clips;
        let m = k_hat.values() + DMatrix::identity(n, n);
        let round_trip = k_hat.values() * m.try_inverse().expect("The ridge shift keeps this invertible");
        worst = worst.max((&round_trip - &a_hat).norm());
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "hat-matrix round trip",
        worst <= 1e-8 && clip_total == 0 && within_budget(elapsed, Duration::from_secs(10)),
        &format!(
            "max Frobenius gap {worst:.2e}, {clip_total} spectrum clips, over 50 matrices in {elapsed:.2?} (gate 1e-8, budget 10s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 04. REML: analytic gradient vs central differences; intercept closed form.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_reml_gradient_and_intercept() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_grad = 0.0_f64;
    let mut worst_mu = 0.0_f64;
    for instance in 0..50 {
        let n = 12 + instance % 29;
        let k0 = random_gram(&mut rng, n);
        let y = structured_response(&mut rng, &k0, if instance % 3 == 0 { 0.0 } else { 1.2 });

        // Analytic gradient of the profiled objective in (log τ, log σ²)
        // against central finite differences of the same objective.
        let tau = (rng.random_range(-1.5..1.0) as f64).exp();
        let sigma2 = (rng.random_range(-1.5..1.0) as f64).exp();
        let (_, grad) = reml_profiled_with_grad(&k0, &y, tau, sigma2).expect("gradient");
        let h = 1e-4_f64;
        let fd = [
            (reml_profiled_with_grad(&k0, &y, tau * h.exp(), sigma2).unwrap().0
                - reml_profiled_with_grad(&k0, &y, tau * (-h).exp(), sigma2).unwrap().0)
                / (2.0 * h),
            (reml_profiled_with_grad(&k0, &y, tau, sigma2 * h.exp()).unwrap().0
                - reml_profiled_with_grad(&k0, &y, tau, sigma2 * (-h).exp()).unwrap().0)
                / (2.0 * h),
        ];
        for axis in 0..2 {
            let gap = (grad[axis] - fd[axis]).abs()
                / grad[axis].abs().max(fd[axis].abs()).max(1e-3);
            worst_grad = worst_grad.max(gap);
        }

        // The fitted intercept must equal the generalized-least-squares
        // closed form 1ᵀV̂⁻¹y / 1ᵀV̂⁻¹1 computed with a dense inverse.
        let fit = fit_null_reml(k0.clone(), &y).expect("null fit");
        let v = k0.values() * fit.tau_hat + DMatrix::identity(n, n) * fit.sigma2_hat;
        let v_inv = v.try_inverse().expect("dense inverse");
        let ones = DVector::from_element(n, 1.0);
        let mu_gls = (ones.transpose() * &v_inv * &y)[(0, 0)]
            / (ones.transpose() * &v_inv * &ones)[(0, 0)];
        worst_mu = worst_mu.max((fit.mu_hat - mu_gls).abs() / mu_gls.abs().max(1.0));
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "reml gradient and intercept",
        worst_grad <= 1e-4 && worst_mu <= 1e-10 && within_budget(elapsed, Duration::from_secs(60)),
        &format!(
            "max gradient gap {worst_grad:.2e} (gate 1e-4), max intercept gap {worst_mu:.2e} (gate 1e-10), 50 instances in {elapsed:.2?} (budget 60s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 05. Null-distribution moments: the scaled chi-square matches Monte Carlo.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_null_moment_match() {
    let start = Instant::now();
    // Fixed design: smooth-vs-rough pair of centered RBF Grams on independent
    // standard-normal inputs, with all model parameters clamped at truth so
    // the moment identities are tested in isolation from estimation noise.
    let n = 60;
    let (mu, tau, sigma2) = (0.3, 0.5, 1.0);
    let mut design_rng = replicate_rng(60601, 0);
    let x1 = common::normal_mat(&mut design_rng, n, 1);
    let x2 = common::normal_mat(&mut design_rng, n, 1);
    let k0 = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma: 0.02 }, &x1).unwrap());
    let dk = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma: 0.1 }, &x2).unwrap());

    let y_stub = DVector::from_element(n, mu);
    let fit = NullModelFit::from_parameters(k0.clone(), &y_stub, mu, tau, sigma2)
        .expect("clamped fit");
    let (kappa, nu) = satterthwaite(&fit, &dk).expect("moment match");

    let v = k0.values() * tau + DMatrix::identity(n, n) * sigma2;
    let root = psd_sqrt(&v);
    let mut rng = replicate_rng(508, 1);
    let draws = 10_000usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let y = DVector::from_element(n, mu) + &root * common::normal_vec(&mut rng, n);
        let t = score_statistic(&fit, &dk, &y).expect("statistic");
        sum += t;
        sum_sq += t * t;
    }
    let mean = sum / draws as f64;
    let var = (sum_sq - sum * sum / draws as f64) / (draws as f64 - 1.0);

    let mean_ratio = mean / (kappa * nu);
    let var_ratio = var / (2.0 * kappa * kappa * nu);
    let elapsed = start.elapsed();
    verdict(
        5,
        "null moment match",
        (mean_ratio - 1.0).abs() <= 0.05
            && (var_ratio - 1.0).abs() <= 0.05
            && within_budget(elapsed, Duration::from_secs(120)),
        &format!(
            "mean/κν = {mean_ratio:.4}, var/2κ²ν = {var_ratio:.4} over {draws} draws in {elapsed:.2?} (gates ±5%, budget 2min)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 06 + 08 share one Monte-Carlo run: an ensemble-null power curve.
// ---------------------------------------------------------------------------

fn power_curve() -> &'static SimReport {
    static RUN: OnceLock<SimReport> = OnceLock::new();
    RUN.get_or_init(|| {
        let scenario = SimScenario {
            name: Some("acceptance-power-curve".into()),
            n: 100,
            p1: 1,
            p2: 1,
            k_true: "rbf:sigma=1".into(),
            deltas: vec![0.0, 0.5, 1.0],
            strategies: vec![Strategy::CvekRbf],
            reps: 500,
            noise_sd: 1.0,
            alpha: 0.05,
            seed: 8801,
            standardization: Standardization::MeanSdOne,
            sigma_hint: None,
            center: true,
        };
        run_scenario(&scenario).expect("power-curve scenario")
    })
}

#[test]
fn criterion_06_ensemble_null_is_calibrated() {
    let start = Instant::now();
    let report = power_curve();
    let cell = report
        .cells
        .iter()
        .find(|c| c.delta == 0.0)
        .expect("null cell present");
    let elapsed = start.elapsed();
    verdict(
        6,
        "ensemble-null calibration",
        cell.rejection_rate <= 0.07 && cell.failures == 0,
        &format!(
            "type-I rate {:.4} (se {:.4}) over {} replicates, {} failures, in {elapsed:.2?} (gate ≤ 0.07)",
            cell.rejection_rate, cell.se, cell.reps, cell.failures
        ),
    );
}

#[test]
fn criterion_08_power_rises_with_interaction_strength() {
    let start = Instant::now();
    let report = power_curve();
    let mut cells: Vec<_> = report.cells.iter().collect();
    cells.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    assert_eq!(cells.len(), 3, "expected the three interaction strengths");

    let gap = cells[2].rejection_rate - cells[0].rejection_rate;
    let mut monotone = true;
    for pair in cells.windows(2) {
        let slack = 2.0 * (pair[0].se * pair[0].se + pair[1].se * pair[1].se).sqrt();
        if pair[1].rejection_rate < pair[0].rejection_rate - slack {
            monotone = false;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        8,
        "power ordering",
        gap >= 0.3 && monotone,
        &format!(
            "rates {:.3} → {:.3} → {:.3} over δ ∈ {{0, 0.5, 1}}; top-vs-null gap {gap:.3} (gate ≥ 0.3), monotone within 2 SE: {monotone}; {elapsed:.2?}",
            cells[0].rejection_rate, cells[1].rejection_rate, cells[2].rejection_rate
        ),
    );
}

// ---------------------------------------------------------------------------
// 07. Data-driven bandwidth selection inflates the null rejection rate.
//
// The rbf-mle bandwidth is tuned for the joint feature space, so with a
// narrow group paired against a wide one the shared scale systematically
// underfits the narrow group's rough component, leaving structured residual
// that leaks into the interaction direction. The ensemble strategy stays
// calibrated on this same design (its null cell is measured in criterion 6's
// scenario family), which is the contrast the method is built around.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_bandwidth_selection_inflates_type_one_error() {
    let start = Instant::now();
    let scenario = SimScenario {
        name: Some("acceptance-mle-inflation".into()),
        n: 100,
        p1: 1,
        p2: 10,
        k_true: "matern:nu=3/2,sigma=1.5".into(),
        deltas: vec![0.0],
        strategies: vec![Strategy::RbfMle],
        reps: 500,
        noise_sd: 0.2,
        alpha: 0.05,
        seed: 7701,
        standardization: Standardization::MeanSdOne,
        sigma_hint: None,
        center: true,
    };
    let report = run_scenario(&scenario).expect("inflation scenario");
    let cell = &report.cells[0];
    let elapsed = start.elapsed();
    verdict(
        7,
        "selection-induced inflation",
        cell.rejection_rate >= 0.10 && cell.failures == 0,
        &format!(
            "null rejection rate {:.4} (se {:.4}) over {} replicates, {} failures, in {elapsed:.2?} (gate ≥ 0.10)",
            cell.rejection_rate, cell.se, cell.reps, cell.failures
        ),
    );
}

// ---------------------------------------------------------------------------
// 09. Matérn closed forms vs direct Bessel quadrature.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_matern_closed_forms_match_bessel_oracle() {
    let start = Instant::now();
    let variants = [
        (MaternNu::Half, 0.5),
        (MaternNu::ThreeHalves, 1.5),
        (MaternNu::FiveHalves, 2.5),
    ];
    let sigmas: Vec<f64> = (0..10)
        .map(|i| 0.1 * (3.0f64 / 0.1).powf(i as f64 / 9.0))
        .collect();
    let rs: Vec<f64> = (0..34).map(|j| 0.02 + j as f64 * (6.0 - 0.02) / 33.0).collect();

    let mut worst = 0.0_f64;
    let mut points = 0usize;
    for &(nu, nu_value) in &variants {
        for &sigma in &sigmas {
            for &r in &rs {
                let spec = KernelSpec::Matern { nu, sigma };
                let closed = eval_kernel(&spec, &[0.0], &[r]).expect("closed form");
                let oracle = common::matern_bessel(nu_value, sigma, r);
                worst = worst.max((closed - oracle).abs());
                points += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        9,
        "matern closed forms vs quadrature",
        worst <= 1e-10 && points >= 1000 && within_budget(elapsed, Duration::from_secs(5)),
        &format!("max abs gap {worst:.2e} over {points} (σ, r) points in {elapsed:.2?} (gate 1e-10, budget 5s)"),
    );
}

// ---------------------------------------------------------------------------
// 10. Ensemble weights: production solver vs exhaustive support oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_ensemble_weights_match_enumeration_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst_obj = 0.0_f64;
    let mut corner_violation = 0.0_f64;
    for instance in 0..200 {
        let d = 2 + instance % 4; // library sizes 2..=5
        let rows = d + 3 + instance % 12;
        let mut errs = common::normal_mat(&mut rng, rows, d);
        if instance % 4 == 0 {
            // Near-collinear error columns stress the tie handling.
            let base = errs.column(0).into_owned();
            errs.set_column(1, &(base + common::normal_vec(&mut rng, rows) * 1e-6));
        }
        let weights = ensemble_weights(&errs);
        let g = errs.transpose() * &errs;
        let solver_obj = (&g * &weights).dot(&weights);
        let (_, oracle_obj) = common::oracle_best_weights(&g);

        let scale = g.trace().max(1.0);
        worst_obj = worst_obj.max((solver_obj - oracle_obj).abs() / scale);
        let best_corner = (0..d).map(|i| g[(i, i)]).fold(f64::INFINITY, f64::min);
        corner_violation = corner_violation.max((solver_obj - best_corner) / scale);
    }
    let elapsed = start.elapsed();
    verdict(
        10,
        "ensemble weights vs oracle",
        worst_obj <= 1e-8 && corner_violation <= 1e-10 && within_budget(elapsed, Duration::from_secs(30)),
        &format!(
            "max objective gap {worst_obj:.2e} (gate 1e-8), worst corner excess {corner_violation:.2e}, 200 problems in {elapsed:.2?} (budget 30s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Smoke check tying the acceptance designs to the public strategy surface.
// ---------------------------------------------------------------------------

#[test]
fn strategy_surface_supports_all_tags_on_a_shared_dataset() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 40;
    let x1 = common::normal_mat(&mut rng, n, 2);
    let x2 = common::normal_mat(&mut rng, n, 2);
    let k1 = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma: 1.0 }, &x1).unwrap());
    let k2 = center_gram(&gram_matrix(&KernelSpec::Rbf { sigma: 1.0 }, &x2).unwrap());
    let y = psd_sqrt(k1.values()) * common::normal_vec(&mut rng, n)
        + psd_sqrt(k2.values()) * common::normal_vec(&mut rng, n)
        + common::normal_vec(&mut rng, n) * 0.5;

    for strategy in Strategy::ALL {
        let hint = strategy.needs_sigma_hint().then_some(1.0);
        let result = cvek::strategy::run_strategy(strategy, &x1, &x2, &y, hint)
            .unwrap_or_else(|e| panic!("strategy {strategy} failed: {e}"));
        assert!(
            (0.0..=1.0).contains(&result.p_value),
            "strategy {strategy} produced p = {}",
            result.p_value
        );
    }

    // The fixed-pair interaction construction used throughout the acceptance
    // designs also goes through the public API.
    let kernels = build_interaction_kernels(
        &KernelSpec::Rbf { sigma: 1.0 },
        &KernelSpec::Rbf { sigma: 1.0 },
        &x1,
        &x2,
        true,
    )
    .unwrap();
    assert_eq!(kernels.k0.dim(), n);
}
