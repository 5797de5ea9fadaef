//! Shared dense linear-algebra and optimization helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// Returns `(U, d)` with `M = U·diag(d)·Uᵀ` and the columns of `U`
/// orthonormal, ordered consistently with `d`.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("non-finite eigenvalue")
    });
    let mut u = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
        d[dst] = eig.eigenvalues[src];
    }
    (u, d)
}

/// A square root `B` with `B·Bᵀ = M` for a (numerically) PSD matrix, via
/// eigendecomposition with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, d) = sym_eigen_sorted(m);
    let roots = DVector::from_iterator(d.len(), d.iter().map(|&v| v.max(0.0).sqrt()));
    scale_columns(&u, &roots)
}

/// Returns `U·diag(s)` without forming the diagonal matrix.
pub fn scale_columns(u: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// `tr(A·B)` for square matrices of equal size, without forming the product.
pub fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), b.ncols());
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2, "invalid log grid");
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Median of a sample (average of the two central order statistics for even
/// lengths). Consumes the buffer by sorting it.
pub fn median_inplace(xs: &mut [f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Degenerate("median of an empty sample".into()));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("median of non-finite values".into()));
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite survived check"));
    let n = xs.len();
    Ok(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Result of a quasi-Newton minimization.
pub struct MinimizeOutcome {
    /// The best iterate found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub value: f64,
    /// Gradient at `x`.
    pub grad: Vec<f64>,
    /// Whether the gradient tolerance was met.
    pub converged: bool,
}

/// BFGS minimization with Armijo backtracking line search.
///
/// `f` returns the objective and its gradient; non-finite objective values are
/// treated as out-of-domain (the line search backtracks away from them).
pub fn minimize_bfgs<F>(mut f: F, x0: &[f64], grad_tol: f64, max_iters: usize) -> MinimizeOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let dim = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut gx) = {
        let (v, g) = f(x.as_slice());
        (v, DVector::from_vec(g))
    };
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);

    let grad_ok = |g: &DVector<f64>| g.amax() <= grad_tol;
    if !fx.is_finite() {
        return MinimizeOutcome {
            x: x.as_slice().to_vec(),
            value: fx,
            grad: gx.as_slice().to_vec(),
            converged: false,
        };
    }

    let mut converged = grad_ok(&gx);
    for _ in 0..max_iters {
        if converged {
            break;
        }
        let mut direction = -(&h_inv * &gx);
        let mut slope = direction.dot(&gx);
        if !(slope < 0.0) || !slope.is_finite() {
            // Reset a broken curvature model and fall back to steepest descent.
            h_inv = DMatrix::identity(dim, dim);
            direction = -gx.clone();
            slope = direction.dot(&gx);
            if !(slope < 0.0) {
                break;
            }
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &direction * step;
            let (fc, gc) = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc, DVector::from_vec(gc)));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break; // Line search failed; report the best point so far.
        };

        let s = &x_new - &x;
        let yv = &g_new - &gx;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            // Standard BFGS inverse-Hessian update.
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            h_inv += (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }

        let stalled = (fx - f_new).abs() <= 1e-13 * (1.0 + fx.abs());
        x = x_new;
        fx = f_new;
        gx = g_new;
        converged = grad_ok(&gx);
        if stalled {
            break;
        }
    }

    MinimizeOutcome {
        x: x.as_slice().to_vec(),
        value: fx,
        grad: gx.as_slice().to_vec(),
        converged,
    }
}
