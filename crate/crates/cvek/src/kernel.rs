//! Kernel families and Gram-matrix construction.
//!
//! Five kernel families are supported: linear, quadratic, Gaussian RBF,
//! Matérn (half-integer smoothness 1/2, 3/2, 5/2), and the arcsine
//! neural-network kernel. Each has a canonical textual form used in config
//! files and CLI flags:
//!
//! ```text
//! linear
//! quad
//! rbf:sigma=<v>
//! matern:nu=<1/2|3/2|5/2>,sigma=<v>
//! nn:sigma=<v>
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;

/// Matérn smoothness restricted to the half-integer orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    /// ν = 1/2: exponential kernel `exp(−σ‖r‖)`.
    Half,
    /// ν = 3/2: `(1 + √3σ‖r‖)·exp(−√3σ‖r‖)`.
    ThreeHalves,
    /// ν = 5/2: `(1 + √5σ‖r‖ + 5σ²‖r‖²/3)·exp(−√5σ‖r‖)`.
    FiveHalves,
}

impl MaternNu {
    /// The smoothness as a real number.
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

impl fmt::Display for MaternNu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaternNu::Half => write!(f, "1/2"),
            MaternNu::ThreeHalves => write!(f, "3/2"),
            MaternNu::FiveHalves => write!(f, "5/2"),
        }
    }
}

impl FromStr for MaternNu {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1/2" | "0.5" => Ok(MaternNu::Half),
            "3/2" | "1.5" => Ok(MaternNu::ThreeHalves),
            "5/2" | "2.5" => Ok(MaternNu::FiveHalves),
            other => Err(Error::InvalidSpec(format!(
                "matern nu must be one of 1/2, 3/2, 5/2; got `{other}`"
            ))),
        }
    }
}

/// A declarative description of one kernel family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `k(x, x′) = xᵀx′`.
    Linear,
    /// `k(x, x′) = (1 + xᵀx′)²`.
    Quadratic,
    /// `k(x, x′) = exp(−σ‖x − x′‖²)` with scale `sigma > 0`.
    Rbf { sigma: f64 },
    /// Matérn kernel with half-integer smoothness and scale `sigma > 0`.
    Matern { nu: MaternNu, sigma: f64 },
    /// Arcsine kernel of a one-layer network, `(2/π)·asin(...)`, on inputs
    /// augmented with a leading constant 1; `sigma > 0` is the prior scale.
    NeuralNet { sigma: f64 },
}

impl KernelSpec {
    /// Checks that the hyperparameters are in their valid domain.
    pub fn validate(&self) -> Result<()> {
        let sigma = match self {
            KernelSpec::Linear | KernelSpec::Quadratic => return Ok(()),
            KernelSpec::Rbf { sigma }
            | KernelSpec::Matern { sigma, .. }
            | KernelSpec::NeuralNet { sigma } => *sigma,
        };
        if sigma.is_finite() && sigma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "sigma must be a positive finite real; got {sigma} in `{self}`"
            )))
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Quadratic => write!(f, "quad"),
            KernelSpec::Rbf { sigma } => write!(f, "rbf:sigma={sigma}"),
            KernelSpec::Matern { nu, sigma } => write!(f, "matern:nu={nu},sigma={sigma}"),
            KernelSpec::NeuralNet { sigma } => write!(f, "nn:sigma={sigma}"),
        }
    }
}

fn parse_sigma_arg(family: &str, body: &str) -> Result<f64> {
    let value = body.strip_prefix("sigma=").ok_or_else(|| {
        Error::InvalidSpec(format!("`{family}` expects `sigma=<v>`; got `{body}`"))
    })?;
    value
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::InvalidSpec(format!("bad sigma `{value}` for `{family}`: {e}")))
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let spec = match s.split_once(':') {
            None => match s {
                "linear" => KernelSpec::Linear,
                "quad" => KernelSpec::Quadratic,
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "unknown kernel `{other}` (expected linear, quad, rbf:..., matern:..., nn:...)"
                    )))
                }
            },
            Some(("rbf", body)) => KernelSpec::Rbf {
                sigma: parse_sigma_arg("rbf", body)?,
            },
            Some(("nn", body)) => KernelSpec::NeuralNet {
                sigma: parse_sigma_arg("nn", body)?,
            },
            Some(("matern", body)) => {
                let (nu_part, sigma_part) = body.split_once(',').ok_or_else(|| {
                    Error::InvalidSpec(format!(
                        "`matern` expects `nu=<1/2|3/2|5/2>,sigma=<v>`; got `{body}`"
                    ))
                })?;
                let nu_str = nu_part.strip_prefix("nu=").ok_or_else(|| {
                    Error::InvalidSpec(format!("`matern` expects `nu=...` first; got `{nu_part}`"))
                })?;
                KernelSpec::Matern {
                    nu: nu_str.parse()?,
                    sigma: parse_sigma_arg("matern", sigma_part)?,
                }
            }
            Some((family, _)) => {
                return Err(Error::InvalidSpec(format!("unknown kernel family `{family}`")))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A dense symmetric positive semi-definite kernel matrix, together with a
/// provenance tag describing how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    spec_tag: String,
}

impl GramMatrix {
    /// Wraps a matrix after verifying symmetry and positive semi-definiteness
    /// (smallest eigenvalue ≥ −1e−8·largest eigenvalue).
    pub fn new(values: DMatrix<f64>, spec_tag: impl Into<String>) -> Result<Self> {
        let gram = GramMatrix {
            values,
            spec_tag: spec_tag.into(),
        };
        gram.validate()?;
        Ok(gram)
    }

    /// Wraps a matrix that is symmetric PSD by construction, skipping the
    /// eigenvalue check. Callers must guarantee the invariants themselves.
    pub fn new_unchecked(values: DMatrix<f64>, spec_tag: impl Into<String>) -> Self {
        GramMatrix {
            values,
            spec_tag: spec_tag.into(),
        }
    }

    /// The matrix entries.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Consumes the wrapper and returns the raw matrix.
    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// The provenance tag (which spec or ensemble produced this matrix).
    pub fn spec_tag(&self) -> &str {
        &self.spec_tag
    }

    /// Number of rows (= columns).
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Checks the symmetry and PSD invariants, returning a descriptive error
    /// on violation.
    pub fn validate(&self) -> Result<()> {
        let m = &self.values;
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "gram matrix must be square; got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gram matrix `{}` contains non-finite entries",
                self.spec_tag
            )));
        }
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1e-300);
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "gram matrix `{}` is asymmetric at ({i},{j})",
                        self.spec_tag
                    )));
                }
            }
        }
        let (_, eigs) = sym_eigen_sorted(m);
        let max_eig = eigs[eigs.len() - 1].max(0.0);
        let min_eig = eigs[0];
        if min_eig < -1e-8 * max_eig.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "gram matrix `{}` is not PSD: min eigenvalue {min_eig:.3e} vs max {max_eig:.3e}",
                self.spec_tag
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates a kernel on a pair of points after validating the spec, assuming
/// equal input dimensions.
fn eval_unchecked(spec: &KernelSpec, x: &[f64], x_prime: &[f64]) -> f64 {
    match spec {
        KernelSpec::Linear => dot(x, x_prime),
        KernelSpec::Quadratic => {
            let d = 1.0 + dot(x, x_prime);
            d * d
        }
        KernelSpec::Rbf { sigma } => (-sigma * sq_dist(x, x_prime)).exp(),
        KernelSpec::Matern { nu, sigma } => matern_closed_form(*nu, sigma * sq_dist(x, x_prime).sqrt()),
        KernelSpec::NeuralNet { sigma } => {
            // Augmented inputs x̃ = (1, x); the Gram of x̃ under scale 2σ.
            let raw = 1.0 + dot(x, x_prime);
            let nx = 1.0 + dot(x, x);
            let ny = 1.0 + dot(x_prime, x_prime);
            arcsine_kernel(*sigma, raw, nx, ny)
        }
    }
}

/// Matérn closed forms as a function of the scaled distance `t = σ‖r‖ ≥ 0`.
fn matern_closed_form(nu: MaternNu, t: f64) -> f64 {
    match nu {
        MaternNu::Half => (-t).exp(),
        MaternNu::ThreeHalves => {
            let u = 3.0_f64.sqrt() * t;
            (1.0 + u) * (-u).exp()
        }
        MaternNu::FiveHalves => {
            let u = 5.0_f64.sqrt() * t;
            (1.0 + u + u * u / 3.0) * (-u).exp()
        }
    }
}

/// The arcsine (one-layer network) kernel from the augmented inner products.
/// `raw = x̃ᵀx̃′`, `nx = x̃ᵀx̃`, `ny = x̃′ᵀx̃′`.
fn arcsine_kernel(sigma: f64, raw: f64, nx: f64, ny: f64) -> f64 {
    let denom = ((1.0 + 2.0 * sigma * nx) * (1.0 + 2.0 * sigma * ny)).sqrt();
    let s = (2.0 * sigma * raw / denom).clamp(-1.0, 1.0);
    std::f64::consts::FRAC_2_PI * s.asin()
}

/// Evaluates `k(x, x′)` for the given kernel spec.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != x_prime.len() || x.is_empty() {
        return Err(Error::InvalidInput(format!(
            "kernel inputs must share a dimension >= 1; got {} and {}",
            x.len(),
            x_prime.len()
        )));
    }
    Ok(eval_unchecked(spec, x, x_prime))
}

/// Builds the Gram matrix `K[i][j] = k(row_i, row_j)` over the rows of `x`.
///
/// The upper triangle is computed and mirrored, so the result is symmetric by
/// construction; every supported family is positive semi-definite.
pub fn gram_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("gram matrix needs at least one row".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("input matrix contains non-finite entries".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut values = DMatrix::zeros(n, n);

    // The neural-network kernel reuses per-row augmented norms.
    if let KernelSpec::NeuralNet { sigma } = spec {
        let norms: Vec<f64> = rows.iter().map(|r| 1.0 + dot(r, r)).collect();
        for i in 0..n {
            for j in i..n {
                let raw = 1.0 + dot(&rows[i], &rows[j]);
                let v = arcsine_kernel(*sigma, raw, norms[i], norms[j]);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
    } else {
        for i in 0..n {
            for j in i..n {
                let v = eval_unchecked(spec, &rows[i], &rows[j]);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
    }
    Ok(GramMatrix::new_unchecked(values, spec.to_string()))
}

/// Entrywise (Hadamard) product of two Gram matrices; PSD by the Schur
/// product theorem.
pub fn hadamard(k1: &GramMatrix, k2: &GramMatrix) -> Result<GramMatrix> {
    if k1.dim() != k2.dim() {
        return Err(Error::InvalidInput(format!(
            "hadamard product needs equal dimensions; got {} and {}",
            k1.dim(),
            k2.dim()
        )));
    }
    let values = k1.values().component_mul(k2.values());
    Ok(GramMatrix::new_unchecked(
        values,
        format!("({})*({})", k1.spec_tag(), k2.spec_tag()),
    ))
}

/// Double-centers a Gram matrix: `(I − J/n)·K·(I − J/n)` with `J` all ones.
///
/// Row and column sums of the result vanish, so the associated function space
/// contains no constant component. Centering preserves PSD and is idempotent.
pub fn center_gram(k: &GramMatrix) -> GramMatrix {
    let m = k.values();
    let n = m.nrows();
    let row_means = DVector::from_iterator(n, m.row_iter().map(|r| r.sum() / n as f64));
    let grand_mean = row_means.sum() / n as f64;
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            values[(i, j)] = m[(i, j)] - row_means[i] - row_means[j] + grand_mean;
        }
    }
    // Symmetrize exactly against floating-point drift in the rank-1 updates.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    GramMatrix::new_unchecked(values, format!("center({})", k.spec_tag()))
}

/// Adds two Gram matrices (the kernel of the direct sum of function spaces).
pub fn sum_grams(k1: &GramMatrix, k2: &GramMatrix) -> Result<GramMatrix> {
    if k1.dim() != k2.dim() {
        return Err(Error::InvalidInput(format!(
            "gram sum needs equal dimensions; got {} and {}",
            k1.dim(),
            k2.dim()
        )));
    }
    Ok(GramMatrix::new_unchecked(
        k1.values() + k2.values(),
        format!("({})+({})", k1.spec_tag(), k2.spec_tag()),
    ))
}
