//! Monte-Carlo study of the interaction test's rejection rates.
//!
//! A scenario fixes a ground-truth kernel, sample size, noise level, and a
//! grid of interaction strengths, then estimates per-strategy rejection rates
//! over independent replicates. Each replicate draws
//!
//! ```text
//! y = h₁ + h₂ + δ·h₁₂ + noise_sd·ε,
//! ```
//!
//! where `h₁`, `h₂` are Gaussian-process draws under the (double-centered)
//! true kernel on each feature group, `h₁₂` is a draw under the Hadamard
//! product of the two centered Gram matrices, and each component is
//! standardized so that the signal-to-noise ratio is controlled by `δ` and
//! `noise_sd` alone.
//!
//! Replicate streams are derived from `(seed, rep)` so that runs are
//! reproducible, parallelizable, and share datasets across strategies and
//! across interaction strengths (common random numbers).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{center_gram, gram_matrix, hadamard, GramMatrix, KernelSpec};
use crate::linalg::psd_sqrt;
use crate::score::TestResult;
use crate::strategy::{run_strategy_with_options, Strategy, StrategyOptions};

/// Largest tolerated fraction of failed replicates per scenario cell.
const MAX_FAILURE_FRACTION: f64 = 0.10;

/// How sampled signal components are rescaled before summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Center to mean zero and rescale to unit sample standard deviation.
    #[default]
    MeanSdOne,
    /// Center to mean zero and rescale to unit Euclidean norm.
    UnitNorm,
}

/// One Monte-Carlo scenario: a ground-truth data design plus the strategies
/// to evaluate on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    /// Optional label echoed into reports.
    #[serde(default)]
    pub name: Option<String>,
    /// Sample size per replicate.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Number of features in the first group.
    #[serde(default = "default_p")]
    pub p1: usize,
    /// Number of features in the second group.
    #[serde(default = "default_p")]
    pub p2: usize,
    /// Ground-truth kernel, in canonical text form (e.g. `rbf:sigma=1`).
    pub k_true: String,
    /// Interaction strengths to sweep; `0` is the null.
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Strategies to evaluate on each replicate.
    pub strategies: Vec<Strategy>,
    /// Number of replicates per cell.
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Standard deviation of the additive noise.
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Rejection threshold for the p-value.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Base seed; replicate streams are derived from `(seed, rep)`.
    #[serde(default)]
    pub seed: u64,
    /// Rescaling applied to each sampled signal component.
    #[serde(default)]
    pub standardization: Standardization,
    /// Kernel scale handed to strategies that need one; defaults to the
    /// ground-truth kernel's scale.
    #[serde(default)]
    pub sigma_hint: Option<f64>,
    /// Double-center group Gram matrices inside the strategies.
    #[serde(default = "default_true")]
    pub center: bool,
}

fn default_n() -> usize {
    100
}
fn default_p() -> usize {
    5
}
fn default_deltas() -> Vec<f64> {
    vec![0.0]
}
fn default_reps() -> usize {
    1000
}
fn default_noise_sd() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

impl SimScenario {
    /// Parses and validates the ground-truth kernel.
    pub fn parsed_kernel(&self) -> Result<KernelSpec> {
        let spec: KernelSpec = self.k_true.parse()?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the scenario for internally consistent settings.
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!(
                "sample size must be at least 10, got {}",
                self.n
            )));
        }
        if self.p1 == 0 || self.p2 == 0 {
            return Err(Error::Config("feature groups must be non-empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::Config(format!(
                "noise standard deviation must be positive, got {}",
                self.noise_sd
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "rejection threshold must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.deltas.is_empty() {
            return Err(Error::Config(
                "at least one interaction strength is required".into(),
            ));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(
                "interaction strengths must be finite and nonnegative".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if let Some(sigma) = self.sigma_hint {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::Config(format!(
                    "sigma_hint must be positive, got {sigma}"
                )));
            }
        }
        self.parsed_kernel()?;
        Ok(())
    }

    fn dataset_params(&self) -> Result<DatasetParams> {
        Ok(DatasetParams {
            n: self.n,
            p1: self.p1,
            p2: self.p2,
            k_true: self.parsed_kernel()?,
            noise_sd: self.noise_sd,
            standardization: self.standardization,
        })
    }
}

/// Rejection-rate estimate for one `(strategy, interaction strength)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCell {
    /// Strategy evaluated in this cell.
    pub strategy: Strategy,
    /// Ground-truth kernel family (e.g. `rbf`, `matern:nu=3/2`).
    pub k_true: String,
    /// Ground-truth kernel scale, when the family has one.
    pub sigma_true: Option<f64>,
    /// Interaction strength of the generating model.
    pub delta: f64,
    /// Fraction of successful replicates with `p ≤ alpha`.
    pub rejection_rate: f64,
    /// Binomial standard error `sqrt(r(1−r)/reps)`.
    pub se: f64,
    /// Number of successful replicates behind the estimate.
    pub reps: usize,
    /// Number of replicates that failed to produce a test result.
    pub failures: usize,
    /// Sample size used per replicate.
    pub n: usize,
    /// Noise standard deviation of the generating model.
    pub noise_sd: f64,
    /// Rejection threshold applied to p-values.
    pub alpha: f64,
    /// Base seed of the scenario.
    pub seed: u64,
}

/// Outcome of one replicate for one cell, suitable for per-replicate output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    /// Strategy evaluated.
    pub strategy: Strategy,
    /// Interaction strength of the generating model.
    pub delta: f64,
    /// Replicate index within the scenario.
    pub rep: u64,
    /// Score statistic (NaN when the replicate failed).
    pub t0: f64,
    /// Satterthwaite scale (NaN when failed or degenerate).
    pub kappa: f64,
    /// Satterthwaite degrees of freedom (NaN when failed or degenerate).
    pub nu: f64,
    /// Upper-tail p-value (NaN when the replicate failed).
    pub p_value: f64,
    /// Whether `p ≤ alpha`.
    pub reject: bool,
    /// Caveat labels, joined by `+` (empty when clean).
    pub flags: String,
    /// Error message when the replicate failed (empty on success).
    pub error: String,
}

/// Full result of a scenario run: summary cells plus per-replicate records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    /// The scenario that produced this report, with defaults resolved.
    pub scenario: SimScenario,
    /// One summary row per `(strategy, delta)` cell.
    pub cells: Vec<SimCell>,
    /// One row per `(strategy, delta, replicate)`.
    pub records: Vec<ReplicateRecord>,
}

/// Ground-truth design shared by all replicates of a scenario.
#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub k_true: KernelSpec,
    pub noise_sd: f64,
    pub standardization: Standardization,
}

/// One simulated dataset together with its signal components.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// First feature group, `n × p1`.
    pub x1: DMatrix<f64>,
    /// Second feature group, `n × p2`.
    pub x2: DMatrix<f64>,
    /// Response `h₁ + h₂ + δ·h₁₂ + noise`.
    pub y: DVector<f64>,
    /// Standardized main effect of the first group.
    pub main1: DVector<f64>,
    /// Standardized main effect of the second group.
    pub main2: DVector<f64>,
    /// Standardized interaction component (absent when `δ = 0`).
    pub interaction: Option<DVector<f64>>,
    /// Noise vector actually added (already scaled by `noise_sd`).
    pub noise: DVector<f64>,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-replicate stream: `(seed, rep)` are mixed into a 256-bit
/// ChaCha key via a splitmix-style expansion, so replicates are independent
/// and any single replicate can be reproduced in isolation.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
        ^ mix64(rep.wrapping_add(0x243F_6A88_85A3_08D3));
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn draw_matrix_row_major<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

fn draw_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn standardize(v: &DVector<f64>, mode: Standardization) -> Result<DVector<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "standardization needs at least two values".into(),
        ));
    }
    let centered = v.add_scalar(-v.mean());
    let scale = match mode {
        Standardization::MeanSdOne => (centered.norm_squared() / (n as f64 - 1.0)).sqrt(),
        Standardization::UnitNorm => centered.norm(),
    };
    if !(scale.is_finite() && scale > 1e-300) {
        return Err(Error::Degenerate(
            "sampled signal component is constant; cannot standardize".into(),
        ));
    }
    Ok(centered / scale)
}

/// Draws one Gaussian-process function `B·z` with `B = K^{1/2}` and
/// `z ~ N(0, I)`, without any rescaling.
pub fn sample_gp_function<R: Rng>(gram: &GramMatrix, rng: &mut R) -> DVector<f64> {
    let b = psd_sqrt(gram.values());
    &b * draw_vector(rng, gram.dim())
}

/// Draws one Gaussian-process function and rescales it per `mode`; errors if
/// the draw is (numerically) constant, e.g. for a zero kernel.
pub fn sample_standardized_function<R: Rng>(
    gram: &GramMatrix,
    mode: Standardization,
    rng: &mut R,
) -> Result<DVector<f64>> {
    standardize(&sample_gp_function(gram, rng), mode)
}

/// Generates one replicate dataset.
///
/// Draw order is fixed (features row-major for each group, then the main
/// effects, then the interaction coefficients, then noise) so that datasets
/// produced from the same stream share all components: two interaction
/// strengths `δ ≠ 0` differ only through the `δ·h₁₂` term. The interaction
/// block is skipped entirely when `δ = 0`.
pub fn generate_dataset<R: Rng>(
    params: &DatasetParams,
    delta: f64,
    rng: &mut R,
) -> Result<Dataset> {
    params.k_true.validate()?;
    if !delta.is_finite() {
        return Err(Error::Config("interaction strength must be finite".into()));
    }
    let x1 = draw_matrix_row_major(rng, params.n, params.p1);
    let x2 = draw_matrix_row_major(rng, params.n, params.p2);
    let g1 = center_gram(&gram_matrix(&params.k_true, &x1)?);
    let g2 = center_gram(&gram_matrix(&params.k_true, &x2)?);
    let main1 = sample_standardized_function(&g1, params.standardization, rng)
        .map_err(|e| e.at_step("group-1 main effect"))?;
    let main2 = sample_standardized_function(&g2, params.standardization, rng)
        .map_err(|e| e.at_step("group-2 main effect"))?;
    let interaction = if delta != 0.0 {
        let g12 = hadamard(&g1, &g2)?;
        Some(
            sample_standardized_function(&g12, params.standardization, rng)
                .map_err(|e| e.at_step("interaction effect"))?,
        )
    } else {
        None
    };
    let noise = draw_vector(rng, params.n) * params.noise_sd;
    let mut y = &main1 + &main2 + &noise;
    if let Some(h12) = &interaction {
        y += h12 * delta;
    }
    Ok(Dataset {
        x1,
        x2,
        y,
        main1,
        main2,
        interaction,
        noise,
    })
}

fn kernel_family_and_scale(spec: &KernelSpec) -> (String, Option<f64>) {
    match spec {
        KernelSpec::Linear => ("linear".to_string(), None),
        KernelSpec::Quadratic => ("quad".to_string(), None),
        KernelSpec::Rbf { sigma } => ("rbf".to_string(), Some(*sigma)),
        KernelSpec::Matern { nu, sigma } => (format!("matern:nu={nu}"), Some(*sigma)),
        KernelSpec::NeuralNet { sigma } => ("nn".to_string(), Some(*sigma)),
    }
}

/// Runs a full scenario: all replicates, interaction strengths, and
/// strategies, in parallel over replicates.
///
/// Fails if any `(strategy, delta)` cell loses more than 10% of its
/// replicates to fit or test errors.
pub fn run_scenario(scenario: &SimScenario) -> Result<SimReport> {
    scenario.validate()?;
    let spec = scenario.parsed_kernel()?;
    let (family, scale) = kernel_family_and_scale(&spec);
    let params = scenario.dataset_params()?;
    let options = StrategyOptions {
        sigma_hint: scenario.sigma_hint.or(scale),
        rbf_median_literal: false,
        center: scenario.center,
    };
    let n_strategies = scenario.strategies.len();

    // outcomes[rep][delta_index * n_strategies + strategy_index]
    let per_rep: Vec<Vec<std::result::Result<TestResult, String>>> = (0..scenario.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut outcomes = Vec::with_capacity(scenario.deltas.len() * n_strategies);
            for &delta in &scenario.deltas {
                // A fresh stream per (rep, delta): the fixed draw order then
                // makes datasets across deltas share features and main
                // effects (common random numbers).
                let mut rng = replicate_rng(scenario.seed, rep);
                match generate_dataset(&params, delta, &mut rng) {
                    Ok(data) => {
                        for &strategy in &scenario.strategies {
                            outcomes.push(
                                run_strategy_with_options(
                                    strategy, &data.x1, &data.x2, &data.y, &options,
                                )
                                .map_err(|e| e.to_string()),
                            );
                        }
                    }
                    Err(e) => {
                        let msg = format!("dataset generation failed: {e}");
                        outcomes.extend((0..n_strategies).map(|_| Err(msg.clone())));
                    }
                }
            }
            outcomes
        })
        .collect();

    let mut cells = Vec::with_capacity(n_strategies * scenario.deltas.len());
    let mut records = Vec::with_capacity(n_strategies * scenario.deltas.len() * scenario.reps);
    for (si, &strategy) in scenario.strategies.iter().enumerate() {
        for (di, &delta) in scenario.deltas.iter().enumerate() {
            let mut successes = 0usize;
            let mut rejections = 0usize;
            let mut failures = 0usize;
            for (rep, outcomes) in per_rep.iter().enumerate() {
                let record = match &outcomes[di * n_strategies + si] {
                    Ok(result) => {
                        successes += 1;
                        let reject = result.p_value <= scenario.alpha;
                        if reject {
                            rejections += 1;
                        }
                        ReplicateRecord {
                            strategy,
                            delta,
                            rep: rep as u64,
                            t0: result.t0,
                            kappa: result.kappa,
                            nu: result.nu,
                            p_value: result.p_value,
                            reject,
                            flags: result.flags.labels().join("+"),
                            error: String::new(),
                        }
                    }
                    Err(msg) => {
                        failures += 1;
                        ReplicateRecord {
                            strategy,
                            delta,
                            rep: rep as u64,
                            t0: f64::NAN,
                            kappa: f64::NAN,
                            nu: f64::NAN,
                            p_value: f64::NAN,
                            reject: false,
                            flags: String::new(),
                            error: msg.clone(),
                        }
                    }
                };
                records.push(record);
            }
            if (failures as f64) > MAX_FAILURE_FRACTION * scenario.reps as f64 {
                return Err(Error::Simulation(format!(
                    "strategy `{strategy}` at delta {delta}: {failures} of {} replicates \
                     failed (more than {:.0}%)",
                    scenario.reps,
                    MAX_FAILURE_FRACTION * 100.0
                )));
            }
            let rate = rejections as f64 / successes as f64;
            cells.push(SimCell {
                strategy,
                k_true: family.clone(),
                sigma_true: scale,
                delta,
                rejection_rate: rate,
                se: (rate * (1.0 - rate) / successes as f64).sqrt(),
                reps: successes,
                failures,
                n: scenario.n,
                noise_sd: scenario.noise_sd,
                alpha: scenario.alpha,
                seed: scenario.seed,
            });
        }
    }
    Ok(SimReport {
        scenario: scenario.clone(),
        cells,
        records,
    })
}
