//! Estimation of the surplus coefficients `lambda` from sampled households.
//!
//! The moment estimators minimize the convex objective `F(lambda, u, v)`
//! evaluated at empirical frequencies; its minimizer matches the basis moments
//! of the data. Maximum likelihood and a maximum-score estimator built on
//! double differences are provided for comparison.

mod covariance;
mod max_score;
mod mle;
mod moment;
mod objective;

pub use covariance::{asymptotic_covariance, hessian_f, CovarianceReport};
pub use max_score::{double_difference, max_score_fit, score, QuadrupleSet, MAX_SCORE_BUDGET};
pub use mle::{fit_mle, log_likelihood, MLE_STARTS};
pub use moment::{fit_hybrid_sista, fit_moment_matching, HybridSista};
pub use objective::{gradient_f, model_frequencies, objective_f};

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::StepSize;
use crate::error::{Error, Result};
use crate::model::{BasisSystem, MatchingPatterns, ParameterVector, SampleCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    /// Gradient descent on `F` (Barzilai-Borwein steps with backtracking).
    #[default]
    Gradient,
    /// IPFP sweeps on `(u, v)` alternating with gradient steps on `lambda`.
    CoordinateHybrid,
    Mle,
    MaxScore,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" | "moment" => Ok(Algorithm::Gradient),
            "coordinate-hybrid" | "hybrid" | "sista" => Ok(Algorithm::CoordinateHybrid),
            "mle" => Ok(Algorithm::Mle),
            "max-score" => Ok(Algorithm::MaxScore),
            other => Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Gradient => "gradient",
            Algorithm::CoordinateHybrid => "coordinate-hybrid",
            Algorithm::Mle => "mle",
            Algorithm::MaxScore => "max-score",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub algorithm: Algorithm,
    /// Sup-norm of the gradient at exit (score stagnation for max-score).
    pub tol: f64,
    pub max_iter: usize,
    pub step_size: StepSize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { algorithm: Algorithm::Gradient, tol: 1e-10, max_iter: 200_000, step_size: StepSize::Auto, seed: 0 }
    }
}

impl FitOptions {
    pub fn new(algorithm: Algorithm) -> Self {
        FitOptions { algorithm, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if let StepSize::Fixed(e) = self.step_size {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid("step size must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleDiagnostics {
    /// Average log-likelihood per household at the reported estimate.
    pub mean_log_likelihood: f64,
    pub log_likelihood: f64,
    pub starts: usize,
    pub converged_starts: usize,
    pub distinct_optima: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxScoreDiagnostics {
    pub score: usize,
    /// Quadruples whose observed double log-odds is nonzero; no direction can beat this.
    pub max_possible: usize,
    pub quadruples: usize,
    pub directions_searched: usize,
    /// Lattice directions reaching the attained score (first 1000 kept).
    pub ties: Vec<DVector<f64>>,
    pub tie_count: usize,
}

/// Fitted parameters with inference and diagnostics.
///
/// `alpha_hat` is on the frequency scale: `exp(-u_x)` is the fitted share of
/// single households of type `x`. `mu_fit` is the same fit in household counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub algorithm: Algorithm,
    pub alpha_hat: ParameterVector,
    pub covariance: Option<DMatrix<f64>>,
    pub std_errors: Option<DVector<f64>>,
    pub objective_value: f64,
    pub iterations: usize,
    /// Sup-norm of the first-order conditions at exit.
    pub gradient_norm: f64,
    pub pi_fit: Option<MatchingPatterns>,
    pub mu_fit: Option<MatchingPatterns>,
    /// Set when a fitted `u_x` or `v_y` is negative.
    pub negative_utilities: bool,
    /// Objective value per iteration (thinned to at most 1000 entries).
    pub trace: Vec<f64>,
    pub n_households: f64,
    pub pseudo_count: f64,
    pub mle: Option<MleDiagnostics>,
    pub max_score: Option<MaxScoreDiagnostics>,
}

/// Dispatches on `opts.algorithm`; max-score uses all quadruples.
pub fn fit(sample: &SampleCounts, basis: &BasisSystem, opts: &FitOptions) -> Result<EstimateReport> {
    match opts.algorithm {
        Algorithm::Gradient => fit_moment_matching(sample, basis, opts),
        Algorithm::CoordinateHybrid => fit_hybrid_sista(sample, basis, opts),
        Algorithm::Mle => fit_mle(sample, basis, opts),
        Algorithm::MaxScore => {
            let quads = QuadrupleSet::all(basis.nx(), basis.ny());
            max_score_fit(sample, basis, &quads, opts)
        }
    }
}

pub(crate) fn check_dims(sample: &SampleCounts, basis: &BasisSystem) -> Result<()> {
    if sample.nx() != basis.nx() || sample.ny() != basis.ny() {
        return Err(Error::DimensionMismatch {
            what: "sample vs basis",
            expected: basis.nx() * basis.ny(),
            found: sample.nx() * sample.ny(),
        });
    }
    Ok(())
}

struct Trace(Vec<f64>, usize);

impl Trace {
    fn new() -> Self {
        Trace(Vec::new(), 1)
    }

    fn push(&mut self, iteration: usize, value: f64) {
        if iteration.is_multiple_of(self.1) {
            self.0.push(value);
            if self.0.len() >= 1000 {
                self.0 = self.0.iter().step_by(2).copied().collect();
                self.1 *= 2;
            }
        }
    }
}

/// Report for a converged minimizer of `F`.
pub(crate) fn moment_report(
    algorithm: Algorithm,
    alpha: ParameterVector,
    sample: &SampleCounts,
    basis: &BasisSystem,
    iterations: usize,
    trace: Vec<f64>,
) -> Result<EstimateReport> {
    let pi_hat = sample.frequencies();
    let objective_value = objective_f(&alpha, &pi_hat, basis)?;
    let gradient_norm = gradient_f(&alpha, &pi_hat, basis)?.amax();
    let cov = asymptotic_covariance(&alpha, sample, basis)?;
    let pi_fit = model_frequencies(&alpha, basis)?;
    let mu_fit = pi_fit.scaled(sample.n_households());
    let negative_utilities = alpha.u.iter().chain(alpha.v.iter()).any(|&w| w < 0.0);
    Ok(EstimateReport {
        algorithm,
        alpha_hat: alpha,
        covariance: Some(cov.covariance),
        std_errors: Some(cov.std_errors),
        objective_value,
        iterations,
        gradient_norm,
        pi_fit: Some(pi_fit),
        mu_fit: Some(mu_fit),
        negative_utilities,
        trace,
        n_households: sample.n_households(),
        pseudo_count: sample.pseudo_count(),
        mle: None,
        max_score: None,
    })
}
