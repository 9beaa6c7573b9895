//! Stable matchings: type-level equilibria and small individual-level markets.

mod gradient;
mod ipfp;
mod micro;
mod separable;

pub use gradient::{solve_equilibrium_gradient, solve_equilibrium_gradient_from};
pub use ipfp::{solve_ipfp, solve_ipfp_from, Ipfp, IpfpStart};
pub use micro::{
    assignment_stable_matching, enumerate_best_matching, hungarian_max, micro_stable_matching,
    MicroMarket, MicroSolution, ENUMERATION_CAP,
};
pub use separable::{separable_stable_matching, SeparableMarket, SeparableSolution};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Margins, MatchingPatterns};

/// Step-size rule for gradient-type iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Solver-specific default (safe constant or line search).
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm tolerance on margin residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Only read by the gradient solver.
    pub step_size: StepSize,
    /// Unused by the deterministic solvers.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 100_000, step_size: StepSize::Auto, seed: 0 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
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

/// Drops types with zero mass before solving and reinserts them afterwards.
pub(crate) struct Reduction {
    nx: usize,
    ny: usize,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

impl Reduction {
    pub(crate) fn new(margins: &Margins) -> Self {
        Reduction {
            nx: margins.nx(),
            ny: margins.ny(),
            xs: (0..margins.nx()).filter(|&x| margins.n[x] > 0.0).collect(),
            ys: (0..margins.ny()).filter(|&y| margins.m[y] > 0.0).collect(),
        }
    }

    pub(crate) fn is_identity(&self) -> bool {
        self.xs.len() == self.nx && self.ys.len() == self.ny
    }

    pub(crate) fn matrix(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.xs.len(), self.ys.len(), |i, j| full[(self.xs[i], self.ys[j])])
    }

    pub(crate) fn rows(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.xs.len(), self.xs.iter().map(|&x| full[x]))
    }

    pub(crate) fn cols(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.ys.len(), self.ys.iter().map(|&y| full[y]))
    }

    /// Scatter a reduced solution back; dropped types get zero mass and infinite utility.
    pub(crate) fn expand(
        &self,
        mu: &MatchingPatterns,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> (MatchingPatterns, DVector<f64>, DVector<f64>) {
        let mut full = MatchingPatterns::zeros(self.nx, self.ny);
        let mut fu = DVector::from_element(self.nx, f64::INFINITY);
        let mut fv = DVector::from_element(self.ny, f64::INFINITY);
        for (i, &x) in self.xs.iter().enumerate() {
            full.mu_x0[x] = mu.mu_x0[i];
            fu[x] = u[i];
            for (j, &y) in self.ys.iter().enumerate() {
                full.mu[(x, y)] = mu.mu[(i, j)];
            }
        }
        for (j, &y) in self.ys.iter().enumerate() {
            full.mu_0y[y] = mu.mu_0y[j];
            fv[y] = v[j];
        }
        (full, fu, fv)
    }
}

/// Sup-norm of `N(mu) - n` and `M(mu) - m`.
pub(crate) fn margin_residual(mu: &MatchingPatterns, n: &DVector<f64>, m: &DVector<f64>) -> f64 {
    let rn = (mu.men_margins() - n).amax();
    let rm = (mu.women_margins() - m).amax();
    rn.max(rm)
}

/// Every type on one side is unmatched when the other side is empty.
pub(crate) fn all_single(n: &DVector<f64>, m: &DVector<f64>) -> (MatchingPatterns, DVector<f64>, DVector<f64>) {
    let mu = MatchingPatterns {
        mu: DMatrix::zeros(n.len(), m.len()),
        mu_x0: n.clone(),
        mu_0y: m.clone(),
    };
    (mu, n.map(|v| -v.ln()), m.map(|v| -v.ln()))
}
