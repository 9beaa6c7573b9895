//! Gradient descent on the dual `(u, v)`: each type's utility moves with its
//! excess predicted mass.

use nalgebra::DVector;

use super::{all_single, margin_residual, Reduction, SolverOptions, StepSize};
use crate::error::{Error, Result};
use crate::model::{patterns_from_utilities, total_surplus, EquilibriumSolution, Margins, SurplusMatrix};

const GROWTH_WINDOW: usize = 50;
const MAX_HALVINGS: usize = 40;

pub fn solve_equilibrium_gradient(
    phi: &SurplusMatrix,
    margins: &Margins,
    opts: &SolverOptions,
) -> Result<EquilibriumSolution> {
    solve_equilibrium_gradient_from(phi, margins, opts, None)
}

/// Starts from `(u, v)` when given (full dimensions), otherwise from
/// `u_x = -log(n_x / 2)`, `v_y = -log(m_y / 2)`.
pub fn solve_equilibrium_gradient_from(
    phi: &SurplusMatrix,
    margins: &Margins,
    opts: &SolverOptions,
    start: Option<(DVector<f64>, DVector<f64>)>,
) -> Result<EquilibriumSolution> {
    opts.validate()?;
    if phi.nx() != margins.nx() || phi.ny() != margins.ny() {
        return Err(Error::DimensionMismatch { what: "surplus vs margins", expected: margins.nx() * margins.ny(), found: phi.nx() * phi.ny() });
    }
    let red = Reduction::new(margins);
    let n = red.rows(&margins.n);
    let m = red.cols(&margins.m);

    let (mu_r, u_r, v_r, iterations, residual) = if n.is_empty() || m.is_empty() {
        let (mu, u, v) = all_single(&n, &m);
        (mu, u, v, 0, 0.0)
    } else {
        let phi_r = red.matrix(phi.matrix());
        let (mut u, mut v) = match start {
            Some((u0, v0)) => (red.rows(&u0), red.cols(&v0)),
            None => (n.map(|x| -(x / 2.0).ln()), m.map(|y| -(y / 2.0).ln())),
        };
        let mut step = match opts.step_size {
            StepSize::Fixed(e) => e,
            StepSize::Auto => 1.0 / (2.0 * n.max().max(m.max())),
        };
        let mut iterations = 0;
        let mut stalled = 0;
        let mut halvings = 0;
        let mut mu = patterns_from_utilities(&phi_r, &u, &v);
        let mut residual = margin_residual(&mu, &n, &m);
        if !residual.is_finite() {
            return Err(Error::NonFinite("gradient start"));
        }
        let mut best = (residual, u.clone(), v.clone());
        while residual > opts.tol {
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence { iterations, residual });
            }
            // dF/du = n - N(mu); descend.
            u += (mu.men_margins() - &n) * step;
            v += (mu.women_margins() - &m) * step;
            mu = patterns_from_utilities(&phi_r, &u, &v);
            residual = margin_residual(&mu, &n, &m);
            iterations += 1;
            if residual < best.0 {
                best = (residual, u.clone(), v.clone());
                stalled = 0;
            } else {
                stalled += 1;
            }
            if stalled >= GROWTH_WINDOW || !residual.is_finite() {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::StepSize { step, residual });
                }
                step /= 2.0;
                stalled = 0;
                (u, v) = (best.1.clone(), best.2.clone());
                mu = patterns_from_utilities(&phi_r, &u, &v);
                residual = best.0;
            }
        }
        (mu, u, v, iterations, residual)
    };

    let (mu, u, v) = if red.is_identity() { (mu_r, u_r, v_r) } else { red.expand(&mu_r, &u_r, &v_r) };
    let total_surplus = total_surplus(&mu, phi)?;
    Ok(EquilibriumSolution { mu, u, v, total_surplus, iterations, residual })
}
