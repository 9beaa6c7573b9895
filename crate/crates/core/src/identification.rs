//! Closed-form recovery of the surplus and of its split between the two sides
//! from observed matching patterns (logit heterogeneity).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{MatchingPatterns, SurplusMatrix};

/// Type-level split of the joint surplus, normalized so that singlehood is worth zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityDecomposition {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

fn require_positive(mu: &MatchingPatterns) -> Result<()> {
    mu.check_nonnegative()?;
    for x in 0..mu.nx() {
        for y in 0..mu.ny() {
            if mu.mu[(x, y)] <= 0.0 {
                return Err(Error::ZeroCell { x: format!("x[{x}]"), y: format!("y[{y}]") });
            }
        }
    }
    if let Some(x) = mu.mu_x0.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroCell { x: format!("x[{x}]"), y: "0".into() });
    }
    if let Some(y) = mu.mu_0y.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroCell { x: "0".into(), y: format!("y[{y}]") });
    }
    Ok(())
}

/// `Phi_xy = log(mu_xy^2 / (mu_x0 mu_0y))`.
pub fn choo_siow(mu: &MatchingPatterns) -> Result<SurplusMatrix> {
    require_positive(mu)?;
    let phi = DMatrix::from_fn(mu.nx(), mu.ny(), |x, y| {
        2.0 * mu.mu[(x, y)].ln() - mu.mu_x0[x].ln() - mu.mu_0y[y].ln()
    });
    SurplusMatrix::new(phi)
}

/// `U_xy = log(mu_xy / mu_x0)`, `V_xy = log(mu_xy / mu_0y)`.
pub fn split_utilities_logit(mu: &MatchingPatterns) -> Result<UtilityDecomposition> {
    require_positive(mu)?;
    let u = DMatrix::from_fn(mu.nx(), mu.ny(), |x, y| mu.mu[(x, y)].ln() - mu.mu_x0[x].ln());
    let v = DMatrix::from_fn(mu.nx(), mu.ny(), |x, y| mu.mu[(x, y)].ln() - mu.mu_0y[y].ln());
    Ok(UtilityDecomposition { u, v })
}

/// Correlation `rho` of the bivariate normal type distribution implied by the
/// bilinear surplus coefficient `a`: the root in `(-1, 1)` of `c = rho / (1 - rho^2)`
/// with `c = a sigma_x sigma_y`.
pub fn gaussian_bilinear_rho(a: f64, sigma_x: f64, sigma_y: f64) -> Result<f64> {
    if !(a.is_finite() && sigma_x.is_finite() && sigma_y.is_finite()) {
        return Err(Error::NonFinite("bilinear coefficient or scale"));
    }
    if sigma_x <= 0.0 || sigma_y <= 0.0 {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let c = a * sigma_x * sigma_y;
    // rationalized root of c rho^2 + rho - c = 0; stable at c = 0 and large |c|
    Ok(2.0 * c / (1.0 + (1.0 + 4.0 * c * c).sqrt()))
}
