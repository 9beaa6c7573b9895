//! Closed forms of the logit (Gumbel) instance: Emax, entropy, the matching
//! function, and the conjugate pair used by the estimation objective.

use nalgebra::{DMatrix, DVector};

use super::{BasisSystem, MatchingPatterns, SurplusMatrix};
use crate::error::{Error, Result};

/// `Phi^lambda = sum_k lambda_k phi^k`.
pub fn surplus_from_basis(lambda: &DVector<f64>, basis: &BasisSystem) -> Result<SurplusMatrix> {
    if lambda.len() != basis.k() {
        return Err(Error::DimensionMismatch { what: "lambda", expected: basis.k(), found: lambda.len() });
    }
    let mut phi = DMatrix::zeros(basis.nx(), basis.ny());
    for (l, b) in lambda.iter().zip(basis.bases()) {
        phi += b * *l;
    }
    SurplusMatrix::new(phi)
}

/// Expected maximum utility of a man facing systematic utilities `u_row`
/// (singlehood worth zero): `log(1 + sum_t exp(U_t))`, shifted by the max.
pub fn logit_emax(u_row: &[f64]) -> f64 {
    let shift = u_row.iter().cloned().fold(0.0, f64::max);
    let s: f64 = (-shift).exp() + u_row.iter().map(|&u| (u - shift).exp()).sum::<f64>();
    shift + s.ln()
}

fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// `2 sum mu_xy log mu_xy + sum mu_x0 log mu_x0 + sum mu_0y log mu_0y`, with `0 log 0 = 0`.
pub fn entropy_logit(mu: &MatchingPatterns) -> Result<f64> {
    mu.check_nonnegative()?;
    let couples: f64 = mu.mu.iter().map(|&v| xlogx(v)).sum();
    let singles: f64 = mu.mu_x0.iter().chain(mu.mu_0y.iter()).map(|&v| xlogx(v)).sum();
    Ok(2.0 * couples + singles)
}

/// Number of `(x, y)` couples implied by singles masses and the surplus:
/// `sqrt(mu_x0 mu_0y) exp(Phi_xy / 2)`.
pub fn matching_function_logit(mu_x0: f64, mu_0y: f64, phi_xy: f64) -> Result<f64> {
    for v in [mu_x0, mu_0y] {
        if v < 0.0 {
            return Err(Error::NegativeEntry { what: "singles mass", value: v });
        }
    }
    Ok((mu_x0 * mu_0y).sqrt() * (phi_xy / 2.0).exp())
}

/// Arguments `z = (z_xy, z_x0, z_0y)` of the extended-entropy conjugate.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitArgs {
    pub z_xy: DMatrix<f64>,
    pub z_x0: DVector<f64>,
    pub z_0y: DVector<f64>,
}

impl LogitArgs {
    /// `(Phi - u - v, -u, -v)`.
    pub fn from_utilities(phi: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> LogitArgs {
        let z_xy = DMatrix::from_fn(phi.nrows(), phi.ncols(), |x, y| phi[(x, y)] - u[x] - v[y]);
        LogitArgs { z_xy, z_x0: -u, z_0y: -v }
    }

    pub fn dot(&self, mu: &MatchingPatterns) -> f64 {
        self.z_xy.component_mul(&mu.mu).sum() + self.z_x0.dot(&mu.mu_x0) + self.z_0y.dot(&mu.mu_0y)
    }
}

/// `E*(z) = 2 sum exp(z_xy / 2) + sum exp(z_x0) + sum exp(z_0y)`.
///
/// Overflow saturates to `+inf`; callers treat an infinite value as the diagnostic.
pub fn extended_entropy_star_logit(z: &LogitArgs) -> f64 {
    let couples: f64 = z.z_xy.iter().map(|&v| (v / 2.0).exp()).sum();
    let singles: f64 = z.z_x0.iter().chain(z.z_0y.iter()).map(|&v| v.exp()).sum();
    2.0 * couples + singles
}

/// Convex conjugate of [`extended_entropy_star_logit`]:
/// `2 sum (mu log mu - mu) + sum (mu_x0 log mu_x0 - mu_x0) + sum (mu_0y log mu_0y - mu_0y)`.
pub fn extended_entropy_logit(mu: &MatchingPatterns) -> Result<f64> {
    mu.check_nonnegative()?;
    let couples: f64 = mu.mu.iter().map(|&v| xlogx(v) - v).sum();
    let singles: f64 = mu.mu_x0.iter().chain(mu.mu_0y.iter()).map(|&v| xlogx(v) - v).sum();
    Ok(2.0 * couples + singles)
}

/// Gradient of `E*`: the matching patterns generated by potentials `z`.
pub fn patterns_from_potentials(z: &LogitArgs) -> MatchingPatterns {
    MatchingPatterns {
        mu: z.z_xy.map(|v| (v / 2.0).exp()),
        mu_x0: z.z_x0.map(f64::exp),
        mu_0y: z.z_0y.map(f64::exp),
    }
}

/// Matching patterns implied by `(Phi, u, v)`: `mu_xy = exp((Phi_xy - u_x - v_y)/2)`,
/// `mu_x0 = exp(-u_x)`, `mu_0y = exp(-v_y)`.
pub fn patterns_from_utilities(phi: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> MatchingPatterns {
    patterns_from_potentials(&LogitArgs::from_utilities(phi, u, v))
}

/// Total surplus `sum mu_xy Phi_xy - E(mu)` with the logit entropy.
pub fn total_surplus(mu: &MatchingPatterns, phi: &SurplusMatrix) -> Result<f64> {
    if mu.mu.shape() != phi.matrix().shape() {
        return Err(Error::DimensionMismatch { what: "surplus vs patterns", expected: mu.nx() * mu.ny(), found: phi.nx() * phi.ny() });
    }
    Ok(mu.mu.component_mul(phi.matrix()).sum() - entropy_logit(mu)?)
}
