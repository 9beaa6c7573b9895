//! Sandwich covariance of the moment estimator.

use nalgebra::{DMatrix, DVector};

use super::objective::model_frequencies;
use crate::error::{Error, Result};
use crate::model::{BasisSystem, ParameterVector, SampleCounts};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    /// `V_alpha` in the flat order `(lambda, u, v)`, for one household.
    pub covariance: DMatrix<f64>,
    /// `sqrt(diag(V_alpha) / N_h)`.
    pub std_errors: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Hessian of `F` in `(lambda, u, v)`; it does not depend on the data.
pub fn hessian_f(alpha: &ParameterVector, basis: &BasisSystem) -> Result<DMatrix<f64>> {
    let pi = model_frequencies(alpha, basis)?;
    let (k, nx, ny) = (basis.k(), basis.nx(), basis.ny());
    let d = k + nx + ny;
    let mut h = DMatrix::zeros(d, d);
    let bases = basis.bases();
    for a in 0..k {
        for b in a..k {
            let v = 0.5 * pi.mu.component_mul(&bases[a]).dot(&bases[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
        for x in 0..nx {
            let v = -0.5 * (0..ny).map(|y| pi.mu[(x, y)] * bases[a][(x, y)]).sum::<f64>();
            h[(a, k + x)] = v;
            h[(k + x, a)] = v;
        }
        for y in 0..ny {
            let v = -0.5 * (0..nx).map(|x| pi.mu[(x, y)] * bases[a][(x, y)]).sum::<f64>();
            h[(a, k + nx + y)] = v;
            h[(k + nx + y, a)] = v;
        }
    }
    for x in 0..nx {
        h[(k + x, k + x)] = 0.5 * pi.mu.row(x).sum() + pi.mu_x0[x];
        for y in 0..ny {
            h[(k + x, k + nx + y)] = 0.5 * pi.mu[(x, y)];
            h[(k + nx + y, k + x)] = 0.5 * pi.mu[(x, y)];
        }
    }
    for y in 0..ny {
        h[(k + nx + y, k + nx + y)] = 0.5 * pi.mu.column(y).sum() + pi.mu_0y[y];
    }
    Ok(h)
}

/// Derivative of the gradient of `F` with respect to the empirical frequencies,
/// categories in canonical order.
fn cross_derivative(basis: &BasisSystem) -> DMatrix<f64> {
    let (k, nx, ny) = (basis.k(), basis.nx(), basis.ny());
    let mut j = DMatrix::zeros(k + nx + ny, nx * ny + nx + ny);
    for x in 0..nx {
        for y in 0..ny {
            let c = x * ny + y;
            for (kk, b) in basis.bases().iter().enumerate() {
                j[(kk, c)] = -b[(x, y)];
            }
            j[(k + x, c)] = 1.0;
            j[(k + nx + y, c)] = 1.0;
        }
        j[(k + x, nx * ny + x)] = 1.0;
    }
    for y in 0..ny {
        j[(k + nx + y, nx * ny + nx + y)] = 1.0;
    }
    j
}

/// `V_alpha = H^{-1} J V_pi J' H^{-1}` with `V_pi = diag(pi_hat) - pi_hat pi_hat'`.
pub fn asymptotic_covariance(alpha_hat: &ParameterVector, sample: &SampleCounts, basis: &BasisSystem) -> Result<CovarianceReport> {
    super::check_dims(sample, basis)?;
    let hessian = hessian_f(alpha_hat, basis)?;
    let chol = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Hessian of F is not positive definite; a parameter is not identified".into()))?;
    let pi = sample.frequencies().to_category_vector();
    let v_pi = DMatrix::from_diagonal(&pi) - &pi * pi.transpose();
    let a = chol.solve(&cross_derivative(basis));
    let mut covariance = &a * v_pi * a.transpose();
    covariance = (&covariance + covariance.transpose()) * 0.5;
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("covariance is not finite".into()));
    }
    let n_h = sample.n_households();
    let std_errors = covariance.diagonal().map(|v| (v.max(0.0) / n_h).sqrt());
    Ok(CovarianceReport { covariance, std_errors, hessian })
}
