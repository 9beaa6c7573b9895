//! The convex moment objective
//! `F = sum e^{-u} + sum e^{-v} + 2 sum e^{(Phi - u - v)/2}
//!      - sum pi_xy (Phi - u - v) + sum pi_x0 u + sum pi_0y v`
//! with `Phi = sum_k lambda_k phi^k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{surplus_from_basis, BasisSystem, MatchingPatterns, ParameterVector};

fn check(alpha: &ParameterVector, pi_hat: &MatchingPatterns, basis: &BasisSystem) -> Result<()> {
    let (nx, ny) = (basis.nx(), basis.ny());
    if alpha.lambda.len() != basis.k() || alpha.u.len() != nx || alpha.v.len() != ny {
        return Err(Error::DimensionMismatch { what: "parameter vector", expected: basis.k() + nx + ny, found: alpha.len() });
    }
    if pi_hat.nx() != nx || pi_hat.ny() != ny {
        return Err(Error::DimensionMismatch { what: "frequencies vs basis", expected: nx * ny, found: pi_hat.nx() * pi_hat.ny() });
    }
    Ok(())
}

fn reduced_surplus(alpha: &ParameterVector, basis: &BasisSystem) -> Result<DMatrix<f64>> {
    let phi = surplus_from_basis(&alpha.lambda, basis)?.into_matrix();
    Ok(DMatrix::from_fn(phi.nrows(), phi.ncols(), |x, y| phi[(x, y)] - alpha.u[x] - alpha.v[y]))
}

/// Model frequencies `pi^alpha`: singles `e^{-u}`, `e^{-v}`, couples `e^{(Phi - u - v)/2}`.
pub fn model_frequencies(alpha: &ParameterVector, basis: &BasisSystem) -> Result<MatchingPatterns> {
    let z = reduced_surplus(alpha, basis)?;
    let pi = MatchingPatterns {
        mu: z.map(|w| (w / 2.0).exp()),
        mu_x0: alpha.u.map(|w| (-w).exp()),
        mu_0y: alpha.v.map(|w| (-w).exp()),
    };
    if pi.iter_all().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("model frequencies"));
    }
    Ok(pi)
}

pub fn objective_f(alpha: &ParameterVector, pi_hat: &MatchingPatterns, basis: &BasisSystem) -> Result<f64> {
    check(alpha, pi_hat, basis)?;
    let z = reduced_surplus(alpha, basis)?;
    let mut f = 0.0;
    for x in 0..z.nrows() {
        f += (-alpha.u[x]).exp() + pi_hat.mu_x0[x] * alpha.u[x];
    }
    for y in 0..z.ncols() {
        f += (-alpha.v[y]).exp() + pi_hat.mu_0y[y] * alpha.v[y];
    }
    for x in 0..z.nrows() {
        for y in 0..z.ncols() {
            let w = z[(x, y)];
            f += 2.0 * (w / 2.0).exp() - pi_hat.mu[(x, y)] * w;
        }
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("objective F"));
    }
    Ok(f)
}

/// Gradient in the flat order `(lambda, u, v)`:
/// `dF/du_x = n_x - N_x(pi^alpha)`, `dF/dv_y = m_y - M_y(pi^alpha)`,
/// `dF/dlambda_k = sum (pi^alpha - pi_hat) phi^k`.
pub fn gradient_f(alpha: &ParameterVector, pi_hat: &MatchingPatterns, basis: &BasisSystem) -> Result<DVector<f64>> {
    check(alpha, pi_hat, basis)?;
    let pi = model_frequencies(alpha, basis)?;
    let k = basis.k();
    let (nx, ny) = (basis.nx(), basis.ny());
    let mut g = DVector::zeros(k + nx + ny);
    let excess = &pi.mu - &pi_hat.mu;
    for (kk, b) in basis.bases().iter().enumerate() {
        g[kk] = excess.dot(b);
    }
    let gu = pi_hat.men_margins() - pi.men_margins();
    let gv = pi_hat.women_margins() - pi.women_margins();
    g.rows_mut(k, nx).copy_from(&gu);
    g.rows_mut(k + nx, ny).copy_from(&gv);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(rng: &mut ChaCha8Rng, k: usize, nx: usize, ny: usize) -> BasisSystem {
        BasisSystem::unnamed((0..k).map(|_| DMatrix::from_fn(nx, ny, |_, _| rng.random_range(-1.0..1.0))).collect()).unwrap()
    }

    fn random_alpha(rng: &mut ChaCha8Rng, k: usize, nx: usize, ny: usize) -> ParameterVector {
        ParameterVector::new(
            DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0)),
            DVector::from_fn(nx, |_, _| rng.random_range(0.0..2.0)),
            DVector::from_fn(ny, |_, _| rng.random_range(0.0..2.0)),
        )
        .unwrap()
    }

    fn random_pi(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> MatchingPatterns {
        let raw = MatchingPatterns {
            mu: DMatrix::from_fn(nx, ny, |_, _| rng.random_range(0.1..1.0)),
            mu_x0: DVector::from_fn(nx, |_, _| rng.random_range(0.1..1.0)),
            mu_0y: DVector::from_fn(ny, |_, _| rng.random_range(0.1..1.0)),
        };
        raw.scaled(1.0 / raw.households())
    }

    #[test]
    fn one_by_one_value() {
        // lambda = 0 gives Phi = 0
        let basis = BasisSystem::unnamed(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
        let alpha = ParameterVector::zeros(1, 1, 1);
        let third = MatchingPatterns::scalar(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert_relative_eq!(objective_f(&alpha, &third, &basis).unwrap(), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_frequencies_leave_the_exponential_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = random_basis(&mut rng, 2, 2, 3);
        let alpha = random_alpha(&mut rng, 2, 2, 3);
        let zero = MatchingPatterns::zeros(2, 3);
        let pi = model_frequencies(&alpha, &basis).unwrap();
        let expected = pi.mu_x0.sum() + pi.mu_0y.sum() + 2.0 * pi.mu.sum();
        assert_relative_eq!(objective_f(&alpha, &zero, &basis).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn rotation_of_the_basis_leaves_f_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = random_basis(&mut rng, 2, 3, 3);
        let alpha = random_alpha(&mut rng, 2, 3, 3);
        let pi = random_pi(&mut rng, 3, 3);
        let t: f64 = 0.7;
        let (c, s) = (t.cos(), t.sin());
        let b = basis.bases();
        let rotated = BasisSystem::unnamed(vec![&b[0] * c - &b[1] * s, &b[0] * s + &b[1] * c]).unwrap();
        let l = &alpha.lambda;
        let mut rot_alpha = alpha.clone();
        rot_alpha.lambda = DVector::from_vec(vec![c * l[0] - s * l[1], s * l[0] + c * l[1]]);
        assert_relative_eq!(
            objective_f(&alpha, &pi, &basis).unwrap(),
            objective_f(&rot_alpha, &pi, &rotated).unwrap(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let basis = random_basis(&mut rng, 2, 2, 2);
            let alpha = random_alpha(&mut rng, 2, 2, 2);
            let pi = random_pi(&mut rng, 2, 2);
            let g = gradient_f(&alpha, &pi, &basis).unwrap();
            let flat = alpha.to_flat();
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut hi = flat.clone();
                hi[i] += h;
                let mut lo = flat.clone();
                lo[i] -= h;
                let f = |p: &DVector<f64>| objective_f(&ParameterVector::from_flat(p, 2, 2, 2).unwrap(), &pi, &basis).unwrap();
                let fd = (f(&hi) - f(&lo)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-2), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn lambda_gradient_vanishes_when_moments_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = random_basis(&mut rng, 3, 3, 2);
        let alpha = random_alpha(&mut rng, 3, 3, 2);
        let pi = model_frequencies(&alpha, &basis).unwrap();
        let g = gradient_f(&alpha, &pi, &basis).unwrap();
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let basis = BasisSystem::saturated(2, 2);
        let alpha = ParameterVector::zeros(3, 2, 2);
        assert!(objective_f(&alpha, &MatchingPatterns::zeros(2, 2), &basis).is_err());
        let alpha = ParameterVector::zeros(4, 2, 2);
        assert!(gradient_f(&alpha, &MatchingPatterns::zeros(3, 2), &basis).is_err());
    }

    proptest! {
        #[test]
        fn midpoint_convexity(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = random_basis(&mut rng, 2, 3, 2);
            let pi = random_pi(&mut rng, 3, 2);
            let a = random_alpha(&mut rng, 2, 3, 2);
            let b = random_alpha(&mut rng, 2, 3, 2);
            let mid = ParameterVector::from_flat(&((a.to_flat() + b.to_flat()) / 2.0), 2, 3, 2).unwrap();
            let fa = objective_f(&a, &pi, &basis).unwrap();
            let fb = objective_f(&b, &pi, &basis).unwrap();
            let fm = objective_f(&mid, &pi, &basis).unwrap();
            prop_assert!(fm <= (fa + fb) / 2.0 + 1e-12 * (1.0 + fa.abs() + fb.abs()));
        }
    }
}
