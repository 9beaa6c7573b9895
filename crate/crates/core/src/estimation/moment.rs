//! Minimizers of `F`: a first-order method on all of `(lambda, u, v)` and the
//! hybrid scheme that replaces the `(u, v)` steps by exact IPFP sweeps.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::objective::{gradient_f, objective_f};
use super::{check_dims, moment_report, Algorithm, EstimateReport, FitOptions, Trace};
use crate::equilibrium::{Ipfp, IpfpStart, StepSize};
use crate::error::{Error, Result};
use crate::model::{surplus_from_basis, BasisSystem, MatchingPatterns, ParameterVector, SampleCounts};

// Non-monotone line search memory and sufficient-decrease constant.
const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn starting_point(pi_hat: &MatchingPatterns, k: usize) -> ParameterVector {
    ParameterVector {
        lambda: DVector::zeros(k),
        u: pi_hat.mu_x0.map(|p| -p.ln()),
        v: pi_hat.mu_0y.map(|p| -p.ln()),
    }
}

/// Minimizes `F` at the sample frequencies by gradient descent with
/// Barzilai-Borwein steps and a non-monotone backtracking line search
/// (`StepSize::Fixed(e)` starts every line search at `e` instead).
pub fn fit_moment_matching(sample: &SampleCounts, basis: &BasisSystem, opts: &FitOptions) -> Result<EstimateReport> {
    opts.validate()?;
    check_dims(sample, basis)?;
    sample.require_positive(Some(basis))?;
    let pi_hat = sample.frequencies();
    let (k, nx, ny) = (basis.k(), basis.nx(), basis.ny());
    let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let alpha = ParameterVector::from_flat(x, k, nx, ny)?;
        Ok((objective_f(&alpha, &pi_hat, basis)?, gradient_f(&alpha, &pi_hat, basis)?))
    };

    let mut x = starting_point(&pi_hat, k).to_flat();
    let (mut f, mut g) = eval(&x)?;
    let mut recent: VecDeque<f64> = VecDeque::from([f]);
    let mut trace = Trace::new();
    trace.push(0, f);
    let mut step = match opts.step_size {
        StepSize::Fixed(e) => e,
        StepSize::Auto => 1.0,
    };
    let mut iterations = 0;
    while g.amax() > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { iterations, residual: g.amax() });
        }
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 8.0 * f64::EPSILON * (1.0 + reference.abs());
        let gg = g.norm_squared();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x - &g * t;
            if let Ok((ft, gt)) = eval(&trial) {
                if ft <= reference - ARMIJO * t * gg + slack {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Err(Error::StepSize { step: t, residual: g.amax() });
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        step = match opts.step_size {
            StepSize::Fixed(e) => e,
            StepSize::Auto if sy > 0.0 => (s.norm_squared() / sy).clamp(1e-10, 1e10),
            StepSize::Auto => 1.0,
        };
        x = x_new;
        f = f_new;
        g = g_new;
        recent.push_back(f);
        if recent.len() > MEMORY {
            recent.pop_front();
        }
        iterations += 1;
        trace.push(iterations, f);
    }
    let alpha = ParameterVector::from_flat(&x, k, nx, ny)?;
    moment_report(Algorithm::Gradient, alpha, sample, basis, iterations, trace.0)
}

/// State of the hybrid scheme: per iteration one IPFP sweep on `(a, b)` at the
/// current `S = exp(Phi^lambda / 2)`, then a gradient step on `lambda`.
#[derive(Debug, Clone)]
pub struct HybridSista {
    ipfp: Ipfp,
    lambda: DVector<f64>,
    basis: BasisSystem,
    pi_hat: MatchingPatterns,
}

impl HybridSista {
    /// Starts from `lambda` with `a = sqrt(pi_x0)`, `b = sqrt(pi_0y)`.
    pub fn new(pi_hat: &MatchingPatterns, basis: &BasisSystem, lambda: DVector<f64>) -> Result<Self> {
        if lambda.len() != basis.k() {
            return Err(Error::DimensionMismatch { what: "lambda", expected: basis.k(), found: lambda.len() });
        }
        let phi = surplus_from_basis(&lambda, basis)?;
        let ipfp = Ipfp::new(phi.matrix(), &pi_hat.men_margins(), &pi_hat.women_margins(), Some(IpfpStart::from_singles(pi_hat)))?;
        Ok(HybridSista { ipfp, lambda, basis: basis.clone(), pi_hat: pi_hat.clone() })
    }

    pub fn ipfp(&self) -> &Ipfp {
        &self.ipfp
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn alpha(&self) -> ParameterVector {
        let (u, v) = self.ipfp.utilities();
        ParameterVector { lambda: self.lambda.clone(), u, v }
    }

    /// `1 / lambda_max(H_ll)` with `H_ll = 1/2 sum mu phi phi'` at the current patterns.
    pub fn lipschitz_step(&self) -> f64 {
        let mu = self.ipfp.patterns().mu;
        let b = self.basis.bases();
        let k = b.len();
        let h = DMatrix::from_fn(k, k, |i, j| 0.5 * mu.component_mul(&b[i]).dot(&b[j]));
        let top = h.symmetric_eigenvalues().max();
        if top > 0.0 {
            1.0 / top
        } else {
            1.0
        }
    }

    /// One iteration with `lambda` step `eps`; `eps = 0` is a plain IPFP sweep.
    pub fn step(&mut self, eps: f64) -> Result<()> {
        self.ipfp.sweep();
        if eps != 0.0 {
            let excess = self.ipfp.patterns().mu - &self.pi_hat.mu;
            self.lambda -= self.basis.moments(&excess) * eps;
            let phi = surplus_from_basis(&self.lambda, &self.basis)?;
            self.ipfp.set_surplus(phi.matrix())?;
        }
        Ok(())
    }

    pub fn gradient(&self) -> Result<DVector<f64>> {
        gradient_f(&self.alpha(), &self.pi_hat, &self.basis)
    }
}

/// Hybrid coordinate scheme: exact IPFP updates of `(u, v)` alternating with
/// gradient steps on `lambda` of size `1 / lambda_max` (or the fixed step).
pub fn fit_hybrid_sista(sample: &SampleCounts, basis: &BasisSystem, opts: &FitOptions) -> Result<EstimateReport> {
    opts.validate()?;
    check_dims(sample, basis)?;
    sample.require_positive(Some(basis))?;
    let pi_hat = sample.frequencies();
    let mut state = HybridSista::new(&pi_hat, basis, DVector::zeros(basis.k()))?;
    let mut trace = Trace::new();
    let mut iterations = 0;
    loop {
        let g = state.gradient()?;
        let residual = g.amax();
        if !residual.is_finite() {
            return Err(Error::NonFinite("hybrid iterate"));
        }
        if iterations % 16 == 0 || residual <= opts.tol {
            trace.push(iterations, objective_f(&state.alpha(), &pi_hat, basis)?);
        }
        if residual <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { iterations, residual });
        }
        let eps = match opts.step_size {
            StepSize::Fixed(e) => e,
            StepSize::Auto => state.lipschitz_step(),
        };
        state.step(eps)?;
        iterations += 1;
    }
    moment_report(Algorithm::CoordinateHybrid, state.alpha(), sample, basis, iterations, trace.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_ipfp, SolverOptions};
    use crate::estimation::model_frequencies;
    use crate::model::{Margins, SurplusMatrix};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_sample(lambda: &DVector<f64>, basis: &BasisSystem, margins: &Margins) -> SampleCounts {
        let phi = surplus_from_basis(lambda, basis).unwrap();
        let sol = solve_ipfp(&phi, margins, &SolverOptions::with_tol(1e-15)).unwrap();
        SampleCounts::from_expected(sol.mu).unwrap()
    }

    fn random_instance(seed: u64, k: usize, nx: usize, ny: usize) -> (DVector<f64>, BasisSystem, Margins) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = BasisSystem::unnamed((0..k).map(|_| DMatrix::from_fn(nx, ny, |_, _| rng.random_range(-1.0..1.0))).collect()).unwrap();
        let lambda = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let margins = Margins::new(
            DVector::from_fn(nx, |_, _| rng.random_range(0.5..2.0)),
            DVector::from_fn(ny, |_, _| rng.random_range(0.5..2.0)),
        )
        .unwrap();
        (lambda, basis, margins)
    }

    #[test]
    fn recovers_lambda_from_exact_frequencies() {
        for seed in 0..5 {
            let (lambda, basis, margins) = random_instance(seed, 2, 3, 4);
            let sample = exact_sample(&lambda, &basis, &margins);
            let rep = fit_moment_matching(&sample, &basis, &FitOptions::default()).unwrap();
            assert!((&rep.alpha_hat.lambda - &lambda).amax() < 1e-6, "{} vs {}", rep.alpha_hat.lambda, lambda);
            let moments_fit = basis.moments(&rep.mu_fit.as_ref().unwrap().mu);
            let moments_obs = basis.moments(&sample.counts().mu);
            assert!((moments_fit - moments_obs).amax() < 1e-8 * sample.n_households());
        }
    }

    #[test]
    fn zero_surplus_recovery() {
        let basis = BasisSystem::unnamed(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
        let sample = SampleCounts::from_expected(MatchingPatterns::scalar(0.5, 0.5, 0.5).unwrap()).unwrap();
        for algo in [Algorithm::Gradient, Algorithm::CoordinateHybrid] {
            let rep = super::super::fit(&sample, &basis, &FitOptions::new(algo)).unwrap();
            assert!(rep.alpha_hat.lambda[0].abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_fit_reproduces_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let counts = MatchingPatterns {
            mu: DMatrix::from_fn(3, 2, |_, _| rng.random_range(1..50) as f64),
            mu_x0: DVector::from_fn(3, |_, _| rng.random_range(1..50) as f64),
            mu_0y: DVector::from_fn(2, |_, _| rng.random_range(1..50) as f64),
        };
        let sample = SampleCounts::from_counts(counts).unwrap();
        let basis = BasisSystem::saturated(3, 2);
        let rep = fit_moment_matching(&sample, &basis, &FitOptions::default()).unwrap();
        let pi_hat = sample.frequencies();
        for x in 0..3 {
            assert_relative_eq!((-rep.alpha_hat.u[x]).exp(), pi_hat.mu_x0[x], max_relative = 1e-8);
        }
        assert!(rep.mu_fit.unwrap().max_abs_diff(sample.counts()) < 1e-7);
    }

    #[test]
    fn hybrid_agrees_with_gradient() {
        for seed in 10..14 {
            let (lambda, basis, margins) = random_instance(seed, 3, 3, 3);
            let sample = exact_sample(&lambda, &basis, &margins);
            let a = fit_moment_matching(&sample, &basis, &FitOptions::default()).unwrap();
            let b = fit_hybrid_sista(&sample, &basis, &FitOptions::new(Algorithm::CoordinateHybrid)).unwrap();
            assert!((&a.alpha_hat.lambda - &b.alpha_hat.lambda).amax() < 1e-5);
            assert!((a.alpha_hat.to_flat() - b.alpha_hat.to_flat()).amax() < 1e-6);
        }
    }

    #[test]
    fn zero_lambda_step_is_ipfp() {
        let (lambda, basis, margins) = random_instance(20, 2, 3, 3);
        let sample = exact_sample(&lambda, &basis, &margins).with_pseudo_count(0.1).unwrap();
        let pi_hat = sample.frequencies();
        let mut hybrid = HybridSista::new(&pi_hat, &basis, lambda.clone()).unwrap();
        let phi = surplus_from_basis(&lambda, &basis).unwrap();
        let mut ipfp = Ipfp::new(phi.matrix(), &pi_hat.men_margins(), &pi_hat.women_margins(), Some(IpfpStart::from_singles(&pi_hat))).unwrap();
        for _ in 0..25 {
            hybrid.step(0.0).unwrap();
            ipfp.sweep();
            assert_eq!(hybrid.ipfp().a(), ipfp.a());
            assert_eq!(hybrid.ipfp().b(), ipfp.b());
        }
        assert_eq!(hybrid.lambda(), &lambda);
    }

    #[test]
    fn first_sweep_solves_its_quadratics() {
        let (lambda, basis, margins) = random_instance(21, 2, 2, 2);
        let sample = exact_sample(&lambda, &basis, &margins);
        let pi_hat = sample.frequencies();
        let mut hybrid = HybridSista::new(&pi_hat, &basis, DVector::zeros(2)).unwrap();
        let b0 = hybrid.ipfp().b().clone();
        hybrid.ipfp.update_a();
        let n = pi_hat.men_margins();
        let a = hybrid.ipfp().a();
        for x in 0..2 {
            let c: f64 = (0..2).map(|y| b0[y]).sum();
            assert!((a[x] * a[x] + a[x] * c - n[x]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cell_needs_pseudo_count() {
        let mut mu = MatchingPatterns::scalar(1.0, 1.0, 1.0).unwrap();
        mu.mu[(0, 0)] = 0.0;
        let sample = SampleCounts::from_counts(mu).unwrap();
        let basis = BasisSystem::saturated(1, 1);
        assert!(matches!(fit_moment_matching(&sample, &basis, &FitOptions::default()), Err(Error::ZeroCell { .. })));
        let smoothed = sample.with_pseudo_count(0.5).unwrap();
        let rep = fit_moment_matching(&smoothed, &basis, &FitOptions::default()).unwrap();
        assert_eq!(rep.pseudo_count, 0.5);
    }

    #[test]
    fn non_convergence_is_reported() {
        let (lambda, basis, margins) = random_instance(30, 2, 3, 3);
        let sample = exact_sample(&lambda, &basis, &margins);
        let opts = FitOptions { max_iter: 2, ..Default::default() };
        assert!(matches!(fit_moment_matching(&sample, &basis, &opts), Err(Error::NonConvergence { .. })));
        let opts = FitOptions { max_iter: 2, ..FitOptions::new(Algorithm::CoordinateHybrid) };
        assert!(matches!(fit_hybrid_sista(&sample, &basis, &opts), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn model_frequencies_at_the_fit_solve_the_equilibrium() {
        let (lambda, basis, margins) = random_instance(31, 2, 2, 3);
        let sample = exact_sample(&lambda, &basis, &margins);
        let rep = fit_moment_matching(&sample, &basis, &FitOptions::default()).unwrap();
        let pi = model_frequencies(&rep.alpha_hat, &basis).unwrap();
        let phi: SurplusMatrix = surplus_from_basis(&rep.alpha_hat.lambda, &basis).unwrap();
        for x in 0..2 {
            for y in 0..3 {
                let cs = (pi.mu[(x, y)] * pi.mu[(x, y)] / (pi.mu_x0[x] * pi.mu_0y[y])).ln();
                assert_relative_eq!(cs, phi.get(x, y), epsilon = 1e-12);
            }
        }
    }
}
