//! Maximum likelihood over `lambda`, with the equilibrium recomputed at every
//! trial point for the observed margins.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_dims, fit_moment_matching, Algorithm, EstimateReport, FitOptions, MleDiagnostics};
use crate::equilibrium::{solve_ipfp, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{surplus_from_basis, BasisSystem, Margins, MatchingPatterns, ParameterVector, SampleCounts};

/// Moment estimate, zero, and seeded perturbations of the moment estimate.
pub const MLE_STARTS: usize = 8;
const MAX_ITER_PER_START: usize = 500;
const GRADIENT_FLOOR: f64 = 1e-8;
const DISTINCT: f64 = 1e-4;

fn equilibrium(lambda: &DVector<f64>, basis: &BasisSystem, margins: &Margins) -> Result<MatchingPatterns> {
    let phi = surplus_from_basis(lambda, basis)?;
    let tol = 1e-14 * margins.total().max(1.0);
    Ok(solve_ipfp(&phi, margins, &SolverOptions { tol, max_iter: 1_000_000, ..Default::default() })?.mu)
}

/// `sum mu_hat log(mu^theta / N^theta)` over all categories, where `mu^theta`
/// is the equilibrium at `Phi^lambda` for `margins`. A category observed in the
/// sample but predicted empty gives `-inf`.
pub fn log_likelihood(lambda: &DVector<f64>, sample: &SampleCounts, basis: &BasisSystem, margins: &Margins) -> Result<f64> {
    check_dims(sample, basis)?;
    if lambda.len() != basis.k() {
        return Err(Error::DimensionMismatch { what: "lambda", expected: basis.k(), found: lambda.len() });
    }
    let mu = equilibrium(lambda, basis, margins)?;
    let total = mu.households();
    let mut ll = 0.0;
    for (obs, pred) in sample.counts().iter_all().zip(mu.iter_all()) {
        if *obs > 0.0 {
            if *pred <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            ll += obs * (pred / total).ln();
        }
    }
    Ok(ll)
}

struct Problem<'a> {
    sample: &'a SampleCounts,
    basis: &'a BasisSystem,
    margins: Margins,
}

impl Problem<'_> {
    /// Negative mean log-likelihood.
    fn value(&self, lambda: &DVector<f64>) -> Result<f64> {
        let ll = log_likelihood(lambda, self.sample, self.basis, &self.margins)?;
        Ok(-ll / self.sample.n_households())
    }

    fn gradient(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(lambda.len());
        for i in 0..lambda.len() {
            let h = 1e-5 * lambda[i].abs().max(1.0);
            let mut hi = lambda.clone();
            hi[i] += h;
            let mut lo = lambda.clone();
            lo[i] -= h;
            g[i] = (self.value(&hi)? - self.value(&lo)?) / (2.0 * h);
        }
        Ok(g)
    }
}

struct StartResult {
    lambda: DVector<f64>,
    value: f64,
    gradient_norm: f64,
    iterations: usize,
    converged: bool,
}

fn bfgs(problem: &Problem, start: DVector<f64>, tol: f64, max_iter: usize) -> Result<StartResult> {
    let k = start.len();
    let mut x = start;
    let mut f = problem.value(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("log-likelihood at start"));
    }
    let mut g = problem.gradient(&x)?;
    let mut h_inv = DMatrix::<f64>::identity(k, k);
    let mut iterations = 0;
    let mut converged = g.amax() <= tol;
    while !converged && iterations < max_iter {
        let mut d = -(&h_inv * &g);
        if d.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(k, k);
            d = -g.clone();
        }
        let slope = d.dot(&g);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let trial = &x + &d * t;
            if let Ok(ft) = problem.value(&trial) {
                if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                    next = Some((trial, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = next else {
            // no further decrease is resolvable at this precision
            converged = g.amax() <= tol.max(1e-6);
            break;
        };
        let g_new = problem.gradient(&x_new)?;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-18 {
            if iterations == 0 {
                h_inv *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(k, k);
            let left = &eye - &s * y.transpose() * rho;
            h_inv = &left * &h_inv * left.transpose() + &s * s.transpose() * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        converged = g.amax() <= tol;
    }
    Ok(StartResult { gradient_norm: g.amax(), lambda: x, value: f, iterations, converged })
}

/// Multi-start quasi-Newton maximization of the log-likelihood. Gradients are
/// central differences; the reported optimum is the best converged start.
pub fn fit_mle(sample: &SampleCounts, basis: &BasisSystem, opts: &FitOptions) -> Result<EstimateReport> {
    opts.validate()?;
    check_dims(sample, basis)?;
    let margins = sample.margins()?;
    let problem = Problem { sample, basis, margins: margins.clone() };
    let k = basis.k();

    let moment = fit_moment_matching(sample, basis, &FitOptions { algorithm: Algorithm::Gradient, ..opts.clone() })
        .ok()
        .map(|r| r.alpha_hat.lambda);
    let center = moment.clone().unwrap_or_else(|| DVector::zeros(k));
    let spread = 0.5 * center.amax().max(1.0);
    let mut starts = Vec::with_capacity(MLE_STARTS);
    if let Some(m) = moment {
        starts.push(m);
    }
    starts.push(DVector::zeros(k));
    let mut stream = 0u64;
    while starts.len() < MLE_STARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(stream);
        stream += 1;
        starts.push(DVector::from_fn(k, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            center[i] + spread * z
        }));
    }

    let tol = opts.tol.max(GRADIENT_FLOOR);
    let max_iter = opts.max_iter.min(MAX_ITER_PER_START);
    let results: Vec<Result<StartResult>> = starts.into_par_iter().map(|s| bfgs(&problem, s, tol, max_iter)).collect();
    let converged: Vec<&StartResult> = results.iter().filter_map(|r| r.as_ref().ok()).filter(|r| r.converged).collect();
    let best = converged
        .iter()
        .copied()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| {
            let residual = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.gradient_norm).fold(f64::INFINITY, f64::min);
            Error::NonConvergence { iterations: max_iter, residual }
        })?;
    let mut optima: Vec<&DVector<f64>> = Vec::new();
    for r in &converged {
        let scale = r.lambda.amax().max(1.0);
        if optima.iter().all(|o| (*o - &r.lambda).amax() > DISTINCT * scale) {
            optima.push(&r.lambda);
        }
    }

    let lambda = best.lambda.clone();
    let freq = equilibrium(&lambda, basis, &margins.scaled(1.0 / sample.n_households()))?;
    let u = freq.mu_x0.map(|p| -p.ln());
    let v = freq.mu_0y.map(|p| -p.ln());
    let mu_fit = equilibrium(&lambda, basis, &margins)?;
    let pi_fit = mu_fit.scaled(1.0 / mu_fit.households());
    let mean_ll = -best.value;
    Ok(EstimateReport {
        algorithm: Algorithm::Mle,
        negative_utilities: u.iter().chain(v.iter()).any(|&w| w < 0.0),
        alpha_hat: ParameterVector::new(lambda, u, v)?,
        covariance: None,
        std_errors: None,
        objective_value: mean_ll * sample.n_households(),
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        pi_fit: Some(pi_fit),
        mu_fit: Some(mu_fit),
        trace: Vec::new(),
        n_households: sample.n_households(),
        pseudo_count: sample.pseudo_count(),
        mle: Some(MleDiagnostics {
            mean_log_likelihood: mean_ll,
            log_likelihood: mean_ll * sample.n_households(),
            starts: results.len(),
            converged_starts: converged.len(),
            distinct_optima: optima.len(),
        }),
        max_score: None,
    })
}
