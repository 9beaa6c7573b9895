//! Deterministic fixtures shared by the benchmarks.

use matchtu::equilibrium::{solve_ipfp, SolverOptions};
use matchtu::{BasisSystem, Margins, SampleCounts, SurplusMatrix};
use nalgebra::{DMatrix, DVector};

/// Smooth pseudo-random values in `[-1, 1]`.
fn wave(i: usize, j: usize, salt: f64) -> f64 {
    ((i as f64 * 12.9898 + j as f64 * 78.233 + salt) * 0.618).sin()
}

pub fn surplus(nx: usize, ny: usize) -> SurplusMatrix {
    SurplusMatrix::new(DMatrix::from_fn(nx, ny, |x, y| 2.0 * wave(x, y, 0.0))).unwrap()
}

pub fn margins(nx: usize, ny: usize) -> Margins {
    let n = DVector::from_fn(nx, |x, _| 1.25 + 0.75 * wave(x, 0, 1.0));
    let m = DVector::from_fn(ny, |y, _| 1.25 + 0.75 * wave(0, y, 2.0));
    Margins::new(n, m).unwrap()
}

/// Two-term basis on an `n x n` market.
pub fn basis(n: usize) -> BasisSystem {
    let bases = (0..2).map(|k| DMatrix::from_fn(n, n, |x, y| wave(x, y, 3.0 + k as f64))).collect();
    BasisSystem::unnamed(bases).unwrap()
}

/// Exact equilibrium counts at `lambda = (0.7, -0.3)`.
pub fn exact_sample(n: usize) -> (SampleCounts, BasisSystem) {
    let basis = basis(n);
    let phi = matchtu::model::surplus_from_basis(&DVector::from_vec(vec![0.7, -0.3]), &basis).unwrap();
    let eq = solve_ipfp(&phi, &margins(n, n), &SolverOptions::with_tol(1e-13)).unwrap();
    (SampleCounts::from_frequencies(&eq.mu, 1e5).unwrap(), basis)
}
