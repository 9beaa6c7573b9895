//! Maximum-score estimation from the signs of double log-odds ratios.
//!
//! For a quadruple `(x, x', y, y')` the data reveal the sign of
//! `mu_xy mu_x'y' - mu_xy' mu_x'y`, which the model equates with the sign of
//! the double difference of `Phi^lambda`. The score counts agreements; it is
//! invariant to positive rescaling of `lambda`, so the search runs over
//! directions on the unit sphere.

use nalgebra::DVector;

use super::{check_dims, Algorithm, EstimateReport, FitOptions, MaxScoreDiagnostics};
use crate::error::{Error, Result};
use crate::model::{BasisSystem, ParameterVector, SampleCounts, SurplusMatrix};

/// Number of lattice directions evaluated before local refinement.
pub const MAX_SCORE_BUDGET: usize = 100_000;
const MAX_K: usize = 4;
const KEPT_TIES: usize = 1000;

/// Quadruples `(x, x', y, y')` with `x != x'` and `y != y'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrupleSet {
    items: Vec<(usize, usize, usize, usize)>,
}

impl QuadrupleSet {
    pub fn new(items: Vec<(usize, usize, usize, usize)>) -> Result<Self> {
        if let Some(q) = items.iter().find(|(x, x2, y, y2)| x == x2 || y == y2) {
            return Err(Error::invalid(format!("degenerate quadruple {q:?}")));
        }
        Ok(QuadrupleSet { items })
    }

    /// Every pair of rows against every pair of columns, each once (`x < x'`, `y < y'`).
    pub fn all(nx: usize, ny: usize) -> Self {
        let mut items = Vec::new();
        for x in 0..nx {
            for x2 in x + 1..nx {
                for y in 0..ny {
                    for y2 in y + 1..ny {
                        items.push((x, x2, y, y2));
                    }
                }
            }
        }
        QuadrupleSet { items }
    }

    pub fn items(&self) -> &[(usize, usize, usize, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// `Phi_xy + Phi_x'y' - Phi_x'y - Phi_xy'`.
pub fn double_difference(phi: &SurplusMatrix, x: usize, x2: usize, y: usize, y2: usize) -> Result<f64> {
    if x.max(x2) >= phi.nx() || y.max(y2) >= phi.ny() {
        return Err(Error::invalid(format!("quadruple ({x}, {x2}, {y}, {y2}) out of range")));
    }
    Ok(phi.get(x, y) + phi.get(x2, y2) - phi.get(x2, y) - phi.get(x, y2))
}

/// Per quadruple: the observed sign and the double differences of every basis.
struct Scorer {
    rows: Vec<(f64, DVector<f64>)>,
}

impl Scorer {
    fn new(sample: &SampleCounts, basis: &BasisSystem, quads: &QuadrupleSet) -> Result<Self> {
        let mu = &sample.counts().mu;
        let mut rows = Vec::with_capacity(quads.len());
        for &(x, x2, y, y2) in quads.items() {
            if x.max(x2) >= basis.nx() || y.max(y2) >= basis.ny() {
                return Err(Error::invalid(format!("quadruple ({x}, {x2}, {y}, {y2}) out of range")));
            }
            let odds = mu[(x, y)] * mu[(x2, y2)] - mu[(x, y2)] * mu[(x2, y)];
            let d = DVector::from_iterator(
                basis.k(),
                basis.bases().iter().map(|b| b[(x, y)] + b[(x2, y2)] - b[(x2, y)] - b[(x, y2)]),
            );
            rows.push((odds.signum() * (odds != 0.0) as u8 as f64, d));
        }
        Ok(Scorer { rows })
    }

    fn score(&self, direction: &DVector<f64>) -> usize {
        self.rows.iter().filter(|(s, d)| s * d.dot(direction) > 0.0).count()
    }

    fn max_possible(&self) -> usize {
        self.rows.iter().filter(|(s, _)| *s != 0.0).count()
    }
}

/// Score of `lambda` on `quads`: quadruples whose double difference of
/// `Phi^lambda` has the (nonzero) sign of the observed double log-odds.
pub fn score(lambda: &DVector<f64>, sample: &SampleCounts, basis: &BasisSystem, quads: &QuadrupleSet) -> Result<usize> {
    check_dims(sample, basis)?;
    Ok(Scorer::new(sample, basis, quads)?.score(lambda))
}

/// Quasi-uniform directions on the unit sphere in `k <= 4` dimensions.
fn lattice(k: usize, budget: usize) -> Vec<DVector<f64>> {
    let tau = std::f64::consts::TAU;
    match k {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..budget).map(|i| {
            let t = tau * i as f64 / budget as f64;
            DVector::from_vec(vec![t.cos(), t.sin()])
        }).collect(),
        3 => {
            let golden = (1.0 + 5f64.sqrt()) / 2.0;
            (0..budget).map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / budget as f64;
                let r = (1.0 - z * z).sqrt();
                let t = tau * i as f64 / golden;
                DVector::from_vec(vec![r * t.cos(), r * t.sin(), z])
            }).collect()
        }
        _ => {
            // additive recurrence in the cube, kept inside the unit ball, projected
            let g = 1.167_303_978_261_418_7_f64; // root of x^5 = x + 1
            let alpha: Vec<f64> = (1..=k).map(|j| 1.0 / g.powi(j as i32)).collect();
            let mut out = Vec::with_capacity(budget);
            let mut n = 0u64;
            while out.len() < budget {
                n += 1;
                let p = DVector::from_fn(k, |j, _| 2.0 * (0.5 + alpha[j] * n as f64).fract() - 1.0);
                let r = p.norm();
                if r <= 1.0 && r > 1e-3 {
                    out.push(p / r);
                }
            }
            out
        }
    }
}

/// Maximizes the score over unit-norm `lambda`: exhaustive search on a direction
/// lattice, then coordinate pattern search from the best lattice point. Ties
/// go to the lowest lattice index.
pub fn max_score_fit(sample: &SampleCounts, basis: &BasisSystem, quads: &QuadrupleSet, opts: &FitOptions) -> Result<EstimateReport> {
    opts.validate()?;
    check_dims(sample, basis)?;
    if quads.is_empty() {
        return Err(Error::EmptyQuadruples);
    }
    let k = basis.k();
    if k > MAX_K {
        return Err(Error::invalid(format!("max-score search supports K <= {MAX_K}, got {k}")));
    }
    let scorer = Scorer::new(sample, basis, quads)?;
    let directions = lattice(k, MAX_SCORE_BUDGET);
    let scores: Vec<usize> = directions.iter().map(|d| scorer.score(d)).collect();
    let top = scores.iter().copied().max().unwrap_or(0);
    let first = scores.iter().position(|&s| s == top).unwrap_or(0);
    let tie_count = scores.iter().filter(|&&s| s == top).count();
    let ties: Vec<DVector<f64>> = directions
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == top)
        .take(KEPT_TIES)
        .map(|(d, _)| d.clone())
        .collect();

    let mut best = directions[first].clone();
    let mut best_score = top;
    let mut iterations = 0;
    if k > 1 && best_score < scorer.max_possible() {
        let mut step = 0.05;
        while step > opts.tol.max(1e-9) && iterations < opts.max_iter {
            let mut improved = false;
            for j in 0..k {
                for sign in [1.0, -1.0] {
                    let mut trial = best.clone();
                    trial[j] += sign * step;
                    let norm = trial.norm();
                    if norm == 0.0 {
                        continue;
                    }
                    trial /= norm;
                    let s = scorer.score(&trial);
                    if s > best_score {
                        best = trial;
                        best_score = s;
                        improved = true;
                    }
                }
            }
            iterations += 1;
            if !improved {
                step /= 2.0;
            }
        }
    }

    let (nx, ny) = (basis.nx(), basis.ny());
    Ok(EstimateReport {
        algorithm: Algorithm::MaxScore,
        alpha_hat: ParameterVector { lambda: best, u: DVector::zeros(nx), v: DVector::zeros(ny) },
        covariance: None,
        std_errors: None,
        objective_value: best_score as f64,
        iterations,
        gradient_norm: 0.0,
        pi_fit: None,
        mu_fit: None,
        negative_utilities: false,
        trace: Vec::new(),
        n_households: sample.n_households(),
        pseudo_count: sample.pseudo_count(),
        mle: None,
        max_score: Some(MaxScoreDiagnostics {
            score: best_score,
            max_possible: scorer.max_possible(),
            quadruples: quads.len(),
            directions_searched: directions.len(),
            ties,
            tie_count,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_ipfp, SolverOptions};
    use crate::model::{surplus_from_basis, Margins, MatchingPatterns};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(lambda: &DVector<f64>, basis: &BasisSystem, n: usize) -> SampleCounts {
        let phi = surplus_from_basis(lambda, basis).unwrap();
        let margins = Margins::new(DVector::from_element(n, 1.0), DVector::from_element(n, 1.0)).unwrap();
        SampleCounts::from_expected(solve_ipfp(&phi, &margins, &SolverOptions::with_tol(1e-14)).unwrap().mu).unwrap()
    }

    #[test]
    fn double_difference_examples() {
        let constant = SurplusMatrix::new(DMatrix::from_element(2, 2, 3.0)).unwrap();
        assert_eq!(double_difference(&constant, 0, 1, 0, 1).unwrap(), 0.0);
        let product = SurplusMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(double_difference(&product, 0, 1, 0, 1).unwrap(), 1.0);
        let additive = SurplusMatrix::new(DMatrix::from_fn(3, 4, |x, y| (x as f64).sin() + (y as f64).powi(2))).unwrap();
        for &(x, x2, y, y2) in QuadrupleSet::all(3, 4).items() {
            assert!(double_difference(&additive, x, x2, y, y2).unwrap().abs() < 1e-12);
        }
        assert!(double_difference(&constant, 0, 2, 0, 1).is_err());
    }

    #[test]
    fn quadruple_validation() {
        assert!(QuadrupleSet::new(vec![(0, 0, 0, 1)]).is_err());
        assert_eq!(QuadrupleSet::all(4, 4).len(), 36);
        let sample = exact(&DVector::from_element(1, 1.0), &BasisSystem::saturated(1, 1), 1);
        let empty = QuadrupleSet::new(vec![]).unwrap();
        let err = max_score_fit(&sample, &BasisSystem::saturated(1, 1), &empty, &FitOptions::new(Algorithm::MaxScore));
        assert!(matches!(err, Err(Error::EmptyQuadruples)));
    }

    #[test]
    fn one_dimensional_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let basis = BasisSystem::unnamed(vec![DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))]).unwrap();
            let l0 = rng.random_range(-2.0..2.0);
            let sample = exact(&DVector::from_element(1, l0), &basis, 3);
            let rep = max_score_fit(&sample, &basis, &QuadrupleSet::all(3, 3), &FitOptions::new(Algorithm::MaxScore)).unwrap();
            assert_eq!(rep.alpha_hat.lambda[0].signum(), l0.signum());
        }
    }

    #[test]
    fn exact_data_attains_the_true_direction_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..=4 {
            let bases = (0..k).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0))).collect();
            let basis = BasisSystem::unnamed(bases).unwrap();
            let l0 = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            let sample = exact(&l0, &basis, 4);
            let quads = QuadrupleSet::all(4, 4);
            let rep = max_score_fit(&sample, &basis, &quads, &FitOptions::new(Algorithm::MaxScore)).unwrap();
            let diag = rep.max_score.unwrap();
            assert_eq!(score(&l0, &sample, &basis, &quads).unwrap(), diag.max_possible);
            assert_eq!(diag.score, diag.max_possible);
            assert!((rep.alpha_hat.lambda.norm() - 1.0).abs() < 1e-12);
            assert!(diag.tie_count >= 1);
        }
    }

    #[test]
    fn score_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis = BasisSystem::unnamed((0..2).map(|_| DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).collect()).unwrap();
        let counts = MatchingPatterns {
            mu: DMatrix::from_fn(3, 3, |_, _| rng.random_range(1..30) as f64),
            mu_x0: DVector::from_element(3, 5.0),
            mu_0y: DVector::from_element(3, 5.0),
        };
        let sample = SampleCounts::from_counts(counts).unwrap();
        let quads = QuadrupleSet::all(3, 3);
        for _ in 0..50 {
            let l = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let c = rng.random_range(0.01..100.0);
            assert_eq!(score(&l, &sample, &basis, &quads).unwrap(), score(&(&l * c), &sample, &basis, &quads).unwrap());
        }
    }

    #[test]
    fn lattice_points_are_unit_vectors() {
        for k in 1..=4 {
            let pts = lattice(k, 500);
            assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn too_many_coefficients_rejected() {
        let basis = BasisSystem::saturated(3, 2);
        let mut counts = MatchingPatterns::zeros(3, 2);
        counts.mu.fill(1.0);
        let sample = SampleCounts::from_counts(counts).unwrap();
        assert!(max_score_fit(&sample, &basis, &QuadrupleSet::all(3, 2), &FitOptions::new(Algorithm::MaxScore)).is_err());
    }
}
