//! Synthetic data with a known truth: household samples drawn from equilibrium
//! frequencies, and finite markets of individuals with Gumbel tastes.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, stream)`, so results
//! are reproducible across platforms and replications can run in parallel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::equilibrium::{
    micro_stable_matching, separable_stable_matching, solve_ipfp, MicroSolution, SeparableMarket, SolverOptions,
    ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::model::{surplus_from_basis, BasisSystem, Margins, MatchingPatterns, SampleCounts, SurplusMatrix};

/// Largest market side simulated at the individual level.
pub const MICRO_BUDGET: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Households drawn in aggregate mode.
    pub n_households: u64,
    pub seed: u64,
    /// Individuals per side allowed in micro mode.
    pub micro_budget: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_households: 10_000, seed: 0, micro_budget: MICRO_BUDGET }
    }
}

impl SimConfig {
    pub fn new(n_households: u64, seed: u64) -> Self {
        SimConfig { n_households, seed, ..Default::default() }
    }
}

/// Generator for stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard Gumbel draws by inversion, `-log(-log U)` with `U` uniform on (0, 1).
#[derive(Debug, Clone)]
pub struct GumbelStream {
    rng: ChaCha8Rng,
}

impl GumbelStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        GumbelStream { rng: rng_for(seed, stream) }
    }

    pub fn draw(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return -(-u.ln()).ln();
            }
        }
    }
}

/// Taste shocks of a micro market. Row `i` of `eps` holds `eps_iy` for every
/// woman type followed by `eps_i0`; row `j` of `eta` holds `eta_jx` then `eta_j0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDraws {
    pub eps: DMatrix<f64>,
    pub eta: DMatrix<f64>,
}

impl MicroDraws {
    /// Men's rows first, then women's, each row left to right.
    pub fn gumbel(n_men: usize, n_women: usize, nx: usize, ny: usize, seed: u64) -> Self {
        let mut g = GumbelStream::new(seed, 0);
        let mut eps = DMatrix::zeros(n_men, ny + 1);
        for i in 0..n_men {
            for y in 0..=ny {
                eps[(i, y)] = g.draw();
            }
        }
        let mut eta = DMatrix::zeros(n_women, nx + 1);
        for j in 0..n_women {
            for x in 0..=nx {
                eta[(j, x)] = g.draw();
            }
        }
        MicroDraws { eps, eta }
    }
}

/// Multinomial draw of `n_households` over all categories with probabilities
/// proportional to `weights` (canonical category order, sequential binomials).
pub fn sample_from_patterns(weights: &MatchingPatterns, n_households: u64, seed: u64) -> Result<SampleCounts> {
    weights.check_nonnegative()?;
    let p = weights.to_category_vector();
    let total = p.sum();
    if !(total > 0.0) {
        return Err(Error::invalid("category weights sum to zero"));
    }
    let mut rng = rng_for(seed, 0);
    let mut counts = p.map(|_| 0.0);
    let mut left = n_households;
    let mut mass = total;
    for c in 0..p.len() {
        if left == 0 {
            break;
        }
        let draw = if c + 1 == p.len() || p[c] >= mass {
            left
        } else {
            let q = (p[c] / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng)
        };
        counts[c] = draw as f64;
        left -= draw;
        mass -= p[c];
    }
    SampleCounts::from_counts(MatchingPatterns::from_category_vector(weights.nx(), weights.ny(), &counts)?)
}

/// Household sample from the equilibrium at `Phi^lambda` with `margins`.
pub fn sample_households(
    lambda: &nalgebra::DVector<f64>,
    basis: &BasisSystem,
    margins: &Margins,
    config: &SimConfig,
) -> Result<SampleCounts> {
    let phi = surplus_from_basis(lambda, basis)?;
    let tol = 1e-14 * margins.total().max(1.0);
    let eq = solve_ipfp(&phi, margins, &SolverOptions { tol, max_iter: 1_000_000, ..Default::default() })?;
    if config.n_households == 0 {
        return SampleCounts::from_counts(MatchingPatterns::zeros(margins.nx(), margins.ny()));
    }
    sample_from_patterns(&eq.mu, config.n_households, config.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroSimulation {
    pub solution: MicroSolution,
    pub sample: SampleCounts,
    pub man_types: Vec<usize>,
    pub woman_types: Vec<usize>,
    pub draws: MicroDraws,
}

impl MicroSimulation {
    /// Largest violation of the stability inequalities.
    pub fn stability_violation(&self, phi: &SurplusMatrix) -> f64 {
        let (nx, ny) = (phi.nx(), phi.ny());
        let (eps, eta) = (&self.draws.eps, &self.draws.eta);
        let phi_i0: Vec<f64> = (0..eps.nrows()).map(|i| eps[(i, ny)]).collect();
        let phi_0j: Vec<f64> = (0..eta.nrows()).map(|j| eta[(j, nx)]).collect();
        self.solution.stability_violation(
            |i, j| {
                let (x, y) = (self.man_types[i], self.woman_types[j]);
                phi.get(x, y) + eps[(i, y)] + eta[(j, x)]
            },
            &phi_i0,
            &phi_0j,
        )
    }
}

/// Market with `men[x]` men of type `x` and `women[y]` women of type `y`, Gumbel
/// tastes, and joint surplus `Phi_xy + eps_iy + eta_jx`. Sides within the
/// enumeration cap are solved by enumeration; larger ones (up to the budget)
/// by the separable solver.
pub fn simulate_micro_market(phi: &SurplusMatrix, men: &[usize], women: &[usize], config: &SimConfig) -> Result<MicroSimulation> {
    let (nx, ny) = (phi.nx(), phi.ny());
    if men.len() != nx || women.len() != ny {
        return Err(Error::DimensionMismatch { what: "type counts vs surplus", expected: nx + ny, found: men.len() + women.len() });
    }
    let man_types: Vec<usize> = men.iter().enumerate().flat_map(|(x, &c)| std::iter::repeat_n(x, c)).collect();
    let woman_types: Vec<usize> = women.iter().enumerate().flat_map(|(y, &c)| std::iter::repeat_n(y, c)).collect();
    let (n_men, n_women) = (man_types.len(), woman_types.len());
    let largest = n_men.max(n_women);
    if largest > config.micro_budget {
        return Err(Error::SizeAboveCap { size: largest, cap: config.micro_budget });
    }
    let draws = MicroDraws::gumbel(n_men, n_women, nx, ny, config.seed);
    let market = SeparableMarket::new(phi.matrix().clone(), man_types.clone(), woman_types.clone(), draws.eps.clone(), draws.eta.clone())?;
    let solution = if largest <= ENUMERATION_CAP {
        micro_stable_matching(&market.to_micro())?
    } else {
        separable_stable_matching(&market)?.micro
    };

    let mut counts = MatchingPatterns::zeros(nx, ny);
    let mut taken = vec![false; n_women];
    for (i, partner) in solution.assignment.iter().enumerate() {
        match *partner {
            Some(j) => {
                counts.mu[(man_types[i], woman_types[j])] += 1.0;
                taken[j] = true;
            }
            None => counts.mu_x0[man_types[i]] += 1.0,
        }
    }
    for j in (0..n_women).filter(|&j| !taken[j]) {
        counts.mu_0y[woman_types[j]] += 1.0;
    }
    let sample = SampleCounts::from_counts(counts)?;
    Ok(MicroSimulation { solution, sample, man_types, woman_types, draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn empty_sample() {
        let basis = BasisSystem::saturated(2, 2);
        let margins = Margins::from_slices(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let s = sample_households(&DVector::zeros(4), &basis, &margins, &SimConfig::new(0, 1)).unwrap();
        assert!(s.is_empty());
        assert!(s.counts().iter_all().all(|&c| c == 0.0));
    }

    #[test]
    fn seeds_are_deterministic() {
        let basis = BasisSystem::saturated(2, 2);
        let margins = Margins::from_slices(&[1.0, 2.0], &[1.5, 1.0]).unwrap();
        let lambda = DVector::from_vec(vec![0.5, -0.2, 0.1, 1.0]);
        let a = sample_households(&lambda, &basis, &margins, &SimConfig::new(5000, 9)).unwrap();
        let b = sample_households(&lambda, &basis, &margins, &SimConfig::new(5000, 9)).unwrap();
        let c = sample_households(&lambda, &basis, &margins, &SimConfig::new(5000, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.n_households(), 5000.0);
        let phi = SurplusMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]).unwrap();
        let m1 = simulate_micro_market(&phi, &[3, 4], &[5, 2], &SimConfig::new(0, 3)).unwrap();
        let m2 = simulate_micro_market(&phi, &[3, 4], &[5, 2], &SimConfig::new(0, 3)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn frequencies_within_binomial_bounds() {
        let basis = BasisSystem::saturated(2, 2);
        let margins = Margins::from_slices(&[1.0, 2.0], &[1.5, 1.0]).unwrap();
        let lambda = DVector::from_vec(vec![0.5, -0.2, 0.1, 1.0]);
        let n = 100_000u64;
        let s = sample_households(&lambda, &basis, &margins, &SimConfig::new(n, 4)).unwrap();
        let phi = surplus_from_basis(&lambda, &basis).unwrap();
        let eq = solve_ipfp(&phi, &margins, &SolverOptions::with_tol(1e-14)).unwrap();
        let pi = eq.mu.scaled(1.0 / eq.mu.households());
        for (c, p) in s.counts().iter_all().zip(pi.iter_all()) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c / n as f64 - p).abs() <= 4.0 * sd);
        }
    }

    #[test]
    fn gumbel_moments() {
        let mut g = GumbelStream::new(77, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| g.draw()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let euler = 0.577_215_664_901_532_9;
        let true_var = std::f64::consts::PI.powi(2) / 6.0;
        assert!((mean - euler).abs() <= 3.0 * (true_var / n as f64).sqrt());
        // Var of the sample variance for a Gumbel: (mu4 - sigma^4) / n with excess kurtosis 12/5
        let se_var = (true_var * true_var * (2.0 + 2.4) / n as f64).sqrt();
        assert!((var - true_var).abs() <= 3.0 * se_var);
    }

    #[test]
    fn lone_man_is_single() {
        let phi = SurplusMatrix::zeros(1, 1);
        let sim = simulate_micro_market(&phi, &[1], &[0], &SimConfig::new(0, 1)).unwrap();
        assert_eq!(sim.sample.counts().mu_x0[0], 1.0);
        assert_eq!(sim.solution.assignment, vec![None]);
    }

    #[test]
    fn large_surplus_matches_everyone() {
        let phi = SurplusMatrix::new(DMatrix::from_element(1, 1, 20.0)).unwrap();
        let all = (0..200)
            .filter(|&seed| {
                let sim = simulate_micro_market(&phi, &[5], &[5], &SimConfig::new(0, seed)).unwrap();
                sim.sample.counts().mu[(0, 0)] == 5.0
            })
            .count();
        assert!(all as f64 >= 0.99 * 200.0);
    }

    #[test]
    fn aggregation_conserves_people_and_is_stable() {
        let phi = SurplusMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.2, 0.0, 0.8, -1.0]).unwrap();
        for (men, women) in [([2usize, 3usize], [1usize, 2usize, 2usize]), ([40, 25], [30, 10, 20])] {
            for seed in 0..10 {
                let sim = simulate_micro_market(&phi, &men, &women, &SimConfig::new(0, seed)).unwrap();
                let c = sim.sample.counts();
                for x in 0..2 {
                    assert_eq!(c.men_margins()[x], men[x] as f64);
                }
                for y in 0..3 {
                    assert_eq!(c.women_margins()[y], women[y] as f64);
                }
                assert!(sim.stability_violation(&phi) <= 1e-9);
                assert!((sim.solution.primal_value - sim.solution.dual_value()).abs() <= 1e-9 * (1.0 + sim.solution.primal_value.abs()));
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let phi = SurplusMatrix::zeros(1, 1);
        let cfg = SimConfig { micro_budget: 5, ..SimConfig::new(0, 0) };
        assert!(matches!(simulate_micro_market(&phi, &[6], &[1], &cfg), Err(Error::SizeAboveCap { .. })));
    }
}
