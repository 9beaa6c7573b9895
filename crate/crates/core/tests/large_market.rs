use std::time::Instant;

use matchtu::equilibrium::{solve_ipfp, SolverOptions};
use matchtu::simulation::{simulate_micro_market, SimConfig};
use matchtu::{Margins, SurplusMatrix};

#[test]
fn thousand_per_type_market_is_stable() {
    let phi = SurplusMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 0.8]).unwrap();
    let start = Instant::now();
    let sim = simulate_micro_market(&phi, &[1000, 1000], &[1000, 1000], &SimConfig::new(0, 42)).unwrap();
    let elapsed = start.elapsed();
    assert!(sim.stability_violation(&phi) <= 1e-9);
    let s = &sim.solution;
    assert!((s.primal_value - s.dual_value()).abs() <= 1e-9 * s.primal_value.abs().max(1.0));

    // the type-level frequencies are near the large-market equilibrium
    let margins = Margins::from_slices(&[1000.0, 1000.0], &[1000.0, 1000.0]).unwrap();
    let eq = solve_ipfp(&phi, &margins, &SolverOptions::with_tol(1e-9)).unwrap();
    let dev = sim.sample.counts().max_abs_diff(&eq.mu) / 1000.0;
    assert!(dev < 0.1, "deviation {dev}");
    eprintln!("solved 2000 x 2000 in {elapsed:?}");
}
