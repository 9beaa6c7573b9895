//! Generalized IPFP for the logit model: alternate closed-form quadratic
//! updates of `a_x = exp(-u_x / 2)` and `b_y = exp(-v_y / 2)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{all_single, margin_residual, Reduction, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{total_surplus, EquilibriumSolution, Margins, MatchingPatterns, SurplusMatrix};

// Below this many cells a sweep is cheaper sequentially.
const PAR_CELLS: usize = 1 << 14;

/// Initial scalings; `a_x^2` and `b_y^2` are the singles masses.
#[derive(Debug, Clone, PartialEq)]
pub struct IpfpStart {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl IpfpStart {
    /// `a_x = sqrt(n_x / 2)`, `b_y = sqrt(m_y / 2)`.
    pub fn from_margins(n: &DVector<f64>, m: &DVector<f64>) -> Self {
        IpfpStart { a: n.map(|v| (v / 2.0).sqrt()), b: m.map(|v| (v / 2.0).sqrt()) }
    }

    /// `a_x = sqrt(mu_hat_x0)`, `b_y = sqrt(mu_hat_0y)`.
    pub fn from_singles(mu: &MatchingPatterns) -> Self {
        IpfpStart { a: mu.mu_x0.map(f64::sqrt), b: mu.mu_0y.map(f64::sqrt) }
    }
}

/// Positive root of `a^2 + c a = n`, written to avoid cancellation when `c >> n`.
pub(crate) fn positive_root(c: f64, n: f64) -> f64 {
    2.0 * n / (c + (c * c + 4.0 * n).sqrt())
}

/// IPFP iteration state on strictly positive margins.
#[derive(Debug, Clone)]
pub struct Ipfp {
    s: DMatrix<f64>,
    n: DVector<f64>,
    m: DVector<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
}

impl Ipfp {
    pub fn new(phi: &DMatrix<f64>, n: &DVector<f64>, m: &DVector<f64>, start: Option<IpfpStart>) -> Result<Self> {
        if phi.nrows() != n.len() || phi.ncols() != m.len() {
            return Err(Error::DimensionMismatch { what: "surplus vs margins", expected: n.len() * m.len(), found: phi.len() });
        }
        if n.iter().chain(m.iter()).any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("IPFP needs strictly positive margins"));
        }
        let start = start.unwrap_or_else(|| IpfpStart::from_margins(n, m));
        if start.a.len() != n.len() || start.b.len() != m.len() {
            return Err(Error::invalid("IPFP start has wrong dimensions"));
        }
        let mut state = Ipfp { s: DMatrix::zeros(0, 0), n: n.clone(), m: m.clone(), a: start.a, b: start.b };
        state.set_surplus(phi)?;
        Ok(state)
    }

    /// Replaces `S = exp(Phi / 2)` keeping the current scalings.
    pub fn set_surplus(&mut self, phi: &DMatrix<f64>) -> Result<()> {
        let s = phi.map(|v| (v / 2.0).exp());
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exp(Phi / 2)"));
        }
        self.s = s;
        Ok(())
    }

    /// Solve `a_x^2 + a_x sum_y b_y S_xy = n_x` for every `x`.
    pub fn update_a(&mut self) {
        let (nx, ny) = self.s.shape();
        let (s, b, n) = (&self.s, &self.b, &self.n);
        let root = |x: usize| {
            let c: f64 = (0..ny).map(|y| s[(x, y)] * b[y]).sum();
            positive_root(c, n[x])
        };
        self.a = if nx * ny >= PAR_CELLS {
            DVector::from_vec((0..nx).into_par_iter().map(root).collect())
        } else {
            DVector::from_fn(nx, |x, _| root(x))
        };
    }

    /// Solve `b_y^2 + b_y sum_x a_x S_xy = m_y` for every `y`.
    pub fn update_b(&mut self) {
        let (nx, ny) = self.s.shape();
        let (s, a, m) = (&self.s, &self.a, &self.m);
        let root = |y: usize| {
            let c: f64 = (0..nx).map(|x| s[(x, y)] * a[x]).sum();
            positive_root(c, m[y])
        };
        self.b = if nx * ny >= PAR_CELLS {
            DVector::from_vec((0..ny).into_par_iter().map(root).collect())
        } else {
            DVector::from_fn(ny, |y, _| root(y))
        };
    }

    /// One `a` sweep followed by one `b` sweep.
    pub fn sweep(&mut self) {
        self.update_a();
        self.update_b();
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `mu_x0 = a^2`, `mu_0y = b^2`, `mu_xy = a_x b_y S_xy`.
    pub fn patterns(&self) -> MatchingPatterns {
        let (nx, ny) = self.s.shape();
        MatchingPatterns {
            mu: DMatrix::from_fn(nx, ny, |x, y| self.a[x] * self.b[y] * self.s[(x, y)]),
            mu_x0: self.a.map(|v| v * v),
            mu_0y: self.b.map(|v| v * v),
        }
    }

    pub fn residual(&self) -> f64 {
        margin_residual(&self.patterns(), &self.n, &self.m)
    }

    pub fn utilities(&self) -> (DVector<f64>, DVector<f64>) {
        (self.a.map(|v| -2.0 * v.ln()), self.b.map(|v| -2.0 * v.ln()))
    }

    /// Dual objective `n.u + m.v + E*(Phi - u - v, -u, -v)` at the current scalings.
    pub fn dual_objective(&self) -> f64 {
        let (u, v) = self.utilities();
        let mu = self.patterns();
        self.n.dot(&u) + self.m.dot(&v) + 2.0 * mu.mu.sum() + mu.mu_x0.sum() + mu.mu_0y.sum()
    }
}

/// Stable matching by IPFP from the default start `a = sqrt(n / 2)`, `b = sqrt(m / 2)`.
pub fn solve_ipfp(phi: &SurplusMatrix, margins: &Margins, opts: &SolverOptions) -> Result<EquilibriumSolution> {
    solve_ipfp_from(phi, margins, opts, None)
}

/// As [`solve_ipfp`] with a caller-provided start (full dimensions; entries of
/// zero-mass types are ignored).
pub fn solve_ipfp_from(
    phi: &SurplusMatrix,
    margins: &Margins,
    opts: &SolverOptions,
    start: Option<IpfpStart>,
) -> Result<EquilibriumSolution> {
    opts.validate()?;
    if phi.nx() != margins.nx() || phi.ny() != margins.ny() {
        return Err(Error::DimensionMismatch { what: "surplus vs margins", expected: margins.nx() * margins.ny(), found: phi.nx() * phi.ny() });
    }
    let red = Reduction::new(margins);
    let n = red.rows(&margins.n);
    let m = red.cols(&margins.m);

    let (mu_r, u_r, v_r, iterations, residual) = if n.is_empty() || m.is_empty() {
        let (mu, u, v) = all_single(&n, &m);
        (mu, u, v, 0, 0.0)
    } else {
        let start = start.map(|s| IpfpStart { a: red.rows(&s.a), b: red.cols(&s.b) });
        let mut state = Ipfp::new(&red.matrix(phi.matrix()), &n, &m, start)?;
        let mut iterations = 0;
        let mut residual = state.residual();
        while residual > opts.tol {
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence { iterations, residual });
            }
            state.sweep();
            iterations += 1;
            residual = state.residual();
            if !residual.is_finite() {
                return Err(Error::NonFinite("IPFP iterate"));
            }
        }
        let (u, v) = state.utilities();
        (state.patterns(), u, v, iterations, residual)
    };

    let (mu, u, v) = if red.is_identity() { (mu_r, u_r, v_r) } else { red.expand(&mu_r, &u_r, &v_r) };
    let total_surplus = total_surplus(&mu, phi)?;
    Ok(EquilibriumSolution { mu, u, v, total_surplus, iterations, residual })
}
