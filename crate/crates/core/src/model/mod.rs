//! Shared data types and the logit model primitives.

mod logit;

pub use logit::{
    entropy_logit, extended_entropy_logit, extended_entropy_star_logit, logit_emax,
    matching_function_logit, patterns_from_potentials, patterns_from_utilities, surplus_from_basis,
    total_surplus, LogitArgs,
};

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Labels of the observable types on each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSpace {
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl TypeSpace {
    pub fn new(x_labels: Vec<String>, y_labels: Vec<String>) -> Result<Self> {
        if x_labels.is_empty() || y_labels.is_empty() {
            return Err(Error::invalid("type space needs at least one type per side"));
        }
        for (side, labels) in [("x", &x_labels), ("y", &y_labels)] {
            let mut seen = HashSet::new();
            for l in labels.iter() {
                if l == "0" {
                    return Err(Error::invalid("label \"0\" is reserved for singlehood"));
                }
                if !seen.insert(l.as_str()) {
                    return Err(Error::invalid(format!("duplicate {side} label {l:?}")));
                }
            }
        }
        Ok(TypeSpace { x_labels, y_labels })
    }

    /// `x1..xN`, `y1..yM`.
    pub fn numbered(nx: usize, ny: usize) -> Result<Self> {
        Self::new(
            (1..=nx).map(|i| format!("x{i}")).collect(),
            (1..=ny).map(|j| format!("y{j}")).collect(),
        )
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    pub fn nx(&self) -> usize {
        self.x_labels.len()
    }

    pub fn ny(&self) -> usize {
        self.y_labels.len()
    }

    pub fn x_index(&self, label: &str) -> Option<usize> {
        self.x_labels.iter().position(|l| l == label)
    }

    pub fn y_index(&self, label: &str) -> Option<usize> {
        self.y_labels.iter().position(|l| l == label)
    }
}

/// Population masses `n_x` of men and `m_y` of women by type.
#[derive(Debug, Clone, PartialEq)]
pub struct Margins {
    pub n: DVector<f64>,
    pub m: DVector<f64>,
}

impl Margins {
    pub fn new(n: DVector<f64>, m: DVector<f64>) -> Result<Self> {
        if n.is_empty() || m.is_empty() {
            return Err(Error::invalid("margins need at least one type per side"));
        }
        for &val in n.iter().chain(m.iter()) {
            if !val.is_finite() {
                return Err(Error::NonFinite("margins"));
            }
            if val < 0.0 {
                return Err(Error::NegativeEntry { what: "margins", value: val });
            }
        }
        if n.iter().chain(m.iter()).all(|&v| v == 0.0) {
            return Err(Error::invalid("margins are all zero"));
        }
        Ok(Margins { n, m })
    }

    pub fn from_slices(n: &[f64], m: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(n), DVector::from_column_slice(m))
    }

    pub fn nx(&self) -> usize {
        self.n.len()
    }

    pub fn ny(&self) -> usize {
        self.m.len()
    }

    pub fn total(&self) -> f64 {
        self.n.sum() + self.m.sum()
    }

    pub fn scaled(&self, factor: f64) -> Margins {
        Margins { n: &self.n * factor, m: &self.m * factor }
    }
}

/// Type-level matching patterns: couples `mu[(x, y)]` and singles `mu_x0`, `mu_0y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingPatterns {
    pub mu: DMatrix<f64>,
    pub mu_x0: DVector<f64>,
    pub mu_0y: DVector<f64>,
}

impl MatchingPatterns {
    pub fn new(mu: DMatrix<f64>, mu_x0: DVector<f64>, mu_0y: DVector<f64>) -> Result<Self> {
        if mu.nrows() != mu_x0.len() {
            return Err(Error::DimensionMismatch {
                what: "mu_x0",
                expected: mu.nrows(),
                found: mu_x0.len(),
            });
        }
        if mu.ncols() != mu_0y.len() {
            return Err(Error::DimensionMismatch {
                what: "mu_0y",
                expected: mu.ncols(),
                found: mu_0y.len(),
            });
        }
        let p = MatchingPatterns { mu, mu_x0, mu_0y };
        p.check_nonnegative()?;
        Ok(p)
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        MatchingPatterns {
            mu: DMatrix::zeros(nx, ny),
            mu_x0: DVector::zeros(nx),
            mu_0y: DVector::zeros(ny),
        }
    }

    /// Single-cell market, handy in tests: `(mu_xy, mu_x0, mu_0y)`.
    pub fn scalar(mu_xy: f64, mu_x0: f64, mu_0y: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, mu_xy),
            DVector::from_element(1, mu_x0),
            DVector::from_element(1, mu_0y),
        )
    }

    pub(crate) fn check_nonnegative(&self) -> Result<()> {
        for &v in self.iter_all() {
            if !v.is_finite() {
                return Err(Error::NonFinite("matching patterns"));
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { what: "matching patterns", value: v });
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.mu.nrows()
    }

    pub fn ny(&self) -> usize {
        self.mu.ncols()
    }

    /// `N_x(mu) = sum_y mu_xy + mu_x0`.
    pub fn men_margins(&self) -> DVector<f64> {
        let mut n = self.mu_x0.clone();
        for x in 0..self.nx() {
            n[x] += self.mu.row(x).sum();
        }
        n
    }

    /// `M_y(mu) = sum_x mu_xy + mu_0y`.
    pub fn women_margins(&self) -> DVector<f64> {
        let mut m = self.mu_0y.clone();
        for y in 0..self.ny() {
            m[y] += self.mu.column(y).sum();
        }
        m
    }

    pub fn margins(&self) -> Result<Margins> {
        Margins::new(self.men_margins(), self.women_margins())
    }

    /// Number of households: couples plus singles on both sides.
    pub fn households(&self) -> f64 {
        self.mu.sum() + self.mu_x0.sum() + self.mu_0y.sum()
    }

    pub fn n_categories(&self) -> usize {
        self.nx() * self.ny() + self.nx() + self.ny()
    }

    /// Entries in canonical category order: couples row-major, then `x0`, then `0y`.
    pub fn iter_all(&self) -> impl Iterator<Item = &f64> + '_ {
        let (nx, ny) = (self.nx(), self.ny());
        (0..nx)
            .flat_map(move |x| (0..ny).map(move |y| &self.mu[(x, y)]))
            .chain(self.mu_x0.iter())
            .chain(self.mu_0y.iter())
    }

    pub fn to_category_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_categories(), self.iter_all().copied())
    }

    pub fn from_category_vector(nx: usize, ny: usize, v: &DVector<f64>) -> Result<Self> {
        let expected = nx * ny + nx + ny;
        if v.len() != expected {
            return Err(Error::DimensionMismatch { what: "category vector", expected, found: v.len() });
        }
        let mu = DMatrix::from_fn(nx, ny, |x, y| v[x * ny + y]);
        let mu_x0 = DVector::from_fn(nx, |x, _| v[nx * ny + x]);
        let mu_0y = DVector::from_fn(ny, |y, _| v[nx * ny + nx + y]);
        Self::new(mu, mu_x0, mu_0y)
    }

    pub fn scaled(&self, factor: f64) -> MatchingPatterns {
        MatchingPatterns {
            mu: &self.mu * factor,
            mu_x0: &self.mu_x0 * factor,
            mu_0y: &self.mu_0y * factor,
        }
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &MatchingPatterns) -> f64 {
        self.iter_all()
            .zip(other.iter_all())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Systematic joint surplus `Phi_xy`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurplusMatrix(DMatrix<f64>);

impl SurplusMatrix {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::invalid("surplus matrix is empty"));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("surplus matrix"));
        }
        Ok(SurplusMatrix(phi))
    }

    pub fn from_row_slice(nx: usize, ny: usize, values: &[f64]) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::DimensionMismatch { what: "surplus values", expected: nx * ny, found: values.len() });
        }
        Self::new(DMatrix::from_row_slice(nx, ny, values))
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        SurplusMatrix(DMatrix::zeros(nx, ny))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nx(&self) -> usize {
        self.0.nrows()
    }

    pub fn ny(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0[(x, y)]
    }
}

/// Basis matrices `phi^k` of a linear surplus `Phi^lambda = sum_k lambda_k phi^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    bases: Vec<DMatrix<f64>>,
    names: Vec<String>,
}

impl BasisSystem {
    /// Rejects empty, mis-shaped, non-finite, or linearly dependent bases.
    pub fn new(bases: Vec<DMatrix<f64>>, names: Vec<String>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::invalid("basis system needs K >= 1"));
        }
        if names.len() != bases.len() {
            return Err(Error::DimensionMismatch { what: "basis names", expected: bases.len(), found: names.len() });
        }
        let (nx, ny) = bases[0].shape();
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("basis matrices are empty"));
        }
        for b in &bases {
            if b.shape() != (nx, ny) {
                return Err(Error::invalid("basis matrices differ in shape"));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("basis matrix"));
            }
        }
        let k = bases.len();
        let stacked = DMatrix::from_fn(k, nx * ny, |r, c| bases[r][(c / ny, c % ny)]);
        let rank = matrix_rank(&stacked);
        if rank < k {
            return Err(Error::RankDeficient { rank, k });
        }
        Ok(BasisSystem { bases, names })
    }

    /// Generic names `k1..kK`.
    pub fn unnamed(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        let names = (1..=bases.len()).map(|k| format!("k{k}")).collect();
        Self::new(bases, names)
    }

    /// One indicator basis per cell; `Phi^lambda` is then unrestricted.
    pub fn saturated(nx: usize, ny: usize) -> Self {
        let mut bases = Vec::with_capacity(nx * ny);
        let mut names = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                let mut b = DMatrix::zeros(nx, ny);
                b[(x, y)] = 1.0;
                bases.push(b);
                names.push(format!("cell_{}_{}", x + 1, y + 1));
            }
        }
        BasisSystem { bases, names }
    }

    pub fn k(&self) -> usize {
        self.bases.len()
    }

    pub fn nx(&self) -> usize {
        self.bases[0].nrows()
    }

    pub fn ny(&self) -> usize {
        self.bases[0].ncols()
    }

    pub fn bases(&self) -> &[DMatrix<f64>] {
        &self.bases
    }

    pub fn basis(&self, k: usize) -> &DMatrix<f64> {
        &self.bases[k]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `sum_xy w_xy phi^k_xy` for every `k`.
    pub fn moments(&self, w: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.k(), self.bases.iter().map(|b| b.component_mul(w).sum()))
    }

    /// Whether some basis is non-zero at `(x, y)`.
    pub fn uses_cell(&self, x: usize, y: usize) -> bool {
        self.bases.iter().any(|b| b[(x, y)] != 0.0)
    }
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// `alpha = (lambda, u, v)`: surplus coefficients and type-level utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub lambda: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl ParameterVector {
    pub fn new(lambda: DVector<f64>, u: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if lambda.iter().chain(u.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParameterVector { lambda, u, v })
    }

    pub fn zeros(k: usize, nx: usize, ny: usize) -> Self {
        ParameterVector { lambda: DVector::zeros(k), u: DVector::zeros(nx), v: DVector::zeros(ny) }
    }

    pub fn len(&self) -> usize {
        self.lambda.len() + self.u.len() + self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout `(lambda, u, v)`; the same order indexes covariance matrices.
    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.lambda.iter().chain(self.u.iter()).chain(self.v.iter()).copied())
    }

    pub fn from_flat(flat: &DVector<f64>, k: usize, nx: usize, ny: usize) -> Result<Self> {
        if flat.len() != k + nx + ny {
            return Err(Error::DimensionMismatch { what: "parameter vector", expected: k + nx + ny, found: flat.len() });
        }
        Ok(ParameterVector {
            lambda: flat.rows(0, k).into_owned(),
            u: flat.rows(k, nx).into_owned(),
            v: flat.rows(k + nx, ny).into_owned(),
        })
    }
}

/// Distributional family of the unobserved heterogeneity. Only the logit
/// (i.i.d. standard Gumbel) instance is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distribution {
    #[default]
    Logit,
}

/// Household counts from a sample, with the total `N_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCounts {
    mu_hat: MatchingPatterns,
    n_households: f64,
    integral: bool,
    pseudo_count: f64,
}

impl SampleCounts {
    /// Observed counts; every entry must be a non-negative integer and the total positive.
    pub fn from_counts(mu_hat: MatchingPatterns) -> Result<Self> {
        mu_hat.check_nonnegative()?;
        if let Some(v) = mu_hat.iter_all().find(|v| v.fract() != 0.0) {
            return Err(Error::invalid(format!("household count {v} is not an integer")));
        }
        Self::build(mu_hat, true)
    }

    /// Expected (possibly fractional) counts, for population-level or exact-data work.
    pub fn from_expected(mu_hat: MatchingPatterns) -> Result<Self> {
        mu_hat.check_nonnegative()?;
        Self::build(mu_hat, false)
    }

    /// Population frequencies scaled to `n_households` expected counts.
    pub fn from_frequencies(pi: &MatchingPatterns, n_households: f64) -> Result<Self> {
        let total = pi.households();
        if total <= 0.0 || n_households <= 0.0 {
            return Err(Error::invalid("frequencies and household total must be positive"));
        }
        Self::from_expected(pi.scaled(n_households / total))
    }

    fn build(mu_hat: MatchingPatterns, integral: bool) -> Result<Self> {
        let n_households = mu_hat.households();
        Ok(SampleCounts { mu_hat, n_households, integral, pseudo_count: 0.0 })
    }

    /// Adds `c` households to every category (Laplace smoothing of zero cells).
    pub fn with_pseudo_count(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid("pseudo-count must be non-negative"));
        }
        let mut mu = self.mu_hat.clone();
        mu.mu.add_scalar_mut(c);
        mu.mu_x0.add_scalar_mut(c);
        mu.mu_0y.add_scalar_mut(c);
        let n = mu.households();
        Ok(SampleCounts {
            mu_hat: mu,
            n_households: n,
            integral: self.integral && c.fract() == 0.0,
            pseudo_count: self.pseudo_count + c,
        })
    }

    pub fn counts(&self) -> &MatchingPatterns {
        &self.mu_hat
    }

    pub fn n_households(&self) -> f64 {
        self.n_households
    }

    pub fn is_integral(&self) -> bool {
        self.integral
    }

    /// Total pseudo-count added per category (0 when unsmoothed).
    pub fn pseudo_count(&self) -> f64 {
        self.pseudo_count
    }

    /// Empirical frequencies `pi_hat = mu_hat / N_h`; they sum to one
    /// (all zero for an empty sample).
    pub fn frequencies(&self) -> MatchingPatterns {
        if self.n_households > 0.0 {
            self.mu_hat.scaled(1.0 / self.n_households)
        } else {
            self.mu_hat.clone()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_households == 0.0
    }

    pub fn nx(&self) -> usize {
        self.mu_hat.nx()
    }

    pub fn ny(&self) -> usize {
        self.mu_hat.ny()
    }

    /// Observed margins `(n_hat, m_hat)` in counts.
    pub fn margins(&self) -> Result<Margins> {
        self.mu_hat.margins()
    }

    /// First category whose count is zero among those a fit needs: every singles
    /// cell, plus the couple cells the basis touches (all of them when `basis` is None).
    pub fn first_zero_cell(&self, basis: Option<&BasisSystem>) -> Option<(Option<usize>, Option<usize>)> {
        let mu = &self.mu_hat;
        for x in 0..mu.nx() {
            for y in 0..mu.ny() {
                let used = basis.is_none_or(|b| b.uses_cell(x, y));
                if used && mu.mu[(x, y)] <= 0.0 {
                    return Some((Some(x), Some(y)));
                }
            }
        }
        if let Some(x) = mu.mu_x0.iter().position(|&v| v <= 0.0) {
            return Some((Some(x), None));
        }
        mu.mu_0y.iter().position(|&v| v <= 0.0).map(|y| (None, Some(y)))
    }

    pub(crate) fn require_positive(&self, basis: Option<&BasisSystem>) -> Result<()> {
        match self.first_zero_cell(basis) {
            None => Ok(()),
            Some((x, y)) => Err(Error::ZeroCell {
                x: x.map_or("0".into(), |x| format!("x[{x}]")),
                y: y.map_or("0".into(), |y| format!("y[{y}]")),
            }),
        }
    }
}

/// Stable matching at the type level.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub mu: MatchingPatterns,
    /// `u_x = -log mu_x0`; `+inf` for types with zero mass.
    pub u: DVector<f64>,
    /// `v_y = -log mu_0y`; `+inf` for types with zero mass.
    pub v: DVector<f64>,
    pub total_surplus: f64,
    pub iterations: usize,
    /// Sup-norm of the margin violations at exit.
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_space_rejects_duplicates_and_reserved() {
        assert!(TypeSpace::new(vec!["a".into(), "a".into()], vec!["b".into()]).is_err());
        assert!(TypeSpace::new(vec!["0".into()], vec!["b".into()]).is_err());
        assert!(TypeSpace::new(vec![], vec!["b".into()]).is_err());
        let ts = TypeSpace::numbered(2, 3).unwrap();
        assert_eq!(ts.y_index("y3"), Some(2));
    }

    #[test]
    fn margins_validation() {
        assert!(Margins::from_slices(&[1.0, -1.0], &[1.0]).is_err());
        assert!(Margins::from_slices(&[0.0], &[0.0]).is_err());
        assert!(Margins::from_slices(&[0.0], &[1.0]).is_ok());
    }

    #[test]
    fn patterns_margins_and_categories() {
        let mu = MatchingPatterns::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DVector::from_column_slice(&[0.5, 0.5]),
            DVector::from_column_slice(&[1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(mu.men_margins().as_slice(), &[3.5, 7.5]);
        assert_eq!(mu.women_margins().as_slice(), &[5.0, 8.0]);
        assert_eq!(mu.households(), 14.0);
        let v = mu.to_category_vector();
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 0.5, 0.5, 1.0, 2.0]);
        assert_eq!(MatchingPatterns::from_category_vector(2, 2, &v).unwrap(), mu);
        assert!(MatchingPatterns::scalar(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn basis_rank_check() {
        let ones = DMatrix::from_element(2, 2, 1.0);
        let twos = DMatrix::from_element(2, 2, 2.0);
        assert!(matches!(
            BasisSystem::unnamed(vec![ones.clone(), twos]),
            Err(Error::RankDeficient { rank: 1, k: 2 })
        ));
        assert!(BasisSystem::unnamed(vec![ones, DMatrix::identity(2, 2)]).is_ok());
        assert_eq!(BasisSystem::saturated(2, 3).k(), 6);
    }

    #[test]
    fn sample_counts_totals() {
        let mu = MatchingPatterns::scalar(4.0, 2.0, 2.0).unwrap();
        let s = SampleCounts::from_counts(mu).unwrap();
        assert_eq!(s.n_households(), 8.0);
        assert!((s.frequencies().households() - 1.0).abs() < 1e-15);
        assert!(SampleCounts::from_counts(MatchingPatterns::scalar(0.5, 1.0, 1.0).unwrap()).is_err());
        let z = SampleCounts::from_counts(MatchingPatterns::scalar(0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(z.first_zero_cell(None), Some((Some(0), Some(0))));
        let smoothed = z.with_pseudo_count(0.5).unwrap();
        assert_eq!(smoothed.n_households(), 3.5);
        assert_eq!(smoothed.first_zero_cell(None), None);
        assert_eq!(smoothed.pseudo_count(), 0.5);
    }

    #[test]
    fn parameter_flat_roundtrip() {
        let p = ParameterVector::new(
            DVector::from_column_slice(&[1.0]),
            DVector::from_column_slice(&[2.0, 3.0]),
            DVector::from_column_slice(&[4.0]),
        )
        .unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ParameterVector::from_flat(&flat, 1, 2, 1).unwrap(), p);
    }
}
