//! Individual-level stable matching for small markets.
//!
//! The primal (surplus-maximizing matching) is found by a Hungarian solve on
//! the augmented square problem in which every man and woman owns a singlehood
//! slot, and is checked against exhaustive enumeration. Dual utilities come
//! from shortest paths in the residual graph of the optimal matching.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest side size accepted by [`micro_stable_matching`].
pub const ENUMERATION_CAP: usize = 10;

const PRIMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MicroMarket {
    /// `Phi~_ij`, men by women.
    pub phi_tilde: DMatrix<f64>,
    /// Value of singlehood for each man.
    pub phi_i0: DVector<f64>,
    /// Value of singlehood for each woman.
    pub phi_0j: DVector<f64>,
}

impl MicroMarket {
    pub fn new(phi_tilde: DMatrix<f64>, phi_i0: DVector<f64>, phi_0j: DVector<f64>) -> Result<Self> {
        if phi_tilde.nrows() != phi_i0.len() {
            return Err(Error::DimensionMismatch { what: "phi_i0", expected: phi_tilde.nrows(), found: phi_i0.len() });
        }
        if phi_tilde.ncols() != phi_0j.len() {
            return Err(Error::DimensionMismatch { what: "phi_0j", expected: phi_tilde.ncols(), found: phi_0j.len() });
        }
        if phi_tilde.iter().chain(phi_i0.iter()).chain(phi_0j.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("micro market surplus"));
        }
        Ok(MicroMarket { phi_tilde, phi_i0, phi_0j })
    }

    pub fn n_men(&self) -> usize {
        self.phi_i0.len()
    }

    pub fn n_women(&self) -> usize {
        self.phi_0j.len()
    }

    /// Total surplus of an assignment (`assignment[i] = Some(j)` when man `i` marries woman `j`).
    pub fn value(&self, assignment: &[Option<usize>]) -> f64 {
        let mut taken = vec![false; self.n_women()];
        let mut total = 0.0;
        for (i, a) in assignment.iter().enumerate() {
            match *a {
                Some(j) => {
                    taken[j] = true;
                    total += self.phi_tilde[(i, j)];
                }
                None => total += self.phi_i0[i],
            }
        }
        total + (0..self.n_women()).filter(|&j| !taken[j]).map(|j| self.phi_0j[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroSolution {
    /// Partner of each man, `None` for single.
    pub assignment: Vec<Option<usize>>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub primal_value: f64,
}

impl MicroSolution {
    /// Partner of each woman.
    pub fn women_partners(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.v.len()];
        for (i, a) in self.assignment.iter().enumerate() {
            if let Some(j) = *a {
                out[j] = Some(i);
            }
        }
        out
    }

    pub fn dual_value(&self) -> f64 {
        self.u.sum() + self.v.sum()
    }

    /// Largest violation of the stability conditions: `u_i + v_j >= Phi~_ij` with
    /// equality for couples, `u_i >= Phi~_i0` with equality for singles, and
    /// symmetrically for women. Zero means stable.
    pub fn stability_violation(&self, phi_tilde: impl Fn(usize, usize) -> f64, phi_i0: &[f64], phi_0j: &[f64]) -> f64 {
        let women = self.women_partners();
        let mut worst: f64 = 0.0;
        for (i, &ui) in self.u.iter().enumerate() {
            worst = worst.max(phi_i0[i] - ui);
            match self.assignment[i] {
                Some(j) => worst = worst.max((ui + self.v[j] - phi_tilde(i, j)).abs()),
                None => worst = worst.max((ui - phi_i0[i]).abs()),
            }
            for (j, &vj) in self.v.iter().enumerate() {
                worst = worst.max(phi_tilde(i, j) - ui - vj);
            }
        }
        for (j, &vj) in self.v.iter().enumerate() {
            worst = worst.max(phi_0j[j] - vj);
            if women[j].is_none() {
                worst = worst.max((vj - phi_0j[j]).abs());
            }
        }
        worst
    }

    pub fn market_violation(&self, market: &MicroMarket) -> f64 {
        self.stability_violation(|i, j| market.phi_tilde[(i, j)], market.phi_i0.as_slice(), market.phi_0j.as_slice())
    }
}

/// Exhaustive search over all feasible matchings. First maximizer in
/// lexicographic order wins ties.
pub fn enumerate_best_matching(market: &MicroMarket) -> Result<(Vec<Option<usize>>, f64)> {
    let (nm, nw) = (market.n_men(), market.n_women());
    if nm.max(nw) > ENUMERATION_CAP {
        return Err(Error::SizeAboveCap { size: nm.max(nw), cap: ENUMERATION_CAP });
    }
    // Work on net gains so singles need no bookkeeping.
    let base = market.phi_i0.sum() + market.phi_0j.sum();
    let gain = DMatrix::from_fn(nm, nw, |i, j| market.phi_tilde[(i, j)] - market.phi_i0[i] - market.phi_0j[j]);

    struct Search<'a> {
        gain: &'a DMatrix<f64>,
        used: Vec<bool>,
        current: Vec<Option<usize>>,
        best: Vec<Option<usize>>,
        best_value: f64,
    }
    fn go(s: &mut Search<'_>, i: usize, acc: f64) {
        if i == s.current.len() {
            if acc > s.best_value {
                s.best_value = acc;
                s.best.clone_from(&s.current);
            }
            return;
        }
        for j in 0..s.used.len() {
            if !s.used[j] {
                s.used[j] = true;
                s.current[i] = Some(j);
                go(s, i + 1, acc + s.gain[(i, j)]);
                s.used[j] = false;
            }
        }
        s.current[i] = None;
        go(s, i + 1, acc);
    }
    let mut s = Search {
        gain: &gain,
        used: vec![false; nw],
        current: vec![None; nm],
        best: vec![None; nm],
        best_value: f64::NEG_INFINITY,
    };
    go(&mut s, 0, 0.0);
    Ok((s.best, base + s.best_value))
}

/// Maximum-weight perfect assignment on a square matrix (`-inf` forbids a
/// pair). Returns the column of each row and the row/column potentials
/// `(r, c)` with `r_i + c_j >= w_ij`, tight on assigned pairs.
pub fn hungarian_max(w: &DMatrix<f64>) -> Result<(Vec<usize>, DVector<f64>, DVector<f64>)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::invalid("assignment matrix must be square"));
    }
    // Shortest augmenting paths with potentials on the cost matrix -w (1-based).
    let cost = |i: usize, j: usize| -w[(i - 1, j - 1)];
    let inf = f64::INFINITY;
    let mut pu = vec![0.0; n + 1];
    let mut pv = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - pu[i0] - pv[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            if !delta.is_finite() {
                return Err(Error::invalid("assignment problem has no feasible perfect matching"));
            }
            for j in 0..=n {
                if used[j] {
                    pu[p[j]] += delta;
                    pv[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    // Cost potentials satisfy cost - pu - pv >= 0; for weights r = -pu, c = -pv.
    let r = DVector::from_fn(n, |i, _| -pu[i + 1]);
    let c = DVector::from_fn(n, |j, _| -pv[j + 1]);
    Ok((col_of_row, r, c))
}

/// Optimal matching from the augmented `(n_men + n_women)` square problem:
/// rows are men then women's singlehood slots, columns are women then men's
/// singlehood slots, the slot block has weight zero.
fn augmented_assignment(market: &MicroMarket) -> Result<Vec<Option<usize>>> {
    let (nm, nw) = (market.n_men(), market.n_women());
    let size = nm + nw;
    let ninf = f64::NEG_INFINITY;
    let w = DMatrix::from_fn(size, size, |r, c| match (r < nm, c < nw) {
        (true, true) => market.phi_tilde[(r, c)],
        (true, false) => if c - nw == r { market.phi_i0[r] } else { ninf },
        (false, true) => if r - nm == c { market.phi_0j[c] } else { ninf },
        (false, false) => 0.0,
    });
    let (cols, _, _) = hungarian_max(&w)?;
    Ok((0..nm).map(|i| if cols[i] < nw { Some(cols[i]) } else { None }).collect())
}

/// Dual utilities supporting an optimal matching.
///
/// Works on net gains `g_ij = Phi~_ij - Phi~_i0 - Phi~_0j` and the flow network
/// `s -> man -> woman -> t` (middle arcs uncapacitated, plus `t -> s`). With
/// shortest-path labels `d` of the residual graph, `p_i = max(0, d_i - d_s)` and
/// `q_j = max(0, d_t - d_j)` satisfy `p_i + q_j >= g_ij`, tight on couples.
fn residual_duals(market: &MicroMarket, assignment: &[Option<usize>]) -> Result<(DVector<f64>, DVector<f64>)> {
    let (nm, nw) = (market.n_men(), market.n_women());
    let (s, t) = (0, nm + nw + 1);
    let man = |i: usize| 1 + i;
    let woman = |j: usize| 1 + nm + j;
    let gain = |i: usize, j: usize| market.phi_tilde[(i, j)] - market.phi_i0[i] - market.phi_0j[j];

    let mut women_matched = vec![false; nw];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * nm * nw + 2 * (nm + nw) + 2);
    for i in 0..nm {
        match assignment[i] {
            Some(j) => {
                women_matched[j] = true;
                edges.push((man(i), s, 0.0));
                edges.push((woman(j), man(i), gain(i, j)));
            }
            None => edges.push((s, man(i), 0.0)),
        }
        for j in 0..nw {
            edges.push((man(i), woman(j), -gain(i, j)));
        }
    }
    for (j, &matched) in women_matched.iter().enumerate() {
        if matched {
            edges.push((t, woman(j), 0.0));
        } else {
            edges.push((woman(j), t, 0.0));
        }
    }
    edges.push((t, s, 0.0));
    if women_matched.iter().any(|&m| m) {
        edges.push((s, t, 0.0));
    }
    let d = bellman_ford_all(nm + nw + 2, &edges)?;
    let u = DVector::from_fn(nm, |i, _| market.phi_i0[i] + (d[man(i)] - d[s]).max(0.0));
    let v = DVector::from_fn(nw, |j, _| market.phi_0j[j] + (d[t] - d[woman(j)]).max(0.0));
    Ok((u, v))
}

/// Shortest-path labels from a virtual source joined to every node at cost 0.
pub(crate) fn bellman_ford_all(nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let mut d = vec![0.0; nodes];
    for _ in 0..=nodes {
        let mut changed = false;
        for &(a, b, c) in edges {
            let cand = d[a] + c;
            if cand < d[b] - 1e-13 * (1.0 + d[b].abs()) {
                d[b] = cand;
                changed = true;
            }
        }
        if !changed {
            return Ok(d);
        }
    }
    Err(Error::invalid("negative cycle in residual graph: matching is not optimal"))
}

/// Stable matching of a small market: enumeration for the primal value, the
/// augmented assignment for the matching, residual shortest paths for utilities.
pub fn micro_stable_matching(market: &MicroMarket) -> Result<MicroSolution> {
    let (_, value) = enumerate_best_matching(market)?;
    let mut sol = assignment_stable_matching(market)?;
    let scale = 1.0 + value.abs();
    if (sol.primal_value - value).abs() > PRIMAL_TOL * scale {
        return Err(Error::invalid(format!(
            "assignment value {} disagrees with enumeration {}",
            sol.primal_value, value
        )));
    }
    sol.primal_value = value;
    Ok(sol)
}

/// As [`micro_stable_matching`] without the enumeration check, for markets
/// beyond the cap (cubic in `n_men + n_women`).
pub fn assignment_stable_matching(market: &MicroMarket) -> Result<MicroSolution> {
    let assignment = augmented_assignment(market)?;
    let (u, v) = residual_duals(market, &assignment)?;
    let primal_value = market.value(&assignment);
    Ok(MicroSolution { assignment, u, v, primal_value })
}
