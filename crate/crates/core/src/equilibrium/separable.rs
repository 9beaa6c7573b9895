//! Exact stable matching for large markets with separable surplus
//! `Phi~_ij = Phi_{x_i y_j} + eps_{i y_j} + eta_{j x_i}`.
//!
//! A couple's value splits into a man part depending on his partner's type and
//! a woman part depending on hers, so every couple can be routed through one of
//! `|X| |Y|` type hubs. The maximum-weight matching is then a min-cost flow
//! `s -> man -> hub -> woman -> t` solved by successive shortest paths, where
//! each residual path only needs the cheapest individual per hub-to-hub move.
//! Those minima live in ordered sets, so an augmentation costs a Bellman-Ford
//! pass over the hubs plus a few set updates.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::micro::{bellman_ford_all, MicroMarket, MicroSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableMarket {
    /// Type-level surplus `Phi_xy`.
    pub phi: DMatrix<f64>,
    pub man_types: Vec<usize>,
    pub woman_types: Vec<usize>,
    /// `eps[(i, y)]` for `y < |Y|`; column `|Y|` is singlehood.
    pub eps: DMatrix<f64>,
    /// `eta[(j, x)]` for `x < |X|`; column `|X|` is singlehood.
    pub eta: DMatrix<f64>,
}

impl SeparableMarket {
    pub fn new(
        phi: DMatrix<f64>,
        man_types: Vec<usize>,
        woman_types: Vec<usize>,
        eps: DMatrix<f64>,
        eta: DMatrix<f64>,
    ) -> Result<Self> {
        let (nx, ny) = phi.shape();
        if eps.shape() != (man_types.len(), ny + 1) {
            return Err(Error::invalid("eps must be n_men x (|Y| + 1)"));
        }
        if eta.shape() != (woman_types.len(), nx + 1) {
            return Err(Error::invalid("eta must be n_women x (|X| + 1)"));
        }
        if man_types.iter().any(|&x| x >= nx) || woman_types.iter().any(|&y| y >= ny) {
            return Err(Error::invalid("individual type out of range"));
        }
        if phi.iter().chain(eps.iter()).chain(eta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("separable market"));
        }
        Ok(SeparableMarket { phi, man_types, woman_types, eps, eta })
    }

    pub fn n_men(&self) -> usize {
        self.man_types.len()
    }

    pub fn n_women(&self) -> usize {
        self.woman_types.len()
    }

    pub fn phi_tilde(&self, i: usize, j: usize) -> f64 {
        let (x, y) = (self.man_types[i], self.woman_types[j]);
        self.phi[(x, y)] + self.eps[(i, y)] + self.eta[(j, x)]
    }

    pub fn phi_i0(&self) -> Vec<f64> {
        let ny = self.phi.ncols();
        (0..self.n_men()).map(|i| self.eps[(i, ny)]).collect()
    }

    pub fn phi_0j(&self) -> Vec<f64> {
        let nx = self.phi.nrows();
        (0..self.n_women()).map(|j| self.eta[(j, nx)]).collect()
    }

    /// Dense individual-level market (quadratic memory).
    pub fn to_micro(&self) -> MicroMarket {
        MicroMarket {
            phi_tilde: DMatrix::from_fn(self.n_men(), self.n_women(), |i, j| self.phi_tilde(i, j)),
            phi_i0: DVector::from_vec(self.phi_i0()),
            phi_0j: DVector::from_vec(self.phi_0j()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSolution {
    pub micro: MicroSolution,
    /// Type-level split of the surplus: `u_i = max(eps_i0, max_y U_{x_i y} + eps_iy)`.
    pub u_xy: DMatrix<f64>,
    /// `v_j = max(eta_j0, max_x V_{x y_j} + eta_jx)`; `U + V = Phi` when anyone marries.
    pub v_xy: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Key(f64, usize);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

#[derive(Debug, Clone, Copy)]
enum Via {
    NewMan(usize),
    MoveMan(usize),
    MoveWoman(usize),
    NewWoman(usize),
}

struct Hubs<'a> {
    nx: usize,
    ny: usize,
    man_types: &'a [usize],
    woman_types: &'a [usize],
    // alpha[i][y] = eps_iy - eps_i0 (row-major n_men x ny)
    alpha: Vec<f64>,
    // beta[j][x] = Phi_{x y_j} + eta_jx - eta_j0 (row-major n_women x nx)
    beta: Vec<f64>,
    man_hub: Vec<Option<usize>>,
    woman_hub: Vec<Option<usize>>,
    // by target hub (x, y): unmatched men of type x, key -alpha_iy
    free_men: Vec<BTreeSet<Key>>,
    // by hub (x, y): unmatched women of type y, key -beta_jx
    free_women: Vec<BTreeSet<Key>>,
    // by (hub (x, y), y'): men at the hub, key alpha_iy - alpha_iy'
    men_moves: Vec<BTreeSet<Key>>,
    // by (hub h' = (x', y), x): women at h', key beta_jx' - beta_jx
    women_moves: Vec<BTreeSet<Key>>,
}

impl<'a> Hubs<'a> {
    fn hub(&self, x: usize, y: usize) -> usize {
        x * self.ny + y
    }

    fn alpha(&self, i: usize, y: usize) -> f64 {
        self.alpha[i * self.ny + y]
    }

    fn beta(&self, j: usize, x: usize) -> f64 {
        self.beta[j * self.nx + x]
    }

    fn set_man(&mut self, i: usize, hub: Option<usize>, insert: bool) {
        let x = self.man_types[i];
        match hub {
            None => {
                for y in 0..self.ny {
                    let h = self.hub(x, y);
                    let k = Key(-self.alpha(i, y), i);
                    if insert { self.free_men[h].insert(k) } else { self.free_men[h].remove(&k) };
                }
            }
            Some(h) => {
                let y = h % self.ny;
                for y2 in (0..self.ny).filter(|&y2| y2 != y) {
                    let k = Key(self.alpha(i, y) - self.alpha(i, y2), i);
                    let slot = h * self.ny + y2;
                    if insert { self.men_moves[slot].insert(k) } else { self.men_moves[slot].remove(&k) };
                }
            }
        }
    }

    fn set_woman(&mut self, j: usize, hub: Option<usize>, insert: bool) {
        let y = self.woman_types[j];
        match hub {
            None => {
                for x in 0..self.nx {
                    let h = self.hub(x, y);
                    let k = Key(-self.beta(j, x), j);
                    if insert { self.free_women[h].insert(k) } else { self.free_women[h].remove(&k) };
                }
            }
            Some(h) => {
                let x_at = h / self.ny;
                for x in (0..self.nx).filter(|&x| x != x_at) {
                    let k = Key(self.beta(j, x_at) - self.beta(j, x), j);
                    let slot = h * self.nx + x;
                    if insert { self.women_moves[slot].insert(k) } else { self.women_moves[slot].remove(&k) };
                }
            }
        }
    }

    fn move_man(&mut self, i: usize, to: Option<usize>) {
        let from = self.man_hub[i];
        self.set_man(i, from, false);
        self.man_hub[i] = to;
        self.set_man(i, to, true);
    }

    fn move_woman(&mut self, j: usize, to: Option<usize>) {
        let from = self.woman_hub[j];
        self.set_woman(j, from, false);
        self.woman_hub[j] = to;
        self.set_woman(j, to, true);
    }

    /// Residual arcs among `hubs, s = H, t = H + 1` used by augmenting paths.
    fn path_arcs(&self) -> Vec<(usize, usize, f64, Via)> {
        let h_count = self.nx * self.ny;
        let (s, t) = (h_count, h_count + 1);
        let mut arcs = Vec::new();
        for h in 0..h_count {
            let (x, y) = (h / self.ny, h % self.ny);
            if let Some(k) = self.free_men[h].first() {
                arcs.push((s, h, k.0, Via::NewMan(k.1)));
            }
            if let Some(k) = self.free_women[h].first() {
                arcs.push((h, t, k.0, Via::NewWoman(k.1)));
            }
            for y2 in (0..self.ny).filter(|&y2| y2 != y) {
                if let Some(k) = self.men_moves[h * self.ny + y2].first() {
                    arcs.push((h, self.hub(x, y2), k.0, Via::MoveMan(k.1)));
                }
            }
            for x2 in (0..self.nx).filter(|&x2| x2 != x) {
                // women now at h could instead be reached from hub (x2, y)
                if let Some(k) = self.women_moves[h * self.nx + x2].first() {
                    arcs.push((self.hub(x2, y), h, k.0, Via::MoveWoman(k.1)));
                }
            }
        }
        arcs
    }
}

fn shortest_path(nodes: usize, source: usize, arcs: &[(usize, usize, f64, Via)]) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut dist = vec![f64::INFINITY; nodes];
    let mut pred = vec![None; nodes];
    dist[source] = 0.0;
    for _ in 0..nodes {
        let mut changed = false;
        for (idx, &(a, b, c, _)) in arcs.iter().enumerate() {
            if dist[a].is_finite() && dist[a] + c < dist[b] - 1e-14 * (1.0 + dist[b].abs().min(1e300)) {
                dist[b] = dist[a] + c;
                pred[b] = Some(idx);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (dist, pred)
}

/// Exact stable matching of a separable market, with individual utilities and
/// the type-level split `(U, V)`.
pub fn separable_stable_matching(market: &SeparableMarket) -> Result<SeparableSolution> {
    let (nx, ny) = market.phi.shape();
    let (nm, nw) = (market.n_men(), market.n_women());
    let h_count = nx * ny;
    let mut alpha = vec![0.0; nm * ny];
    for i in 0..nm {
        for y in 0..ny {
            alpha[i * ny + y] = market.eps[(i, y)] - market.eps[(i, ny)];
        }
    }
    let mut beta = vec![0.0; nw * nx];
    for j in 0..nw {
        let y = market.woman_types[j];
        for x in 0..nx {
            beta[j * nx + x] = market.phi[(x, y)] + market.eta[(j, x)] - market.eta[(j, nx)];
        }
    }
    let mut hubs = Hubs {
        nx,
        ny,
        man_types: &market.man_types,
        woman_types: &market.woman_types,
        alpha,
        beta,
        man_hub: vec![None; nm],
        woman_hub: vec![None; nw],
        free_men: vec![BTreeSet::new(); h_count],
        free_women: vec![BTreeSet::new(); h_count],
        men_moves: vec![BTreeSet::new(); h_count * ny],
        women_moves: vec![BTreeSet::new(); h_count * nx],
    };
    for i in 0..nm {
        hubs.set_man(i, None, true);
    }
    for j in 0..nw {
        hubs.set_woman(j, None, true);
    }

    let (s, t) = (h_count, h_count + 1);
    let nodes = h_count + 2;
    let mut flow = 0usize;
    while flow < nm.min(nw) {
        let arcs = hubs.path_arcs();
        let (dist, pred) = shortest_path(nodes, s, &arcs);
        if !(dist[t] < -1e-12) {
            break;
        }
        let mut path = Vec::new();
        let mut node = t;
        while node != s {
            let Some(idx) = pred[node] else { break };
            path.push(arcs[idx]);
            node = arcs[idx].0;
            if path.len() > nodes {
                return Err(Error::invalid("cycle in augmenting path"));
            }
        }
        for &(_, to, _, via) in &path {
            match via {
                Via::NewMan(i) | Via::MoveMan(i) => hubs.move_man(i, Some(to)),
                _ => {}
            }
        }
        for &(from, _, _, via) in &path {
            match via {
                Via::MoveWoman(j) | Via::NewWoman(j) => hubs.move_woman(j, Some(from)),
                _ => {}
            }
        }
        flow += 1;
    }

    // Final labels on the full residual graph over hubs, s and t.
    let mut arcs: Vec<(usize, usize, f64)> = hubs.path_arcs().into_iter().map(|(a, b, c, _)| (a, b, c)).collect();
    let mut back_to_s = vec![f64::INFINITY; h_count];
    for i in 0..nm {
        if let Some(h) = hubs.man_hub[i] {
            back_to_s[h] = back_to_s[h].min(hubs.alpha(i, h % ny));
        }
    }
    let mut from_t = vec![f64::INFINITY; h_count];
    for j in 0..nw {
        if let Some(h) = hubs.woman_hub[j] {
            from_t[h] = from_t[h].min(hubs.beta(j, h / ny));
        }
    }
    for h in 0..h_count {
        if back_to_s[h].is_finite() {
            arcs.push((h, s, back_to_s[h]));
        }
        if from_t[h].is_finite() {
            arcs.push((t, h, from_t[h]));
        }
    }
    arcs.push((t, s, 0.0));
    if flow > 0 {
        arcs.push((s, t, 0.0));
    }
    let d = bellman_ford_all(nodes, &arcs)?;
    let u_xy = DMatrix::from_fn(nx, ny, |x, y| d[x * ny + y] - d[s]);
    let v_xy = DMatrix::from_fn(nx, ny, |x, y| market.phi[(x, y)] - (d[x * ny + y] - d[t]));

    // Pair men and women sharing a hub.
    let mut at_hub_women: Vec<Vec<usize>> = vec![Vec::new(); h_count];
    for j in 0..nw {
        if let Some(h) = hubs.woman_hub[j] {
            at_hub_women[h].push(j);
        }
    }
    let mut cursor = vec![0usize; h_count];
    let mut assignment = vec![None; nm];
    for i in 0..nm {
        if let Some(h) = hubs.man_hub[i] {
            let j = *at_hub_women[h]
                .get(cursor[h])
                .ok_or_else(|| Error::invalid("hub flow is unbalanced"))?;
            cursor[h] += 1;
            assignment[i] = Some(j);
        }
    }

    let u = DVector::from_fn(nm, |i, _| {
        let x = market.man_types[i];
        (0..ny).map(|y| u_xy[(x, y)] + market.eps[(i, y)]).fold(market.eps[(i, ny)], f64::max)
    });
    let v = DVector::from_fn(nw, |j, _| {
        let y = market.woman_types[j];
        (0..nx).map(|x| v_xy[(x, y)] + market.eta[(j, x)]).fold(market.eta[(j, nx)], f64::max)
    });
    let mut primal_value = 0.0;
    let mut woman_taken = vec![false; nw];
    for (i, a) in assignment.iter().enumerate() {
        match *a {
            Some(j) => {
                woman_taken[j] = true;
                primal_value += market.phi_tilde(i, j);
            }
            None => primal_value += market.eps[(i, ny)],
        }
    }
    primal_value += (0..nw).filter(|&j| !woman_taken[j]).map(|j| market.eta[(j, nx)]).sum::<f64>();

    Ok(SeparableSolution { micro: MicroSolution { assignment, u, v, primal_value }, u_xy, v_xy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{assignment_stable_matching, micro_stable_matching};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_market(rng: &mut ChaCha8Rng, nx: usize, ny: usize, nm: usize, nw: usize) -> SeparableMarket {
        SeparableMarket::new(
            DMatrix::from_fn(nx, ny, |_, _| rng.random_range(-1.0..2.0)),
            (0..nm).map(|_| rng.random_range(0..nx)).collect(),
            (0..nw).map(|_| rng.random_range(0..ny)).collect(),
            DMatrix::from_fn(nm, ny + 1, |_, _| rng.random_range(-1.5..1.5)),
            DMatrix::from_fn(nw, nx + 1, |_, _| rng.random_range(-1.5..1.5)),
        )
        .unwrap()
    }

    #[test]
    fn agrees_with_enumeration_on_small_markets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let nx = rng.random_range(1..=3);
            let ny = rng.random_range(1..=3);
            let (nm, nw) = (rng.random_range(0..=6), rng.random_range(0..=6));
            let m = random_market(&mut rng, nx, ny, nm, nw);
            let sep = separable_stable_matching(&m).unwrap();
            let reference = micro_stable_matching(&m.to_micro()).unwrap();
            assert!((sep.micro.primal_value - reference.primal_value).abs() < 1e-9);
            assert!((sep.micro.dual_value() - sep.micro.primal_value).abs() < 1e-9);
            let viol = sep.micro.stability_violation(|i, j| m.phi_tilde(i, j), &m.phi_i0(), &m.phi_0j());
            assert!(viol < 1e-9, "violation {viol}");
        }
    }

    #[test]
    fn agrees_with_hungarian_on_mid_sized_markets() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let m = random_market(&mut rng, 3, 2, 40, 35);
            let sep = separable_stable_matching(&m).unwrap();
            let reference = assignment_stable_matching(&m.to_micro()).unwrap();
            assert!((sep.micro.primal_value - reference.primal_value).abs() < 1e-8);
            let viol = sep.micro.stability_violation(|i, j| m.phi_tilde(i, j), &m.phi_i0(), &m.phi_0j());
            assert!(viol < 1e-9);
            let split = &sep.u_xy + &sep.v_xy - &m.phi;
            assert!(split.amax() < 1e-9);
        }
    }
}
