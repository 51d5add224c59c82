//! Weighted set multi-cover by branch and bound on the LP relaxation.
//!
//! Minimize `costs . z` subject to `A z >= demand`, `z` binary. The relaxation
//! has one row per item, so a dense bounded-variable simplex solves it in a
//! few microseconds. A first search finds the optimal cost; a second pass
//! fixes sets in index order, keeping a set out whenever an optimal cover
//! still exists without it, which yields the lexicographically smallest
//! optimal selection.

use crate::error::{ForgeError, Result};

/// Covers whose costs differ by less than this are treated as ties.
const TIE_EPS: f64 = 1e-6;
/// Slack on LP bounds before a node is pruned.
const LP_SLACK: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const INT_TOL: f64 = 1e-6;

/// Solve the multi-cover. `availability[item][set]` is 1 when the set covers
/// the item. Returns the lexicographically smallest optimal selection.
pub fn solve(availability: &[Vec<u8>], costs: &[f64], demand: &[u32]) -> Result<Vec<f64>> {
    let items = availability.len();
    let sets = costs.len();
    if demand.len() != items {
        return Err(ForgeError::Shape {
            expected: items,
            got: demand.len(),
        });
    }
    if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(ForgeError::Solver(
            "set costs must be finite and non-negative".into(),
        ));
    }
    let mut covers = vec![Vec::new(); sets];
    for (i, row) in availability.iter().enumerate() {
        if row.len() != sets {
            return Err(ForgeError::Shape {
                expected: sets,
                got: row.len(),
            });
        }
        for (j, &a) in row.iter().enumerate() {
            if a != 0 {
                covers[j].push(i);
            }
        }
    }
    for (i, &d) in demand.iter().enumerate() {
        let avail = availability[i].iter().filter(|&&a| a != 0).count();
        if (avail as u64) < u64::from(d) {
            return Err(ForgeError::Solver(format!(
                "item {i} demands {d} but only {avail} sets cover it"
            )));
        }
    }

    let mut search = Search::new(costs, covers, demand);
    let (mut z, _) = greedy(&search, demand);
    let mut best = cover_cost(costs, &z);
    let mut fix = vec![Fix::Free; sets];
    search.optimize(&mut fix, &mut best, &mut z);

    // Walk the sets in order; a chosen set is kept out if some other cover
    // within the tie tolerance agrees with every decision made so far.
    let target = best + TIE_EPS;
    for j in 0..sets {
        if z[j] {
            fix[j] = Fix::Out;
            match search.find_within(&mut fix, target) {
                Some(alt) => z = alt,
                None => fix[j] = Fix::In,
            }
        } else {
            fix[j] = Fix::Out;
        }
    }
    Ok(z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

fn cover_cost(costs: &[f64], z: &[bool]) -> f64 {
    costs
        .iter()
        .zip(z)
        .filter(|(_, &b)| b)
        .map(|(c, _)| c)
        .sum()
}

/// Repeatedly take the set with the lowest cost per newly covered unit.
fn greedy(search: &Search<'_>, demand: &[u32]) -> (Vec<bool>, f64) {
    let sets = search.costs.len();
    let mut residual = demand.to_vec();
    let mut chosen = vec![false; sets];
    let mut cost = 0.0;
    while residual.iter().any(|&r| r > 0) {
        let mut pick = None;
        let mut pick_ratio = f64::INFINITY;
        for j in 0..sets {
            if chosen[j] {
                continue;
            }
            let gain = search.covers[j]
                .iter()
                .filter(|&&i| residual[i] > 0)
                .count();
            if gain == 0 {
                continue;
            }
            let ratio = search.costs[j] / gain as f64;
            if ratio < pick_ratio {
                pick_ratio = ratio;
                pick = Some(j);
            }
        }
        // Coverage was checked up front, so some set always helps.
        let j = pick.expect("feasible instance");
        chosen[j] = true;
        cost += search.costs[j];
        for &i in &search.covers[j] {
            residual[i] = residual[i].saturating_sub(1);
        }
    }
    (chosen, cost)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Fix {
    Free,
    In,
    Out,
}

struct Search<'a> {
    costs: &'a [f64],
    covers: Vec<Vec<usize>>,
    demand: &'a [u32],
    lp: Lp,
}

enum Relaxed {
    Infeasible,
    Solved { bound: f64, x: Vec<f64> },
}

impl<'a> Search<'a> {
    fn new(costs: &'a [f64], covers: Vec<Vec<usize>>, demand: &'a [u32]) -> Self {
        let lp = Lp::new(demand.len(), costs.len());
        Self {
            costs,
            covers,
            demand,
            lp,
        }
    }

    fn relax(&mut self, fix: &[Fix]) -> Relaxed {
        let (lo, up): (Vec<f64>, Vec<f64>) = fix
            .iter()
            .map(|f| match f {
                Fix::Free => (0.0, 1.0),
                Fix::In => (1.0, 1.0),
                Fix::Out => (0.0, 0.0),
            })
            .unzip();
        match self
            .lp
            .solve(self.costs, &self.covers, self.demand, &lo, &up)
        {
            Some((bound, x)) => Relaxed::Solved { bound, x },
            None => Relaxed::Infeasible,
        }
    }

    /// Most fractional free set, or `None` when the relaxation is integral.
    fn branch_var(x: &[f64], fix: &[Fix]) -> Option<usize> {
        let mut pick = None;
        let mut dist = 0.5 - INT_TOL;
        for (j, (&v, f)) in x.iter().zip(fix).enumerate() {
            if *f != Fix::Free {
                continue;
            }
            let d = (v - 0.5).abs();
            if d < dist {
                dist = d;
                pick = Some(j);
            }
        }
        pick
    }

    fn rounded(&self, x: &[f64]) -> Option<Vec<bool>> {
        let z: Vec<bool> = x.iter().map(|&v| v > 0.5).collect();
        let mut count = vec![0u32; self.demand.len()];
        for (j, _) in z.iter().enumerate().filter(|(_, &b)| b) {
            for &i in &self.covers[j] {
                count[i] += 1;
            }
        }
        count
            .iter()
            .zip(self.demand)
            .all(|(c, d)| c >= d)
            .then_some(z)
    }

    /// Depth-first search for a cover cheaper than `best` by more than the tie tolerance.
    fn optimize(&mut self, fix: &mut [Fix], best: &mut f64, z: &mut Vec<bool>) {
        let (bound, x) = match self.relax(fix) {
            Relaxed::Infeasible => return,
            Relaxed::Solved { bound, x } => (bound, x),
        };
        if bound >= *best - TIE_EPS {
            return;
        }
        match Self::branch_var(&x, fix) {
            None => {
                if let Some(cand) = self.rounded(&x) {
                    let cost = cover_cost(self.costs, &cand);
                    if cost < *best - TIE_EPS {
                        *best = cost;
                        *z = cand;
                    }
                }
            }
            Some(j) => {
                let order = if x[j] >= 0.5 {
                    [Fix::In, Fix::Out]
                } else {
                    [Fix::Out, Fix::In]
                };
                for f in order {
                    fix[j] = f;
                    self.optimize(fix, best, z);
                }
                fix[j] = Fix::Free;
            }
        }
    }

    /// Any cover consistent with `fix` costing at most `target`.
    fn find_within(&mut self, fix: &mut [Fix], target: f64) -> Option<Vec<bool>> {
        let (bound, x) = match self.relax(fix) {
            Relaxed::Infeasible => return None,
            Relaxed::Solved { bound, x } => (bound, x),
        };
        if bound > target + LP_SLACK {
            return None;
        }
        match Self::branch_var(&x, fix) {
            None => self
                .rounded(&x)
                .filter(|cand| cover_cost(self.costs, cand) <= target),
            Some(j) => {
                let order = if x[j] >= 0.5 {
                    [Fix::In, Fix::Out]
                } else {
                    [Fix::Out, Fix::In]
                };
                let mut found = None;
                for f in order {
                    fix[j] = f;
                    found = self.find_within(fix, target);
                    if found.is_some() {
                        break;
                    }
                }
                fix[j] = Fix::Free;
                found
            }
        }
    }
}

/// Dense bounded-variable primal simplex for
/// `min c.z  s.t.  A z - s = d,  lo <= z <= up,  s >= 0`.
///
/// Columns are the sets, then one surplus per row, then one artificial per
/// row used only in phase one.
struct Lp {
    rows: usize,
    sets: usize,
    tab: Vec<f64>,
    basis: Vec<usize>,
    x: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
}

impl Lp {
    fn new(rows: usize, sets: usize) -> Self {
        let n = sets + 2 * rows;
        Self {
            rows,
            sets,
            tab: vec![0.0; rows * n],
            basis: vec![0; rows],
            x: vec![0.0; n],
            lo: vec![0.0; n],
            up: vec![0.0; n],
            cost: vec![0.0; n],
        }
    }

    fn cols(&self) -> usize {
        self.sets + 2 * self.rows
    }

    fn solve(
        &mut self,
        costs: &[f64],
        covers: &[Vec<usize>],
        demand: &[u32],
        lo: &[f64],
        up: &[f64],
    ) -> Option<(f64, Vec<f64>)> {
        let (m, s, n) = (self.rows, self.sets, self.cols());
        self.tab.iter_mut().for_each(|v| *v = 0.0);
        for (j, cov) in covers.iter().enumerate() {
            for &i in cov {
                self.tab[i * n + j] = 1.0;
            }
        }
        for i in 0..m {
            self.tab[i * n + s + i] = -1.0;
            self.tab[i * n + s + m + i] = 1.0;
        }
        self.lo[..s].copy_from_slice(lo);
        self.up[..s].copy_from_slice(up);
        self.x[..s].copy_from_slice(lo);
        for k in s..n {
            self.lo[k] = 0.0;
            self.up[k] = f64::INFINITY;
            self.x[k] = 0.0;
        }
        for i in 0..m {
            let covered: f64 = (0..s).map(|j| self.tab[i * n + j] * self.x[j]).sum();
            let residual = f64::from(demand[i]) - covered;
            if residual >= 0.0 {
                self.basis[i] = s + m + i;
                self.x[s + m + i] = residual;
            } else {
                // Over-covered by fixed sets: the surplus starts basic.
                for v in &mut self.tab[i * n..(i + 1) * n] {
                    *v = -*v;
                }
                self.basis[i] = s + i;
                self.x[s + i] = -residual;
            }
        }

        self.cost.iter_mut().for_each(|v| *v = 0.0);
        for k in s + m..n {
            self.cost[k] = 1.0;
        }
        self.iterate();
        let infeas: f64 = self.x[s + m..].iter().sum();
        if infeas > 1e-7 {
            return None;
        }
        for k in s + m..n {
            self.up[k] = 0.0;
            self.x[k] = 0.0;
        }
        self.cost.iter_mut().for_each(|v| *v = 0.0);
        self.cost[..s].copy_from_slice(costs);
        self.iterate();
        let obj = costs.iter().zip(&self.x[..s]).map(|(c, v)| c * v).sum();
        Some((obj, self.x[..s].to_vec()))
    }

    fn iterate(&mut self) {
        let (m, n) = (self.rows, self.cols());
        let mut dual = vec![0.0; m];
        // Dantzig pricing, switching to Bland's rule if it stalls.
        let bland_after = 50 * (m + 1);
        for iter in 0..100 * (n + m) {
            for (i, d) in dual.iter_mut().enumerate() {
                *d = self.cost[self.basis[i]];
            }
            let mut enter = None;
            let mut best = PIVOT_TOL;
            for j in 0..n {
                if self.up[j] - self.lo[j] <= 0.0 || self.basis.contains(&j) {
                    continue;
                }
                let reduced =
                    self.cost[j] - (0..m).map(|i| dual[i] * self.tab[i * n + j]).sum::<f64>();
                let at_lower = self.x[j] <= self.lo[j];
                let gain = if at_lower { -reduced } else { reduced };
                if gain > best {
                    best = gain;
                    enter = Some((j, at_lower));
                    if iter >= bland_after {
                        break;
                    }
                }
            }
            let Some((j, increase)) = enter else { return };
            let dir = if increase { 1.0 } else { -1.0 };

            let mut step = self.up[j] - self.lo[j];
            let mut leave = None;
            for i in 0..m {
                let alpha = self.tab[i * n + j] * dir;
                let b = self.basis[i];
                let limit = if alpha > PIVOT_TOL {
                    (self.x[b] - self.lo[b]) / alpha
                } else if alpha < -PIVOT_TOL && self.up[b].is_finite() {
                    (self.up[b] - self.x[b]) / -alpha
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                if limit < step {
                    step = limit;
                    leave = Some((i, alpha > 0.0));
                }
            }
            if !step.is_finite() {
                // Unbounded cannot happen with non-negative costs; stop defensively.
                return;
            }
            self.x[j] += dir * step;
            for i in 0..m {
                let b = self.basis[i];
                self.x[b] -= self.tab[i * n + j] * dir * step;
            }
            let Some((r, to_lower)) = leave else {
                // Bound flip.
                self.x[j] = if increase { self.up[j] } else { self.lo[j] };
                continue;
            };
            let out = self.basis[r];
            self.x[out] = if to_lower { self.lo[out] } else { self.up[out] };
            let piv = self.tab[r * n + j];
            for v in &mut self.tab[r * n..(r + 1) * n] {
                *v /= piv;
            }
            for i in 0..m {
                if i == r {
                    continue;
                }
                let f = self.tab[i * n + j];
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    self.tab[i * n + k] -= f * self.tab[r * n + k];
                }
            }
            self.basis[r] = j;
        }
    }
}
