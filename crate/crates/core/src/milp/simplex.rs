//! Dense bounded-variable dual simplex.
//!
//! Rows are brought to equality form `a·x + s = b` with one slack per row
//! (`s >= 0` for `<=`, `s <= 0` for `>=`, `s = 0` for `=`). Since every
//! structural variable is boxed, the all-slack basis is dual feasible once
//! each structural sits at the bound matching the sign of its cost, so no
//! phase one is needed. Bound changes never disturb dual feasibility, which
//! is what branch-and-bound relies on when it re-solves children from the
//! parent's tableau.

use super::lp::{LpInstance, Relation, Sense};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_LIMIT: usize = 1000;
const REFACTOR_EVERY: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColState {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    NumericTrouble(String),
    /// The deadline passed mid-solve; the basis is left as is.
    TimedOut,
}

#[derive(Debug, Clone)]
pub(crate) struct DualSimplex {
    m: usize,
    n: usize,
    width: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    tab: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    dirty: bool,
    since_refactor: usize,
    degenerate_run: usize,
    bland: bool,
    max_pivots: usize,
    pub deadline: Option<std::time::Instant>,
    pub pivots: usize,
    pub refactors: usize,
}

impl DualSimplex {
    pub fn new(inst: &LpInstance) -> Self {
        let m = inst.rows.len();
        let n = inst.num_vars();
        let width = n + m;
        let flip = if inst.sense == Sense::Maximize { -1.0 } else { 1.0 };

        let mut cost = vec![0.0; width];
        for (j, c) in inst.objective.iter().enumerate() {
            cost[j] = flip * c;
        }
        let mut lo = vec![0.0; width];
        let mut hi = vec![0.0; width];
        lo[..n].copy_from_slice(&inst.lower);
        hi[..n].copy_from_slice(&inst.upper);

        let mut rows = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for (r, row) in inst.rows.iter().enumerate() {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
            let mut sorted = row.coeffs.clone();
            sorted.sort_by_key(|&(j, _)| j);
            for (j, a) in sorted {
                match merged.last_mut() {
                    Some((k, v)) if *k == j => *v += a,
                    _ => merged.push((j, a)),
                }
            }
            merged.retain(|&(_, a)| a != 0.0);
            rows.push(merged);
            rhs.push(row.rhs);
            let (sl, sh) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo[n + r] = sl;
            hi[n + r] = sh;
        }

        let mut engine = Self {
            m,
            n,
            width,
            rows,
            rhs,
            cost,
            tab: Vec::new(),
            basis: Vec::new(),
            state: vec![ColState::AtLower; width],
            lo,
            hi,
            x: vec![0.0; width],
            dirty: true,
            since_refactor: 0,
            degenerate_run: 0,
            bland: false,
            max_pivots: 50_000 + 50 * width,
            deadline: None,
            pivots: 0,
            refactors: 0,
        };
        engine.reset_to_slack_basis();
        engine
    }

    /// Discards the current basis and restarts from the all-slack basis.
    pub fn reset_to_slack_basis(&mut self) {
        let (m, w) = (self.m, self.width);
        self.tab = vec![0.0; (m + 1) * w];
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                self.tab[r * w + j] = a;
            }
            self.tab[r * w + self.n + r] = 1.0;
        }
        self.tab[m * w..].copy_from_slice(&self.cost);
        self.basis = (0..m).map(|r| self.n + r).collect();
        for j in 0..w {
            self.state[j] = if j >= self.n {
                ColState::Basic
            } else {
                ColState::AtLower
            };
        }
        for j in 0..self.n {
            self.place(j);
        }
        self.dirty = true;
        self.since_refactor = 0;
        self.degenerate_run = 0;
        self.bland = false;
    }

    pub fn structural_bounds(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.hi[j])
    }

    /// Changes the bounds of structural variable `j`; keeps dual feasibility.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        debug_assert!(j < self.n);
        if self.lo[j] == lo && self.hi[j] == hi {
            return;
        }
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.state[j] != ColState::Basic {
            self.place(j);
        }
        self.dirty = true;
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        self.tab[self.m * self.width + j]
    }

    /// Puts a nonbasic column at the bound its reduced cost calls for.
    fn place(&mut self, j: usize) {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        let d = self.reduced_cost(j);
        let st = if lo == hi || hi == f64::INFINITY {
            ColState::AtLower
        } else if lo == f64::NEG_INFINITY {
            ColState::AtUpper
        } else if d > DUAL_TOL {
            ColState::AtLower
        } else if d < -DUAL_TOL {
            ColState::AtUpper
        } else if self.state[j] == ColState::AtUpper {
            ColState::AtUpper
        } else {
            ColState::AtLower
        };
        self.state[j] = st;
        self.x[j] = if st == ColState::AtLower { lo } else { hi };
    }

    fn recompute_basics(&mut self) {
        let (m, n, w) = (self.m, self.n, self.width);
        let mut v = self.rhs.clone();
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                if self.state[j] != ColState::Basic {
                    v[r] -= a * self.x[j];
                }
            }
            if self.state[n + r] != ColState::Basic {
                v[r] -= self.x[n + r];
            }
        }
        for i in 0..m {
            let row = &self.tab[i * w + n..i * w + n + m];
            let val: f64 = row.iter().zip(&v).map(|(b, vk)| b * vk).sum();
            self.x[self.basis[i]] = val;
        }
        self.dirty = false;
    }

    pub fn structural_values(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    /// Row multipliers signed for the instance's own sense.
    pub fn row_duals(&self, sense: Sense) -> Vec<f64> {
        let flip = if sense == Sense::Maximize { -1.0 } else { 1.0 };
        (0..self.m)
            .map(|r| -flip * self.reduced_cost(self.n + r))
            .collect()
    }

    fn max_residual(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for (r, row) in self.rows.iter().enumerate() {
            let act: f64 = row.iter().map(|&(j, a)| a * self.x[j]).sum();
            let res = (act + self.x[n + r] - self.rhs[r]).abs() / (1.0 + self.rhs[r].abs());
            worst = worst.max(res);
        }
        worst
    }

    fn infeasibility(&self, col: usize) -> f64 {
        let v = self.x[col];
        if v < self.lo[col] - PRIMAL_TOL {
            self.lo[col] - v
        } else if v > self.hi[col] + PRIMAL_TOL {
            v - self.hi[col]
        } else {
            0.0
        }
    }

    fn choose_leaving(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.m {
            let inf = self.infeasibility(self.basis[r]);
            if inf <= 0.0 {
                continue;
            }
            best = match best {
                None => Some((r, inf)),
                Some((br, bv)) => {
                    let better = if self.bland {
                        self.basis[r] < self.basis[br]
                    } else {
                        inf > bv
                    };
                    if better {
                        Some((r, inf))
                    } else {
                        Some((br, bv))
                    }
                }
            };
        }
        best.map(|(r, _)| r)
    }

    /// Dual ratio test on row `r`; returns the entering column and its ratio.
    fn choose_entering(&self, r: usize) -> Option<(usize, f64)> {
        let w = self.width;
        let leaving = self.basis[r];
        let increase = self.x[leaving] < self.lo[leaving];
        let row = &self.tab[r * w..(r + 1) * w];
        let d = &self.tab[self.m * w..];

        let eligible = |j: usize| -> Option<(f64, f64)> {
            let st = self.state[j];
            if st == ColState::Basic || self.lo[j] == self.hi[j] {
                return None;
            }
            let a = row[j];
            if a.abs() <= PIVOT_TOL {
                return None;
            }
            let ok = match st {
                ColState::AtLower => (increase && a < 0.0) || (!increase && a > 0.0),
                ColState::AtUpper => (increase && a > 0.0) || (!increase && a < 0.0),
                ColState::Basic => false,
            };
            if !ok {
                return None;
            }
            let slack = match st {
                ColState::AtLower => d[j].max(0.0),
                _ => (-d[j]).max(0.0),
            };
            Some((slack, a.abs()))
        };

        if self.bland {
            let mut min_ratio = f64::INFINITY;
            for j in 0..w {
                if let Some((s, a)) = eligible(j) {
                    min_ratio = min_ratio.min(s / a);
                }
            }
            if !min_ratio.is_finite() {
                return None;
            }
            return (0..w).find_map(|j| {
                eligible(j)
                    .filter(|&(s, a)| s / a <= min_ratio + 1e-12)
                    .map(|(s, a)| (j, s / a))
            });
        }

        // Harris two-pass: relaxed bound first, then the largest pivot under it.
        let mut bound = f64::INFINITY;
        for j in 0..w {
            if let Some((s, a)) = eligible(j) {
                bound = bound.min((s + DUAL_TOL) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut pick: Option<(usize, f64, f64)> = None;
        for j in 0..w {
            if let Some((s, a)) = eligible(j) {
                if s / a <= bound && pick.is_none_or(|(_, _, pa)| a > pa) {
                    pick = Some((j, s / a, a));
                }
            }
        }
        pick.map(|(j, ratio, _)| (j, ratio))
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let (m, w) = (self.m, self.width);
        let alpha = self.tab[r * w + q];
        let leaving = self.basis[r];
        let target = if self.x[leaving] < self.lo[leaving] {
            self.lo[leaving]
        } else {
            self.hi[leaving]
        };
        let delta = (self.x[leaving] - target) / alpha;
        for i in 0..m {
            let a = self.tab[i * w + q];
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= a * delta;
            }
        }
        self.x[q] += delta;
        self.x[leaving] = target;
        self.state[leaving] = if target == self.lo[leaving] {
            ColState::AtLower
        } else {
            ColState::AtUpper
        };
        self.state[q] = ColState::Basic;
        self.basis[r] = q;

        let inv = 1.0 / alpha;
        let mut nz = Vec::with_capacity(w);
        for j in 0..w {
            let v = self.tab[r * w + j];
            if v != 0.0 {
                self.tab[r * w + j] = v * inv;
                nz.push(j);
            }
        }
        self.tab[r * w + q] = 1.0;
        let (before, rest) = self.tab.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for chunk in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = chunk[q];
            if f == 0.0 {
                continue;
            }
            for &j in &nz {
                chunk[j] -= f * prow[j];
            }
            chunk[q] = 0.0;
        }
        self.pivots += 1;
        self.since_refactor += 1;
    }

    /// Rebuilds the tableau for the current basis from the raw rows.
    fn refactor(&mut self) -> Result<(), String> {
        let (m, n, w) = (self.m, self.n, self.width);
        let ww = w + 1;
        let mut work = vec![0.0; (m + 1) * ww];
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                work[r * ww + j] = a;
            }
            work[r * ww + n + r] = 1.0;
            let mut v = self.rhs[r];
            for &(j, a) in row {
                if self.state[j] != ColState::Basic {
                    v -= a * self.x[j];
                }
            }
            if self.state[n + r] != ColState::Basic {
                v -= self.x[n + r];
            }
            work[r * ww + w] = v;
        }
        work[m * ww..m * ww + w].copy_from_slice(&self.cost);

        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        let old_basis = self.basis.clone();
        for &col in &old_basis {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if assigned[i] {
                    continue;
                }
                let v = work[i * ww + col].abs();
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((i, v));
                }
            }
            let (pr, pv) = best.ok_or("basis larger than row count")?;
            if pv < 1e-11 {
                return Err(format!("basis matrix is singular (column {col}, pivot {pv:.2e})"));
            }
            let inv = 1.0 / work[pr * ww + col];
            for j in 0..ww {
                work[pr * ww + j] *= inv;
            }
            for i in 0..=m {
                if i == pr {
                    continue;
                }
                let f = work[i * ww + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..ww {
                    work[i * ww + j] -= f * work[pr * ww + j];
                }
                work[i * ww + col] = 0.0;
            }
            assigned[pr] = true;
            new_basis[pr] = col;
        }

        for i in 0..=m {
            self.tab[i * w..(i + 1) * w].copy_from_slice(&work[i * ww..i * ww + w]);
        }
        for i in 0..m {
            self.x[new_basis[i]] = work[i * ww + w];
        }
        self.basis = new_basis;
        self.since_refactor = 0;
        self.refactors += 1;
        Ok(())
    }

    pub fn solve(&mut self) -> Outcome {
        if self.dirty {
            self.recompute_basics();
        }
        self.degenerate_run = 0;
        self.bland = false;
        let mut rechecks = 0;
        let budget = self.pivots + self.max_pivots;
        loop {
            if self.pivots >= budget {
                return Outcome::NumericTrouble(format!(
                    "pivot limit reached ({} rows, {} columns)",
                    self.m, self.width
                ));
            }
            if self.pivots % 32 == 0 && self.deadline.is_some_and(|d| std::time::Instant::now() >= d) {
                return Outcome::TimedOut;
            }
            if self.since_refactor >= REFACTOR_EVERY {
                if let Err(e) = self.refactor() {
                    return Outcome::NumericTrouble(e);
                }
            }
            let Some(r) = self.choose_leaving() else {
                let residual = self.max_residual();
                if residual > 1e-9 && rechecks < 3 {
                    rechecks += 1;
                    if let Err(e) = self.refactor() {
                        return Outcome::NumericTrouble(e);
                    }
                    continue;
                }
                if residual > 1e-6 {
                    return Outcome::NumericTrouble(format!(
                        "row residual {residual:.2e} after refactorization"
                    ));
                }
                return Outcome::Optimal;
            };
            let Some((q, ratio)) = self.choose_entering(r) else {
                if self.since_refactor > 0 && rechecks < 3 {
                    rechecks += 1;
                    if let Err(e) = self.refactor() {
                        return Outcome::NumericTrouble(e);
                    }
                    continue;
                }
                return Outcome::Infeasible;
            };
            if ratio <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > DEGENERATE_LIMIT {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            self.pivot(r, q);
        }
    }
}
