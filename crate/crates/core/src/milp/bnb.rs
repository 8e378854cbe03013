//! LP-based branch-and-bound for mixed-binary programs.
//!
//! Nodes are plunged depth first into the child that agrees with the
//! rounded LP value; when a plunge ends, the search restarts from the open
//! node with the best bound. All nodes share one simplex tableau, so moving
//! between nodes is a bound reset followed by dual simplex pivots.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::lp::{LpInstance, Sense};
use super::simplex::{DualSimplex, Outcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpInstance {
    pub lp: LpInstance,
    /// Indices of variables restricted to {0, 1}.
    pub binaries: Vec<usize>,
}

impl MilpInstance {
    pub fn new(lp: LpInstance, binaries: Vec<usize>) -> Self {
        Self { lp, binaries }
    }

    pub fn validate(&self) -> Result<()> {
        self.lp.validate()?;
        let n = self.lp.num_vars();
        for &b in &self.binaries {
            if b >= n {
                return Err(Error::Dimension(format!(
                    "binary index {b} out of range for {n} variables"
                )));
            }
            let (lo, hi) = (self.lp.lower[b], self.lp.upper[b]);
            let ok = |v: f64| v == 0.0 || v == 1.0;
            if !ok(lo) || !ok(hi) {
                return Err(Error::InvalidArgument(format!(
                    "binary variable {b} has bounds [{lo}, {hi}], expected within {{0, 1}}"
                )));
            }
        }
        Ok(())
    }

    /// Checks `x` against the raw rows, bounds and integrality. Independent of
    /// any solver state.
    pub fn check(&self, x: &[f64], feas_tol: f64, int_tol: f64) -> std::result::Result<(), String> {
        if x.len() != self.lp.num_vars() {
            return Err(format!(
                "solution has {} entries, instance has {} variables",
                x.len(),
                self.lp.num_vars()
            ));
        }
        for (j, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(format!("variable {j} is not finite"));
            }
        }
        let viol = self.lp.max_violation(x);
        if viol > feas_tol {
            return Err(format!("constraint violation {viol:.3e} exceeds {feas_tol:.1e}"));
        }
        for &b in &self.binaries {
            let frac = (x[b] - x[b].round()).abs();
            if frac > int_tol {
                return Err(format!("binary {b} has fractional value {}", x[b]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MilpLimits {
    /// Relative gap `(bound - incumbent) / max(1, |incumbent|)` accepted as optimal.
    pub gap_tol: f64,
    /// Absolute pruning slack; nodes must beat the incumbent by more than this.
    pub abs_gap_tol: f64,
    pub int_tol: f64,
    pub feas_tol: f64,
    pub node_limit: Option<usize>,
    pub time_limit_secs: Option<f64>,
}

impl Default for MilpLimits {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            abs_gap_tol: 1e-9,
            int_tol: 1e-6,
            feas_tol: 1e-7,
            node_limit: None,
            time_limit_secs: None,
        }
    }
}

impl MilpLimits {
    fn prune_slack(&self, incumbent: f64) -> f64 {
        self.abs_gap_tol.max(self.gap_tol * incumbent.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub lp_pivots: usize,
    pub refactors: usize,
    pub duality_checks: usize,
    /// Largest relative primal/dual objective gap seen over node LPs.
    pub max_duality_gap: f64,
    /// Children whose LP bound exceeded their parent's.
    pub bound_violations: usize,
    pub numeric_failures: usize,
    pub incumbent_updates: usize,
    pub heuristic_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub incumbent: Option<Vec<f64>>,
    /// Objective of the incumbent in the instance's sense (NaN when absent).
    pub objective: f64,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub stats: SearchStats,
}

impl MilpSolution {
    pub fn has_incumbent(&self) -> bool {
        self.incumbent.is_some()
    }
}

struct Node {
    id: usize,
    fixings: Vec<(usize, f64)>,
    /// Parent LP value in maximization form.
    bound: f64,
}

/// Proposes an integer-feasible point from a node's LP solution. Proposals are
/// re-verified against the raw instance before they are accepted.
pub type Heuristic<'a> = Box<dyn FnMut(&[f64]) -> Option<Vec<f64>> + 'a>;

pub struct BranchAndBound<'a> {
    inst: &'a MilpInstance,
    limits: MilpLimits,
    start: Option<Vec<f64>>,
    heuristic: Option<Heuristic<'a>>,
}

pub fn solve_milp(inst: &MilpInstance, limits: &MilpLimits) -> Result<MilpSolution> {
    BranchAndBound::new(inst, limits.clone()).solve()
}

impl<'a> BranchAndBound<'a> {
    pub fn new(inst: &'a MilpInstance, limits: MilpLimits) -> Self {
        Self {
            inst,
            limits,
            start: None,
            heuristic: None,
        }
    }

    /// Seeds the search with a known solution; ignored if it fails the check.
    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn with_heuristic(mut self, heuristic: Heuristic<'a>) -> Self {
        self.heuristic = Some(heuristic);
        self
    }

    pub fn solve(mut self) -> Result<MilpSolution> {
        let inst = self.inst;
        inst.validate()?;
        let lp = &inst.lp;
        let limits = self.limits.clone();
        let sign = if lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
        let started = Instant::now();
        let deadline = limits
            .time_limit_secs
            .map(|s| started + Duration::from_secs_f64(s.max(0.0)));

        let mut stats = SearchStats::default();
        let mut incumbent: Option<(Vec<f64>, f64)> = None;

        let offer = |x: Vec<f64>, stats: &mut SearchStats, inc: &mut Option<(Vec<f64>, f64)>| -> bool {
            if inst.check(&x, limits.feas_tol, limits.int_tol).is_err() {
                return false;
            }
            let value = sign * lp.objective_value(&x);
            let better = match inc {
                None => true,
                Some((_, v)) => value > *v + limits.abs_gap_tol,
            };
            if better {
                *inc = Some((x, value));
                stats.incumbent_updates += 1;
            }
            better
        };

        if let Some(start) = self.start.take() {
            if !offer(start, &mut stats, &mut incumbent) {
                log::debug!("warm start rejected by the feasibility check");
            }
        }

        let mut engine = DualSimplex::new(lp);
        engine.deadline = deadline;
        let mut open: Vec<Node> = vec![Node {
            id: 0,
            fixings: Vec::new(),
            bound: f64::INFINITY,
        }];
        let mut next_id = 1usize;
        let mut current: Option<Node> = None;
        let mut nodes = 0usize;
        let mut unresolved = f64::NEG_INFINITY;
        let mut stopped: Option<MilpStatus> = None;

        loop {
            let node = match current.take() {
                Some(n) => n,
                None => match pop_best(&mut open) {
                    Some(n) => n,
                    None => break,
                },
            };
            let inc_value = incumbent.as_ref().map(|(_, v)| *v);
            if let Some(v) = inc_value {
                if node.bound <= v + limits.prune_slack(v) {
                    continue;
                }
            }
            if limits.node_limit.is_some_and(|lim| nodes >= lim) {
                stopped = Some(MilpStatus::NodeLimit);
                open.push(node);
                break;
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                stopped = Some(MilpStatus::TimeLimit);
                open.push(node);
                break;
            }
            nodes += 1;

            apply_fixings(&mut engine, inst, &node.fixings);
            let mut outcome = engine.solve();
            if let Outcome::NumericTrouble(reason) = &outcome {
                log::debug!("node {} numeric trouble ({reason}); restarting basis", node.id);
                engine.reset_to_slack_basis();
                apply_fixings(&mut engine, inst, &node.fixings);
                outcome = engine.solve();
            }
            match outcome {
                Outcome::TimedOut => {
                    nodes -= 1;
                    stopped = Some(MilpStatus::TimeLimit);
                    open.push(node);
                    break;
                }
                Outcome::Infeasible => continue,
                Outcome::NumericTrouble(reason) => {
                    log::warn!("node {} abandoned: {reason}", node.id);
                    stats.numeric_failures += 1;
                    unresolved = unresolved.max(node.bound);
                    engine.reset_to_slack_basis();
                    continue;
                }
                Outcome::Optimal => {}
            }

            let x = engine.structural_values();
            let value = sign * lp.objective_value(&x);

            let (node_lo, node_hi): (Vec<f64>, Vec<f64>) = (0..lp.num_vars())
                .map(|j| engine.structural_bounds(j))
                .unzip();
            let duals = engine.row_duals(lp.sense);
            let dual = sign * lp.lagrangian_bound(&duals, &node_lo, &node_hi);
            stats.duality_checks += 1;
            let dgap = (value - dual).abs() / (1.0 + value.abs());
            stats.max_duality_gap = stats.max_duality_gap.max(dgap);
            if value > node.bound + 1e-7 * (1.0 + node.bound.abs()) {
                stats.bound_violations += 1;
            }

            if let Some((_, v)) = &incumbent {
                if value <= *v + limits.prune_slack(*v) {
                    continue;
                }
            }

            if let Some(h) = self.heuristic.as_mut() {
                if let Some(candidate) = h(&x) {
                    if offer(candidate, &mut stats, &mut incumbent) {
                        stats.heuristic_hits += 1;
                    }
                }
            }

            let mut branch: Option<(usize, f64)> = None;
            for &b in &inst.binaries {
                let frac = x[b].min(1.0 - x[b]);
                if frac > limits.int_tol && branch.is_none_or(|(_, f)| frac > f + 1e-12) {
                    branch = Some((b, frac));
                }
            }

            match branch {
                None => {
                    // Integral relaxation: pin the binaries and re-solve the continuous part
                    // so big-M rows hold exactly rather than up to the rounding error.
                    let mut pinned = node.fixings.clone();
                    pinned.extend(inst.binaries.iter().map(|&b| (b, x[b].round())));
                    apply_fixings(&mut engine, inst, &pinned);
                    if engine.solve() == Outcome::Optimal {
                        let mut xr = engine.structural_values();
                        for &b in &inst.binaries {
                            xr[b] = xr[b].round();
                        }
                        offer(xr, &mut stats, &mut incumbent);
                    }
                }
                Some((b, _)) => {
                    let up_first = x[b] >= 0.5;
                    let mut child = |v: f64| {
                        let mut fixings = node.fixings.clone();
                        fixings.push((b, v));
                        let id = next_id;
                        next_id += 1;
                        Node {
                            id,
                            fixings,
                            bound: value,
                        }
                    };
                    let (first, second) = if up_first {
                        (child(1.0), child(0.0))
                    } else {
                        (child(0.0), child(1.0))
                    };
                    open.push(second);
                    current = Some(first);
                }
            }
        }

        stats.lp_pivots = engine.pivots;
        stats.refactors = engine.refactors;

        let inc_value = incumbent.as_ref().map(|(_, v)| *v);
        let mut bound = open
            .iter()
            .map(|n| n.bound)
            .chain(current.iter().map(|n| n.bound))
            .filter(|b| inc_value.is_none_or(|v| *b > v + limits.prune_slack(v)))
            .fold(unresolved, f64::max);
        if let Some(v) = inc_value {
            bound = bound.max(v);
        }
        let gap = match inc_value {
            Some(v) => ((bound - v) / v.abs().max(1.0)).max(0.0),
            None => f64::INFINITY,
        };
        let status = match (stopped, &incumbent) {
            (Some(s), _) => s,
            (None, None) if bound == f64::NEG_INFINITY => MilpStatus::Infeasible,
            (None, None) => MilpStatus::NodeLimit,
            (None, Some(_)) if gap <= limits.gap_tol => MilpStatus::Optimal,
            (None, Some(_)) => MilpStatus::NodeLimit,
        };
        let (x, objective) = match incumbent {
            Some((x, v)) => (Some(x), sign * v),
            None => (None, f64::NAN),
        };
        Ok(MilpSolution {
            status,
            incumbent: x,
            objective,
            best_bound: sign * bound,
            gap,
            nodes,
            stats,
        })
    }
}

fn pop_best(open: &mut Vec<Node>) -> Option<Node> {
    let mut best: Option<usize> = None;
    for (k, n) in open.iter().enumerate() {
        best = match best {
            None => Some(k),
            Some(b) => {
                let o = &open[b];
                if n.bound > o.bound || (n.bound == o.bound && n.id < o.id) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.map(|k| open.swap_remove(k))
}

fn apply_fixings(engine: &mut DualSimplex, inst: &MilpInstance, fixings: &[(usize, f64)]) {
    for &b in &inst.binaries {
        engine.set_bounds(b, inst.lp.lower[b], inst.lp.upper[b]);
    }
    for &(b, v) in fixings {
        engine.set_bounds(b, v, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::lp::Relation;

    fn knapsack() -> MilpInstance {
        let mut lp = LpInstance::new(Sense::Maximize, vec![3.0, 2.0], vec![0.0; 2], vec![1.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
        MilpInstance::new(lp, vec![0, 1])
    }

    #[test]
    fn tiny_knapsack() {
        let sol = solve_milp(&knapsack(), &MilpLimits::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        let x = sol.incumbent.unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn infeasible_binary_cover() {
        let mut lp = LpInstance::new(Sense::Maximize, vec![1.0, 1.0], vec![0.0; 2], vec![1.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 3.0);
        let sol = solve_milp(&MilpInstance::new(lp, vec![0, 1]), &MilpLimits::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
        assert!(sol.incumbent.is_none());
    }

    #[test]
    fn rejects_non_binary_bounds() {
        let lp = LpInstance::new(Sense::Maximize, vec![1.0], vec![0.0], vec![2.0]);
        assert!(solve_milp(&MilpInstance::new(lp, vec![0]), &MilpLimits::default()).is_err());
    }

    #[test]
    fn node_limit_reports_honest_status() {
        // Fractional root forces branching; a one-node budget cannot finish.
        let mut lp = LpInstance::new(Sense::Maximize, vec![5.0, 4.0, 3.0], vec![0.0; 3], vec![1.0; 3]);
        lp.add_row(vec![(0, 2.0), (1, 3.0), (2, 1.0)], Relation::Le, 3.5);
        let inst = MilpInstance::new(lp, vec![0, 1, 2]);
        let limits = MilpLimits {
            node_limit: Some(1),
            ..MilpLimits::default()
        };
        let sol = solve_milp(&inst, &limits).unwrap();
        assert_eq!(sol.status, MilpStatus::NodeLimit);
        assert!(sol.best_bound >= 8.0 - 1e-9);
        let full = solve_milp(&inst, &MilpLimits::default()).unwrap();
        assert_eq!(full.status, MilpStatus::Optimal);
        assert!((full.objective - 8.0).abs() < 1e-9);
    }

    #[test]
    fn warm_start_is_verified() {
        let inst = knapsack();
        let bad = vec![1.0, 1.0];
        let sol = BranchAndBound::new(&inst, MilpLimits::default())
            .with_start(bad)
            .solve()
            .unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-9);
        let good = vec![1.0, 0.0];
        let sol = BranchAndBound::new(&inst, MilpLimits::default())
            .with_start(good)
            .solve()
            .unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
    }
}
