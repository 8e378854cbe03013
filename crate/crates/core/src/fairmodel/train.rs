//! Dinkelbach outer loop over the mixed-binary subproblems.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::build::{build_subproblem, encode_policy, fairness_groups, Layout, Subproblem};
use super::heuristic::{Goal, ThresholdSearch};
use super::measure::{strict_check, StrictCheck};
use super::sample::{FinalSample, PolicyParams, StagePolicy};
use crate::dataset::{SelectionSpec, StagePanel};
use crate::error::{Error, Result};
use crate::milp::{solve_lp, BranchAndBound, LpInstance, LpStatus, MilpLimits, MilpStatus, Relation, Sense};
use crate::propensity::WeightSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub milp: MilpLimits,
    /// Stop once the subproblem value is at most this.
    pub dink_tol: f64,
    pub max_iter: usize,
    /// Wall-clock budget for the whole loop, shared across subproblems.
    pub time_limit_secs: Option<f64>,
    /// Threshold search for starting points and node incumbents.
    pub heuristic: bool,
    /// Re-centre the final rule by maximizing its smallest score margin.
    pub polish: bool,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            milp: MilpLimits::default(),
            dink_tol: 1e-7,
            max_iter: 30,
            time_limit_secs: None,
            heuristic: true,
            polish: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    /// Every subproblem closed its gap and the last value is within tolerance.
    Optimal,
    /// A time or node limit stopped some subproblem; the policy is feasible
    /// but optimality is not certified.
    LimitReached,
    /// The ratio failed to increase although the subproblem value was positive.
    NumericFailure,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub rho: f64,
    pub z: f64,
    pub best_bound: f64,
    pub nodes: usize,
    pub status: MilpStatus,
    pub secs: f64,
}

/// Slack of each aggregate row at the returned binaries, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    pub upper: Vec<f64>,
    pub lower: f64,
    pub fairness: [f64; 2],
    /// Smallest slack of a linking row relative to its constant.
    pub linking_min_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<Iterate>,
    pub status: TrainStatus,
    pub proven_optimal: bool,
    /// Weighted precision of the final binaries.
    pub ratio: f64,
    pub initial_ratio: f64,
    pub strict: StrictCheck,
    pub big_m: f64,
    /// Some linking row sits within `1e-6 * M` of its constant.
    pub big_m_binding: bool,
    pub polish_margin: Option<f64>,
    pub polish_fallback: bool,
    pub bindings: Bindings,
    pub total_nodes: usize,
    pub elapsed_secs: f64,
    pub notes: Vec<String>,
}

impl TrainReport {
    pub fn precision(&self) -> f64 {
        self.strict.precision
    }

    pub fn final_z(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |it| it.z)
    }
}

/// Weighted numerator and denominator of the final-stage binaries.
fn ratio_parts(layout: &Layout, sample: &FinalSample, x: &[f64]) -> (f64, f64) {
    let t_max = layout.n_stages;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..layout.n {
        if x[layout.g(t_max, k)] > 0.5 {
            let b = sample.beta[k][t_max - 1];
            den += b;
            if sample.y[k] {
                num += b;
            }
        }
    }
    (num, den)
}

fn ratio_of(layout: &Layout, sample: &FinalSample, x: &[f64]) -> f64 {
    let (num, den) = ratio_parts(layout, sample, x);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn train(
    panel: &StagePanel,
    weights: &WeightSet,
    spec: &SelectionSpec,
    opts: &TrainOptions,
) -> Result<(PolicyParams, TrainReport)> {
    let sample = FinalSample::from_panel(panel, weights)?;
    train_sample(&sample, spec, opts, None)
}

/// Trains on a prepared sample. `warm_start`, when feasible for these bounds,
/// seeds the first ratio guess.
pub fn train_sample(
    sample: &FinalSample,
    spec: &SelectionSpec,
    opts: &TrainOptions,
    warm_start: Option<&PolicyParams>,
) -> Result<(PolicyParams, TrainReport)> {
    let started = Instant::now();
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let groups = fairness_groups(sample, spec.notion)?;
    let base = build_subproblem(sample, spec, 0.0)?;
    let layout = base.layout.clone();
    let limits = &opts.milp;
    let mut notes = Vec::new();

    let search = ThresholdSearch::new(sample, spec, &groups);
    let feasible = |p: &PolicyParams| -> Option<Vec<f64>> {
        let x = encode_policy(&layout, sample, spec, p)?;
        base.milp.check(&x, limits.feas_tol, limits.int_tol).ok()?;
        Some(x)
    };

    let mut start: Option<(Vec<f64>, f64)> = None;
    let consider = |x: Vec<f64>, start: &mut Option<(Vec<f64>, f64)>| {
        let r = ratio_of(&layout, sample, &x);
        if start.as_ref().is_none_or(|(_, best)| r > *best) {
            *start = Some((x, r));
        }
    };
    if opts.heuristic {
        let dirs = search.base_directions(opts.seed);
        if let Some(found) = search.search(&dirs, Goal::Ratio) {
            match feasible(&found.policy) {
                Some(x) => consider(x, &mut start),
                None => notes.push("threshold search produced a policy that failed the row check".into()),
            }
        }
    }
    if let Some(p) = warm_start {
        if p.check_dims(&sample.dims).is_ok() {
            match feasible(p) {
                Some(x) => consider(x, &mut start),
                None => notes.push("warm-start policy is infeasible for this selection spec; ignored".into()),
            }
        }
    }
    // Without a feasible start the first subproblem maximizes positive mass.
    let (mut incumbent, mut rho) = match start {
        Some((x, r)) => (Some(x), r),
        None => (None, 0.0),
    };
    let initial_ratio = rho;

    let deadline = opts.time_limit_secs.map(|s| started + std::time::Duration::from_secs_f64(s.max(0.0)));
    let mut iterations: Vec<Iterate> = Vec::new();
    let mut status = TrainStatus::IterationLimit;
    let mut any_limit = false;
    let mut total_nodes = 0;
    let mut last_sub: Option<Subproblem> = None;

    for k in 0..opts.max_iter {
        let sub = build_subproblem(sample, spec, rho)?;
        let mut iter_limits = limits.clone();
        if let Some(d) = deadline {
            let left = d.saturating_duration_since(Instant::now()).as_secs_f64();
            iter_limits.time_limit_secs = Some(iter_limits.time_limit_secs.map_or(left, |t| t.min(left)));
            if left <= 0.0 {
                // Out of time: still evaluate the root so the last ratio is scored.
                iter_limits.time_limit_secs = None;
                iter_limits.node_limit = Some(1);
            }
        }
        let t0 = Instant::now();
        let mut bnb = BranchAndBound::new(&sub.milp, iter_limits);
        if let Some(x) = &incumbent {
            bnb = bnb.with_start(x.clone());
        }
        if opts.heuristic {
            let inc_dirs: Option<Vec<Vec<f64>>> = incumbent
                .as_ref()
                .map(|x| layout.policy(x, spec.epsilon).stages.into_iter().map(|s| s.w).collect());
            let (lay, srch) = (&sub.layout, &search);
            let mut calls = 0usize;
            bnb = bnb.with_heuristic(Box::new(move |x: &[f64]| {
                calls += 1;
                if calls > 20 && calls % 50 != 0 {
                    return None;
                }
                let lp_policy = lay.policy(x, spec.epsilon);
                let dirs: Vec<Vec<Vec<f64>>> = (0..lay.n_stages)
                    .map(|t| {
                        let mut d = vec![lp_policy.stages[t].w.clone()];
                        if let Some(inc) = &inc_dirs {
                            d.push(inc[t].clone());
                        }
                        d
                    })
                    .collect();
                let found = srch.search(&dirs, Goal::Linear(rho))?;
                encode_policy(lay, sample, spec, &found.policy)
            }));
        }
        let sol = bnb.solve()?;
        total_nodes += sol.nodes;
        let limited = matches!(sol.status, MilpStatus::NodeLimit | MilpStatus::TimeLimit);
        any_limit |= limited;
        let x = match sol.incumbent {
            Some(x) => x,
            None if sol.status == MilpStatus::Infeasible && k == 0 => {
                return Err(Error::Infeasible(
                    "no policy satisfies the selection-ratio and fairness rows on the training sample".into(),
                ));
            }
            None if sol.status == MilpStatus::Infeasible => {
                return Err(Error::Solver(format!(
                    "subproblem {k} reported infeasible after a feasible start"
                )));
            }
            None => {
                return Err(Error::Solver(format!(
                    "solver limit reached after {} nodes without a feasible policy",
                    sol.nodes
                )));
            }
        };
        let z = sol.objective;
        iterations.push(Iterate {
            rho,
            z,
            best_bound: sol.best_bound,
            nodes: sol.nodes,
            status: sol.status,
            secs: t0.elapsed().as_secs_f64(),
        });
        log::info!("dinkelbach {k}: rho={rho:.8} z={z:.3e} nodes={} status={:?}", sol.nodes, sol.status);
        if z <= opts.dink_tol {
            status = if any_limit {
                TrainStatus::LimitReached
            } else {
                TrainStatus::Optimal
            };
            incumbent = Some(x);
            last_sub = Some(sub);
            break;
        }
        let next = ratio_of(&sub.layout, sample, &x);
        incumbent = Some(x);
        last_sub = Some(sub);
        if next <= rho {
            notes.push(format!(
                "ratio did not increase ({rho:.12} -> {next:.12}) with subproblem value {z:.3e}"
            ));
            status = TrainStatus::NumericFailure;
            break;
        }
        rho = next;
    }
    if status == TrainStatus::IterationLimit {
        notes.push(format!("stopped after {} iterations without meeting the tolerance", opts.max_iter));
    }
    let x = incumbent.expect("loop exits with an incumbent");
    let sub = last_sub.expect("at least one subproblem solved");
    let ratio = ratio_of(&layout, sample, &x);

    let raw = layout.policy(&x, spec.epsilon);
    let mut policy = raw.clone();
    let mut polish_margin = None;
    let mut polish_fallback = false;
    if opts.polish {
        match polish(&sub, sample, spec, &x) {
            Some((p, tau)) => {
                let ok = encode_policy(&layout, sample, spec, &p).is_some_and(|xp| {
                    sub.milp.check(&xp, limits.feas_tol, limits.int_tol).is_ok()
                        && (0..layout.n).all(|k| {
                            let g = layout.g(layout.n_stages, k);
                            (xp[g] > 0.5) == (x[g] > 0.5)
                        })
                });
                if ok {
                    policy = p;
                    polish_margin = Some(tau);
                } else {
                    polish_fallback = true;
                    notes.push("polished rule failed verification; kept the solver's rule".into());
                }
            }
            None => {
                polish_fallback = true;
                notes.push("margin LP did not return a usable rule; kept the solver's rule".into());
            }
        }
    }

    let strict = strict_check(&policy, sample, spec, limits.feas_tol)?;
    if !strict.all_ok() {
        notes.push("strict re-evaluation reports a violated row".into());
    }
    let final_x = encode_policy(&layout, sample, spec, &policy).unwrap_or(x);
    let (bindings, big_m_binding) = bindings(&sub, sample, spec, &policy, &final_x);
    if big_m_binding {
        notes.push("a linking row is within 1e-6 * M of its constant".into());
    }
    let report = TrainReport {
        iterations,
        proven_optimal: status == TrainStatus::Optimal,
        status,
        ratio,
        initial_ratio,
        strict,
        big_m: sub.big_m,
        big_m_binding,
        polish_margin,
        polish_fallback,
        bindings,
        total_nodes,
        elapsed_secs: started.elapsed().as_secs_f64(),
        notes,
    };
    Ok((policy, report))
}

/// With the binaries of `x` fixed, finds the rule whose scores clear every
/// required side by the largest common margin `tau`.
fn polish(sub: &Subproblem, sample: &FinalSample, spec: &SelectionSpec, x: &[f64]) -> Option<(PolicyParams, f64)> {
    let layout = &sub.layout;
    let nc = layout.num_continuous();
    let tau = nc;
    let mut objective = vec![0.0; nc + 1];
    objective[tau] = 1.0;
    let lower = sub.milp.lp.lower[..nc].iter().copied().chain([0.0]).collect();
    let upper = sub.milp.lp.upper[..nc].iter().copied().chain([spec.b_max]).collect();
    let mut lp = LpInstance::new(Sense::Maximize, objective, lower, upper);
    for t in 1..=layout.n_stages {
        for k in 0..layout.n {
            let mut score: Vec<(usize, f64)> = sample.x[k][t - 1]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (layout.w(t, j), v))
                .collect();
            score.push((layout.b(t), 1.0));
            let g = x[layout.g(t, k)] > 0.5;
            let p = x[layout.p(t, k)] > 0.5;
            if !g {
                let mut row = score.clone();
                row.push((tau, 1.0));
                lp.add_row(row, Relation::Le, 0.0);
            } else {
                let mut row = score.clone();
                row.push((tau, -1.0));
                lp.add_row(row, Relation::Ge, if p { spec.strict_margin } else { spec.epsilon });
            }
        }
    }
    let sol = solve_lp(&lp).ok()?;
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let stages = (1..=layout.n_stages)
        .map(|t| StagePolicy {
            w: (0..layout.w_len[t - 1]).map(|j| sol.x[layout.w(t, j)]).collect(),
            b: sol.x[layout.b(t)],
        })
        .collect();
    Some((
        PolicyParams {
            stages,
            epsilon: spec.epsilon,
        },
        sol.x[tau],
    ))
}

fn bindings(
    sub: &Subproblem,
    sample: &FinalSample,
    spec: &SelectionSpec,
    policy: &PolicyParams,
    x: &[f64],
) -> (Bindings, bool) {
    let layout = &sub.layout;
    let t_max = layout.n_stages;
    let rows = &sub.milp.lp.rows;
    let frac = |r: usize, total: f64| (rows[r].rhs - rows[r].activity(x)) / total;
    let upper = (1..=t_max).map(|t| frac(t - 1, sample.total(t))).collect();
    let lower = frac(t_max, sample.total(t_max));
    let fair_at = t_max + 1 + (t_max - 1) * layout.n;
    let fairness = [
        rows[fair_at].rhs - rows[fair_at].activity(x),
        rows[fair_at + 1].rhs - rows[fair_at + 1].activity(x),
    ];
    let mut linking_min_rel = f64::INFINITY;
    let mut binding = false;
    for t in 1..=t_max {
        for k in 0..layout.n {
            let m = sub.row_m[t - 1][k];
            let s = policy.score(t, &sample.x[k][t - 1]);
            let g = x[layout.g(t, k)] > 0.5;
            let p = x[layout.p(t, k)] > 0.5;
            // Distance from the big-M side of each row that is relaxed by it.
            let mut slack = if g { m - s } else { s + m };
            if p {
                slack = slack.min(s - spec.epsilon + m);
            }
            let rel = slack / m;
            linking_min_rel = linking_min_rel.min(rel);
            if slack < 1e-6 * m {
                binding = true;
            }
        }
    }
    (
        Bindings {
            upper,
            lower,
            fairness,
            linking_min_rel,
        },
        binding,
    )
}

/// Policy export: per-stage coefficients keyed by column name, plus the selection
/// bounds and the training report.
pub fn policy_json(
    policy: &PolicyParams,
    names: &[Vec<String>],
    spec: &SelectionSpec,
    report: &TrainReport,
) -> Result<serde_json::Value> {
    let mut v = policy.named(names);
    v["raw"] = serde_json::to_value(policy)?;
    v["spec"] = serde_json::to_value(spec)?;
    v["report"] = serde_json::to_value(report)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FairnessNotion;

    fn toy() -> FinalSample {
        let x1 = [-1.0, -0.5, 0.5, 1.0];
        FinalSample::new(
            vec![1, 1],
            x1.iter().map(|&v| vec![vec![v], vec![v, v]]).collect(),
            vec![false, true, false, true],
            vec![false, false, true, true],
            vec![vec![1.0, 1.0]; 4],
        )
        .unwrap()
    }

    #[test]
    fn toy_selects_the_positives() {
        for eta in [1.0, 0.0] {
            let spec = SelectionSpec::new(vec![1.0, 0.5], 0.5, eta).with_notion(FairnessNotion::EqualOpportunity);
            for heuristic in [true, false] {
                let opts = TrainOptions {
                    heuristic,
                    ..TrainOptions::default()
                };
                let (policy, report) = train_sample(&toy(), &spec, &opts, None).unwrap();
                assert_eq!(report.status, TrainStatus::Optimal);
                assert!((report.ratio - 1.0).abs() < 1e-9);
                assert!((report.precision() - 1.0).abs() < 1e-12);
                assert!(report.strict.all_ok());
                let s = toy();
                let picked: Vec<bool> = s.x.iter().map(|xk| policy.decide(1, &xk[0]) && policy.decide(2, &xk[1])).collect();
                assert_eq!(picked, vec![false, false, true, true]);
                let zs: Vec<f64> = report.iterations.iter().map(|i| i.rho).collect();
                assert!(zs.windows(2).all(|w| w[1] > w[0]));
                assert!(report.final_z().abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn unreachable_parity_is_infeasible() {
        // Exactly one of four positives is selected, so the groups cannot match.
        let mut s = toy();
        s.y = vec![true; 4];
        let spec = SelectionSpec::new(vec![1.0, 0.25], 0.25, 0.0);
        assert!(matches!(
            train_sample(&s, &spec, &TrainOptions::default(), None),
            Err(Error::Infeasible(_))
        ));
    }
}
