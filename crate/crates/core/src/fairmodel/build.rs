use serde::{Deserialize, Serialize};

use super::sample::{FinalSample, PolicyParams, StagePolicy};
use crate::dataset::{FairnessNotion, SelectionSpec};
use crate::error::{Error, Result};
use crate::milp::{LpInstance, MilpInstance, Relation, Sense};

/// Variable positions in the subproblem: per stage the slopes and offset,
/// then the `g` and `p` indicator blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_stages: usize,
    pub n: usize,
    pub w_start: Vec<usize>,
    pub w_len: Vec<usize>,
    pub g_start: usize,
    pub p_start: usize,
    pub num_vars: usize,
}

impl Layout {
    pub fn new(sample: &FinalSample) -> Self {
        let t_max = sample.n_stages;
        let n = sample.len();
        let mut w_start = Vec::with_capacity(t_max);
        let mut w_len = Vec::with_capacity(t_max);
        let mut next = 0;
        for t in 1..=t_max {
            let d = sample.stacked_dim(t);
            w_start.push(next);
            w_len.push(d);
            next += d + 1;
        }
        let g_start = next;
        let p_start = g_start + t_max * n;
        Self {
            n_stages: t_max,
            n,
            w_start,
            w_len,
            g_start,
            p_start,
            num_vars: p_start + t_max * n,
        }
    }

    pub fn w(&self, t: usize, j: usize) -> usize {
        self.w_start[t - 1] + j
    }

    pub fn b(&self, t: usize) -> usize {
        self.w_start[t - 1] + self.w_len[t - 1]
    }

    pub fn g(&self, t: usize, k: usize) -> usize {
        self.g_start + (t - 1) * self.n + k
    }

    pub fn p(&self, t: usize, k: usize) -> usize {
        self.p_start + (t - 1) * self.n + k
    }

    pub fn num_continuous(&self) -> usize {
        self.g_start
    }

    pub fn binaries(&self) -> Vec<usize> {
        (self.g_start..self.num_vars).collect()
    }

    pub fn policy(&self, x: &[f64], epsilon: f64) -> PolicyParams {
        PolicyParams {
            stages: (1..=self.n_stages)
                .map(|t| StagePolicy {
                    w: (0..self.w_len[t - 1]).map(|j| x[self.w(t, j)]).collect(),
                    b: x[self.b(t)],
                })
                .collect(),
            epsilon,
        }
    }
}

/// Fairness comparison groups: members of each sensitive group that enter
/// the measure (positives only for equal opportunity).
pub fn fairness_groups(sample: &FinalSample, notion: FairnessNotion) -> Result<[Vec<usize>; 2]> {
    let groups: [Vec<usize>; 2] = [false, true].map(|g| {
        (0..sample.len())
            .filter(|&k| {
                sample.a[k] == g && (notion == FairnessNotion::DemographicParity || sample.y[k])
            })
            .collect()
    });
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Undefined(match notion {
                FairnessNotion::EqualOpportunity => {
                    format!("group a={g} has no positive outcomes; equal opportunity is undefined")
                }
                FairnessNotion::DemographicParity => format!("group a={g} is empty"),
            }));
        }
    }
    Ok(groups)
}

/// Largest possible `|w . x^[t] + b|` over the boxes, per stage and member.
fn score_bounds(sample: &FinalSample, spec: &SelectionSpec) -> Vec<Vec<f64>> {
    (0..sample.n_stages)
        .map(|t| {
            sample
                .x
                .iter()
                .map(|xk| spec.w_max * xk[t].iter().map(|v| v.abs()).sum::<f64>() + spec.b_max)
                .collect()
        })
        .collect()
}

/// Global big-M: the selection spec's value after validation, or `1.05 * max bound`.
pub fn big_m(sample: &FinalSample, spec: &SelectionSpec) -> Result<f64> {
    let bound = score_bounds(sample, spec)
        .iter()
        .flatten()
        .fold(spec.b_max, |m, v| m.max(*v));
    match spec.big_m {
        Some(m) if m < bound + spec.epsilon => Err(Error::Spec(format!(
            "big_m {m} is below the score bound {:.6} + epsilon implied by the data and weight boxes",
            bound
        ))),
        Some(m) => Ok(m),
        None => Ok(1.05 * bound),
    }
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub milp: MilpInstance,
    pub layout: Layout,
    pub big_m: f64,
    /// Row-level constants actually used in the linking rows, `[t-1][k]`.
    pub row_m: Vec<Vec<f64>>,
    pub rho: f64,
}

/// The mixed-binary subproblem for ratio guess `rho`:
/// maximize `sum_k beta_k^T (y_k - rho) g_Tk` over the selection-ratio,
/// consistency, fairness and linking rows.
pub fn build_subproblem(sample: &FinalSample, spec: &SelectionSpec, rho: f64) -> Result<Subproblem> {
    spec.validate()?;
    let t_max = sample.n_stages;
    if spec.n_stages() != t_max {
        return Err(Error::Spec(format!(
            "selection spec lists {} upper ratios for {t_max} stages",
            spec.n_stages()
        )));
    }
    if sample.is_empty() {
        return Err(Error::Infeasible("no final-stage candidates to train on".into()));
    }
    let groups = fairness_groups(sample, spec.notion)?;
    let m = big_m(sample, spec)?;
    // Per-row tightening: each member's own score bound still dominates the
    // linking rows, and is never looser than the global constant.
    let row_m: Vec<Vec<f64>> = score_bounds(sample, spec)
        .into_iter()
        .map(|r| r.into_iter().map(|s| m.min(1.05 * s + spec.epsilon)).collect())
        .collect();

    let layout = Layout::new(sample);
    let n = sample.len();
    let nv = layout.num_vars;
    let mut lower = vec![0.0; nv];
    let mut upper = vec![1.0; nv];
    let mut names = vec![String::new(); nv];
    for t in 1..=t_max {
        for j in 0..layout.w_len[t - 1] {
            lower[layout.w(t, j)] = -spec.w_max;
            upper[layout.w(t, j)] = spec.w_max;
            names[layout.w(t, j)] = format!("w{t}_{j}");
        }
        lower[layout.b(t)] = -spec.b_max;
        upper[layout.b(t)] = spec.b_max;
        names[layout.b(t)] = format!("b{t}");
        for k in 0..n {
            names[layout.g(t, k)] = format!("g{t}_{k}");
            names[layout.p(t, k)] = format!("p{t}_{k}");
        }
    }
    let mut objective = vec![0.0; nv];
    for k in 0..n {
        let yk = f64::from(u8::from(sample.y[k]));
        objective[layout.g(t_max, k)] = sample.beta[k][t_max - 1] * (yk - rho);
    }
    let mut lp = LpInstance::new(Sense::Maximize, objective, lower, upper);
    lp.names = Some(names);

    for t in 1..=t_max {
        let coeffs = (0..n).map(|k| (layout.g(t, k), sample.beta[k][t - 1])).collect();
        lp.add_row(coeffs, Relation::Le, spec.upper_ratios[t - 1] * sample.total(t));
    }
    let coeffs = (0..n).map(|k| (layout.p(t_max, k), sample.beta[k][t_max - 1])).collect();
    lp.add_row(coeffs, Relation::Le, (1.0 - spec.lower_ratio) * sample.total(t_max));
    for t in 1..t_max {
        for k in 0..n {
            lp.add_row(vec![(layout.g(t + 1, k), 1.0), (layout.p(t, k), 1.0)], Relation::Le, 1.0);
        }
    }
    let mass = |g: &[usize]| g.iter().map(|&k| sample.beta[k][t_max - 1]).sum::<f64>();
    let masses = [mass(&groups[0]), mass(&groups[1])];
    for (a, b) in [(0usize, 1usize), (1, 0)] {
        let mut coeffs: Vec<(usize, f64)> = groups[a]
            .iter()
            .map(|&k| (layout.g(t_max, k), sample.beta[k][t_max - 1] / masses[a]))
            .collect();
        coeffs.extend(
            groups[b]
                .iter()
                .map(|&k| (layout.p(t_max, k), sample.beta[k][t_max - 1] / masses[b])),
        );
        lp.add_row(coeffs, Relation::Le, 1.0 + spec.eta);
    }
    let delta = spec.strict_margin;
    for t in 1..=t_max {
        for k in 0..n {
            let mk = row_m[t - 1][k];
            let mut score: Vec<(usize, f64)> = sample.x[k][t - 1]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (layout.w(t, j), v))
                .collect();
            score.push((layout.b(t), 1.0));
            // s <= M g
            let mut row = score.clone();
            row.push((layout.g(t, k), -mk));
            lp.add_row(row, Relation::Le, 0.0);
            // s >= delta - (M + delta)(1 - g)
            let mut row = score.clone();
            row.push((layout.g(t, k), -(mk + delta)));
            lp.add_row(row, Relation::Ge, -mk);
            // s >= epsilon - M p
            let mut row = score;
            row.push((layout.p(t, k), mk));
            lp.add_row(row, Relation::Ge, spec.epsilon);
        }
    }
    let binaries = layout.binaries();
    Ok(Subproblem {
        milp: MilpInstance::new(lp, binaries),
        layout,
        big_m: m,
        row_m,
        rho,
    })
}

/// Indicator values implied by a policy: `g = 1(s >= delta)`, `p = 1(s < epsilon)`.
/// `None` when the policy leaves the boxes or some score falls in `(0, delta)`,
/// where no indicator value is consistent.
pub fn encode_policy(
    layout: &Layout,
    sample: &FinalSample,
    spec: &SelectionSpec,
    policy: &PolicyParams,
) -> Option<Vec<f64>> {
    let mut x = vec![0.0; layout.num_vars];
    for (t, st) in policy.stages.iter().enumerate() {
        let t = t + 1;
        if st.w.len() != layout.w_len[t - 1] || st.b.abs() > spec.b_max {
            return None;
        }
        for (j, &w) in st.w.iter().enumerate() {
            if w.abs() > spec.w_max {
                return None;
            }
            x[layout.w(t, j)] = w;
        }
        x[layout.b(t)] = st.b;
    }
    for t in 1..=layout.n_stages {
        for k in 0..layout.n {
            let s = policy.score(t, &sample.x[k][t - 1]);
            if s > 0.0 && s < spec.strict_margin {
                return None;
            }
            x[layout.g(t, k)] = f64::from(u8::from(s > 0.0));
            x[layout.p(t, k)] = f64::from(u8::from(s < spec.epsilon));
        }
    }
    Some(x)
}
