//! Exhaustive solver for tiny instances of the training model.
//!
//! Every nested labelling of the final-stage sample is enumerated. Labels
//! that pass the ratio and fairness rows are kept only if some box-bounded
//! linear rule realizes them, checked by an LP feasibility call.

use serde::{Deserialize, Serialize};

use crate::dataset::SelectionSpec;
use crate::error::{Error, Result};
use crate::fairmodel::{fairness_groups, FinalSample, PolicyParams, StagePolicy};
use crate::milp::{solve_lp, LpInstance, LpStatus, Relation, Sense};

pub const MAX_CANDIDATES: usize = 12;
pub const MAX_STAGES: usize = 3;

/// Per candidate, the number of stages passed (`0..=T`); `T` means selected.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SelectionPattern {
    pub passed: Vec<usize>,
    /// Final selectees required to clear the stage-`T` rule by `epsilon`.
    pub firm: Vec<bool>,
}

impl SelectionPattern {
    pub fn pass_set(&self, t: usize) -> Vec<usize> {
        (0..self.passed.len()).filter(|&k| self.passed[k] >= t).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub ratio: f64,
    pub pattern: SelectionPattern,
    pub policy: PolicyParams,
    pub patterns_checked: usize,
    pub lp_calls: usize,
}

struct Rows<'a> {
    sample: &'a FinalSample,
    spec: &'a SelectionSpec,
    groups: [Vec<usize>; 2],
    masses: [f64; 2],
    totals: Vec<f64>,
}

impl Rows<'_> {
    fn beta(&self, k: usize, t: usize) -> f64 {
        self.sample.beta[k][t - 1]
    }

    fn upper_ok(&self, passed: &[usize]) -> bool {
        (1..=self.sample.n_stages).all(|t| {
            let m: f64 = (0..passed.len()).filter(|&k| passed[k] >= t).map(|k| self.beta(k, t)).sum();
            m <= self.spec.upper_ratios[t - 1] * self.totals[t - 1] * (1.0 + 1e-12)
        })
    }

    /// Lower-ratio and fairness rows with final selection `sel` and firm set `firm`.
    fn final_rows_ok(&self, sel: &[bool], firm: &[bool]) -> bool {
        let t = self.sample.n_stages;
        let tot = self.totals[t - 1];
        let soft: f64 = (0..sel.len()).filter(|&k| !firm[k]).map(|k| self.beta(k, t)).sum();
        if soft > (1.0 - self.spec.lower_ratio) * tot * (1.0 + 1e-12) + 1e-12 {
            return false;
        }
        let rate = |g: usize, set: &[bool]| {
            self.groups[g].iter().filter(|&&k| set[k]).map(|&k| self.beta(k, t)).sum::<f64>() / self.masses[g]
        };
        for (a, b) in [(0, 1), (1, 0)] {
            if rate(a, sel) - rate(b, firm) > self.spec.eta + 1e-12 {
                return false;
            }
        }
        true
    }
}

/// Realizability LP for a labelling: for stages `t <= L` the score is at
/// least `strict_margin`, for `t < L` at least `epsilon`, for `t > L` at most
/// zero, and firm selectees clear `epsilon` at the last stage.
fn realize(sample: &FinalSample, spec: &SelectionSpec, pattern: &SelectionPattern) -> Option<PolicyParams> {
    let t_max = sample.n_stages;
    let mut offsets = Vec::with_capacity(t_max);
    let mut next = 0;
    for t in 1..=t_max {
        offsets.push(next);
        next += sample.stacked_dim(t) + 1;
    }
    let mut lower = vec![-spec.w_max; next];
    let mut upper = vec![spec.w_max; next];
    for t in 1..=t_max {
        let b = offsets[t - 1] + sample.stacked_dim(t);
        lower[b] = -spec.b_max;
        upper[b] = spec.b_max;
    }
    let mut lp = LpInstance::new(Sense::Minimize, vec![0.0; next], lower, upper);
    for (k, &label) in pattern.passed.iter().enumerate() {
        for t in 1..=t_max {
            let o = offsets[t - 1];
            let d = sample.stacked_dim(t);
            let mut row: Vec<(usize, f64)> = (0..d).map(|j| (o + j, sample.x[k][t - 1][j])).collect();
            row.push((o + d, 1.0));
            if t > label {
                lp.add_row(row, Relation::Le, 0.0);
            } else if t < label || pattern.firm[k] {
                lp.add_row(row, Relation::Ge, spec.epsilon);
            } else {
                lp.add_row(row, Relation::Ge, spec.strict_margin);
            }
        }
    }
    let sol = solve_lp(&lp).ok()?;
    if sol.status != LpStatus::Optimal || lp.max_violation(&sol.x) > 1e-9 {
        return None;
    }
    let stages = (1..=t_max)
        .map(|t| {
            let o = offsets[t - 1];
            let d = sample.stacked_dim(t);
            StagePolicy {
                w: sol.x[o..o + d].to_vec(),
                b: sol.x[o + d],
            }
        })
        .collect();
    Some(PolicyParams {
        stages,
        epsilon: spec.epsilon,
    })
}

/// Best weighted precision over all realizable labellings, with the
/// lexicographically smallest optimal pattern.
pub fn enumerate_optimal(sample: &FinalSample, spec: &SelectionSpec) -> Result<OracleResult> {
    spec.validate()?;
    let t_max = sample.n_stages;
    let n = sample.len();
    if spec.n_stages() != t_max {
        return Err(Error::Spec(format!("spec lists {} stages, sample has {t_max}", spec.n_stages())));
    }
    if n == 0 || n > MAX_CANDIDATES || t_max > MAX_STAGES {
        return Err(Error::InvalidArgument(format!(
            "oracle handles 1..={MAX_CANDIDATES} candidates and at most {MAX_STAGES} stages, got {n} and {t_max}"
        )));
    }
    let groups = fairness_groups(sample, spec.notion)?;
    let mass = |g: &[usize]| g.iter().map(|&k| sample.beta[k][t_max - 1]).sum::<f64>();
    let rows = Rows {
        sample,
        spec,
        masses: [mass(&groups[0]), mass(&groups[1])],
        groups,
        totals: (1..=t_max).map(|t| sample.total(t)).collect(),
    };

    let mut best: Option<OracleResult> = None;
    let mut checked = 0;
    let mut lp_calls = 0;
    let mut passed = vec![0usize; n];
    loop {
        checked += 1;
        if let Some(found) = consider(&rows, &passed, best.as_ref().map(|b| b.ratio), &mut lp_calls) {
            best = Some(found);
        }
        // Next label vector in lexicographic order, base T + 1.
        let mut k = n;
        loop {
            if k == 0 {
                return match best {
                    Some(mut b) => {
                        b.patterns_checked = checked;
                        b.lp_calls = lp_calls;
                        Ok(b)
                    }
                    None => Err(Error::Infeasible("no realizable pattern meets the rows".into())),
                };
            }
            k -= 1;
            if passed[k] < t_max {
                passed[k] += 1;
                for v in passed.iter_mut().skip(k + 1) {
                    *v = 0;
                }
                break;
            }
        }
    }
}

fn consider(rows: &Rows, passed: &[usize], incumbent: Option<f64>, lp_calls: &mut usize) -> Option<OracleResult> {
    let s = rows.sample;
    let t_max = s.n_stages;
    let n = passed.len();
    if !rows.upper_ok(passed) {
        return None;
    }
    let sel: Vec<bool> = passed.iter().map(|&l| l == t_max).collect();
    // Loosest firm set first: if the rows fail with every selectee firm they
    // fail for every subset.
    if !rows.final_rows_ok(&sel, &sel) {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in (0..n).filter(|&k| sel[k]) {
        den += s.beta[k][t_max - 1];
        if s.y[k] {
            num += s.beta[k][t_max - 1];
        }
    }
    let ratio = if den > 0.0 { num / den } else { 0.0 };
    // Strictly better only: earlier patterns win ties.
    if incumbent.is_some_and(|r| ratio <= r) {
        return None;
    }
    let chosen: Vec<usize> = (0..n).filter(|&k| sel[k]).collect();
    let none_firm = SelectionPattern {
        passed: passed.to_vec(),
        firm: vec![false; n],
    };
    *lp_calls += 1;
    realize(s, rows.spec, &none_firm)?;
    // Firm subsets by increasing mask; the smallest passing one is kept.
    for mask in 0u32..(1u32 << chosen.len()) {
        let mut firm = vec![false; n];
        for (bit, &k) in chosen.iter().enumerate() {
            firm[k] = mask & (1 << bit) != 0;
        }
        if !rows.final_rows_ok(&sel, &firm) {
            continue;
        }
        let pattern = SelectionPattern {
            passed: passed.to_vec(),
            firm,
        };
        *lp_calls += 1;
        if let Some(policy) = realize(s, rows.spec, &pattern) {
            return Some(OracleResult {
                ratio,
                pattern,
                policy,
                patterns_checked: 0,
                lp_calls: 0,
            });
        }
    }
    None
}
