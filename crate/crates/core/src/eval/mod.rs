//! Out-of-sample evaluation: cascaded deployment, ratio repair, counterfactual
//! estimates from logged data and fairness sweeps.

mod pareto;

pub use pareto::{pareto_sweep, write_pareto_csv, ParetoAggregate, ParetoCell, ParetoTable, Trial};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Population, SelectionSpec, StagePanel};
use crate::error::{Error, Result};
use crate::fairmodel::PolicyParams;
use crate::propensity::WeightSet;

/// Cascaded stage decisions: `selected[t-1][i]` is true iff candidate `i`
/// passed stages `1..=t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDecisions {
    pub selected: Vec<Vec<bool>>,
}

impl StageDecisions {
    pub fn n_stages(&self) -> usize {
        self.selected.len()
    }

    pub fn len(&self) -> usize {
        self.selected.first().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, t: usize) -> usize {
        self.selected[t - 1].iter().filter(|b| **b).count()
    }

    pub fn is_nested(&self) -> bool {
        self.selected
            .windows(2)
            .all(|w| w[1].iter().zip(&w[0]).all(|(later, earlier)| !later || *earlier))
    }
}

/// Applies the stage rules in order; a candidate only faces stage `t + 1`
/// after passing stage `t`.
pub fn apply_policy(policy: &PolicyParams, pop: &Population) -> Result<StageDecisions> {
    policy.check_dims(pop.dims())?;
    let n = pop.len();
    let mut selected: Vec<Vec<bool>> = Vec::with_capacity(policy.n_stages());
    for t in 1..=policy.n_stages() {
        let row = (0..n)
            .map(|i| (t == 1 || selected[t - 2][i]) && policy.decide(t, &pop.stacked(i, t)))
            .collect();
        selected.push(row);
    }
    Ok(StageDecisions { selected })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairCounts {
    pub added: usize,
    pub removed: usize,
}

/// Count caps on `n` rows: at most `floor(upper_t * n)` per stage, at least
/// `ceil(lower * n)` at the last.
pub fn count_bounds(spec: &SelectionSpec, n: usize) -> (Vec<usize>, usize) {
    let nf = n as f64;
    let caps = spec.upper_ratios.iter().map(|a| (a * nf + 1e-9).floor() as usize).collect();
    let need = (spec.lower_ratio * nf - 1e-9).ceil().max(0.0) as usize;
    (caps, need)
}

/// Forces the stage counts into their bounds by random demotion and promotion,
/// keeping decisions nested.
pub fn repair(decisions: &StageDecisions, spec: &SelectionSpec, seed: u64) -> Result<(StageDecisions, RepairCounts)> {
    let t_max = decisions.n_stages();
    if spec.n_stages() != t_max {
        return Err(Error::Dimension(format!(
            "decisions cover {t_max} stages, the selection spec {}",
            spec.n_stages()
        )));
    }
    if !decisions.is_nested() {
        return Err(Error::InvalidArgument("decisions are not nested across stages".into()));
    }
    let n = decisions.len();
    let (caps, need) = count_bounds(spec, n);
    if need > caps[t_max - 1] {
        return Err(Error::Spec(format!(
            "on {n} rows the final stage needs at least {need} but may keep at most {}",
            caps[t_max - 1]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sel = decisions.selected.clone();
    let mut counts = RepairCounts::default();

    for t in 0..t_max {
        let mut members: Vec<usize> = (0..n).filter(|&i| sel[t][i]).collect();
        if members.len() <= caps[t] {
            continue;
        }
        members.shuffle(&mut rng);
        for &i in &members[..members.len() - caps[t]] {
            for row in sel.iter_mut().skip(t) {
                row[i] = false;
            }
            counts.removed += 1;
        }
    }

    let mut have = (0..n).filter(|&i| sel[t_max - 1][i]).count();
    // Pools from the latest stage backwards; index 0 is the whole test set.
    let mut from = t_max;
    while have < need && from > 0 {
        from -= 1;
        let mut pool: Vec<usize> = (0..n)
            .filter(|&i| (from == 0 || sel[from - 1][i]) && !sel[from][i])
            .collect();
        pool.shuffle(&mut rng);
        for &i in pool.iter().take(need - have) {
            for row in sel.iter_mut().skip(from) {
                row[i] = true;
            }
            counts.added += 1;
            have += 1;
        }
    }
    Ok((StageDecisions { selected: sel }, counts))
}

/// Out-of-sample metrics of a policy on a fully labelled test population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub precision: f64,
    /// Strict disparities after repair; `None` when a group is empty.
    pub unfairness_eo: Option<f64>,
    pub unfairness_dp: Option<f64>,
    pub fractions_before: Vec<f64>,
    pub fractions_after: Vec<f64>,
    /// Stage `t` kept more than its cap before repair.
    pub upper_violations: Vec<bool>,
    /// The final stage kept fewer than required before repair.
    pub lower_violation: bool,
    pub repairs: RepairCounts,
    /// Selected and total counts per group among positives, then among all.
    pub eo_counts: [[usize; 2]; 2],
    pub dp_counts: [[usize; 2]; 2],
    pub seed: u64,
}

fn group_counts(pop: &Population, sel: &[bool], positives_only: bool) -> [[usize; 2]; 2] {
    let mut c = [[0usize; 2]; 2];
    for i in 0..pop.len() {
        if positives_only && !pop.label(i) {
            continue;
        }
        let g = usize::from(pop.sensitive(i));
        c[g][1] += 1;
        if sel[i] {
            c[g][0] += 1;
        }
    }
    c
}

/// Absolute rate gap from `[group][hits, total]` counts.
pub fn disparity(counts: &[[usize; 2]; 2]) -> Option<f64> {
    if counts[0][1] == 0 || counts[1][1] == 0 {
        return None;
    }
    let r = |g: usize| counts[g][0] as f64 / counts[g][1] as f64;
    Some((r(0) - r(1)).abs())
}

pub fn evaluate(policy: &PolicyParams, pop: &Population, spec: &SelectionSpec, seed: u64) -> Result<EvalReport> {
    let raw = apply_policy(policy, pop)?;
    let n = pop.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty test population".into()));
    }
    let t_max = raw.n_stages();
    let (caps, need) = count_bounds(spec, n);
    let fractions_before = (1..=t_max).map(|t| raw.count(t) as f64 / n as f64).collect();
    let upper_violations = (1..=t_max).map(|t| raw.count(t) > caps[t - 1]).collect();
    let lower_violation = raw.count(t_max) < need;
    let (fixed, repairs) = repair(&raw, spec, seed)?;
    let last = &fixed.selected[t_max - 1];
    let chosen = fixed.count(t_max);
    if chosen == 0 {
        return Err(Error::Undefined("final selection is empty after repair".into()));
    }
    let hits = (0..n).filter(|&i| last[i] && pop.label(i)).count();
    let eo_counts = group_counts(pop, last, true);
    let dp_counts = group_counts(pop, last, false);
    Ok(EvalReport {
        n,
        precision: hits as f64 / chosen as f64,
        unfairness_eo: disparity(&eo_counts),
        unfairness_dp: disparity(&dp_counts),
        fractions_before,
        fractions_after: (1..=t_max).map(|t| fixed.count(t) as f64 / n as f64).collect(),
        upper_violations,
        lower_violation,
        repairs,
        eo_counts,
        dp_counts,
        seed,
    })
}

/// Weighted estimates of what a policy would select, from logged final-stage
/// rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    /// Horvitz-Thompson estimate of the rate passing every stage.
    pub selection_rate: f64,
    /// Self-normalized estimate of precision among the selected.
    pub precision: f64,
    /// Horvitz-Thompson mean of the weights themselves (about 1 when calibrated).
    pub weight_mean: f64,
}

pub fn counterfactual_evaluate(
    policy: &PolicyParams,
    panel: &StagePanel,
    weights: &WeightSet,
) -> Result<CounterfactualReport> {
    policy.check_dims(panel.dims())?;
    let t_max = panel.n_stages();
    if weights.ids != panel.final_set() {
        return Err(Error::Dimension("weights do not match the panel's final-stage rows".into()));
    }
    let n = panel.len() as f64;
    let (mut mass, mut pos, mut all) = (0.0, 0.0, 0.0);
    for (k, &i) in weights.ids.iter().enumerate() {
        let b = weights.beta(k, t_max);
        all += b;
        let passes = (1..=t_max)
            .map(|t| panel.stacked(i, t).map(|x| policy.decide(t, &x)))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|p| p);
        if passes {
            mass += b;
            if panel.outcome(i)? {
                pos += b;
            }
        }
    }
    if mass <= 0.0 {
        return Err(Error::Undefined("policy selects no logged final-stage row".into()));
    }
    Ok(CounterfactualReport {
        selection_rate: mass / n,
        precision: pos / mass,
        weight_mean: all / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decisions(n: usize, stage1: usize, stage2: usize) -> StageDecisions {
        StageDecisions {
            selected: vec![(0..n).map(|i| i < stage1).collect(), (0..n).map(|i| i < stage2).collect()],
        }
    }

    #[test]
    fn within_bounds_is_untouched() {
        let d = decisions(100, 60, 30);
        let spec = SelectionSpec::new(vec![0.7, 0.35], 0.2, 1.0);
        let (r, c) = repair(&d, &spec, 1).unwrap();
        assert_eq!(r, d);
        assert_eq!(c, RepairCounts::default());
    }

    #[test]
    fn promotes_shortfall() {
        let d = decisions(100, 60, 10);
        let spec = SelectionSpec::new(vec![0.7, 0.35], 0.2, 1.0);
        let (r, c) = repair(&d, &spec, 1).unwrap();
        assert_eq!(c.added, 10);
        assert_eq!(r.count(2), 20);
        assert_eq!(r.count(1), 60);
        assert!(r.is_nested());
    }

    #[test]
    fn demotes_overflow() {
        let d = decisions(100, 90, 30);
        let spec = SelectionSpec::new(vec![0.7, 0.35], 0.2, 1.0);
        let (r, c) = repair(&d, &spec, 3).unwrap();
        assert_eq!(c.removed, 20);
        assert_eq!(r.count(1), 70);
        assert!(r.is_nested());
        assert!(r.count(2) >= 20 && r.count(2) <= 30);
    }

    #[test]
    fn promotion_reaches_back_to_the_first_stage() {
        let d = decisions(10, 1, 0);
        let spec = SelectionSpec::new(vec![1.0, 0.5], 0.5, 1.0);
        let (r, c) = repair(&d, &spec, 0).unwrap();
        assert_eq!(r.count(2), 5);
        assert_eq!(c.added, 5);
        assert!(r.is_nested());
    }

    #[test]
    fn boundary_score_is_rejected() {
        use crate::fairmodel::StagePolicy;
        let pop = Population::new(vec![1], vec![vec![vec![0.0]], vec![vec![1.0]]], vec![false, true], vec![false, true]).unwrap();
        let p = PolicyParams {
            stages: vec![StagePolicy { w: vec![1.0], b: 0.0 }],
            epsilon: 1e-3,
        };
        assert_eq!(apply_policy(&p, &pop).unwrap().selected, vec![vec![false, true]]);
    }
}
