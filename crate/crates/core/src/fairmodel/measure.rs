use serde::{Deserialize, Serialize};

use super::build::fairness_groups;
use super::sample::{FinalSample, PolicyParams};
use crate::dataset::{FairnessNotion, SelectionSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfairnessMode {
    /// Selection means `score > 0` in both groups.
    Strict,
    /// One group counted at `score > 0`, the other only at `score >= epsilon`.
    Eps,
}

/// Stage scores of a policy on a sample, without cascading.
#[derive(Debug, Clone)]
pub struct Scored {
    /// `scores[t-1][k]`.
    pub scores: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl Scored {
    pub fn new(policy: &PolicyParams, sample: &FinalSample) -> Result<Self> {
        policy.check_dims(&sample.dims)?;
        let scores = (1..=sample.n_stages)
            .map(|t| sample.x.iter().map(|xk| policy.score(t, &xk[t - 1])).collect())
            .collect();
        Ok(Self {
            scores,
            epsilon: policy.epsilon,
        })
    }

    pub fn selected(&self, t: usize, k: usize) -> bool {
        self.scores[t - 1][k] > 0.0
    }

    pub fn firmly_selected(&self, t: usize, k: usize) -> bool {
        self.scores[t - 1][k] >= self.epsilon
    }

    /// Passes every stage rule.
    pub fn final_selected(&self, k: usize) -> bool {
        (1..=self.scores.len()).all(|t| self.selected(t, k))
    }
}

fn weighted_rate(sample: &FinalSample, members: &[usize], pick: impl Fn(usize) -> bool) -> f64 {
    let t = sample.n_stages - 1;
    let total: f64 = members.iter().map(|&k| sample.beta[k][t]).sum();
    let hit: f64 = members.iter().filter(|&&k| pick(k)).map(|&k| sample.beta[k][t]).sum();
    hit / total
}

/// Weighted disparity of the final-stage rule between the two groups.
pub fn unfairness(
    policy: &PolicyParams,
    sample: &FinalSample,
    notion: FairnessNotion,
    mode: UnfairnessMode,
) -> Result<f64> {
    let scored = Scored::new(policy, sample)?;
    unfairness_scored(&scored, sample, notion, mode)
}

pub fn unfairness_scored(
    scored: &Scored,
    sample: &FinalSample,
    notion: FairnessNotion,
    mode: UnfairnessMode,
) -> Result<f64> {
    let groups = fairness_groups(sample, notion)?;
    let t_max = sample.n_stages;
    let strict: Vec<f64> = groups
        .iter()
        .map(|g| weighted_rate(sample, g, |k| scored.selected(t_max, k)))
        .collect();
    let u = (strict[0] - strict[1]).abs();
    match mode {
        UnfairnessMode::Strict => Ok(u),
        UnfairnessMode::Eps => {
            let firm: Vec<f64> = groups
                .iter()
                .map(|g| weighted_rate(sample, g, |k| scored.firmly_selected(t_max, k)))
                .collect();
            let ue = (strict[0] - firm[1]).max(strict[1] - firm[0]);
            Ok(ue.max(u))
        }
    }
}

/// Strict re-evaluation of a trained policy against the exact selection rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictCheck {
    /// Weighted fraction passing each stage rule on its own.
    pub stage_fractions: Vec<f64>,
    /// Weighted fraction passing the final rule (cascaded).
    pub final_fraction: f64,
    pub upper_ok: Vec<bool>,
    pub lower_ok: bool,
    /// Every candidate selected at `t + 1` is selected at `t`.
    pub consistency_ok: bool,
    pub unfairness: f64,
    pub unfairness_eps: f64,
    pub fairness_ok: bool,
    /// Weighted precision of the cascaded final selection.
    pub precision: f64,
}

impl StrictCheck {
    pub fn all_ok(&self) -> bool {
        self.upper_ok.iter().all(|b| *b) && self.lower_ok && self.consistency_ok && self.fairness_ok
    }
}

pub fn strict_check(
    policy: &PolicyParams,
    sample: &FinalSample,
    spec: &SelectionSpec,
    tol: f64,
) -> Result<StrictCheck> {
    let scored = Scored::new(policy, sample)?;
    let t_max = sample.n_stages;
    let n = sample.len();
    let mut stage_fractions = Vec::with_capacity(t_max);
    let mut upper_ok = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let total = sample.total(t);
        let mass: f64 = (0..n).filter(|&k| scored.selected(t, k)).map(|k| sample.beta[k][t - 1]).sum();
        stage_fractions.push(mass / total);
        upper_ok.push(mass <= spec.upper_ratios[t - 1] * total + tol * (1.0 + total));
    }
    let total_t = sample.total(t_max);
    let final_mass: f64 = (0..n).filter(|&k| scored.final_selected(k)).map(|k| sample.beta[k][t_max - 1]).sum();
    let rejected: f64 = (0..n)
        .filter(|&k| !scored.selected(t_max, k))
        .map(|k| sample.beta[k][t_max - 1])
        .sum();
    let lower_ok = rejected <= (1.0 - spec.lower_ratio) * total_t + tol * (1.0 + total_t)
        && final_mass >= spec.lower_ratio * total_t - tol * (1.0 + total_t);
    let consistency_ok = (1..t_max).all(|t| (0..n).all(|k| !scored.selected(t + 1, k) || scored.selected(t, k)));
    let u = unfairness_scored(&scored, sample, spec.notion, UnfairnessMode::Strict)?;
    let ue = unfairness_scored(&scored, sample, spec.notion, UnfairnessMode::Eps)?;
    let positive_mass: f64 = (0..n)
        .filter(|&k| scored.final_selected(k) && sample.y[k])
        .map(|k| sample.beta[k][t_max - 1])
        .sum();
    let precision = if final_mass > 0.0 {
        positive_mass / final_mass
    } else {
        return Err(Error::Undefined("policy selects nobody on the training sample".into()));
    };
    Ok(StrictCheck {
        stage_fractions,
        final_fraction: final_mass / total_t,
        upper_ok,
        lower_ok,
        consistency_ok,
        unfairness: u,
        unfairness_eps: ue,
        fairness_ok: u <= spec.eta + tol,
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairmodel::sample::StagePolicy;

    fn one_stage(x: &[f64], a: &[bool], y: &[bool]) -> FinalSample {
        FinalSample::new(
            vec![1],
            x.iter().map(|v| vec![vec![*v]]).collect(),
            a.to_vec(),
            y.to_vec(),
            vec![vec![1.0]; x.len()],
        )
        .unwrap()
    }

    fn threshold(w: f64, b: f64) -> PolicyParams {
        PolicyParams {
            stages: vec![StagePolicy { w: vec![w], b }],
            epsilon: 1e-3,
        }
    }

    #[test]
    fn select_all_is_fair() {
        let s = one_stage(&[0.0, 1.0, 2.0, 3.0], &[true, false, true, false], &[true, true, false, true]);
        let all = threshold(0.0, 1.0);
        for notion in [FairnessNotion::EqualOpportunity, FairnessNotion::DemographicParity] {
            assert_eq!(unfairness(&all, &s, notion, UnfairnessMode::Strict).unwrap(), 0.0);
        }
    }

    #[test]
    fn extreme_disparity() {
        // Group 1 positives sit at x = 1, group 0 positives at x = -1.
        let s = one_stage(&[1.0, -1.0, 1.0, -1.0], &[true, false, true, false], &[true, true, true, true]);
        let p = threshold(1.0, 0.0);
        assert_eq!(
            unfairness(&p, &s, FairnessNotion::EqualOpportunity, UnfairnessMode::Strict).unwrap(),
            1.0
        );
    }

    #[test]
    fn eps_mode_counts_the_margin() {
        let s = one_stage(&[0.0005, 0.0005], &[true, false], &[true, true]);
        let p = threshold(1.0, 0.0);
        let u = unfairness(&p, &s, FairnessNotion::EqualOpportunity, UnfairnessMode::Strict).unwrap();
        let ue = unfairness(&p, &s, FairnessNotion::EqualOpportunity, UnfairnessMode::Eps).unwrap();
        assert_eq!(u, 0.0);
        assert_eq!(ue, 1.0);
    }
}
