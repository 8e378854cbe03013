//! Incumbent search over linear stage rules with fixed directions.
//!
//! For directions `v_t` the stage rules reduce to thresholds on the scores
//! `v_t . x^[t]`. The final-stage threshold is scanned over the sorted scores;
//! each earlier stage then takes the tightest threshold that keeps everyone
//! who passes the next stage. Every selected candidate is placed at least
//! `epsilon` above its threshold, so the resulting policy is feasible for the
//! subproblem whenever the ratio and fairness rows hold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::sample::{FinalSample, PolicyParams, StagePolicy};
use crate::dataset::SelectionSpec;
use crate::propensity::{fit_logistic, FitOptions};

/// What a candidate selection is scored by.
#[derive(Debug, Clone, Copy)]
pub enum Goal {
    Ratio,
    /// Dinkelbach objective `N - rho * D`.
    Linear(f64),
}

#[derive(Debug, Clone)]
pub struct Found {
    pub policy: PolicyParams,
    pub value: f64,
    pub ratio: f64,
}

pub struct ThresholdSearch<'a> {
    sample: &'a FinalSample,
    spec: &'a SelectionSpec,
    groups: &'a [Vec<usize>; 2],
    group_mass: [f64; 2],
    totals: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> ThresholdSearch<'a> {
    pub fn new(sample: &'a FinalSample, spec: &'a SelectionSpec, groups: &'a [Vec<usize>; 2]) -> Self {
        let t_max = sample.n_stages;
        let mass = |g: &[usize]| g.iter().map(|&k| sample.beta[k][t_max - 1]).sum::<f64>();
        Self {
            sample,
            spec,
            groups,
            group_mass: [mass(&groups[0]), mass(&groups[1])],
            totals: (1..=t_max).map(|t| sample.total(t)).collect(),
        }
    }

    /// Default directions per stage: the sign pair in one dimension, an angle
    /// grid in two, and axes, mean-difference and random draws beyond.
    pub fn base_directions(&self, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let s = self.sample;
        let t_max = s.n_stages;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=t_max)
            .map(|t| {
                let d = s.stacked_dim(t);
                let mut dirs: Vec<Vec<f64>> = Vec::new();
                match d {
                    0 => dirs.push(Vec::new()),
                    1 => {
                        dirs.push(vec![1.0]);
                        dirs.push(vec![-1.0]);
                    }
                    2 => {
                        for k in 0..32 {
                            let th = std::f64::consts::TAU * k as f64 / 32.0;
                            dirs.push(vec![th.cos(), th.sin()]);
                        }
                    }
                    _ => {
                        for j in 0..d {
                            for sign in [1.0, -1.0] {
                                let mut e = vec![0.0; d];
                                e[j] = sign;
                                dirs.push(e);
                            }
                        }
                        // Weighted mean of positives minus mean of negatives.
                        let mut diff = vec![0.0; d];
                        let (mut wp, mut wn) = (0.0, 0.0);
                        for k in 0..s.len() {
                            let b = s.beta[k][t_max - 1];
                            if s.y[k] {
                                wp += b;
                            } else {
                                wn += b;
                            }
                        }
                        for k in 0..s.len() {
                            let b = s.beta[k][t_max - 1];
                            let f = if s.y[k] { b / wp.max(1e-300) } else { -b / wn.max(1e-300) };
                            for j in 0..d {
                                diff[j] += f * s.x[k][t - 1][j];
                            }
                        }
                        dirs.push(diff);
                        // Outcome regression on the stage covariates (unweighted).
                        let xs: Vec<Vec<f64>> = s.x.iter().map(|xk| xk[t - 1].clone()).collect();
                        let opts = FitOptions {
                            l2: 1e-2,
                            max_iter: 50,
                            ..FitOptions::default()
                        };
                        if let Ok(m) = fit_logistic(&xs, &s.y, &opts) {
                            dirs.push(m.weights);
                        }
                        for _ in 0..16 {
                            dirs.push((0..d).map(|_| StandardNormal.sample(&mut rng)).collect());
                        }
                    }
                }
                dirs
            })
            .collect()
    }

    /// Best policy over every combination of the given per-stage directions.
    pub fn search(&self, directions: &[Vec<Vec<f64>>], goal: Goal) -> Option<Found> {
        let t_max = self.sample.n_stages;
        let mut best: Option<Found> = None;
        let mut idx = vec![0usize; t_max];
        if directions.iter().any(|d| d.is_empty()) {
            return None;
        }
        loop {
            let combo: Vec<&[f64]> = (0..t_max).map(|t| directions[t][idx[t]].as_slice()).collect();
            if let Some(f) = self.scan(&combo, goal) {
                let better = match &best {
                    None => true,
                    Some(b) => f.value > b.value + 1e-12,
                };
                if better {
                    best = Some(f);
                }
            }
            let mut t = 0;
            loop {
                if t == t_max {
                    return best;
                }
                idx[t] += 1;
                if idx[t] < directions[t].len() {
                    break;
                }
                idx[t] = 0;
                t += 1;
            }
        }
    }

    fn scan(&self, dirs: &[&[f64]], goal: Goal) -> Option<Found> {
        let s = self.sample;
        let spec = self.spec;
        let t_max = s.n_stages;
        let n = s.len();
        let u: Vec<Vec<f64>> = (0..t_max)
            .map(|t| (0..n).map(|k| dot(dirs[t], &s.x[k][t])).collect())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| u[t_max - 1][b].total_cmp(&u[t_max - 1][a]).then(a.cmp(&b)));

        let tol = 1e-9;
        let last = t_max - 1;
        // Earlier stages keep everyone scoring at least the running minimum
        // of the chosen set; their mass only grows with the prefix.
        let earlier: Vec<(Vec<f64>, Vec<f64>)> = (0..last)
            .map(|t| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| u[t][b].total_cmp(&u[t][a]));
                let mut acc = 0.0;
                let mut prefix = vec![0.0];
                for &k in &idx {
                    acc += s.beta[k][t];
                    prefix.push(acc);
                }
                (idx.iter().map(|&k| u[t][k]).collect(), prefix)
            })
            .collect();
        let mut mins = vec![f64::INFINITY; last];
        let mut best: Option<(f64, f64, usize)> = None;
        let (mut num, mut den) = (0.0, 0.0);
        let mut grp = [0.0; 2];
        let mut pos = 0;
        'scan: while pos < n {
            // Admit every candidate tied at this score together.
            let level = u[last][order[pos]];
            while pos < n && u[last][order[pos]] == level {
                let k = order[pos];
                let b = s.beta[k][last];
                den += b;
                if s.y[k] {
                    num += b;
                }
                for g in 0..2 {
                    if self.groups[g].binary_search(&k).is_ok() {
                        grp[g] += b;
                    }
                }
                for (t, m) in mins.iter_mut().enumerate() {
                    *m = m.min(u[t][k]);
                }
                pos += 1;
            }
            if den > spec.upper_ratios[last] * self.totals[last] * (1.0 + tol) {
                break;
            }
            for (t, (sorted, prefix)) in earlier.iter().enumerate() {
                let kept = sorted.partition_point(|&v| v >= mins[t]);
                if prefix[kept] > spec.upper_ratios[t] * self.totals[t] * (1.0 + tol) {
                    break 'scan;
                }
            }
            if den < spec.lower_ratio * self.totals[last] * (1.0 - tol) {
                continue;
            }
            let r = [grp[0] / self.group_mass[0], grp[1] / self.group_mass[1]];
            if (r[0] - r[1]).abs() > spec.eta + tol {
                continue;
            }
            let value = match goal {
                Goal::Ratio => num / den,
                Goal::Linear(rho) => num - rho * den,
            };
            if best.is_none_or(|(v, _, _)| value > v + 1e-12) {
                best = Some((value, num / den, pos));
            }
        }
        let (value, ratio, count) = best?;
        let mut chosen = vec![false; n];
        for &k in &order[..count] {
            chosen[k] = true;
        }
        // Earlier stages: tightest threshold keeping the next stage's set.
        let mut sets = vec![chosen];
        for t in (0..last).rev() {
            let next = &sets[0];
            let cut = (0..n).filter(|&k| next[k]).map(|k| u[t][k]).fold(f64::INFINITY, f64::min);
            let set: Vec<bool> = (0..n).map(|k| u[t][k] >= cut).collect();
            let mass: f64 = (0..n).filter(|&k| set[k]).map(|k| s.beta[k][t]).sum();
            if mass > spec.upper_ratios[t] * self.totals[t] * (1.0 + tol) {
                return None;
            }
            sets.insert(0, set);
        }
        let mut stages = Vec::with_capacity(t_max);
        for t in 0..t_max {
            stages.push(self.realize(dirs[t], &u[t], &sets[t])?);
        }
        Some(Found {
            policy: PolicyParams {
                stages,
                epsilon: spec.epsilon,
            },
            value,
            ratio,
        })
    }

    /// Scales a direction and places the offset midway between the lowest
    /// selected score and the highest rejected one.
    fn realize(&self, dir: &[f64], u: &[f64], set: &[bool]) -> Option<StagePolicy> {
        let spec = self.spec;
        let lo_in = (0..u.len()).filter(|&k| set[k]).map(|k| u[k]).fold(f64::INFINITY, f64::min);
        let hi_out = (0..u.len()).filter(|&k| !set[k]).map(|k| u[k]).fold(f64::NEG_INFINITY, f64::max);
        if hi_out == f64::NEG_INFINITY {
            return Some(StagePolicy {
                w: vec![0.0; dir.len()],
                b: spec.b_max,
            });
        }
        if lo_in == f64::INFINITY {
            return Some(StagePolicy {
                w: vec![0.0; dir.len()],
                b: -spec.b_max,
            });
        }
        let gap = lo_in - hi_out;
        let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(gap > 0.0) || norm == 0.0 {
            return None;
        }
        let theta = 0.5 * (lo_in + hi_out);
        let mut c = spec.w_max / norm;
        if theta != 0.0 {
            c = c.min(spec.b_max / theta.abs());
        }
        if c * gap * 0.5 < spec.epsilon * (1.0 + 1e-6) + 1e-12 {
            return None;
        }
        // Rounding in `c * theta` can land an ulp outside the box.
        Some(StagePolicy {
            w: dir.iter().map(|v| (v * c).clamp(-spec.w_max, spec.w_max)).collect(),
            b: (-c * theta).clamp(-spec.b_max, spec.b_max),
        })
    }
}
