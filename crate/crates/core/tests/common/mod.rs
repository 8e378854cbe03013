// Shared generators and brute-force references for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stagefair::dataset::{FairnessNotion, SelectionSpec};
use stagefair::fairmodel::FinalSample;
use stagefair::milp::{LpInstance, MilpInstance, Relation, Sense};

/// Best vertex of a box-bounded LP with inequality rows, or None if infeasible.
pub fn vertex_oracle(lp: &LpInstance) -> Option<f64> {
    let n = lp.num_vars();
    // Candidate active sets: rows as equalities plus lower/upper bounds.
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, c) in &row.coeffs {
            a[j] += c;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.lower[j]));
        planes.push((e, lp.upper[j]));
    }
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; n];
    fn combos(k: usize, start: usize, total: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == pick.len() {
            f(pick);
            return;
        }
        for i in start..total {
            pick[k] = i;
            combos(k + 1, i + 1, total, pick, f);
        }
    }
    let total = planes.len();
    combos(0, 0, total, &mut pick, &mut |set: &[usize]| {
        let a = DMatrix::from_fn(n, n, |r, c| planes[set[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| planes[set[r]].1);
        let Some(x) = a.lu().solve(&b) else { return };
        let x: Vec<f64> = x.iter().copied().collect();
        if x.iter().any(|v| !v.is_finite()) || lp.max_violation(&x) > 1e-7 {
            return;
        }
        let v = lp.objective_value(&x);
        best = Some(match (best, lp.sense) {
            (None, _) => v,
            (Some(b), Sense::Maximize) => b.max(v),
            (Some(b), Sense::Minimize) => b.min(v),
        });
    });
    best
}

pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LpInstance {
    let sense = if rng.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
    let objective = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-3..=0) as f64).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0..=4) as f64).collect();
    let mut lp = LpInstance::new(sense, objective, lower, upper);
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.random_bool(0.7) {
                coeffs.push((j, rng.random_range(-4..=4) as f64));
            }
        }
        let rel = if rng.random_bool(0.5) { Relation::Le } else { Relation::Ge };
        lp.add_row(coeffs, rel, rng.random_range(-4..=4) as f64);
    }
    lp
}

pub fn milp_oracle(inst: &MilpInstance) -> Option<f64> {
    let k = inst.binaries.len();
    let lp = &inst.lp;
    let cont: Vec<usize> = (0..lp.num_vars()).filter(|j| !inst.binaries.contains(j)).collect();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << k) {
        let mut fixed = vec![0.0; lp.num_vars()];
        for (i, &b) in inst.binaries.iter().enumerate() {
            fixed[b] = ((mask >> i) & 1) as f64;
        }
        // Substitute the binaries and enumerate vertices over the continuous part.
        let mut reduced = LpInstance::new(
            lp.sense,
            cont.iter().map(|&j| lp.objective[j]).collect(),
            cont.iter().map(|&j| lp.lower[j]).collect(),
            cont.iter().map(|&j| lp.upper[j]).collect(),
        );
        for row in &lp.rows {
            let mut rhs = row.rhs;
            let mut coeffs = Vec::new();
            for &(j, a) in &row.coeffs {
                match cont.iter().position(|&c| c == j) {
                    Some(p) => coeffs.push((p, a)),
                    None => rhs -= a * fixed[j],
                }
            }
            reduced.add_row(coeffs, row.relation, rhs);
        }
        let fixed_obj: f64 = inst.binaries.iter().map(|&b| lp.objective[b] * fixed[b]).sum();
        if let Some(v) = vertex_oracle(&reduced) {
            let v = v + fixed_obj;
            best = Some(match (best, lp.sense) {
                (None, _) => v,
                (Some(b), Sense::Maximize) => b.max(v),
                (Some(b), Sense::Minimize) => b.min(v),
            });
        }
    }
    best
}

pub fn random_milp(rng: &mut ChaCha8Rng, max_binaries: usize) -> MilpInstance {
    let k = rng.random_range(3..=max_binaries);
    let c = rng.random_range(1..=3);
    let m = rng.random_range(2..=6);
    let mut lp = random_lp(rng, k + c, m);
    for b in 0..k {
        lp.lower[b] = 0.0;
        lp.upper[b] = 1.0;
    }
    MilpInstance::new(lp, (0..k).collect())
}

pub fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> FinalSample {
    loop {
        let x: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                vec![vec![a], vec![a, b]]
            })
            .collect();
        let a: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let ok = [false, true].iter().all(|g| (0..n).any(|k| a[k] == *g && y[k]));
        if !ok {
            continue;
        }
        let beta = (0..n)
            .map(|_| {
                let b2: f64 = rng.random_range(1.0..5.0);
                vec![rng.random_range(1.0..=b2), b2]
            })
            .collect();
        return FinalSample::new(vec![1, 1], x, a, y, beta).unwrap();
    }
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> SelectionSpec {
    let a1: f64 = rng.random_range(0.5..=1.0);
    let a2: f64 = rng.random_range(0.3..=a1);
    let lo: f64 = rng.random_range(0.1..=a2);
    let eta: f64 = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..0.6) };
    let notion = if rng.random_bool(0.5) {
        FairnessNotion::EqualOpportunity
    } else {
        FairnessNotion::DemographicParity
    };
    SelectionSpec::new(vec![a1, a2], lo, eta).with_notion(notion)
}
