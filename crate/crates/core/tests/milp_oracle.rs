// Cross-checks the simplex and branch-and-bound against brute force: LP optima
// by enumerating every basic solution, MILP optima by enumerating binaries.

mod common;

use common::{milp_oracle, random_lp, random_milp, vertex_oracle};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagefair::milp::{solve_lp, solve_milp, LpStatus, MilpLimits, MilpStatus, Sense};

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut feasible, mut infeasible) = (0, 0);
    for case in 0..20 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(2..=8);
        let lp = random_lp(&mut rng, n, m);
        let sol = solve_lp(&lp).unwrap();
        match vertex_oracle(&lp) {
            Some(v) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
                assert!((sol.objective - v).abs() < 1e-7, "case {case}: {} vs {v}", sol.objective);
                assert!(lp.max_violation(&sol.x) < 1e-7, "case {case}");
                assert!(sol.duality_gap() < 1e-7, "case {case}: gap {}", sol.duality_gap());
            }
            None => {
                infeasible += 1;
                assert_eq!(sol.status, LpStatus::Infeasible, "case {case}");
            }
        }
    }
    assert!(feasible >= 5 && infeasible >= 1, "{feasible} feasible, {infeasible} infeasible");
}

#[test]
fn milp_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut feasible = 0;
    for case in 0..20 {
        let inst = random_milp(&mut rng, 8);
        let sol = solve_milp(&inst, &MilpLimits::default()).unwrap();
        match milp_oracle(&inst) {
            Some(v) => {
                feasible += 1;
                assert_eq!(sol.status, MilpStatus::Optimal, "case {case}");
                assert!((sol.objective - v).abs() < 1e-6, "case {case}: {} vs {v}", sol.objective);
                let x = sol.incumbent.as_ref().unwrap();
                inst.check(x, 1e-7, 1e-9).unwrap();
                assert!(sol.stats.max_duality_gap < 1e-6, "case {case}");
            }
            None => assert_eq!(sol.status, MilpStatus::Infeasible, "case {case}"),
        }
    }
    assert!(feasible >= 10, "only {feasible} feasible instances");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn milp_search_is_deterministic_and_sound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_milp(&mut rng, 8);
        let a = solve_milp(&inst, &MilpLimits::default()).unwrap();
        let b = solve_milp(&inst, &MilpLimits::default()).unwrap();
        prop_assert_eq!(&a.incumbent, &b.incumbent);
        prop_assert_eq!(a.nodes, b.nodes);
        prop_assert_eq!(a.stats.bound_violations, 0);
        if let Some(x) = &a.incumbent {
            prop_assert!(inst.check(x, 1e-7, 1e-9).is_ok());
            let sign = if inst.lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
            prop_assert!(sign * (a.best_bound - a.objective) >= -1e-9);
        }
    }
}
