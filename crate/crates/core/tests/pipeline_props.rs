// Invariants of the pipeline around the solver: preprocessing, stage
// decisions, repair and the weights.

use proptest::prelude::*;
use stagefair::dataset::{ingest_reader, preprocess, Schema, SelectionSpec};
use stagefair::eval::{apply_policy, count_bounds, counterfactual_evaluate, repair};
use stagefair::fairmodel::{PolicyParams, StagePolicy};
use stagefair::propensity::{compute_ipw_weights, fit_propensities, true_propensity_weights, FitOptions};
use stagefair::synthgen::{gen_synthetic, SyntheticDraw, SyntheticParams};

fn draw(n: usize, seed: u64) -> SyntheticDraw {
    gen_synthetic(&SyntheticParams {
        n,
        seed,
        ..SyntheticParams::default()
    })
    .unwrap()
}

fn policy(c: &[f64; 5]) -> PolicyParams {
    PolicyParams {
        stages: vec![
            StagePolicy { w: vec![c[0]], b: c[1] },
            StagePolicy { w: vec![c[2], c[3]], b: c[4] },
        ],
        epsilon: 1e-3,
    }
}

fn table_csv(rows: &[(f64, f64, bool, bool)]) -> String {
    let mut s = String::from("u,v,g,y\n");
    for (u, v, g, y) in rows {
        s.push_str(&format!("{u},{v},{},{}\n", u8::from(*g), u8::from(*y)));
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn standardizing_twice_changes_nothing(
        body in prop::collection::vec((-50.0f64..50.0, -3.0f64..3.0, any::<bool>(), any::<bool>()), 3..40),
    ) {
        let mut rows = body;
        // Both groups and both labels appear, and neither covariate is constant.
        rows.push((-60.0, -4.0, false, false));
        rows.push((60.0, 4.0, true, true));
        let schema = Schema::new("g", "y");
        let once = preprocess(&ingest_reader(table_csv(&rows).as_bytes(), &schema).unwrap()).unwrap();
        let again_rows: Vec<_> = once
            .rows
            .iter()
            .zip(once.sensitive.iter().zip(&once.labels))
            .map(|(r, (g, y))| (r[0], r[1], *g, *y))
            .collect();
        let twice = preprocess(&ingest_reader(table_csv(&again_rows).as_bytes(), &schema).unwrap()).unwrap();
        prop_assert_eq!(&once.sensitive, &twice.sensitive);
        prop_assert_eq!(&once.labels, &twice.labels);
        for (a, b) in once.rows.iter().zip(&twice.rows) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn decisions_nest_before_and_after_repair(
        seed in 0u64..1_000,
        c in prop::array::uniform5(-2.0f64..2.0),
        upper in (0.3f64..1.0, 0.05f64..1.0),
        lower in 0.01f64..1.0,
    ) {
        let pop = draw(150, seed).population;
        let u2 = upper.0 * upper.1;
        let spec = SelectionSpec::new(vec![upper.0, u2], lower * u2, 1.0);
        let (caps, need) = count_bounds(&spec, pop.len());
        // Rounding can leave no admissible final count; repair refuses those.
        prop_assume!(need <= caps[1]);
        let raw = apply_policy(&policy(&c), &pop).unwrap();
        prop_assert!(raw.is_nested());
        let (fixed, _) = repair(&raw, &spec, seed).unwrap();
        prop_assert!(fixed.is_nested());
        for t in 1..=2 {
            prop_assert!(fixed.count(t) <= caps[t - 1]);
        }
        prop_assert!(fixed.count(2) >= need);
    }

    #[test]
    fn weights_grow_across_stages(seed in 0u64..1_000, floor in 0.0f64..0.2) {
        let d = draw(400, seed);
        let models = fit_propensities(&d.panel, &FitOptions::default()).unwrap();
        for w in [compute_ipw_weights(&d.panel, &models, floor).unwrap(), true_propensity_weights(&d.panel).unwrap()] {
            for b in &w.beta {
                prop_assert!(b[0] >= 1.0);
                prop_assert!(b[1] >= b[0]);
            }
        }
    }

    #[test]
    fn select_all_rate_is_the_weight_mean(seed in 0u64..1_000) {
        let d = draw(300, seed);
        let w = true_propensity_weights(&d.panel).unwrap();
        let all = policy(&[0.0, 1.0, 0.0, 0.0, 1.0]);
        let r = counterfactual_evaluate(&all, &d.panel, &w).unwrap();
        prop_assert!((r.selection_rate - r.weight_mean).abs() < 1e-12);
        let total: f64 = w.beta.iter().map(|b| b[1]).sum();
        let pos: f64 = w.ids.iter().zip(&w.beta).filter(|(i, _)| d.panel.outcome(**i).unwrap()).map(|(_, b)| b[1]).sum();
        prop_assert!((r.precision - pos / total).abs() < 1e-12);
    }
}

// Final-stage weights reach the thousands, so a single draw can sit several
// percent off; the average over draws should not.
#[test]
fn true_weights_recover_the_population_size() {
    let means: Vec<f64> = (0..12)
        .map(|s| {
            let d = draw(50_000, s);
            let w = true_propensity_weights(&d.panel).unwrap();
            w.beta.iter().map(|b| b[1]).sum::<f64>() / d.panel.len() as f64
        })
        .collect();
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    assert!((avg - 1.0).abs() < 0.05, "{means:?}");
}
