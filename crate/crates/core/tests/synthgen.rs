use stagefair::synthgen::{gen_synthetic, logging_policy_stats, NormalReading, SyntheticParams};
use statrs::distribution::{ContinuousCDF, Normal};

fn draw(n: usize, seed: u64, edit: impl FnOnce(&mut SyntheticParams)) -> stagefair::synthgen::SyntheticDraw {
    let mut p = SyntheticParams {
        n,
        seed,
        ..SyntheticParams::default()
    };
    edit(&mut p);
    gen_synthetic(&p).unwrap()
}

fn positive_rate(d: &stagefair::synthgen::SyntheticDraw) -> f64 {
    let pop = &d.population;
    pop.labels().iter().filter(|y| **y).count() as f64 / pop.len() as f64
}

#[test]
fn outcome_rate_matches_normal_tail_under_both_readings() {
    let n = 200_000;
    // Monte-Carlo sd of a proportion near 0.3 at this n is about 0.001.
    let var = draw(n, 21, |p| p.reading = NormalReading::Variance);
    let tail_var = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.0 / 2f64.sqrt());
    assert!((tail_var - 0.2398).abs() < 5e-5);
    assert!((positive_rate(&var) - tail_var).abs() < 0.005, "{}", positive_rate(&var));

    let sd = draw(n, 21, |_| {});
    let tail_sd = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(0.5);
    assert!((positive_rate(&sd) - tail_sd).abs() < 0.005, "{}", positive_rate(&sd));
}

#[test]
fn symmetric_groups_have_no_disparity() {
    let d = draw(200_000, 5, |p| {
        p.p_a0 = 0.5;
        p.b_rate = [0.15, 0.15];
        p.group_shift = 0.0;
    });
    let s = logging_policy_stats(&d.panel, &d.population).unwrap();
    assert!(s.unfairness_eo <= 0.01, "{}", s.unfairness_eo);
    assert!(s.unfairness_dp <= 0.01, "{}", s.unfairness_dp);
}

#[test]
fn realized_propensities_are_interior() {
    let d = draw(20_000, 2, |_| {});
    let mu = d.panel.true_propensities().unwrap();
    let (lo, hi) = mu
        .iter()
        .flatten()
        .fold((1.0f64, 0.0f64), |(lo, hi), m| (lo.min(*m), hi.max(*m)));
    assert!(lo > 0.0 && hi < 1.0, "{lo} {hi}");
}

#[test]
fn logging_benchmark_in_band() {
    let d = draw(200_000, 2024, |_| {});
    let s = logging_policy_stats(&d.panel, &d.population).unwrap();
    eprintln!("precision {:.4} eo {:.4} dp {:.4} rates {:?}", s.precision, s.unfairness_eo, s.unfairness_dp, s.stage_rates);
    assert!((0.66..=0.71).contains(&s.precision));
    assert!((0.02..=0.08).contains(&s.unfairness_eo));
}
