//! Two-stage selection simulators with known logging propensities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Population, StagePanel};
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic, sigmoid, FitOptions, LogisticModel};

/// How the second argument of `Normal(mu, v)` in the process description is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalReading {
    Variance,
    #[default]
    StdDev,
}

impl NormalReading {
    pub fn sd(self, v: f64) -> f64 {
        match self {
            NormalReading::Variance => v.sqrt(),
            NormalReading::StdDev => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    pub n: usize,
    /// Probability of the minority group `A = 0`.
    pub p_a0: f64,
    /// Spread parameter of the latent qualification `X`.
    pub x_spread: f64,
    pub noise1: f64,
    pub noise2: f64,
    pub reading: NormalReading,
    /// `P(B = 1)` for `A = 0` and `A = 1`.
    pub b_rate: [f64; 2],
    pub b_shift: f64,
    /// Stage-2 covariate shift: `-shift` for `A = 0`, `+shift` for `A = 1`.
    pub group_shift: f64,
    pub y_threshold: f64,
    /// Stage-2 logit weights on `(X^2, X^1)`.
    pub stage2_mix: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n: 1000,
            p_a0: 0.3,
            x_spread: 2.0,
            noise1: 0.5,
            noise2: 0.25,
            reading: NormalReading::StdDev,
            b_rate: [0.2, 0.1],
            b_shift: 0.5,
            group_shift: 0.5,
            y_threshold: 1.0,
            stage2_mix: [0.7, 0.3],
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_a0 > 0.0 && self.p_a0 < 1.0) {
            return Err(Error::InvalidArgument(format!("p_a0 {} must lie in (0, 1)", self.p_a0)));
        }
        if !(self.x_spread > 0.0 && self.x_spread.is_finite()) {
            return Err(Error::InvalidArgument("x_spread must be positive".into()));
        }
        for (name, v) in [("noise1", self.noise1), ("noise2", self.noise2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0")));
            }
        }
        if self.b_rate.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("b_rate entries must be probabilities".into()));
        }
        Ok(())
    }
}

/// A simulated population together with its censored logged view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDraw {
    /// Every candidate with all stage covariates and the outcome.
    pub population: Population,
    /// The logging policy's censored record, with true propensities.
    pub panel: StagePanel,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated spread")
}

pub fn gen_synthetic(params: &SyntheticParams) -> Result<SyntheticDraw> {
    params.validate()?;
    let sd = |v| params.reading.sd(v);
    let (dx, d1, d2) = (normal(sd(params.x_spread)), normal(sd(params.noise1)), normal(sd(params.noise2)));
    let b_dist = [
        Bernoulli::new(params.b_rate[0]).expect("validated"),
        Bernoulli::new(params.b_rate[1]).expect("validated"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n;
    let (mut features, mut sens, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut decisions, mut mus) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        // Fixed draw order per candidate keeps streams aligned across settings.
        let a = rng.random::<f64>() >= params.p_a0;
        let x: f64 = dx.sample(&mut rng);
        let b = b_dist[usize::from(a)].sample(&mut rng);
        let x1 = x - params.b_shift * f64::from(u8::from(b)) + d1.sample(&mut rng);
        let u1: f64 = rng.random();
        let shift = if a { params.group_shift } else { -params.group_shift };
        let x2 = x + shift + d2.sample(&mut rng);
        let u2: f64 = rng.random();

        let mu1 = sigmoid(x1);
        let mu2 = sigmoid(params.stage2_mix[0] * x2 + params.stage2_mix[1] * x1);
        let s1 = u1 < mu1;
        if s1 {
            decisions.push(vec![true, u2 < mu2]);
            mus.push(vec![mu1, mu2]);
        } else {
            decisions.push(vec![false]);
            mus.push(vec![mu1]);
        }
        features.push(vec![vec![x1], vec![x2]]);
        sens.push(a);
        labels.push(x >= params.y_threshold);
    }
    let population = Population::new(vec![1, 1], features, sens, labels)?;
    let panel = population.log(decisions, Some(mus))?;
    Ok(SyntheticDraw { population, panel })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiSyntheticParams {
    pub score1_scale: f64,
    pub b_penalty: f64,
    pub score2_scale: f64,
    pub group_shift: f64,
    /// Final-stage logit weights on `(Score_2, Score_1)`.
    pub mix: [f64; 2],
    /// `P(B = 1)` when `g(X^1)` is thresholded to 0 and to 1.
    pub b_rate: [f64; 2],
    pub g_threshold: f64,
    pub noise1_sd: f64,
    pub noise2_sd: f64,
    pub seed: u64,
}

impl Default for SemiSyntheticParams {
    fn default() -> Self {
        Self {
            score1_scale: 10.0,
            b_penalty: 2.0,
            score2_scale: 10.0,
            group_shift: 1.5,
            mix: [0.8, 0.2],
            b_rate: [0.2, 0.1],
            g_threshold: 0.5,
            noise1_sd: 1.0,
            noise2_sd: 1.0,
            seed: 0,
        }
    }
}

impl SemiSyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if ((self.mix[0] + self.mix[1]) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixing weights {:?} must sum to 1",
                self.mix
            )));
        }
        if self.b_rate.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("b_rate entries must be probabilities".into()));
        }
        if !(self.noise1_sd >= 0.0 && self.noise2_sd >= 0.0) {
            return Err(Error::InvalidArgument("noise sd must be >= 0".into()));
        }
        Ok(())
    }

    pub fn score1(&self, f1: f64, b: bool, noise: f64) -> f64 {
        self.score1_scale * f1 - self.b_penalty * f64::from(u8::from(b)) + noise
    }

    pub fn score2(&self, f2: f64, a: bool, noise: f64) -> f64 {
        let shift = if a { self.group_shift } else { -self.group_shift };
        self.score2_scale * f2 + shift + noise
    }

    pub fn final_probability(&self, score1: f64, score2: f64) -> f64 {
        sigmoid(self.mix[0] * score2 + self.mix[1] * score1)
    }
}

/// Outcome and group models fitted on the uncensored source data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticModels {
    /// `P(Y = 1 | X^1)`.
    pub f1: LogisticModel,
    /// `P(A = 1 | X^1)`.
    pub g: LogisticModel,
    /// `P(Y = 1 | X^[2])`.
    pub f2: LogisticModel,
}

pub fn fit_semisynthetic_models(source: &Population, opts: &FitOptions) -> Result<SemiSyntheticModels> {
    if source.n_stages() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the semi-synthetic process has two stages, source has {}",
            source.n_stages()
        )));
    }
    let x1: Vec<Vec<f64>> = (0..source.len()).map(|i| source.covariates(i, 1).to_vec()).collect();
    let x12: Vec<Vec<f64>> = (0..source.len()).map(|i| source.stacked(i, 2)).collect();
    Ok(SemiSyntheticModels {
        f1: fit_logistic(&x1, source.labels(), opts)?,
        g: fit_logistic(&x1, source.sensitive_values(), opts)?,
        f2: fit_logistic(&x12, source.labels(), opts)?,
    })
}

/// Simulates the two-stage logging process over real covariates and labels.
pub fn gen_semisynthetic(
    source: &Population,
    models: &SemiSyntheticModels,
    params: &SemiSyntheticParams,
) -> Result<SyntheticDraw> {
    params.validate()?;
    if source.n_stages() != 2 {
        return Err(Error::InvalidArgument("source population must have two stages".into()));
    }
    let d = source.dims();
    for (name, m, want) in [
        ("f1", &models.f1, d[0]),
        ("g", &models.g, d[0]),
        ("f2", &models.f2, d[0] + d[1]),
    ] {
        if m.dim() != want {
            return Err(Error::Dimension(format!(
                "model {name} expects {} inputs, features provide {want}",
                m.dim()
            )));
        }
    }
    let n1 = normal(params.noise1_sd);
    let n2 = normal(params.noise2_sd);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut decisions = Vec::with_capacity(source.len());
    let mut mus = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let x1 = source.covariates(i, 1);
        let g_hi = models.g.predict(x1) >= params.g_threshold;
        let b = rng.random::<f64>() < params.b_rate[usize::from(g_hi)];
        let s1 = params.score1(models.f1.predict(x1), b, n1.sample(&mut rng));
        let u1: f64 = rng.random();
        let s2 = params.score2(models.f2.predict(&source.stacked(i, 2)), source.sensitive(i), n2.sample(&mut rng));
        let u2: f64 = rng.random();
        let mu1 = sigmoid(s1);
        let mu2 = params.final_probability(s1, s2);
        if u1 < mu1 {
            decisions.push(vec![true, u2 < mu2]);
            mus.push(vec![mu1, mu2]);
        } else {
            decisions.push(vec![false]);
            mus.push(vec![mu1]);
        }
    }
    let panel = source.log(decisions, Some(mus))?;
    Ok(SyntheticDraw {
        population: source.clone(),
        panel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingStats {
    pub precision: f64,
    pub unfairness_eo: f64,
    pub unfairness_dp: f64,
    /// `|I^t| / |I^0|` for `t = 1..=T`.
    pub stage_rates: Vec<f64>,
    pub final_count: usize,
}

/// Precision and unfairness of the logged decisions, scored against the
/// population's full labels.
pub fn logging_policy_stats(panel: &StagePanel, population: &Population) -> Result<LoggingStats> {
    if panel.len() != population.len() {
        return Err(Error::Dimension(format!(
            "panel has {} candidates, population {}",
            panel.len(),
            population.len()
        )));
    }
    let final_set = panel.final_set();
    if final_set.is_empty() {
        return Err(Error::Undefined("no candidate passed the final stage".into()));
    }
    let positives = final_set.iter().filter(|&&i| population.label(i)).count();
    let selected = |i: usize| panel.reached(i) == panel.n_stages();
    let rate = |filter: &dyn Fn(usize) -> bool| -> Result<f64> {
        let members: Vec<usize> = (0..panel.len()).filter(|&i| filter(i)).collect();
        if members.is_empty() {
            return Err(Error::Undefined("empty conditioning group".into()));
        }
        Ok(members.iter().filter(|&&i| selected(i)).count() as f64 / members.len() as f64)
    };
    let eo = (rate(&|i| population.label(i) && population.sensitive(i))?
        - rate(&|i| population.label(i) && !population.sensitive(i))?)
    .abs();
    let dp = (rate(&|i| population.sensitive(i))? - rate(&|i| !population.sensitive(i))?).abs();
    let n0 = panel.len() as f64;
    Ok(LoggingStats {
        precision: positives as f64 / final_set.len() as f64,
        unfairness_eo: eo,
        unfairness_dp: dp,
        stage_rates: (1..=panel.n_stages()).map(|t| panel.index_set(t).len() as f64 / n0).collect(),
        final_count: final_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_makes_stage_one_covariate_exact() {
        let params = SyntheticParams {
            n: 500,
            noise1: 0.0,
            noise2: 0.0,
            b_rate: [0.0, 0.0],
            seed: 4,
            ..SyntheticParams::default()
        };
        let draw = gen_synthetic(&params).unwrap();
        let pop = &draw.population;
        for i in 0..pop.len() {
            let x1 = pop.covariates(i, 1)[0];
            assert_eq!(pop.label(i), x1 >= 1.0);
            let shift = if pop.sensitive(i) { 0.5 } else { -0.5 };
            assert_eq!(pop.covariates(i, 2)[0], x1 + shift);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let p = SyntheticParams {
            n: 300,
            seed: 9,
            ..SyntheticParams::default()
        };
        assert_eq!(gen_synthetic(&p).unwrap(), gen_synthetic(&p).unwrap());
    }

    #[test]
    fn score_plug_in() {
        let p = SemiSyntheticParams::default();
        assert_eq!(p.score2(1.0, true, 0.0), 11.5);
        let s1 = p.score1(0.4, false, 0.0);
        assert_eq!(s1, 4.0);
        let want = 1.0 / (1.0 + (-(0.8 * 11.5 + 0.2 * 4.0f64)).exp());
        assert!((p.final_probability(s1, 11.5) - want).abs() < 1e-15);
    }

    #[test]
    fn mix_must_sum_to_one() {
        let p = SemiSyntheticParams {
            mix: [0.7, 0.2],
            ..SemiSyntheticParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn all_selected_positive_gives_unit_precision() {
        let pop = Population::new(
            vec![1],
            vec![vec![vec![0.0]]; 4],
            vec![true, false, true, false],
            vec![true, true, false, false],
        )
        .unwrap();
        let panel = pop
            .log(vec![vec![true], vec![true], vec![false], vec![false]], None)
            .unwrap();
        let s = logging_policy_stats(&panel, &pop).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.unfairness_eo, 0.0);
        assert_eq!(s.stage_rates, vec![0.5]);
    }
}
