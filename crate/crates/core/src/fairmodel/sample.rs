use serde::{Deserialize, Serialize};

use crate::dataset::{Population, StagePanel};
use crate::error::{Error, Result};
use crate::propensity::WeightSet;

/// The weighted final-stage sample the model is trained on: stacked
/// covariates `x^[t]`, group, outcome and `beta^t` for each member of `I^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSample {
    pub n_stages: usize,
    /// Per-stage covariate dimensions `d_t`.
    pub dims: Vec<usize>,
    /// `x[k][t-1]` is the stacked vector `x^[t]` of member `k`.
    pub x: Vec<Vec<Vec<f64>>>,
    pub a: Vec<bool>,
    pub y: Vec<bool>,
    /// `beta[k][t-1]`.
    pub beta: Vec<Vec<f64>>,
}

impl FinalSample {
    pub fn new(
        dims: Vec<usize>,
        x: Vec<Vec<Vec<f64>>>,
        a: Vec<bool>,
        y: Vec<bool>,
        beta: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let t_max = dims.len();
        if t_max == 0 {
            return Err(Error::Dimension("at least one stage is required".into()));
        }
        let n = x.len();
        if a.len() != n || y.len() != n || beta.len() != n {
            return Err(Error::Dimension(format!(
                "sample has {n} covariate rows, {} groups, {} outcomes, {} weight rows",
                a.len(),
                y.len(),
                beta.len()
            )));
        }
        for k in 0..n {
            if x[k].len() != t_max || beta[k].len() != t_max {
                return Err(Error::Dimension(format!("member {k} does not cover {t_max} stages")));
            }
            let mut want = 0;
            for t in 0..t_max {
                want += dims[t];
                if x[k][t].len() != want {
                    return Err(Error::Dimension(format!(
                        "member {k} stage {} stacked covariates have length {}, expected {want}",
                        t + 1,
                        x[k][t].len()
                    )));
                }
                if !(beta[k][t] > 0.0 && beta[k][t].is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "member {k} has non-positive weight at stage {}",
                        t + 1
                    )));
                }
            }
        }
        Ok(Self {
            n_stages: t_max,
            dims,
            x,
            a,
            y,
            beta,
        })
    }

    /// Training sample from a logged panel and weights on its final stage.
    pub fn from_panel(panel: &StagePanel, weights: &WeightSet) -> Result<Self> {
        let ids = panel.final_set();
        if ids != weights.ids {
            return Err(Error::Dimension(
                "weight set does not cover exactly the panel's final-stage candidates".into(),
            ));
        }
        let t_max = panel.n_stages();
        let x = ids
            .iter()
            .map(|&i| (1..=t_max).map(|t| panel.stacked(i, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let a = ids.iter().map(|&i| panel.sensitive(i)).collect();
        let y = ids.iter().map(|&i| panel.outcome(i)).collect::<Result<Vec<_>>>()?;
        Self::new(panel.dims().to_vec(), x, a, y, weights.beta.clone())
    }

    /// Every member of a fully observed population, with unit weights.
    pub fn from_population(pop: &Population) -> Result<Self> {
        let t_max = pop.n_stages();
        let x = (0..pop.len())
            .map(|i| (1..=t_max).map(|t| pop.stacked(i, t)).collect())
            .collect();
        Self::new(
            pop.dims().to_vec(),
            x,
            pop.sensitive_values().to_vec(),
            pop.labels().to_vec(),
            vec![vec![1.0; t_max]; pop.len()],
        )
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Stacked dimension `d_1 + ... + d_t`.
    pub fn stacked_dim(&self, t: usize) -> usize {
        self.dims[..t].iter().sum()
    }

    pub fn total(&self, t: usize) -> f64 {
        self.beta.iter().map(|b| b[t - 1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePolicy {
    /// Slopes on the stacked covariates `x^[t]`.
    pub w: Vec<f64>,
    pub b: f64,
}

/// Linear stage rules: select at stage `t` iff `w_t . x^[t] + b_t > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub stages: Vec<StagePolicy>,
    pub epsilon: f64,
}

impl PolicyParams {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn score(&self, t: usize, x: &[f64]) -> f64 {
        let s = &self.stages[t - 1];
        s.b + s.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn decide(&self, t: usize, x: &[f64]) -> bool {
        self.score(t, x) > 0.0
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.stages.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "policy has {} stages, data has {}",
                self.stages.len(),
                dims.len()
            )));
        }
        let mut want = 0;
        for (t, s) in self.stages.iter().enumerate() {
            want += dims[t];
            if s.w.len() != want {
                return Err(Error::Dimension(format!(
                    "stage {} policy has {} slopes, covariates have {want}",
                    t + 1,
                    s.w.len()
                )));
            }
        }
        Ok(())
    }

    /// Same decisions, positively rescaled.
    pub fn scaled(&self, c: f64) -> PolicyParams {
        PolicyParams {
            stages: self
                .stages
                .iter()
                .map(|s| StagePolicy {
                    w: s.w.iter().map(|w| w * c).collect(),
                    b: s.b * c,
                })
                .collect(),
            epsilon: self.epsilon,
        }
    }

    /// Coefficients keyed by column name for export; `names[t]` lists the
    /// stage-`t` columns.
    pub fn named(&self, names: &[Vec<String>]) -> serde_json::Value {
        let stages: Vec<serde_json::Value> = self
            .stages
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let cols: Vec<&String> = names.iter().take(t + 1).flatten().collect();
                let coef: serde_json::Map<String, serde_json::Value> = s
                    .w
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        let key = cols.get(j).map(|c| c.to_string()).unwrap_or_else(|| format!("w{j}"));
                        (key, serde_json::json!(w))
                    })
                    .collect();
                serde_json::json!({"stage": t + 1, "coefficients": coef, "offset": s.b})
            })
            .collect();
        serde_json::json!({"epsilon": self.epsilon, "stages": stages})
    }
}
