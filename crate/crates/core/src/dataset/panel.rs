use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged candidate. `selections[t-1]` is the stage-`t` decision; a
/// candidate dropped at stage `t` has exactly `t` decisions and covariates
/// for stages `1..=t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub covariates: Vec<Vec<f64>>,
    pub sensitive: bool,
    pub selections: Vec<bool>,
    pub outcome: Option<bool>,
}

/// Censored multi-stage observational data: outcomes exist only for candidates
/// that passed every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PanelRepr", into = "PanelRepr")]
pub struct StagePanel {
    n_stages: usize,
    dims: Vec<usize>,
    candidates: Vec<Candidate>,
    column_names: Vec<Vec<String>>,
    true_propensities: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct PanelRepr {
    n_stages: usize,
    dims: Vec<usize>,
    candidates: Vec<Candidate>,
    #[serde(default)]
    column_names: Vec<Vec<String>>,
    #[serde(default)]
    true_propensities: Option<Vec<Vec<f64>>>,
}

impl TryFrom<PanelRepr> for StagePanel {
    type Error = Error;
    fn try_from(r: PanelRepr) -> Result<Self> {
        let mut p = StagePanel::new(r.n_stages, r.dims, r.candidates)?;
        if !r.column_names.is_empty() {
            p = p.with_column_names(r.column_names)?;
        }
        if let Some(mu) = r.true_propensities {
            p = p.with_true_propensities(mu)?;
        }
        Ok(p)
    }
}

impl From<StagePanel> for PanelRepr {
    fn from(p: StagePanel) -> Self {
        PanelRepr {
            n_stages: p.n_stages,
            dims: p.dims,
            candidates: p.candidates,
            column_names: p.column_names,
            true_propensities: p.true_propensities,
        }
    }
}

pub(crate) fn default_names(dims: &[usize]) -> Vec<Vec<String>> {
    dims.iter()
        .enumerate()
        .map(|(t, &d)| (1..=d).map(|k| format!("x{}_{}", t + 1, k)).collect())
        .collect()
}

impl StagePanel {
    pub fn new(n_stages: usize, dims: Vec<usize>, candidates: Vec<Candidate>) -> Result<Self> {
        if n_stages == 0 {
            return Err(Error::Panel("at least one stage is required".into()));
        }
        if dims.len() != n_stages {
            return Err(Error::Panel(format!(
                "{} stage dimensions given for {n_stages} stages",
                dims.len()
            )));
        }
        for (i, c) in candidates.iter().enumerate() {
            let k = c.selections.len();
            if k == 0 || k > n_stages {
                return Err(Error::Panel(format!(
                    "candidate {i} has {k} stage decisions, expected 1..={n_stages}"
                )));
            }
            if let Some(pos) = c.selections.iter().position(|s| !s) {
                if pos + 1 != k {
                    return Err(Error::Panel(format!(
                        "candidate {i} has decisions after being dropped at stage {}",
                        pos + 1
                    )));
                }
            }
            if c.covariates.len() != k {
                return Err(Error::Panel(format!(
                    "candidate {i} faced {k} stages but has covariates for {}",
                    c.covariates.len()
                )));
            }
            for (t, x) in c.covariates.iter().enumerate() {
                if x.len() != dims[t] {
                    return Err(Error::Dimension(format!(
                        "candidate {i} stage {} covariates have length {}, expected {}",
                        t + 1,
                        x.len(),
                        dims[t]
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Panel(format!(
                        "candidate {i} stage {} has a non-finite covariate",
                        t + 1
                    )));
                }
            }
            let finished = k == n_stages && c.selections[k - 1];
            if finished != c.outcome.is_some() {
                return Err(Error::Panel(format!(
                    "candidate {i}: outcome must be present exactly when all stages were passed"
                )));
            }
        }
        let column_names = default_names(&dims);
        Ok(Self {
            n_stages,
            dims,
            candidates,
            column_names,
            true_propensities: None,
        })
    }

    pub fn with_column_names(mut self, names: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != self.n_stages || names.iter().zip(&self.dims).any(|(n, &d)| n.len() != d) {
            return Err(Error::Dimension("column names do not match stage dimensions".into()));
        }
        self.column_names = names;
        Ok(self)
    }

    /// Attaches the generating propensities, `mu[i][t-1]` for each stage the
    /// candidate faced.
    pub fn with_true_propensities(mut self, mu: Vec<Vec<f64>>) -> Result<Self> {
        if mu.len() != self.candidates.len() {
            return Err(Error::Dimension(format!(
                "{} propensity rows for {} candidates",
                mu.len(),
                self.candidates.len()
            )));
        }
        for (i, (m, c)) in mu.iter().zip(&self.candidates).enumerate() {
            if m.len() != c.selections.len() {
                return Err(Error::Dimension(format!(
                    "candidate {i} has {} propensities for {} decisions",
                    m.len(),
                    c.selections.len()
                )));
            }
            if m.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                return Err(Error::Positivity(format!(
                    "candidate {i} has a propensity outside (0, 1]"
                )));
            }
        }
        self.true_propensities = Some(mu);
        Ok(self)
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn column_names(&self) -> &[Vec<String>] {
        &self.column_names
    }

    pub fn true_propensities(&self) -> Option<&[Vec<f64>]> {
        self.true_propensities.as_deref()
    }

    /// Number of stages candidate `i` passed.
    pub fn reached(&self, i: usize) -> usize {
        self.candidates[i].selections.iter().take_while(|s| **s).count()
    }

    /// Members of `I^t`; `t = 0` is the whole initial pool.
    pub fn index_set(&self, t: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.reached(i) >= t).collect()
    }

    pub fn final_set(&self) -> Vec<usize> {
        self.index_set(self.n_stages)
    }

    pub fn sensitive(&self, i: usize) -> bool {
        self.candidates[i].sensitive
    }

    /// Outcome of candidate `i`; censored outcomes are an error, never a default.
    pub fn outcome(&self, i: usize) -> Result<bool> {
        self.candidates[i].outcome.ok_or(Error::Censored(i))
    }

    /// Stage-`t` covariates (1-based), if the candidate reached that stage.
    pub fn covariates(&self, i: usize, t: usize) -> Option<&[f64]> {
        t.checked_sub(1)
            .and_then(|k| self.candidates[i].covariates.get(k))
            .map(|v| v.as_slice())
    }

    /// Concatenated `x^[t] = (x^1, ..., x^t)`.
    pub fn stacked(&self, i: usize, t: usize) -> Result<Vec<f64>> {
        let c = &self.candidates[i];
        if t == 0 || t > c.covariates.len() {
            return Err(Error::Panel(format!(
                "candidate {i} has no stage-{t} covariates"
            )));
        }
        Ok(c.covariates[..t].concat())
    }
}

/// Fully observed candidates: every stage's covariates and the outcome.
/// Generators produce these for test sets and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    dims: Vec<usize>,
    features: Vec<Vec<Vec<f64>>>,
    sensitive: Vec<bool>,
    labels: Vec<bool>,
    column_names: Vec<Vec<String>>,
}

impl Population {
    pub fn new(
        dims: Vec<usize>,
        features: Vec<Vec<Vec<f64>>>,
        sensitive: Vec<bool>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Panel("at least one stage is required".into()));
        }
        let n = features.len();
        if sensitive.len() != n || labels.len() != n {
            return Err(Error::Dimension(format!(
                "{n} feature rows, {} sensitive values, {} labels",
                sensitive.len(),
                labels.len()
            )));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != dims.len() || row.iter().zip(&dims).any(|(x, &d)| x.len() != d) {
                return Err(Error::Dimension(format!(
                    "candidate {i} covariates do not match stage dimensions {dims:?}"
                )));
            }
        }
        let column_names = default_names(&dims);
        Ok(Self {
            dims,
            features,
            sensitive,
            labels,
            column_names,
        })
    }

    pub fn with_column_names(mut self, names: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != self.dims.len() || names.iter().zip(&self.dims).any(|(n, &d)| n.len() != d) {
            return Err(Error::Dimension("column names do not match stage dimensions".into()));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn n_stages(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn column_names(&self) -> &[Vec<String>] {
        &self.column_names
    }

    /// Stage-`t` covariates, 1-based.
    pub fn covariates(&self, i: usize, t: usize) -> &[f64] {
        &self.features[i][t - 1]
    }

    pub fn stacked(&self, i: usize, t: usize) -> Vec<f64> {
        self.features[i][..t].concat()
    }

    pub fn sensitive(&self, i: usize) -> bool {
        self.sensitive[i]
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn sensitive_values(&self) -> &[bool] {
        &self.sensitive
    }

    pub fn subset(&self, rows: &[usize]) -> Population {
        Population {
            dims: self.dims.clone(),
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            sensitive: rows.iter().map(|&i| self.sensitive[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            column_names: self.column_names.clone(),
        }
    }

    /// Censors the population through logged stage decisions. `decisions[i]`
    /// must follow the panel nesting rule; `propensities` (same shape) are
    /// attached when the generator knows them.
    pub fn log(
        &self,
        decisions: Vec<Vec<bool>>,
        propensities: Option<Vec<Vec<f64>>>,
    ) -> Result<StagePanel> {
        if decisions.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} decision rows for {} candidates",
                decisions.len(),
                self.len()
            )));
        }
        let t_max = self.n_stages();
        let candidates = decisions
            .into_iter()
            .enumerate()
            .map(|(i, selections)| {
                let k = selections.len().min(t_max);
                let passed = selections.len() == t_max && selections.iter().all(|s| *s);
                Candidate {
                    covariates: self.features[i][..k].to_vec(),
                    sensitive: self.sensitive[i],
                    selections,
                    outcome: passed.then_some(self.labels[i]),
                }
            })
            .collect();
        let mut panel = StagePanel::new(t_max, self.dims.clone(), candidates)?
            .with_column_names(self.column_names.clone())?;
        if let Some(mu) = propensities {
            panel = panel.with_true_propensities(mu)?;
        }
        Ok(panel)
    }
}
