use std::io::Write;

use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, FitOptions, LogisticModel};
use crate::dataset::StagePanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Estimated,
    TruePropensities,
    Uniform,
}

/// Inverse-propensity weights for the final-stage candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub n_stages: usize,
    /// Panel indices of the members of `I^T`, in increasing order.
    pub ids: Vec<usize>,
    /// Clipped per-stage propensities, `propensities[k][t-1]`.
    pub propensities: Vec<Vec<f64>>,
    /// Cumulative weights `beta[k][t-1] = 1 / prod_{j<=t} mu_j`.
    pub beta: Vec<Vec<f64>>,
    pub clip_floor: f64,
    pub source: WeightSource,
}

impl WeightSet {
    /// Builds weights from raw per-stage propensities of the `I^T` members.
    pub fn from_propensities(
        n_stages: usize,
        ids: Vec<usize>,
        raw: Vec<Vec<f64>>,
        clip_floor: f64,
        source: WeightSource,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&clip_floor) {
            return Err(Error::InvalidArgument(format!(
                "clip floor {clip_floor} must lie in [0, 1)"
            )));
        }
        if raw.len() != ids.len() {
            return Err(Error::Dimension(format!(
                "{} propensity rows for {} candidates",
                raw.len(),
                ids.len()
            )));
        }
        let mut propensities = Vec::with_capacity(raw.len());
        let mut beta = Vec::with_capacity(raw.len());
        for (k, row) in raw.into_iter().enumerate() {
            if row.len() != n_stages {
                return Err(Error::Dimension(format!(
                    "candidate {} has {} propensities for {n_stages} stages",
                    ids[k],
                    row.len()
                )));
            }
            let mut cum = 1.0;
            let mut b = Vec::with_capacity(n_stages);
            let mut clipped = Vec::with_capacity(n_stages);
            for (t, &mu) in row.iter().enumerate() {
                if !(mu <= 1.0) || mu < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "propensity {mu} of candidate {} is not a probability",
                        ids[k]
                    )));
                }
                if mu <= 0.0 && clip_floor == 0.0 {
                    return Err(Error::Positivity(format!(
                        "candidate {} has zero selection probability at stage {}; \
                         every candidate must have a positive chance of selection",
                        ids[k],
                        t + 1
                    )));
                }
                let m = mu.max(clip_floor);
                cum *= m;
                clipped.push(m);
                b.push(1.0 / cum);
            }
            propensities.push(clipped);
            beta.push(b);
        }
        Ok(Self {
            n_stages,
            ids,
            propensities,
            beta,
            clip_floor,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Stage-`t` weight (1-based) of the `k`-th final-stage candidate.
    pub fn beta(&self, k: usize, t: usize) -> f64 {
        self.beta[k][t - 1]
    }

    /// `e^T beta^t`.
    pub fn total(&self, t: usize) -> f64 {
        self.beta.iter().map(|b| b[t - 1]).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["candidate", "stage", "mu", "beta"])?;
        for (k, &id) in self.ids.iter().enumerate() {
            for t in 0..self.n_stages {
                wtr.write_record([
                    id.to_string(),
                    (t + 1).to_string(),
                    self.propensities[k][t].to_string(),
                    self.beta[k][t].to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fits `mu^t` on `{x^[t], s^t}` over `I^{t-1}` for every stage.
pub fn fit_propensities(panel: &StagePanel, opts: &FitOptions) -> Result<Vec<LogisticModel>> {
    (1..=panel.n_stages())
        .map(|t| {
            let pool = panel.index_set(t - 1);
            if pool.is_empty() {
                return Err(Error::Panel(format!("no candidates reached stage {t}")));
            }
            let x = pool
                .iter()
                .map(|&i| panel.stacked(i, t))
                .collect::<Result<Vec<_>>>()?;
            let s: Vec<bool> = pool.iter().map(|&i| panel.candidates()[i].selections[t - 1]).collect();
            fit_logistic(&x, &s, opts).map_err(|e| match e {
                Error::Separation(m) => Error::Separation(format!("stage {t}: {m}")),
                other => other,
            })
        })
        .collect()
}

pub fn compute_ipw_weights(
    panel: &StagePanel,
    models: &[LogisticModel],
    clip_floor: f64,
) -> Result<WeightSet> {
    let t_max = panel.n_stages();
    if models.len() != t_max {
        return Err(Error::Dimension(format!(
            "{} models for {t_max} stages",
            models.len()
        )));
    }
    for (t, m) in models.iter().enumerate() {
        let want: usize = panel.dims()[..=t].iter().sum();
        if m.dim() != want {
            return Err(Error::Dimension(format!(
                "stage {} model expects {} inputs, panel provides {want}",
                t + 1,
                m.dim()
            )));
        }
    }
    let ids = panel.final_set();
    let raw = ids
        .iter()
        .map(|&i| {
            (1..=t_max)
                .map(|t| Ok(models[t - 1].predict(&panel.stacked(i, t)?)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    WeightSet::from_propensities(t_max, ids, raw, clip_floor, WeightSource::Estimated)
}

/// Weights from the generator's own propensities (no clipping).
pub fn true_propensity_weights(panel: &StagePanel) -> Result<WeightSet> {
    let mu = panel
        .true_propensities()
        .ok_or_else(|| Error::Panel("panel carries no true propensities".into()))?;
    let ids = panel.final_set();
    let raw = ids.iter().map(|&i| mu[i].clone()).collect();
    WeightSet::from_propensities(panel.n_stages(), ids, raw, 0.0, WeightSource::TruePropensities)
}

/// Every weight equal to one: the unweighted baseline.
pub fn no_ipw_weights(panel: &StagePanel) -> WeightSet {
    let ids = panel.final_set();
    let t = panel.n_stages();
    WeightSet {
        n_stages: t,
        propensities: vec![vec![1.0; t]; ids.len()],
        beta: vec![vec![1.0; t]; ids.len()],
        ids,
        clip_floor: 0.0,
        source: WeightSource::Uniform,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePositivity {
    pub stage: usize,
    pub count: usize,
    pub min: f64,
    pub q01: f64,
    pub q05: f64,
    pub median: f64,
    pub max: f64,
    /// Candidates (panel indices) whose stage propensity is below the threshold.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub threshold: f64,
    pub stages: Vec<StagePositivity>,
    /// Union of flagged candidates over stages.
    pub flagged: Vec<usize>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Predicted propensities over each stage's risk set `I^{t-1}`.
pub fn positivity_report(
    models: &[LogisticModel],
    panel: &StagePanel,
    threshold: f64,
) -> Result<PositivityReport> {
    let mut stages = Vec::new();
    let mut all = Vec::new();
    for (t, model) in (1..=panel.n_stages()).zip(models) {
        let pool = panel.index_set(t - 1);
        let mut vals = Vec::with_capacity(pool.len());
        let mut flagged = Vec::new();
        for &i in &pool {
            let p = model.predict(&panel.stacked(i, t)?);
            if p < threshold {
                flagged.push(i);
            }
            vals.push(p);
        }
        vals.sort_by(f64::total_cmp);
        all.extend_from_slice(&flagged);
        stages.push(StagePositivity {
            stage: t,
            count: vals.len(),
            min: vals.first().copied().unwrap_or(f64::NAN),
            q01: quantile(&vals, 0.01),
            q05: quantile(&vals, 0.05),
            median: quantile(&vals, 0.5),
            max: vals.last().copied().unwrap_or(f64::NAN),
            flagged,
        });
    }
    all.sort_unstable();
    all.dedup();
    Ok(PositivityReport {
        threshold,
        stages,
        flagged: all,
    })
}
