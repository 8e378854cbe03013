use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{disparity, evaluate};
use crate::dataset::{FairnessNotion, Population, SelectionSpec};
use crate::error::{Error, Result};
use crate::fairmodel::{train_sample, FinalSample, PolicyParams, TrainOptions};

/// One independent replication: a weighted training sample and a labelled
/// test population.
#[derive(Debug, Clone)]
pub struct Trial {
    pub sample: FinalSample,
    pub test: Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCell {
    pub eta: f64,
    pub trial: usize,
    /// `ok`, `infeasible` when no policy meets the rows at this eta, or
    /// `no_policy` when the budget ran out before any feasible policy was found.
    pub status: String,
    pub proven_optimal: bool,
    pub train_precision: f64,
    pub train_unfairness: f64,
    pub train_unfairness_eps: f64,
    pub test_precision: f64,
    pub test_unfairness: f64,
    pub hits: [usize; 2],
    pub sizes: [usize; 2],
    pub iterations: usize,
    pub rho_increasing: bool,
    pub final_z: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoAggregate {
    pub eta: f64,
    pub trials: usize,
    pub precision_mean: f64,
    pub precision_sd: f64,
    pub unfairness_mean: f64,
    pub unfairness_sd: f64,
    /// Disparity of the counts pooled over trials.
    pub unfairness_pooled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoTable {
    pub notion: FairnessNotion,
    pub cells: Vec<ParetoCell>,
    pub aggregates: Vec<ParetoAggregate>,
}

/// Stream seed for cell `(eta_index, trial)`.
fn cell_seed(master: u64, eta_index: usize, trial: usize) -> u64 {
    let mut z = master ^ ((eta_index as u64) << 32) ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Trains and evaluates every `(eta, trial)` cell. Within a trial the grid
/// is walked in increasing order and each policy seeds the next solve.
pub fn pareto_sweep(
    trials: &[Trial],
    template: &SelectionSpec,
    eta_grid: &[f64],
    opts: &TrainOptions,
    seed: u64,
) -> Result<ParetoTable> {
    if eta_grid.is_empty() || trials.is_empty() {
        return Err(Error::InvalidArgument("pareto sweep needs at least one eta and one trial".into()));
    }
    let mut grid = eta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut cells = Vec::with_capacity(grid.len() * trials.len());
    for (r, trial) in trials.iter().enumerate() {
        let mut warm: Option<PolicyParams> = None;
        for (e, &eta) in grid.iter().enumerate() {
            let mut spec = template.clone();
            spec.eta = eta;
            let started = std::time::Instant::now();
            let cell_opts = TrainOptions {
                seed: cell_seed(opts.seed, e, r),
                ..opts.clone()
            };
            match train_sample(&trial.sample, &spec, &cell_opts, warm.as_ref()) {
                Ok((policy, report)) => {
                    let ev = evaluate(&policy, &trial.test, &spec, cell_seed(seed, e, r))?;
                    let counts = match spec.notion {
                        FairnessNotion::EqualOpportunity => ev.eo_counts,
                        FairnessNotion::DemographicParity => ev.dp_counts,
                    };
                    cells.push(ParetoCell {
                        eta,
                        trial: r,
                        status: "ok".into(),
                        proven_optimal: report.proven_optimal,
                        train_precision: report.ratio,
                        train_unfairness: report.strict.unfairness,
                        train_unfairness_eps: report.strict.unfairness_eps,
                        test_precision: ev.precision,
                        test_unfairness: disparity(&counts).unwrap_or(f64::NAN),
                        hits: [counts[0][0], counts[1][0]],
                        sizes: [counts[0][1], counts[1][1]],
                        iterations: report.iterations.len(),
                        rho_increasing: report.iterations.windows(2).all(|w| w[1].rho > w[0].rho),
                        final_z: report.final_z(),
                        seconds: started.elapsed().as_secs_f64(),
                    });
                    warm = Some(policy);
                }
                Err(e @ (Error::Infeasible(_) | Error::Solver(_))) => cells.push(ParetoCell {
                    eta,
                    trial: r,
                    // A budget that ran out before any incumbent proves nothing.
                    status: if matches!(e, Error::Infeasible(_)) { "infeasible" } else { "no_policy" }.into(),
                    proven_optimal: matches!(e, Error::Infeasible(_)),
                    train_precision: f64::NAN,
                    train_unfairness: f64::NAN,
                    train_unfairness_eps: f64::NAN,
                    test_precision: f64::NAN,
                    test_unfairness: f64::NAN,
                    hits: [0; 2],
                    sizes: [0; 2],
                    iterations: 0,
                    rho_increasing: true,
                    final_z: f64::NAN,
                    seconds: started.elapsed().as_secs_f64(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    let aggregates = grid
        .iter()
        .map(|&eta| {
            let ok: Vec<&ParetoCell> = cells.iter().filter(|c| c.eta == eta && c.status == "ok").collect();
            let (pm, psd) = mean_sd(&ok.iter().map(|c| c.test_precision).collect::<Vec<_>>());
            let (um, usd) = mean_sd(&ok.iter().map(|c| c.test_unfairness).collect::<Vec<_>>());
            let mut pooled = [[0usize; 2]; 2];
            for c in &ok {
                for g in 0..2 {
                    pooled[g][0] += c.hits[g];
                    pooled[g][1] += c.sizes[g];
                }
            }
            ParetoAggregate {
                eta,
                trials: ok.len(),
                precision_mean: pm,
                precision_sd: psd,
                unfairness_mean: um,
                unfairness_sd: usd,
                unfairness_pooled: disparity(&pooled).unwrap_or(f64::NAN),
            }
        })
        .collect();
    Ok(ParetoTable {
        notion: template.notion,
        cells,
        aggregates,
    })
}

/// One row per cell (`row = cell`) followed by one per eta (`row = mean`).
pub fn write_pareto_csv<W: Write>(table: &ParetoTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "row",
        "eta",
        "trial",
        "status",
        "proven_optimal",
        "train_precision",
        "train_unfairness",
        "train_unfairness_eps",
        "precision",
        "precision_sd",
        "unfairness",
        "unfairness_sd",
        "unfairness_pooled",
        "seconds",
    ])?;
    let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
    for c in &table.cells {
        out.write_record([
            "cell".to_string(),
            f(c.eta),
            c.trial.to_string(),
            c.status.clone(),
            c.proven_optimal.to_string(),
            f(c.train_precision),
            f(c.train_unfairness),
            f(c.train_unfairness_eps),
            f(c.test_precision),
            String::new(),
            f(c.test_unfairness),
            String::new(),
            String::new(),
            format!("{:.3}", c.seconds),
        ])?;
    }
    for a in &table.aggregates {
        out.write_record([
            "mean".to_string(),
            f(a.eta),
            a.trials.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            f(a.precision_mean),
            f(a.precision_sd),
            f(a.unfairness_mean),
            f(a.unfairness_sd),
            f(a.unfairness_pooled),
            String::new(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
