//! Python module `stagefair`: synthetic generation, training and evaluation
//! with policies and reports exchanged as JSON strings.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use stagefair::dataset::{FairnessNotion, SelectionSpec};
use stagefair::eval::evaluate;
use stagefair::fairmodel::{policy_json, train, PolicyParams, TrainOptions};
use stagefair::propensity::{
    compute_ipw_weights, fit_logistic as fit, fit_propensities, no_ipw_weights, true_propensity_weights, FitOptions,
};
use stagefair::synthgen::{gen_synthetic, logging_policy_stats, SyntheticParams};

create_exception!(stagefair, StagefairError, PyException);

fn err(e: stagefair::Error) -> PyErr {
    StagefairError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    StagefairError::new_err(e.to_string())
}

fn spec_from(upper: Vec<f64>, lower: f64, eta: f64, notion: &str) -> PyResult<SelectionSpec> {
    let notion = match notion {
        "eo" | "equal_opportunity" => FairnessNotion::EqualOpportunity,
        "dp" | "demographic_parity" => FairnessNotion::DemographicParity,
        other => return Err(StagefairError::new_err(format!("unknown fairness notion `{other}`"))),
    };
    let spec = SelectionSpec::new(upper, lower, eta).with_notion(notion);
    spec.validate().map_err(err)?;
    Ok(spec)
}

fn synthetic(n: usize, seed: u64) -> SyntheticParams {
    SyntheticParams {
        n,
        seed,
        ..SyntheticParams::default()
    }
}

/// Logging-policy precision and EO unfairness on `n` simulated candidates.
#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn logging_benchmark(py: Python<'_>, n: usize, seed: u64) -> PyResult<(f64, f64)> {
    py.detach(|| {
        let draw = gen_synthetic(&synthetic(n, seed))?;
        let s = logging_policy_stats(&draw.panel, &draw.population)?;
        Ok((s.precision, s.unfairness_eo))
    })
    .map_err(err)
}

/// Simulates a synthetic panel of `n` candidates and trains a policy on it.
/// Returns the policy export as JSON.
#[pyfunction]
#[pyo3(signature = (n, seed=0, upper=vec![0.7, 0.35], lower=0.2, eta=1.0, notion="eo", weights="estimated", time_limit=None))]
#[allow(clippy::too_many_arguments)]
fn train_synthetic(
    py: Python<'_>,
    n: usize,
    seed: u64,
    upper: Vec<f64>,
    lower: f64,
    eta: f64,
    notion: &str,
    weights: &str,
    time_limit: Option<f64>,
) -> PyResult<String> {
    let spec = spec_from(upper, lower, eta, notion)?;
    if !matches!(weights, "estimated" | "true" | "none") {
        return Err(StagefairError::new_err(format!("unknown weights `{weights}`")));
    }
    let weights = weights.to_string();
    let value = py
        .detach(|| {
            let draw = gen_synthetic(&synthetic(n, seed))?;
            let w = match weights.as_str() {
                "estimated" => {
                    let models = fit_propensities(&draw.panel, &FitOptions::default())?;
                    compute_ipw_weights(&draw.panel, &models, 0.0)?
                }
                "true" => true_propensity_weights(&draw.panel)?,
                _ => no_ipw_weights(&draw.panel),
            };
            let opts = TrainOptions {
                time_limit_secs: time_limit,
                ..TrainOptions::default()
            };
            let (policy, report) = train(&draw.panel, &w, &spec, &opts)?;
            policy_json(&policy, draw.panel.column_names(), &spec, &report)
        })
        .map_err(err)?;
    serde_json::to_string(&value).map_err(json_err)
}

/// Scores a policy (JSON from `train_synthetic`, or bare parameters) on a
/// fresh synthetic test population, with repair. Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (policy, n_test=10_000, seed=1, upper=vec![0.7, 0.35], lower=0.2, eta=1.0, notion="eo"))]
#[allow(clippy::too_many_arguments)]
fn evaluate_synthetic(
    py: Python<'_>,
    policy: &str,
    n_test: usize,
    seed: u64,
    upper: Vec<f64>,
    lower: f64,
    eta: f64,
    notion: &str,
) -> PyResult<String> {
    let spec = spec_from(upper, lower, eta, notion)?;
    let v: serde_json::Value = serde_json::from_str(policy).map_err(json_err)?;
    let raw = v.get("raw").cloned().unwrap_or(v);
    let params: PolicyParams = serde_json::from_value(raw).map_err(json_err)?;
    let report = py
        .detach(|| {
            let test = gen_synthetic(&synthetic(n_test, seed))?.population;
            evaluate(&params, &test, &spec, seed)
        })
        .map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Ridge logistic regression; returns the slopes followed by the intercept.
#[pyfunction]
#[pyo3(signature = (x, y, l2=1e-6))]
fn fit_logistic(x: Vec<Vec<f64>>, y: Vec<bool>, l2: f64) -> PyResult<Vec<f64>> {
    let opts = FitOptions {
        l2,
        ..FitOptions::default()
    };
    Ok(fit(&x, &y, &opts).map_err(err)?.theta())
}

#[pymodule(name = "stagefair")]
fn stagefair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("StagefairError", m.py().get_type::<StagefairError>())?;
    m.add_function(wrap_pyfunction!(logging_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    Ok(())
}
