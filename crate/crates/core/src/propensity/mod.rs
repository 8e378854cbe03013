//! Logistic propensity models and inverse-propensity weights.

mod logistic;
mod weights;

pub use logistic::{fit_logistic, sigmoid, FitOptions, LogisticModel};
pub use weights::{
    compute_ipw_weights, fit_propensities, no_ipw_weights, positivity_report,
    true_propensity_weights, PositivityReport, StagePositivity, WeightSet, WeightSource,
};
