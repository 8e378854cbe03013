//! Learning linear stage rules under selection-ratio and fairness rows.

mod build;
mod heuristic;
mod measure;
mod sample;
mod train;

pub use build::{big_m, build_subproblem, encode_policy, fairness_groups, Layout, Subproblem};
pub use heuristic::{Found, Goal, ThresholdSearch};
pub use measure::{strict_check, unfairness, unfairness_scored, Scored, StrictCheck, UnfairnessMode};
pub use sample::{FinalSample, PolicyParams, StagePolicy};
pub use train::{
    policy_json, train, train_sample, Bindings, Iterate, TrainOptions, TrainReport, TrainStatus,
};
