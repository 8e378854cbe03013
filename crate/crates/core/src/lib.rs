pub mod dataset;
pub mod error;
pub mod eval;
pub mod fairmodel;
pub mod milp;
pub mod oracle;
pub mod propensity;
pub mod synthgen;

pub use error::{Error, ErrorClass, Result};
