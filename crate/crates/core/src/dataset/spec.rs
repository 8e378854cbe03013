use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FairnessNotion {
    /// Equal selection rates among outcome-positive members of each group.
    #[default]
    EqualOpportunity,
    /// Equal selection rates across groups.
    DemographicParity,
}

/// Selection-ratio, fairness and big-M parameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    /// Upper selection ratio per stage, non-increasing.
    pub upper_ratios: Vec<f64>,
    /// Minimum fraction passing the final stage.
    pub lower_ratio: f64,
    /// Unfairness tolerance.
    pub eta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub notion: FairnessNotion,
    /// Explicit big-M; derived from the data when absent.
    #[serde(default)]
    pub big_m: Option<f64>,
    #[serde(default = "default_bound")]
    pub w_max: f64,
    #[serde(default = "default_bound")]
    pub b_max: f64,
    /// Minimum score a training candidate must reach to count as selected.
    /// Zero gives the literal `> 0` encoding, which the solver may satisfy
    /// with a score of exactly zero.
    #[serde(default = "default_strict_margin")]
    pub strict_margin: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_bound() -> f64 {
    10.0
}

fn default_strict_margin() -> f64 {
    1e-6
}

impl SelectionSpec {
    pub fn new(upper_ratios: Vec<f64>, lower_ratio: f64, eta: f64) -> Self {
        Self {
            upper_ratios,
            lower_ratio,
            eta,
            epsilon: default_epsilon(),
            notion: FairnessNotion::default(),
            big_m: None,
            w_max: default_bound(),
            b_max: default_bound(),
            strict_margin: default_strict_margin(),
        }
    }

    pub fn with_notion(mut self, notion: FairnessNotion) -> Self {
        self.notion = notion;
        self
    }

    pub fn n_stages(&self) -> usize {
        self.upper_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.upper_ratios.len();
        if t == 0 {
            return Err(Error::Spec("upper_ratios must list one ratio per stage".into()));
        }
        let mut prev = 1.0;
        for (k, &a) in self.upper_ratios.iter().enumerate() {
            if !(a > 0.0 && a <= prev) {
                return Err(Error::Spec(format!(
                    "upper ratio for stage {} is {a}; ratios must satisfy 0 < a_T <= ... <= a_1 <= 1",
                    k + 1
                )));
            }
            prev = a;
        }
        if !(self.lower_ratio > 0.0 && self.lower_ratio <= self.upper_ratios[t - 1]) {
            return Err(Error::Spec(format!(
                "lower ratio {} must lie in (0, {}]",
                self.lower_ratio,
                self.upper_ratios[t - 1]
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Spec(format!("eta {} must lie in [0, 1]", self.eta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Spec(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.strict_margin >= 0.0 && self.strict_margin <= self.epsilon) {
            return Err(Error::Spec(format!(
                "strict_margin {} must lie in [0, epsilon]",
                self.strict_margin
            )));
        }
        for (name, v) in [("w_max", self.w_max), ("b_max", self.b_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Spec(format!("{name} must be positive and finite")));
            }
        }
        if let Some(m) = self.big_m {
            if !(m.is_finite() && m > self.epsilon) {
                return Err(Error::Spec(format!(
                    "big_m {m} must be finite and exceed epsilon {}",
                    self.epsilon
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_standard_spec() {
        SelectionSpec::new(vec![0.7, 0.35], 0.2, 1.0).validate().unwrap();
    }

    #[test]
    fn rejects_bad_orderings() {
        for spec in [
            SelectionSpec::new(vec![0.3, 0.5], 0.2, 1.0),
            SelectionSpec::new(vec![0.7, 0.35], 0.4, 1.0),
            SelectionSpec::new(vec![0.7, 0.35], 0.0, 1.0),
            SelectionSpec::new(vec![1.2], 0.2, 1.0),
            SelectionSpec::new(vec![0.7], 0.2, 1.5),
            SelectionSpec::new(vec![], 0.2, 1.0),
        ] {
            assert!(matches!(spec.validate(), Err(Error::Spec(_))), "{spec:?}");
        }
    }

    #[test]
    fn big_m_must_exceed_epsilon() {
        let mut s = SelectionSpec::new(vec![0.5], 0.2, 1.0);
        s.big_m = Some(1e-4);
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"upper_ratios":[0.5],"lower_ratio":0.2,"eta":1.0,"bogus":1}"#;
        assert!(serde_json::from_str::<SelectionSpec>(text).is_err());
    }
}
