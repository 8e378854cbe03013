use serde::{Deserialize, Serialize};

use super::simplex::{DualSimplex, Outcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// A sparse linear row `coeffs · x  (relation)  rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A linear program over box-bounded variables.
///
/// Every variable must carry finite bounds; this is what lets the dual
/// simplex start from the all-slack basis without a phase one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub rows: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl LpInstance {
    pub fn new(sense: Sense, objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            sense,
            objective,
            rows: Vec::new(),
            lower,
            upper,
            names: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Constraint::new(coeffs, relation, rhs));
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "{} objective coefficients but {} lower / {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "variable {j} has a non-finite bound [{lo}, {hi}]"
                )));
            }
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "variable {j} has empty bounds [{lo}, {hi}]"
                )));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "objective coefficient {j} is not finite"
                )));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("row {r} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(Error::Dimension(format!(
                        "row {r} references variable {j} but the instance has {n}"
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "row {r} has a non-finite coefficient on variable {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest bound or row violation of `x`, computed from the raw data only.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.num_vars() {
            worst = worst
                .max(self.lower[j] - x[j])
                .max(x[j] - self.upper[j]);
        }
        for row in &self.rows {
            worst = worst.max(row.violation(x));
        }
        worst
    }

    /// Lagrangian lower bound (upper bound for maximization) implied by row
    /// multipliers `duals`, evaluated against the raw data and the given
    /// variable bounds. Multipliers with the wrong sign are clamped to zero,
    /// so the result is a valid bound for any input.
    pub fn lagrangian_bound(&self, duals: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
        // Work in minimization form: min c'x, multipliers y for rows.
        let flip = if self.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let n = self.num_vars();
        let mut reduced: Vec<f64> = self.objective.iter().map(|c| flip * c).collect();
        let mut value = 0.0;
        for (row, &dual) in self.rows.iter().zip(duals) {
            let y = flip * dual;
            let y = match row.relation {
                Relation::Le => y.min(0.0),
                Relation::Ge => y.max(0.0),
                Relation::Eq => y,
            };
            if y == 0.0 {
                continue;
            }
            value += y * row.rhs;
            for &(j, a) in &row.coeffs {
                reduced[j] -= y * a;
            }
        }
        for j in 0..n {
            let d = reduced[j];
            value += if d >= 0.0 { d * lower[j] } else { d * upper[j] };
        }
        flip * value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    NumericError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values (empty unless optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers, signed for the instance's own sense.
    pub duals: Vec<f64>,
    /// Lagrangian bound recomputed from the raw data with `duals`.
    pub dual_objective: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl LpSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs() / (1.0 + self.objective.abs())
    }
}

/// Solves a box-bounded LP with the dense dual simplex.
pub fn solve_lp(inst: &LpInstance) -> Result<LpSolution> {
    inst.validate()?;
    let mut engine = DualSimplex::new(inst);
    let outcome = engine.solve();
    Ok(package(inst, &engine, outcome, &inst.lower, &inst.upper))
}

pub(crate) fn package(
    inst: &LpInstance,
    engine: &DualSimplex,
    outcome: Outcome,
    lower: &[f64],
    upper: &[f64],
) -> LpSolution {
    match outcome {
        Outcome::Optimal => {
            let x = engine.structural_values();
            let objective = inst.objective_value(&x);
            let duals = engine.row_duals(inst.sense);
            let dual_objective = inst.lagrangian_bound(&duals, lower, upper);
            LpSolution {
                status: LpStatus::Optimal,
                x,
                objective,
                duals,
                dual_objective,
                iterations: engine.pivots,
                diagnostic: None,
            }
        }
        Outcome::Infeasible => LpSolution {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            dual_objective: f64::NAN,
            iterations: engine.pivots,
            diagnostic: None,
        },
        Outcome::TimedOut => LpSolution {
            status: LpStatus::NumericError,
            x: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            dual_objective: f64::NAN,
            iterations: engine.pivots,
            diagnostic: Some("deadline passed".into()),
        },
        Outcome::NumericTrouble(reason) => LpSolution {
            status: LpStatus::NumericError,
            x: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            dual_objective: f64::NAN,
            iterations: engine.pivots,
            diagnostic: Some(reason),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable_bound_by_row() {
        let mut lp = LpInstance::new(Sense::Maximize, vec![1.0], vec![0.0], vec![10.0]);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        assert!(sol.duality_gap() < 1e-9);
    }

    #[test]
    fn degenerate_optimum_accepts_any_vertex() {
        let mut lp = LpInstance::new(Sense::Maximize, vec![1.0, 1.0], vec![0.0; 2], vec![1.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!(lp.max_violation(&sol.x) < 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        let mut lp = LpInstance::new(Sense::Minimize, vec![1.0, 1.0], vec![0.0; 2], vec![1.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 3.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_rows_and_negative_bounds() {
        // min x - y  s.t. x + y = 1, x in [-2, 2], y in [-2, 2]  -> x = -1, y = 2
        let mut lp = LpInstance::new(Sense::Minimize, vec![1.0, -1.0], vec![-2.0; 2], vec![2.0; 2]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 3.0).abs() < 1e-9, "{}", sol.objective);
        assert!(sol.duality_gap() < 1e-9);
    }

    #[test]
    fn rejects_infinite_bounds() {
        let lp = LpInstance::new(Sense::Minimize, vec![1.0], vec![0.0], vec![f64::INFINITY]);
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn rejects_out_of_range_index() {
        let mut lp = LpInstance::new(Sense::Minimize, vec![1.0], vec![0.0], vec![1.0]);
        lp.add_row(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Dimension(_))));
    }
}
