use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Ridge penalty `l2/2 * |theta|^2`, intercept included.
    pub l2: f64,
    /// Convergence threshold on the max-norm of the mean gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude are treated as divergence.
    pub norm_guard: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-6,
            tol: 1e-8,
            max_iter: 100,
            norm_guard: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Coefficients followed by the intercept.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.push(self.intercept);
        t
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Predicted probability, kept inside the open unit interval.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

fn penalized_nll(x: &DMatrix<f64>, y: &[f64], theta: &DVector<f64>, l2: f64) -> f64 {
    let z = x * theta;
    let nll: f64 = z.iter().zip(y).map(|(z, y)| softplus(*z) - y * z).sum();
    nll + 0.5 * l2 * theta.norm_squared()
}

/// Ridge-penalized maximum likelihood by IRLS (Newton) with step halving.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], opts: &FitOptions) -> Result<LogisticModel> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", y.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cannot fit a model to zero rows".into()));
    }
    if !(opts.l2 >= 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("l2 must be >= 0 and tol > 0".into()));
    }
    let d = x[0].len();
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(Error::Dimension(format!("row {i} has {} features, expected {d}", x[i].len())));
    }
    let p = d + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j < d { x[i][j] } else { 1.0 });
    let yv: Vec<f64> = y.iter().map(|&b| f64::from(b)).collect();

    let mut theta = DVector::zeros(p);
    let mut obj = penalized_nll(&design, &yv, &theta, opts.l2);
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let z = &design * &theta;
        let mu: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(n, mu.iter().zip(&yv).map(|(m, y)| m - y));
        let grad = design.tr_mul(&resid) + &theta * opts.l2;
        grad_norm = grad.amax() / n as f64;
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        let mut weighted = design.clone();
        for (i, m) in mu.iter().enumerate() {
            let w = (m * (1.0 - m)).max(1e-12);
            weighted.row_mut(i).scale_mut(w);
        }
        let mut hess = design.tr_mul(&weighted);
        for j in 0..p {
            hess[(j, j)] += opts.l2;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let jitter = 1e-10 * hess.trace().max(1.0);
                for j in 0..p {
                    hess[(j, j)] += jitter;
                }
                hess.cholesky()
                    .ok_or_else(|| Error::Separation("Hessian is singular".into()))?
                    .solve(&grad)
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta - &step * t;
            let cand_obj = penalized_nll(&design, &yv, &cand, opts.l2);
            if cand_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if theta.amax() > opts.norm_guard {
            return Err(Error::Separation(format!(
                "coefficient magnitude {:.1} exceeded {} after {iterations} iterations",
                theta.amax(),
                opts.norm_guard
            )));
        }
        if !accepted {
            // No descent possible at machine precision.
            converged = grad_norm <= opts.tol.sqrt();
            break;
        }
    }
    if opts.l2 == 0.0 {
        // Without a penalty the likelihood only approaches its supremum when
        // the classes separate; a near-perfect fit means the MLE does not exist.
        let z = &design * &theta;
        let worst = z
            .iter()
            .zip(&yv)
            .map(|(z, y)| (sigmoid(*z) - y).abs())
            .fold(0.0, f64::max);
        if worst < 1e-4 {
            return Err(Error::Separation(format!(
                "fitted probabilities match every label to within {worst:.1e}"
            )));
        }
    }
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations, gradient {grad_norm:.2e}");
    }
    Ok(LogisticModel {
        weights: theta.as_slice()[..d].to_vec(),
        intercept: theta[d],
        iterations,
        grad_norm,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_balanced() {
        let x = vec![vec![]; 10];
        let y: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let m = fit_logistic(&x, &y, &FitOptions::default()).unwrap();
        assert!(m.intercept.abs() < 1e-8);
        assert!((m.predict(&[]) - 0.5).abs() < 1e-8);
        assert!(m.converged);
    }

    #[test]
    fn all_positive_labels_without_penalty_is_separation() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0]).collect();
        let y = vec![true; 20];
        let opts = FitOptions {
            l2: 0.0,
            ..FitOptions::default()
        };
        assert!(matches!(fit_logistic(&x, &y, &opts), Err(Error::Separation(_))));
    }

    #[test]
    fn separable_data_is_detected() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 9.5]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let opts = FitOptions {
            l2: 0.0,
            ..FitOptions::default()
        };
        assert!(matches!(fit_logistic(&x, &y, &opts), Err(Error::Separation(_))));
    }

    #[test]
    fn predictions_stay_inside_unit_interval() {
        let m = LogisticModel {
            weights: vec![1.0],
            intercept: 0.0,
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
        };
        for z in [-1e4, -50.0, 0.0, 50.0, 1e4] {
            let p = m.predict(&[z]);
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
    }
}
