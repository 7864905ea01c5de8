//! Damped Gauss-Newton (Levenberg-Marquardt) minimization of a sum of
//! squared residuals with an analytic Jacobian.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// A residual-minimization problem. Residuals are `model - target`, so the
/// objective is `SSE(theta) = sum_i r_i(theta)^2`.
pub trait LeastSquaresProblem<S>: Sync {
    fn n_residuals(&self) -> usize;
    fn n_params(&self) -> usize;
    /// Writes `r(theta)` into `out` (length `n_residuals`).
    fn residuals_into(&self, theta: &[S], out: &mut [S]) -> Result<()>;
    /// Writes the transposed Jacobian into `out` (`n_params` rows,
    /// `n_residuals` columns): column `i` is the parameter gradient of
    /// `r_i`. The transposed layout keeps each per-residual gradient
    /// contiguous in column-major storage.
    fn jacobian_transpose_into(&self, theta: &[S], out: &mut DMatrix<S>) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions<S> {
    pub max_iterations: usize,
    /// Converged when `max|grad(SSE/2)| <= gradient_tolerance * (1 + SSE)`.
    pub gradient_tolerance: S,
    /// Converged when an accepted step satisfies
    /// `|step| <= step_tolerance * (|theta| + step_tolerance)`.
    pub step_tolerance: S,
    pub initial_damping: S,
}

impl<S: Scalar> Default for LmOptions<S> {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tolerance: S::c(1e-8),
            step_tolerance: S::c(1e-10),
            initial_damping: S::c(1e-3),
        }
    }
}

impl<S: Scalar> LmOptions<S> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be >= 1"));
        }
        if !(self.gradient_tolerance > S::zero()) || !(self.step_tolerance > S::zero()) {
            return Err(Error::validation("tolerances must be > 0"));
        }
        if !(self.initial_damping > S::zero()) {
            return Err(Error::validation("initial damping must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient of SSE/2 fell below tolerance.
    GradientConverged,
    /// Accepted step became negligible.
    StepConverged,
    /// Iteration budget exhausted while still improving.
    MaxIterations,
    /// No damping value produced an acceptable step.
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientConverged | Termination::StepConverged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<S> {
    pub theta: Vec<S>,
    pub sse: S,
    pub iterations: usize,
    pub termination: Termination,
}

const DAMPING_INCREASE: f64 = 10.0;
const DAMPING_DECREASE: f64 = 0.1;
const DAMPING_MAX: f64 = 1e12;
const DAMPING_MIN: f64 = 1e-12;

/// Minimizes the problem's SSE from `initial` by Marquardt-damped
/// Gauss-Newton steps: each step solves
/// `(J'J + lambda * diag(J'J)) * step = -J'r`.
pub fn minimize<S: Scalar, P: LeastSquaresProblem<S>>(
    problem: &P,
    initial: &[S],
    options: &LmOptions<S>,
) -> Result<LmOutcome<S>> {
    options.validate()?;
    let m = problem.n_residuals();
    let p = problem.n_params();
    if initial.len() != p {
        return Err(Error::Validation(format!(
            "initial parameter vector has length {}, expected {}",
            initial.len(),
            p
        )));
    }
    if m < p {
        return Err(Error::validation("fewer residuals than parameters"));
    }

    let mut theta = DVector::from_column_slice(initial);
    let mut residuals = DVector::zeros(m);
    let mut trial_residuals = DVector::zeros(m);
    let mut jt = DMatrix::zeros(p, m);

    problem.residuals_into(theta.as_slice(), residuals.as_mut_slice())?;
    let mut sse = residuals.norm_squared();
    if !sse.is_finite() {
        return Err(Error::numerical("non-finite objective at the initial point"));
    }

    let mut lambda = options.initial_damping;
    let mut iterations = 0;
    let termination = 'outer: loop {
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        problem.jacobian_transpose_into(theta.as_slice(), &mut jt)?;
        // Gradient of SSE/2.
        let gradient = &jt * &residuals;
        let max_grad = gradient.iter().fold(S::zero(), |acc, g| acc.max(g.abs()));
        if max_grad <= options.gradient_tolerance * (S::one() + sse) {
            break Termination::GradientConverged;
        }
        let normal = &jt * jt.transpose();

        // Inner loop: raise the damping until a step reduces the SSE.
        loop {
            let mut damped = normal.clone();
            for i in 0..p {
                let d = damped[(i, i)];
                // Guard flat directions so the damped system stays SPD.
                damped[(i, i)] = d + lambda * d.max(S::c(1e-12));
            }
            let step = match Cholesky::new(damped) {
                Some(chol) => -chol.solve(&gradient),
                None => {
                    lambda *= S::c(DAMPING_INCREASE);
                    if lambda > S::c(DAMPING_MAX) {
                        break 'outer Termination::Stalled;
                    }
                    continue;
                }
            };
            let trial = &theta + &step;
            problem.residuals_into(trial.as_slice(), trial_residuals.as_mut_slice())?;
            let trial_sse = trial_residuals.norm_squared();
            if trial_sse.is_finite() && trial_sse < sse {
                theta = trial;
                std::mem::swap(&mut residuals, &mut trial_residuals);
                sse = trial_sse;
                lambda = (lambda * S::c(DAMPING_DECREASE)).max(S::c(DAMPING_MIN));
                iterations += 1;
                if step.norm() <= options.step_tolerance * (theta.norm() + options.step_tolerance)
                {
                    break 'outer Termination::StepConverged;
                }
                break;
            }
            lambda *= S::c(DAMPING_INCREASE);
            if lambda > S::c(DAMPING_MAX) {
                break 'outer Termination::Stalled;
            }
        }
    };

    Ok(LmOutcome {
        theta: theta.as_slice().to_vec(),
        sse,
        iterations,
        termination,
    })
}
