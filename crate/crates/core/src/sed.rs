//! The smoothed stochastic dispatch objective.
//!
//! For a Gaussian hourly load the expected dispatch cost separates by hour:
//!
//! ```text
//! f(P) = sum_t  alpha_t(s_t) + beta_t(P_t) + ½((s_t - mu_t)² + sigma2_t) + sum_g a P² + b P + c
//! ```
//!
//! where `s_t` is total generation, `alpha_t` the expected balance penalty and
//! `beta_t` the expected line overload penalty. Gradient and Hessian are
//! assembled analytically; the Hessian is block diagonal by hour.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::gaussmath::{
    expected_balance_penalty, expected_flow_penalty, expected_quadratic_terms, FlowPenalty,
    GaussianHour, PenaltyEval,
};
use crate::grid::{ConstraintSet, SystemConfig};

/// Smallest eigenvalue the assembled Hessian is guaranteed to have.
pub const HESSIAN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SedError {
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
}

/// Per-hour Gaussian load forecast in MW / MW².
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDistribution {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl ForecastDistribution {
    /// Variances are floored at [`crate::gaussmath::SIGMA2_FLOOR`].
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Self {
        let sigma2 = sigma2
            .into_iter()
            .map(|v| GaussianHour::new(0.0, v).sigma2)
            .collect();
        ForecastDistribution { mu, sigma2 }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn hour(&self, t: usize) -> GaussianHour {
        GaussianHour::new(self.mu[t], self.sigma2[t])
    }
}

#[derive(Debug, Clone)]
pub struct SedProblem<'a> {
    pub system: &'a SystemConfig,
    pub dist: ForecastDistribution,
    pub constraints: &'a ConstraintSet,
}

impl<'a> SedProblem<'a> {
    pub fn new(
        system: &'a SystemConfig,
        dist: ForecastDistribution,
        constraints: &'a ConstraintSet,
    ) -> Result<Self, SedError> {
        let t = system.horizon();
        for found in [dist.mu.len(), dist.sigma2.len()] {
            if found != t {
                return Err(SedError::Shape { expected: t, found });
            }
        }
        if constraints.g_matrix.ncols() != system.n_vars() {
            return Err(SedError::Shape {
                expected: system.n_vars(),
                found: constraints.g_matrix.ncols(),
            });
        }
        Ok(SedProblem {
            system,
            dist,
            constraints,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.system.n_vars()
    }

    fn check(&self, p: &[f64]) -> Result<(), SedError> {
        if p.len() != self.n_vars() {
            return Err(SedError::Shape {
                expected: self.n_vars(),
                found: p.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Diagonal shift added to keep the Hessian positive definite.
    pub regularization: f64,
}

/// Penalty expectations of one hour, shared by the value and derivative paths.
struct HourTerms {
    hour: GaussianHour,
    balance: PenaltyEval,
    flow: FlowPenalty,
    total: f64,
}

impl HourTerms {
    fn new(p_hour: &[f64], hour: GaussianHour, system: &SystemConfig) -> Self {
        let pen = system.penalties();
        let total: f64 = p_hour.iter().sum();
        HourTerms {
            hour,
            balance: expected_balance_penalty(total, hour, pen.lambda_s, pen.lambda_e),
            flow: expected_flow_penalty(p_hour, hour, system),
            total,
        }
    }
}

/// Objective contribution of a single hour.
pub fn hour_objective(p_hour: &[f64], hour: GaussianHour, system: &SystemConfig) -> f64 {
    let pen = system.penalties();
    let total: f64 = p_hour.iter().sum();
    expected_balance_penalty(total, hour, pen.lambda_s, pen.lambda_e).value
        + expected_flow_penalty(p_hour, hour, system).value
        + expected_quadratic_terms(p_hour, hour, system.generators())
}

pub fn objective(p: &[f64], prob: &SedProblem<'_>) -> Result<f64, SedError> {
    prob.check(p)?;
    let n_gen = prob.system.n_gen();
    Ok((0..prob.system.horizon())
        .map(|t| hour_objective(&p[t * n_gen..(t + 1) * n_gen], prob.dist.hour(t), prob.system))
        .sum())
}

pub fn gradient(p: &[f64], prob: &SedProblem<'_>) -> Result<DVector<f64>, SedError> {
    prob.check(p)?;
    let system = prob.system;
    let n_gen = system.n_gen();
    let mut grad = DVector::zeros(p.len());
    for t in 0..system.horizon() {
        let p_hour = &p[t * n_gen..(t + 1) * n_gen];
        let terms = HourTerms::new(p_hour, prob.dist.hour(t), system);
        for (g, gen) in system.generators().iter().enumerate() {
            let mut d = terms.balance.d_s + (terms.total - terms.hour.mu);
            for lp in &terms.flow.lines {
                d += (lp.over.d_s + lp.under.d_s) * system.line_gen_factor(lp.line, g) / lp.gamma;
            }
            d += 2.0 * gen.a * p_hour[g] + gen.b;
            grad[t * n_gen + g] = d;
        }
    }
    Ok(grad)
}

/// Diagonal shift keeping the Hessian's smallest eigenvalue above
/// [`HESSIAN_FLOOR`].
///
/// Every non-cost term of the Hessian is a sum of rank-one PSD blocks, so its
/// smallest eigenvalue is bounded below by `min_g 2 a_g`.
pub fn hessian_regularization(system: &SystemConfig) -> f64 {
    let min_curv = system
        .generators()
        .iter()
        .map(|g| 2.0 * g.a)
        .fold(f64::INFINITY, f64::min);
    (HESSIAN_FLOOR - min_curv).max(0.0)
}

/// Hessian including the [`hessian_regularization`] shift.
pub fn hessian(p: &[f64], prob: &SedProblem<'_>) -> Result<DMatrix<f64>, SedError> {
    prob.check(p)?;
    let system = prob.system;
    let n_gen = system.n_gen();
    let n = p.len();
    let delta = hessian_regularization(system);
    let mut h = DMatrix::zeros(n, n);
    for t in 0..system.horizon() {
        let p_hour = &p[t * n_gen..(t + 1) * n_gen];
        let terms = HourTerms::new(p_hour, prob.dist.hour(t), system);
        let base = t * n_gen;
        for g in 0..n_gen {
            for k in g..n_gen {
                let mut v = terms.balance.d2_s + 1.0;
                for lp in &terms.flow.lines {
                    let cg = system.line_gen_factor(lp.line, g) / lp.gamma;
                    let ck = system.line_gen_factor(lp.line, k) / lp.gamma;
                    v += (lp.over.d2_s + lp.under.d2_s) * cg * ck;
                }
                if g == k {
                    v += 2.0 * system.generators()[g].a + delta;
                }
                h[(base + g, base + k)] = v;
                h[(base + k, base + g)] = v;
            }
        }
    }
    Ok(h)
}

pub fn evaluate(p: &[f64], prob: &SedProblem<'_>) -> Result<ObjectiveEval, SedError> {
    Ok(ObjectiveEval {
        value: objective(p, prob)?,
        gradient: gradient(p, prob)?,
        hessian: hessian(p, prob)?,
        regularization: hessian_regularization(prob.system),
    })
}

/// Linear term of the local quadratic model: `J = grad - H P`, so that
/// `½ xᵀ H x + Jᵀ x` has gradient `grad` at `x = P`.
pub fn qp_linear_term(p: &DVector<f64>, grad: &DVector<f64>, hess: &DMatrix<f64>) -> DVector<f64> {
    grad - hess * p
}

/// Mixed partials of the gradient with respect to the forecast parameters.
///
/// Column `t` of the first matrix is `d grad / d mu_t`, of the second
/// `d grad / d sigma2_t`. Both are zero outside the rows of hour `t`.
pub fn parameter_jacobians(
    p: &[f64],
    prob: &SedProblem<'_>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), SedError> {
    prob.check(p)?;
    let system = prob.system;
    let n_gen = system.n_gen();
    let horizon = system.horizon();
    let mut d_mu = DMatrix::zeros(p.len(), horizon);
    let mut d_sigma2 = DMatrix::zeros(p.len(), horizon);
    for t in 0..horizon {
        let p_hour = &p[t * n_gen..(t + 1) * n_gen];
        let terms = HourTerms::new(p_hour, prob.dist.hour(t), system);
        for g in 0..n_gen {
            let mut dm = -terms.balance.d2_s - 1.0;
            let mut ds = terms.balance.d_s_dsigma2;
            for lp in &terms.flow.lines {
                let c = system.line_gen_factor(lp.line, g) / lp.gamma;
                dm -= (lp.over.d2_s + lp.under.d2_s) * c;
                ds += (lp.over.d_s_dsigma2 + lp.under.d_s_dsigma2) * c;
            }
            d_mu[(t * n_gen + g, t)] = dm;
            d_sigma2[(t * n_gen + g, t)] = ds;
        }
    }
    Ok((d_mu, d_sigma2))
}
