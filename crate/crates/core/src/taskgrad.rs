//! Realized task loss, its gradient in the dispatch, and the sensitivity of
//! the optimal dispatch to the forecast distribution.
//!
//! The sensitivity follows from differentiating the KKT conditions
//!
//! ```text
//! grad f(P*; mu, sigma2) + G_Aᵀ lambda_A = 0,    G_A P* = h_A
//! ```
//!
//! over the strongly active rows `A`. Coordinates pinned by an active output
//! bound, directly or through a chain of active ramp rows, are removed before
//! the linear solve so their sensitivity is exactly zero.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::NormStats;
use crate::grid::{ConstraintSet, DispatchSchedule, SystemConfig};
use crate::linalg::independent_rows;
use crate::net::{self, Mode, NetError, NetworkParams};
use crate::sed::{self, ForecastDistribution, SedError, SedProblem};
use crate::solver::{solve_sed, SolverError, SqpResult, SqpSettings};

/// Bound on the relative residual of the sensitivity solve.
pub const SENSITIVITY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskGradError {
    #[error("shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("singular sensitivity system")]
    SingularKkt,
    #[error("sensitivity residual {0:e} exceeds tolerance")]
    Residual(f64),
    #[error("dispatch solve did not converge in {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Sed(#[from] SedError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Realized loss of a dispatch against the actual load, split by term and
/// hour.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLossValue {
    pub total: f64,
    pub shortage: Vec<f64>,
    pub excess: Vec<f64>,
    pub flow_over: Vec<f64>,
    pub flow_under: Vec<f64>,
    pub regularizer: Vec<f64>,
    /// All zero when generation cost is excluded.
    pub generation_cost: Vec<f64>,
}

impl TaskLossValue {
    /// Sum of every component in hour `t`.
    pub fn hour_total(&self, t: usize) -> f64 {
        self.shortage[t]
            + self.excess[t]
            + self.flow_over[t]
            + self.flow_under[t]
            + self.regularizer[t]
            + self.generation_cost[t]
    }
}

fn check_shapes(
    p_star: &DispatchSchedule,
    y_actual: &[f64],
    system: &SystemConfig,
) -> Result<(), TaskGradError> {
    if y_actual.len() != p_star.horizon() {
        return Err(TaskGradError::Shape {
            expected: p_star.horizon(),
            found: y_actual.len(),
        });
    }
    if p_star.n_gen() != system.n_gen() || p_star.horizon() != system.horizon() {
        return Err(TaskGradError::Shape {
            expected: system.n_vars(),
            found: p_star.as_slice().len(),
        });
    }
    Ok(())
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Task loss of dispatch `p_star` when the load turns out to be `y_actual`.
pub fn task_loss(
    p_star: &DispatchSchedule,
    y_actual: &[f64],
    system: &SystemConfig,
    include_cost: bool,
) -> Result<TaskLossValue, TaskGradError> {
    check_shapes(p_star, y_actual, system)?;
    let horizon = p_star.horizon();
    let pen = system.penalties();
    let mut v = TaskLossValue {
        total: 0.0,
        shortage: vec![0.0; horizon],
        excess: vec![0.0; horizon],
        flow_over: vec![0.0; horizon],
        flow_under: vec![0.0; horizon],
        regularizer: vec![0.0; horizon],
        generation_cost: vec![0.0; horizon],
    };
    for (t, &y) in y_actual.iter().enumerate() {
        let p_hour = p_star.hour(t);
        let s = p_star.total(t);
        v.shortage[t] = pen.lambda_s * pos(y - s);
        v.excess[t] = pen.lambda_e * pos(s - y);
        for (l, line) in system.lines().iter().enumerate() {
            let flow = system.generation_flow(l, p_hour) - system.gamma(l) * y;
            v.flow_over[t] += pen.lambda_l * pos(flow - line.flow_limit);
            v.flow_under[t] += pen.lambda_l * pos(-line.flow_limit - flow);
        }
        v.regularizer[t] = 0.5 * (s - y) * (s - y);
        if include_cost {
            v.generation_cost[t] = p_hour
                .iter()
                .zip(system.generators())
                .map(|(p, g)| g.a * p * p + g.b * p + g.c)
                .sum();
        }
    }
    v.total = (0..horizon).map(|t| v.hour_total(t)).sum();
    Ok(v)
}

/// Gradient of [`task_loss`] in every `P*_{g,t}`, flattened hour-major.
///
/// Every `(.)+` term contributes the subgradient 0 at its kink.
pub fn task_loss_grad_p(
    p_star: &DispatchSchedule,
    y_actual: &[f64],
    system: &SystemConfig,
    include_cost: bool,
) -> Result<DVector<f64>, TaskGradError> {
    check_shapes(p_star, y_actual, system)?;
    let n_gen = system.n_gen();
    let pen = system.penalties();
    let mut grad = DVector::zeros(system.n_vars());
    for (t, &y) in y_actual.iter().enumerate() {
        let p_hour = p_star.hour(t);
        let s = p_star.total(t);
        let mut common = s - y;
        if y > s {
            common -= pen.lambda_s;
        } else if s > y {
            common += pen.lambda_e;
        }
        let mut line_slope = vec![0.0; system.lines().len()];
        for (l, line) in system.lines().iter().enumerate() {
            let flow = system.generation_flow(l, p_hour) - system.gamma(l) * y;
            if flow > line.flow_limit {
                line_slope[l] = pen.lambda_l;
            } else if flow < -line.flow_limit {
                line_slope[l] = -pen.lambda_l;
            }
        }
        for (g, gen) in system.generators().iter().enumerate() {
            let mut d = common;
            for (l, slope) in line_slope.iter().enumerate() {
                d += slope * system.line_gen_factor(l, g);
            }
            if include_cost {
                d += 2.0 * gen.a * p_hour[g] + gen.b;
            }
            grad[t * n_gen + g] = d;
        }
    }
    Ok(grad)
}

/// Derivatives of the optimal dispatch with respect to the forecast
/// parameters; column `t` holds `dP* / d mu_t` (resp. `d sigma2_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSensitivity {
    pub dp_dmu: DMatrix<f64>,
    pub dp_dsigma2: DMatrix<f64>,
    /// Coordinates pinned by the strongly active set.
    pub frozen: Vec<bool>,
    /// Relative residual of the reduced KKT solve.
    pub residual: f64,
}

impl SolutionSensitivity {
    /// `(dP*/dmu)ᵀ v`: pulls a dispatch-space gradient back to the hourly means.
    pub fn pullback_mu(&self, v: &DVector<f64>) -> DVector<f64> {
        self.dp_dmu.tr_mul(v)
    }

    pub fn pullback_sigma2(&self, v: &DVector<f64>) -> DVector<f64> {
        self.dp_dsigma2.tr_mul(v)
    }
}

/// Coordinates fixed by the rows in `active`: a row whose nonzeros all but
/// one sit on fixed coordinates fixes the remaining one. Iterated to a
/// fixed point.
fn frozen_coordinates(g: &DMatrix<f64>, active: &[usize]) -> Vec<bool> {
    let n = g.ncols();
    let mut frozen = vec![false; n];
    let support: Vec<Vec<usize>> = active
        .iter()
        .map(|&i| (0..n).filter(|&j| g[(i, j)] != 0.0).collect())
        .collect();
    loop {
        let mut changed = false;
        for cols in &support {
            let mut free = cols.iter().filter(|&&j| !frozen[j]);
            if let (Some(&j), None) = (free.next(), free.next()) {
                frozen[j] = true;
                changed = true;
            }
        }
        if !changed {
            return frozen;
        }
    }
}

/// Implicit derivatives of `P*` in `(mu, sigma2)` at a converged solution.
pub fn solution_sensitivity(
    result: &SqpResult,
    prob: &SedProblem<'_>,
) -> Result<SolutionSensitivity, TaskGradError> {
    let p = result.p_star.as_slice();
    let n = p.len();
    let horizon = prob.system.horizon();
    let g = &prob.constraints.g_matrix;
    let hess = sed::hessian(p, prob)?;
    let (jmu, jsig) = sed::parameter_jacobians(p, prob)?;

    let active = result.strongly_active();
    let frozen = frozen_coordinates(g, &active);
    let free: Vec<usize> = (0..n).filter(|&j| !frozen[j]).collect();
    let nf = free.len();

    let mut dp_dmu = DMatrix::zeros(n, horizon);
    let mut dp_dsigma2 = DMatrix::zeros(n, horizon);
    if nf == 0 {
        return Ok(SolutionSensitivity {
            dp_dmu,
            dp_dsigma2,
            frozen,
            residual: 0.0,
        });
    }

    // Active rows still touching free coordinates, restricted to those columns.
    let ga_free = DMatrix::from_fn(active.len(), nf, |i, k| g[(active[i], free[k])]);
    let candidates: Vec<usize> = (0..active.len())
        .filter(|&i| ga_free.row(i).iter().any(|v| *v != 0.0))
        .collect();
    let rows = independent_rows(&ga_free, &candidates, 1e-9);
    let m = rows.len();

    let dim = nf + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = hess[(i, j)];
        }
    }
    for (r, &i) in rows.iter().enumerate() {
        for k in 0..nf {
            kkt[(nf + r, k)] = ga_free[(i, k)];
            kkt[(k, nf + r)] = ga_free[(i, k)];
        }
    }
    let mut rhs = DMatrix::zeros(dim, 2 * horizon);
    for (a, &i) in free.iter().enumerate() {
        for t in 0..horizon {
            rhs[(a, t)] = -jmu[(i, t)];
            rhs[(a, horizon + t)] = -jsig[(i, t)];
        }
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or(TaskGradError::SingularKkt)?;

    let resid = &kkt * &sol - &rhs;
    let residual = resid.amax() / (1.0 + rhs.amax() + kkt.amax() * sol.amax());
    if residual > SENSITIVITY_RESIDUAL_TOL {
        return Err(TaskGradError::Residual(residual));
    }

    for (a, &i) in free.iter().enumerate() {
        for t in 0..horizon {
            dp_dmu[(i, t)] = sol[(a, t)];
            dp_dsigma2[(i, t)] = sol[(a, horizon + t)];
        }
    }
    Ok(SolutionSensitivity {
        dp_dmu,
        dp_dsigma2,
        frozen,
        residual,
    })
}

/// Everything the task gradient needs besides the network and the sample.
#[derive(Debug, Clone)]
pub struct TaskContext<'a> {
    pub system: &'a SystemConfig,
    pub constraints: &'a ConstraintSet,
    pub stats: &'a NormStats,
    /// Per-hour forecast variance in normalized units, held fixed.
    pub sigma2: &'a [f64],
    pub include_cost: bool,
    pub sqp: SqpSettings,
}

impl TaskContext<'_> {
    /// Physical forecast distribution of a normalized network output.
    pub fn distribution(&self, y_hat: &[f64]) -> ForecastDistribution {
        ForecastDistribution::new(
            y_hat.iter().map(|y| self.stats.denormalize_load(*y)).collect(),
            self.sigma2
                .iter()
                .map(|s| self.stats.denormalize_variance(*s))
                .collect(),
        )
    }

    /// Optimal dispatch for a normalized network output.
    pub fn dispatch(
        &self,
        y_hat: &[f64],
        warm_start: Option<&DispatchSchedule>,
    ) -> Result<SqpResult, TaskGradError> {
        let prob = SedProblem::new(self.system, self.distribution(y_hat), self.constraints)?;
        let result = solve_sed(&prob, warm_start, &self.sqp)?;
        if !result.converged {
            return Err(TaskGradError::NotConverged(result.outer_iterations));
        }
        Ok(result)
    }
}

/// Gradient of one sample's task loss with respect to the trainable
/// parameters, with the loss and dispatch it was computed from.
#[derive(Debug, Clone)]
pub struct TaskGradient {
    pub grad: Vec<f64>,
    pub loss: TaskLossValue,
    pub p_star: DispatchSchedule,
    pub sqp_iterations: usize,
}

/// Forward pass in eval mode, dispatch against the denormalized forecast,
/// realized task loss at the actual load, and the chain rule back to the
/// parameters through `dP*/dmu`. The variance is a constant here.
pub fn task_gradient_theta(
    params: &NetworkParams,
    x: &[f64],
    y_train: &[f64],
    ctx: &TaskContext<'_>,
    warm_start: Option<&DispatchSchedule>,
) -> Result<TaskGradient, TaskGradError> {
    let xm = DMatrix::from_row_slice(1, x.len(), x);
    let (y_hat, cache) = net::forward(params, &xm, Mode::Eval)?;
    let y_hat: Vec<f64> = y_hat.iter().copied().collect();
    let prob = SedProblem::new(ctx.system, ctx.distribution(&y_hat), ctx.constraints)?;
    let result = solve_sed(&prob, warm_start, &ctx.sqp)?;
    if !result.converged {
        return Err(TaskGradError::NotConverged(result.outer_iterations));
    }
    let y_actual: Vec<f64> = y_train.iter().map(|y| ctx.stats.denormalize_load(*y)).collect();
    let loss = task_loss(&result.p_star, &y_actual, ctx.system, ctx.include_cost)?;
    let dl_dp = task_loss_grad_p(&result.p_star, &y_actual, ctx.system, ctx.include_cost)?;
    let sens = solution_sensitivity(&result, &prob)?;
    let dl_dmu = sens.pullback_mu(&dl_dp);
    let upstream = DMatrix::from_iterator(1, dl_dmu.len(), dl_dmu.iter().map(|d| d * ctx.stats.load_std));
    let grad = net::backward(params, &cache, &upstream)?;
    Ok(TaskGradient {
        grad,
        loss,
        p_star: result.p_star,
        sqp_iterations: result.outer_iterations,
    })
}
