//! Convex QP subproblem solver and the SQP driver for the dispatch problem.
//!
//! The QP
//!
//! ```text
//! minimize  ½ xᵀ H x + Jᵀ x   subject to  G x <= h
//! ```
//!
//! is solved by a Mehrotra predictor-corrector primal-dual interior-point
//! method on the normal equations, followed by an active-set polish: the rows
//! the interior point identifies as binding are imposed as equalities and the
//! resulting KKT system solved directly. The polished point is kept when it is
//! primal and dual feasible, which makes solutions and multipliers exact to
//! rounding on nondegenerate problems.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::grid::DispatchSchedule;
use crate::linalg::{independent_rows, inf_norm, select_rows, solve_kkt};
use crate::sed::{self, SedError, SedProblem};

/// A row is active when `|g_i x - h_i| <= ACTIVE_TOL (1 + |h_i|)`.
pub const ACTIVE_TOL: f64 = 1e-7;
/// An active row is strongly active when its multiplier exceeds this.
pub const STRONG_DUAL_TOL: f64 = 1e-7;
/// Interior-point iterations without a better merit before giving up.
const STALL_ITERATIONS: usize = 5;

const POLISH_ROUNDS: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("infeasible constraints: a nonnegative row combination gives 0 <= {bound}")]
    Infeasible { bound: f64 },
    #[error("QP interior point did not converge in {iterations} iterations")]
    MaxIterations { iterations: usize },
    #[error("numerically singular KKT system")]
    SingularKkt,
    #[error("QP dimension mismatch")]
    Dimension,
    #[error(transparent)]
    Sed(#[from] SedError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub comp_tol: f64,
    pub feas_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iter: 100,
            kkt_tol: 1e-8,
            comp_tol: 1e-8,
            feas_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// Interior-point solution refined by the active-set polish.
    Polished,
    /// Interior-point solution; the polish was rejected.
    Interior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One nonnegative multiplier per inequality row.
    pub duals: DVector<f64>,
    /// Rows satisfied with equality, see [`ACTIVE_TOL`].
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpSolution {
    /// Active rows whose multiplier exceeds [`STRONG_DUAL_TOL`].
    pub fn strongly_active(&self) -> Vec<usize> {
        self.active_set
            .iter()
            .copied()
            .filter(|&i| self.duals[i] > STRONG_DUAL_TOL)
            .collect()
    }
}

/// KKT residuals of a QP point: stationarity, primal violation and the worst
/// complementarity product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

pub fn qp_residuals(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
    duals: &DVector<f64>,
) -> QpResiduals {
    let stat = hess * x + lin + g.tr_mul(duals);
    let slack = g * x - rhs;
    QpResiduals {
        stationarity: inf_norm(&stat),
        primal: slack.iter().fold(0.0f64, |m, v| m.max(*v)),
        complementarity: slack
            .iter()
            .zip(duals.iter())
            .fold(0.0f64, |m, (s, z)| m.max((s * z).abs())),
    }
}

fn active_rows(g: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> Vec<usize> {
    let gx = g * x;
    (0..rhs.len())
        .filter(|&i| (gx[i] - rhs[i]).abs() <= ACTIVE_TOL * (1.0 + rhs[i].abs()))
        .collect()
}

/// Row-wise sparse copy of the constraint matrix; ramp and box rows carry at
/// most two nonzeros.
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseRows {
    fn from_dense(g: &DMatrix<f64>) -> Self {
        let rows = (0..g.nrows())
            .map(|i| {
                (0..g.ncols())
                    .filter(|&j| g[(i, j)] != 0.0)
                    .map(|j| (j, g[(i, j)]))
                    .collect()
            })
            .collect();
        SparseRows {
            rows,
            ncols: g.ncols(),
        }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.iter().map(|(j, v)| v * x[*j]).sum::<f64>()),
        )
    }

    fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (r, yi) in self.rows.iter().zip(y.iter()) {
            for (j, v) in r {
                out[*j] += v * yi;
            }
        }
        out
    }

    /// `Gᵀ diag(w) G` added into `m`.
    fn add_weighted_gram(&self, w: &DVector<f64>, m: &mut DMatrix<f64>) {
        for (r, wi) in self.rows.iter().zip(w.iter()) {
            for (j, vj) in r {
                for (k, vk) in r {
                    m[(*j, *k)] += wi * vj * vk;
                }
            }
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .fold(f64::INFINITY, |a, (x, d)| a.min(-x / d))
}

/// Solve `min ½ xᵀ H x + Jᵀ x  s.t.  G x <= h` for symmetric positive definite `H`.
///
/// `warm_start` seeds the primal iterate.
pub fn solve_qp(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, SolverError> {
    solve_qp_with(hess, lin, g, rhs, warm_start, &QpSettings::default())
}

pub fn solve_qp_with(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> Result<QpSolution, SolverError> {
    let n = hess.nrows();
    let m = g.nrows();
    if hess.ncols() != n || lin.len() != n || g.ncols() != n || rhs.len() != m {
        return Err(SolverError::Dimension);
    }
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(SolverError::Dimension);
        }
    }

    if m == 0 {
        let chol = hess.clone().cholesky().ok_or(SolverError::SingularKkt)?;
        let x = chol.solve(&(-lin));
        return Ok(QpSolution {
            x,
            duals: DVector::zeros(0),
            active_set: vec![],
            iterations: 0,
            status: QpStatus::Polished,
        });
    }

    let scale = 1.0 + inf_norm(lin).max(inf_norm(rhs));
    let ip_tol = 1e-10 * scale;
    let gs = SparseRows::from_dense(g);

    let mut x = warm_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut s = (rhs - gs.mul(&x)).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let mf = m as f64;

    let mut iterations = 0;
    let mut converged = false;
    // Normal equations lose accuracy once z / s spans many decades, so the
    // best iterate seen is kept and the loop stops when it stops improving.
    let mut best = (f64::INFINITY, x.clone(), s.clone(), z.clone());
    let mut since_best = 0;
    while iterations < settings.max_iter {
        let r_p = gs.mul(&x) + &s - rhs;
        let r_d = hess * &x + lin + gs.tr_mul(&z);
        let mu = s.dot(&z) / mf;
        let (nd, np) = (inf_norm(&r_d), inf_norm(&r_p));
        if nd <= ip_tol && np <= ip_tol && mu <= 1e-12 * scale {
            converged = true;
            break;
        }
        let merit = nd.max(np).max(mu);
        if merit < best.0 {
            best = (merit, x.clone(), s.clone(), z.clone());
            since_best = 0;
        } else if best.0 <= 1e-6 * scale {
            since_best += 1;
            if since_best >= STALL_ITERATIONS {
                break;
            }
        }
        if let Some(bound) = infeasibility_certificate(g, rhs, &z) {
            return Err(SolverError::Infeasible { bound });
        }
        iterations += 1;

        let w = z.component_div(&s);
        let mut normal = hess.clone();
        gs.add_weighted_gram(&w, &mut normal);
        let chol = match normal.clone().cholesky() {
            Some(c) => c,
            None => {
                let bump = 1e-12 * (1.0 + normal.diagonal().amax());
                for i in 0..n {
                    normal[(i, i)] += bump;
                }
                normal.cholesky().ok_or(SolverError::SingularKkt)?
            }
        };

        // Newton direction for complementarity target r_c (Z ds + S dz = -r_c).
        let direction = |r_c: &DVector<f64>| {
            let inner = w.component_mul(&r_p) - r_c.component_div(&s);
            let dx = chol.solve(&(-&r_d - gs.tr_mul(&inner)));
            let ds = -&r_p - gs.mul(&dx);
            let dz = (-r_c - z.component_mul(&ds)).component_div(&s);
            (dx, ds, dz)
        };

        let sz = s.component_mul(&z);
        let (_, ds_a, dz_a) = direction(&sz);
        let alpha_a = 1.0f64.min(max_step(&s, &ds_a)).min(max_step(&z, &dz_a));
        let mu_aff = (&s + alpha_a * &ds_a).dot(&(&z + alpha_a * &dz_a)) / mf;
        let ratio = mu_aff / mu;
        let sigma = (ratio * ratio * ratio).min(1.0);

        let r_c = sz + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = direction(&r_c);
        let alpha = 1.0f64.min(0.99 * max_step(&s, &ds).min(max_step(&z, &dz)));

        x += alpha * dx;
        s += alpha * ds;
        z += alpha * dz;
        // keep the iterate strictly interior
        s.apply(|v| *v = v.max(1e-300));
        z.apply(|v| *v = v.max(1e-300));
    }
    if !converged {
        let (merit, bx, bs, bz) = best;
        if let Some((xp, zp)) = polish(hess, lin, g, rhs, &bs, &bz, settings, scale) {
            return Ok(QpSolution {
                active_set: active_rows(g, rhs, &xp),
                x: xp,
                duals: zp,
                iterations,
                status: QpStatus::Polished,
            });
        }
        if merit > 1e-7 * scale {
            return Err(SolverError::MaxIterations { iterations });
        }
        x = bx;
        s = bs;
        z = bz;
    }

    if let Some((xp, zp)) = polish(hess, lin, g, rhs, &s, &z, settings, scale) {
        return Ok(QpSolution {
            active_set: active_rows(g, rhs, &xp),
            x: xp,
            duals: zp,
            iterations,
            status: QpStatus::Polished,
        });
    }
    Ok(QpSolution {
        active_set: active_rows(g, rhs, &x),
        x,
        duals: z,
        iterations,
        status: QpStatus::Interior,
    })
}

/// Farkas test on the scaled dual iterate: `y >= 0`, `Gᵀ y ~ 0`, `hᵀ y < 0`.
fn infeasibility_certificate(g: &DMatrix<f64>, rhs: &DVector<f64>, z: &DVector<f64>) -> Option<f64> {
    let zmax = z.amax();
    if zmax < 1e8 {
        return None;
    }
    let y = z / zmax;
    let gty = g.tr_mul(&y);
    let bound = rhs.dot(&y);
    if inf_norm(&gty) <= 1e-7 * (1.0 + g.amax()) && bound < -1e-7 {
        Some(bound)
    } else {
        None
    }
}

/// Equality-constrained re-solve on the active set guessed from the interior
/// iterate. A guessed row with a negative multiplier is dropped and a violated
/// row is added, for a few rounds, so degenerate guesses can still settle.
#[allow(clippy::too_many_arguments)]
fn polish(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
    settings: &QpSettings,
    scale: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut guess: Vec<usize> = (0..s.len()).filter(|&i| s[i] < z[i]).collect();
    for _ in 0..POLISH_ROUNDS {
        let rows = independent_rows(g, &guess, 1e-9);
        let ga = select_rows(g, &rows);
        let ha = DVector::from_iterator(rows.len(), rows.iter().map(|&i| rhs[i]));
        let (x, y) = solve_kkt(hess, &ga, &(-lin), &ha)?;
        if !rows.is_empty() {
            let (k_min, y_min) = y.argmin();
            if y_min < -settings.comp_tol * scale {
                guess.retain(|&i| i != rows[k_min]);
                continue;
            }
        }
        let slack = g * &x - rhs;
        let (i_max, violation) = slack.argmax();
        if violation > settings.feas_tol {
            guess.push(i_max);
            guess.sort_unstable();
            continue;
        }
        let mut duals = DVector::zeros(s.len());
        for (k, &i) in rows.iter().enumerate() {
            duals[i] = y[k].max(0.0);
        }
        let res = qp_residuals(hess, lin, g, rhs, &x, &duals);
        // stationarity and complementarity carry the magnitude of the linear term
        let ok = res.stationarity <= settings.kkt_tol * scale && res.complementarity <= settings.comp_tol * scale;
        return ok.then_some((x, duals));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpSettings {
    /// Convergence tolerance on `|P(k+1) - P(k)|_inf`.
    pub tol: f64,
    pub max_outer: usize,
    pub armijo: f64,
    pub max_halvings: usize,
    pub qp: QpSettings,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            tol: 1e-6,
            max_outer: 50,
            armijo: 1e-4,
            max_halvings: 30,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpResult {
    pub p_star: DispatchSchedule,
    /// Multipliers of the constraint rows from the final subproblem.
    pub duals: DVector<f64>,
    pub active_set: Vec<usize>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// `|grad f(P*) + Gᵀ duals|_inf`.
    pub kkt_residual: f64,
    /// `|P(k+1) - P(k)|_inf` of every subproblem step, before line search.
    pub step_norms: Vec<f64>,
}

impl SqpResult {
    /// Active rows with multipliers above [`STRONG_DUAL_TOL`].
    pub fn strongly_active(&self) -> Vec<usize> {
        self.active_set
            .iter()
            .copied()
            .filter(|&i| self.duals[i] > STRONG_DUAL_TOL)
            .collect()
    }
}

/// Equal split of each hour's mean load across generators, clipped to the
/// output limits.
pub fn default_initial_point(prob: &SedProblem<'_>) -> DispatchSchedule {
    let sys = prob.system;
    let n_gen = sys.n_gen();
    let mut p = DispatchSchedule::zeros(sys.horizon(), n_gen);
    for t in 0..sys.horizon() {
        let share = prob.dist.mu[t] / n_gen as f64;
        for (g, gen) in sys.generators().iter().enumerate() {
            p.set(t, g, share.clamp(gen.p_min, gen.p_max));
        }
    }
    p
}

/// Sequential quadratic programming on the smoothed dispatch objective.
///
/// Each iteration solves the local quadratic model under the ramp and output
/// limits, then backtracks along the step until the Armijo condition holds.
/// A starting point outside the constraints takes its first step in full.
/// Non-convergence is reported through `converged = false` with the last
/// accepted iterate.
pub fn solve_sed(
    prob: &SedProblem<'_>,
    p_init: Option<&DispatchSchedule>,
    settings: &SqpSettings,
) -> Result<SqpResult, SolverError> {
    let sys = prob.system;
    let cs = prob.constraints;
    let (horizon, n_gen) = (sys.horizon(), sys.n_gen());
    let mut p: DVector<f64> = match p_init {
        Some(init) => {
            if init.horizon() != horizon || init.n_gen() != n_gen {
                return Err(SolverError::Dimension);
            }
            init.to_vector()
        }
        None => default_initial_point(prob).to_vector(),
    };
    let mut feasible = cs.is_satisfied(p.as_slice(), settings.qp.feas_tol);
    let mut f = sed::objective(p.as_slice(), prob)?;
    let mut duals = DVector::zeros(cs.n_rows());
    let mut step_norms = Vec::new();
    let mut converged = false;
    let mut outer = 0;

    while outer < settings.max_outer {
        outer += 1;
        let ev = sed::evaluate(p.as_slice(), prob)?;
        let lin = sed::qp_linear_term(&p, &ev.gradient, &ev.hessian);
        let qp = solve_qp_with(
            &ev.hessian,
            &lin,
            &cs.g_matrix,
            &cs.h_vector,
            Some(&p),
            &settings.qp,
        )?;
        let d = &qp.x - &p;
        let dn = inf_norm(&d);
        // objective differences below a few ulps of f are noise
        let noise = 16.0 * f64::EPSILON * (1.0 + f.abs());
        let slope = ev.gradient.dot(&d);
        // A step that stopped contracting while the model predicts no decrease
        // beyond rounding is a stall at machine precision: this happens when
        // some directions carry curvature near the Hessian floor.
        let predicted = slope + 0.5 * d.dot(&(&ev.hessian * &d));
        let stalled = step_norms.last().is_some_and(|prev| dn > 0.5 * prev) && predicted.abs() <= noise;
        step_norms.push(dn);
        duals = qp.duals;

        if dn < settings.tol || (feasible && stalled) {
            let f_new = sed::objective(qp.x.as_slice(), prob)?;
            if !feasible || f_new <= f + noise {
                p = qp.x;
                f = f_new;
            }
            converged = true;
            break;
        }
        if !feasible {
            p = qp.x;
            f = sed::objective(p.as_slice(), prob)?;
            feasible = true;
            continue;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = &p + alpha * &d;
            let ft = sed::objective(trial.as_slice(), prob)?;
            if ft <= f + settings.armijo * alpha * slope + noise {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, ft)) => {
                p = trial;
                f = ft;
            }
            None => break,
        }
    }

    let grad = sed::gradient(p.as_slice(), prob)?;
    let kkt_residual = inf_norm(&(grad + cs.g_matrix.tr_mul(&duals)));
    let active_set = active_rows(&cs.g_matrix, &cs.h_vector, &p);
    Ok(SqpResult {
        p_star: DispatchSchedule::from_flat(horizon, n_gen, p.as_slice().to_vec())
            .expect("shape checked"),
        duals,
        active_set,
        outer_iterations: outer,
        converged,
        objective: f,
        kkt_residual,
        step_norms,
    })
}
