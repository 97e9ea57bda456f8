//! Independent reference computations shared by the integration suites.
//!
//! Nothing here calls the library's solvers or closed forms; each oracle
//! recomputes its quantity from the defining formula.

#![allow(dead_code)]

use lfednet_core::grid::{build_constraints, reference_3bus_document, validate_system, SystemConfig};
use lfednet_core::{ConstraintSet, ForecastDistribution, SedProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for x in samples {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// Monte-Carlo estimate of `E[f(y)]` for `y ~ N(mu, sigma2)`.
pub fn monte_carlo(
    f: impl Fn(f64) -> f64,
    mu: f64,
    sigma2: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let sigma = sigma2.sqrt();
    mean_and_stderr((0..n).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        f(mu + sigma * z)
    }))
}

/// Composite Simpson integral of the standard normal density on `[-12, x]`.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let a = -12.0;
    let n = 200_000;
    let h = (x - a) / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random symmetric positive definite matrix with eigenvalues in roughly
/// `[0.5, 5]`.
pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut h = &a * a.transpose() * (4.5 / n as f64);
    for i in 0..n {
        h[(i, i)] += 0.5;
    }
    h
}

fn qp_value(h: &DMatrix<f64>, j: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + j.dot(x)
}

fn opposite(g: &DMatrix<f64>, a: usize, b: usize) -> bool {
    (0..g.ncols()).all(|c| (g[(a, c)] + g[(b, c)]).abs() < 1e-15)
}

/// Exhaustive active-set solution of `min ½xᵀHx + Jᵀx  s.t.  Gx <= h`.
///
/// Every subset of at most `n` rows (never containing a row and its negation)
/// is treated as the active set; the equality-constrained stationary point is
/// computed by a dense LU solve, and the feasible candidate with the lowest
/// objective is returned.
pub fn enumerate_qp(
    h: &DMatrix<f64>,
    j: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut chosen: Vec<usize> = Vec::new();

    fn rec(
        start: usize,
        chosen: &mut Vec<usize>,
        ctx: (&DMatrix<f64>, &DVector<f64>, &DMatrix<f64>, &DVector<f64>),
        best: &mut Option<(DVector<f64>, f64)>,
    ) {
        let (h, j, g, rhs) = ctx;
        let n = h.nrows();
        let k = chosen.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut b = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (r, &row) in chosen.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = g[(row, c)];
                kkt[(c, n + r)] = g[(row, c)];
            }
            b[n + r] = rhs[row];
        }
        for c in 0..n {
            b[c] = -j[c];
        }
        if let Some(sol) = kkt.lu().solve(&b) {
            let x = sol.rows(0, n).into_owned();
            let feasible = (g * &x - rhs).iter().all(|v| *v <= 1e-9);
            if feasible && sol.iter().all(|v| v.is_finite()) {
                let f = qp_value(h, j, &x);
                if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
                    *best = Some((x, f));
                }
            }
        }
        if k == n {
            return;
        }
        for next in start..g.nrows() {
            if chosen.iter().any(|&c| opposite(g, c, next)) {
                continue;
            }
            chosen.push(next);
            rec(next + 1, chosen, ctx, best);
            chosen.pop();
        }
    }

    rec(0, &mut chosen, (h, j, g, rhs), &mut best);
    best
}

/// Random QP with a box on every variable plus a few difference rows, built so
/// that the midpoint of the box is strictly feasible.
pub fn random_box_qp(
    n: usize,
    n_diff: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let h = random_spd(n, rng);
    let j = DVector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.5..2.5)).collect();
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (l + u)).collect();
    let m = 2 * n + n_diff;
    let mut g = DMatrix::zeros(m, n);
    let mut rhs = DVector::zeros(m);
    for i in 0..n {
        g[(2 * i, i)] = 1.0;
        rhs[2 * i] = hi[i];
        g[(2 * i + 1, i)] = -1.0;
        rhs[2 * i + 1] = -lo[i];
    }
    for r in 0..n_diff {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n);
        if n > 1 {
            while b == a {
                b = rng.random_range(0..n);
            }
        }
        let row = 2 * n + r;
        g[(row, a)] += 1.0;
        g[(row, b)] -= 1.0;
        rhs[row] = mid[a] - mid[b] + rng.random_range(0.05..0.6);
    }
    (h, j, g, rhs)
}

/// Dykstra's alternating projection of `x` onto `{z : G z <= h}`.
pub fn project_polytope(x: &DVector<f64>, g: &DMatrix<f64>, rhs: &DVector<f64>, sweeps: usize) -> DVector<f64> {
    let m = g.nrows();
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|i| (0..g.ncols()).filter(|&c| g[(i, c)] != 0.0).map(|c| (c, g[(i, c)])).collect())
        .collect();
    let mut z = x.clone();
    let mut corr: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for i in 0..m {
            // undo the previous correction on this set
            for (k, &(c, _)) in rows[i].iter().enumerate() {
                z[c] += corr[i][k];
            }
            let dot: f64 = rows[i].iter().map(|&(c, a)| a * z[c]).sum();
            let nn: f64 = rows[i].iter().map(|&(_, a)| a * a).sum();
            let excess = (dot - rhs[i]).max(0.0);
            for (k, &(c, a)) in rows[i].iter().enumerate() {
                let shift = excess * a / nn;
                let before = z[c];
                z[c] -= shift;
                moved = moved.max((z[c] - before + corr[i][k]).abs());
                corr[i][k] = shift;
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    z
}

/// Accelerated projected gradient with restarts for
/// `min f(x) s.t. Gx <= h`, with step `1/lipschitz`.
pub fn projected_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    g: &DMatrix<f64>,
    rhs: &DVector<f64>,
    lipschitz: f64,
    iters: usize,
) -> DVector<f64> {
    let step = 1.0 / lipschitz;
    let mut x = project_polytope(x0, g, rhs, 5000);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    for _ in 0..iters {
        let x_new = project_polytope(&(&y - step * grad(&y)), g, rhs, 5000);
        let f_new = f(&x_new);
        if f_new > fx {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + ((t - 1.0) / t_new) * (&x_new - &x);
        x = x_new;
        fx = f_new;
        t = t_new;
    }
    x
}

/// Largest row sum of absolute values, an upper bound on the spectral radius.
pub fn gershgorin_bound(h: &DMatrix<f64>) -> f64 {
    h.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Diurnal reference load: 900 MW mean, 250 MW swing peaking mid-afternoon.
pub fn reference_mu() -> Vec<f64> {
    (0..24)
        .map(|t| 900.0 + 250.0 * ((t as f64 - 6.0) / 24.0 * std::f64::consts::TAU).sin())
        .collect()
}

pub fn reference_system() -> (SystemConfig, ConstraintSet) {
    let sys = validate_system(reference_3bus_document()).unwrap();
    let cs = build_constraints(&sys);
    (sys, cs)
}

pub fn problem<'a>(
    sys: &'a SystemConfig,
    cs: &'a ConstraintSet,
    mu: Vec<f64>,
    sigma2: Vec<f64>,
) -> SedProblem<'a> {
    SedProblem::new(sys, ForecastDistribution::new(mu, sigma2), cs).unwrap()
}

/// Line flow recomputed from the raw shift factors:
/// `sum_m Gamma_{l,m} (sum_{g at m} P_g - k_m y)`.
pub fn flow_by_definition(sys: &SystemConfig, line: usize, p_hour: &[f64], y: f64) -> f64 {
    let shift = &sys.lines()[line].shift_factors;
    sys.buses()
        .iter()
        .enumerate()
        .map(|(m, bus)| {
            let injected: f64 = sys
                .generators()
                .iter()
                .zip(p_hour)
                .filter(|(g, _)| &g.bus == bus)
                .map(|(_, p)| *p)
                .sum();
            shift[m] * (injected - sys.load_factors()[m] * y)
        })
        .sum()
}

/// Realized hourly penalty `lambda_l sum_l (|flow_l| - F_l)+` at load `y`.
pub fn realized_flow_penalty(sys: &SystemConfig, p_hour: &[f64], y: f64) -> f64 {
    let lambda_l = sys.penalties().lambda_l;
    (0..sys.lines().len())
        .map(|l| {
            let f = flow_by_definition(sys, l, p_hour, y);
            let limit = sys.lines()[l].flow_limit;
            lambda_l * ((f - limit).max(0.0) + (-limit - f).max(0.0))
        })
        .sum()
}

pub mod checks;
