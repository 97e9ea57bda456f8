//! Oracle comparisons sized by the caller: the core suites run them small,
//! the acceptance target at full size.

use super::*;
use lfednet_core::gaussmath::{
    expected_balance_penalty, expected_excess, expected_flow_penalty, expected_quadratic_terms,
    expected_shortfall, GaussianHour, PenaltyEval,
};
use lfednet_core::grid::Penalties;
use lfednet_core::sed;
use lfednet_core::solver::{solve_qp, solve_sed, SqpResult, SqpSettings};
use lfednet_core::taskgrad::solution_sensitivity;

/// Largest `|closed form - MC mean| / stderr` and how many comparisons
/// exceeded three standard errors.
#[derive(Debug, Clone, Copy)]
pub struct McSummary {
    pub comparisons: usize,
    pub worst_z: f64,
    pub beyond_3se: usize,
}

impl McSummary {
    fn record(&mut self, closed: f64, (mean, se): (f64, f64)) {
        // a penalty that is zero on every sample has a degenerate estimator
        let se = se.max(1e-12 * (1.0 + closed.abs()));
        let z = (closed - mean).abs() / se;
        self.comparisons += 1;
        self.worst_z = self.worst_z.max(z);
        if z > 3.0 {
            self.beyond_3se += 1;
        }
    }
}

/// Balance, flow and quadratic expectations against Monte-Carlo averages of
/// the realized quantities.
pub fn closed_forms_vs_monte_carlo(tuples: usize, samples: usize, seed: u64) -> McSummary {
    let mut r = rng(seed);
    let (base, _) = reference_system();
    let mut out = McSummary {
        comparisons: 0,
        worst_z: 0.0,
        beyond_3se: 0,
    };
    for _ in 0..tuples {
        let mu = r.random_range(-5.0..5.0);
        let sigma2: f64 = r.random_range(0.05..9.0);
        let s = mu + sigma2.sqrt() * r.random_range(-3.0..3.0);
        let (ls, le) = (r.random_range(0.0..100.0), r.random_range(0.0..10.0));
        let hour = GaussianHour::new(mu, sigma2);
        let closed = expected_balance_penalty(s, hour, ls, le).value;
        let mc = monte_carlo(|y| ls * (y - s).max(0.0) + le * (s - y).max(0.0), mu, sigma2, samples, &mut r);
        out.record(closed, mc);

        let sys = base
            .with_penalties(Penalties {
                lambda_l: r.random_range(1.0..100.0),
                ..base.penalties()
            })
            .unwrap();
        let p: Vec<f64> = sys.generators().iter().map(|g| r.random_range(g.p_min..g.p_max)).collect();
        let total: f64 = p.iter().sum();
        // centre the load near the level where a random line hits a limit,
        // so the overload tail carries probability mass
        let line = r.random_range(0..sys.lines().len());
        let f0 = flow_by_definition(&sys, line, &p, 0.0);
        let slope = flow_by_definition(&sys, line, &p, 1.0) - f0;
        let limit = sys.lines()[line].flow_limit * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let sigma2: f64 = r.random_range(100.0..90_000.0);
        let mu = (limit - f0) / slope + sigma2.sqrt() * r.random_range(-2.0..2.0);
        let hour = GaussianHour::new(mu, sigma2);
        let closed = expected_flow_penalty(&p, hour, &sys).value;
        let mc = monte_carlo(|y| realized_flow_penalty(&sys, &p, y), mu, sigma2, samples, &mut r);
        out.record(closed, mc);

        let closed = expected_quadratic_terms(&p, hour, sys.generators());
        let cost: f64 = p.iter().zip(sys.generators()).map(|(p, g)| g.a * p * p + g.b * p + g.c).sum();
        let mc = monte_carlo(|y| 0.5 * (total - y).powi(2) + cost, mu, sigma2, samples, &mut r);
        out.record(closed, mc);
    }
    out
}

/// Worst relative errors of analytic first and second derivatives against
/// central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct DerivativeSummary {
    pub points: usize,
    pub worst_first: f64,
    pub worst_second: f64,
}

fn penalty_derivatives(
    f: impl Fn(f64, GaussianHour) -> PenaltyEval,
    s: f64,
    hour: GaussianHour,
    scale: f64,
    out: &mut DerivativeSummary,
) {
    let e = f(s, hour);
    let h = 1e-4 * s.abs().max(1.0);
    let fd = central_diff(|v| f(v, hour).value, s, h);
    out.worst_first = out.worst_first.max(rel_err(e.d_s, fd, scale));
    let fd2 = central_diff(|v| f(v, hour).d_s, s, h);
    let peak = scale / hour.sigma();
    out.worst_second = out.worst_second.max(rel_err(e.d2_s, fd2, peak));
    let hs = 1e-4 * hour.sigma2;
    let fd_mixed = central_diff(|v| f(s, GaussianHour::new(hour.mu, v)).d_s, hour.sigma2, hs);
    out.worst_second = out.worst_second.max(rel_err(e.d_s_dsigma2, fd_mixed, peak / hour.sigma()));
}

/// Scalar penalty derivatives and the dispatch objective's gradient, Hessian
/// and parameter Jacobians at random points.
pub fn derivative_suite(points: usize, seed: u64) -> DerivativeSummary {
    let mut r = rng(seed);
    let (sys, cs) = reference_system();
    let mut out = DerivativeSummary {
        points,
        ..Default::default()
    };
    for _ in 0..points {
        let mu = r.random_range(-1.0..1.0);
        let sigma2: f64 = r.random_range(0.25..4.0);
        let s = mu + sigma2.sqrt() * r.random_range(-4.0..4.0);
        let hour = GaussianHour::new(mu, sigma2);
        let (ls, le) = (r.random_range(1.0..100.0), r.random_range(0.1..10.0));
        penalty_derivatives(expected_excess, s, hour, 1.0, &mut out);
        penalty_derivatives(expected_shortfall, s, hour, 1.0, &mut out);
        penalty_derivatives(
            |s, h| expected_balance_penalty(s, h, ls, le),
            s,
            hour,
            ls + le,
            &mut out,
        );

        let mu: Vec<f64> = (0..24).map(|_| r.random_range(500.0..1400.0)).collect();
        let sigma2: Vec<f64> = (0..24).map(|_| r.random_range(900.0..40_000.0)).collect();
        let prob = problem(&sys, &cs, mu.clone(), sigma2.clone());
        let mut p: Vec<f64> = (0..24)
            .flat_map(|_| sys.generators().iter().map(|g| (g.p_min, g.p_max)).collect::<Vec<_>>())
            .map(|(lo, hi)| match r.random_range(0..8) {
                0 => lo,
                1 => hi,
                _ => r.random_range(lo..hi),
            })
            .collect();
        let grad = sed::gradient(&p, &prob).unwrap();
        let hess = sed::hessian(&p, &prob).unwrap();
        let (jmu, jsig) = sed::parameter_jacobians(&p, &prob).unwrap();
        let n_gen = sys.n_gen();
        for i in 0..p.len() {
            let t = i / n_gen;
            let h = 1e-5 * p[i].abs().max(1.0);
            let x0 = p[i];
            let hour_value = |v: f64, p: &mut Vec<f64>| {
                p[i] = v;
                let val = sed::hour_objective(&p[t * n_gen..(t + 1) * n_gen], prob.dist.hour(t), &sys);
                let g = sed::gradient(p, &prob).unwrap();
                p[i] = x0;
                (val, g)
            };
            let (fp, gp) = hour_value(x0 + h, &mut p);
            let (fm, gm) = hour_value(x0 - h, &mut p);
            out.worst_first = out.worst_first.max(rel_err(grad[i], (fp - fm) / (2.0 * h), 1.0));
            for k in 0..p.len() {
                let fd = (gp[k] - gm[k]) / (2.0 * h);
                out.worst_second = out.worst_second.max(rel_err(hess[(k, i)], fd, 1.0));
            }
        }
        for t in 0..24 {
            let at = |mu_t: f64, s2_t: f64| {
                let (mut m, mut s) = (mu.clone(), sigma2.clone());
                m[t] = mu_t;
                s[t] = s2_t;
                sed::gradient(&p, &problem(&sys, &cs, m, s)).unwrap()
            };
            let h = 1e-5 * mu[t];
            let fd = (at(mu[t] + h, sigma2[t]) - at(mu[t] - h, sigma2[t])) / (2.0 * h);
            for k in 0..p.len() {
                out.worst_second = out.worst_second.max(rel_err(jmu[(k, t)], fd[k], 1.0));
            }
            let h = 1e-5 * sigma2[t];
            let fd = (at(mu[t], sigma2[t] + h) - at(mu[t], sigma2[t] - h)) / (2.0 * h);
            // d grad / d sigma2 is in $/MW per MW², so its natural scale is 1/sigma
            let floor = 1.0 / sigma2[t].sqrt();
            for k in 0..p.len() {
                out.worst_second = out.worst_second.max(rel_err(jsig[(k, t)], fd[k], floor));
            }
        }
    }
    out
}

/// Worst distance and objective gap between `solve_qp` and the enumeration
/// oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct QpSummary {
    pub problems: usize,
    pub worst_dx: f64,
    pub worst_df: f64,
}

pub fn qp_vs_enumeration(problems: usize, max_vars: usize, seed: u64) -> QpSummary {
    let mut r = rng(seed);
    let mut out = QpSummary {
        problems,
        ..Default::default()
    };
    for _ in 0..problems {
        let n = r.random_range(1..=max_vars);
        let n_diff = r.random_range(0..=4);
        let (h, j, g, rhs) = random_box_qp(n, n_diff, &mut r);
        let sol = solve_qp(&h, &j, &g, &rhs, None).unwrap();
        let (x_ref, f_ref) = enumerate_qp(&h, &j, &g, &rhs).expect("feasible by construction");
        let f = 0.5 * sol.x.dot(&(&h * &sol.x)) + j.dot(&sol.x);
        out.worst_dx = out.worst_dx.max((&sol.x - &x_ref).amax());
        out.worst_df = out.worst_df.max((f - f_ref).abs() / (1.0 + f_ref.abs()));
    }
    out
}

/// Analytic `dP*/dmu` and `dP*/dsigma2` against central differences of
/// re-solved dispatches, over configurations whose active set is unchanged
/// by the perturbations.
#[derive(Debug, Clone, Copy, Default)]
pub struct SensitivitySummary {
    pub configurations: usize,
    /// Draws discarded because a perturbation changed the active set.
    pub unstable: usize,
    pub worst_rel: f64,
    /// Frozen coordinates with a nonzero analytic or re-solved response.
    pub frozen_moving: usize,
    pub frozen_total: usize,
}

fn tight() -> SqpSettings {
    SqpSettings {
        tol: 1e-9,
        max_outer: 200,
        ..Default::default()
    }
}

fn strongly_active_set(res: &SqpResult) -> Vec<usize> {
    res.strongly_active()
}

pub fn sensitivity_vs_resolve(configurations: usize, seed: u64) -> SensitivitySummary {
    let mut r = rng(seed);
    let (sys, cs) = reference_system();
    let sys = sys.with_horizon(6).unwrap();
    let cs_small = build_constraints(&sys);
    let _ = cs;
    let horizon = sys.horizon();
    let mut out = SensitivitySummary::default();
    while out.configurations < configurations {
        let mu: Vec<f64> = (0..horizon).map(|_| r.random_range(300.0..1450.0)).collect();
        let sigma2: Vec<f64> = (0..horizon).map(|_| r.random_range(400.0..20_000.0)).collect();
        let prob = problem(&sys, &cs_small, mu.clone(), sigma2.clone());
        let base = solve_sed(&prob, None, &tight()).unwrap();
        assert!(base.converged);
        let sens = solution_sensitivity(&base, &prob).unwrap();
        let active = strongly_active_set(&base);

        let mut stable = true;
        let mut fd_mu = DMatrix::zeros(prob.n_vars(), horizon);
        let mut fd_sig = DMatrix::zeros(prob.n_vars(), horizon);
        'hours: for t in 0..horizon {
            for (which, step) in [(0, 1e-3 * mu[t]), (1, 1e-3 * sigma2[t])] {
                let solve = |sign: f64| {
                    let (mut m, mut s) = (mu.clone(), sigma2.clone());
                    if which == 0 {
                        m[t] += sign * step;
                    } else {
                        s[t] += sign * step;
                    }
                    solve_sed(&problem(&sys, &cs_small, m, s), Some(&base.p_star), &tight()).unwrap()
                };
                let (plus, minus) = (solve(1.0), solve(-1.0));
                if strongly_active_set(&plus) != active || strongly_active_set(&minus) != active {
                    stable = false;
                    break 'hours;
                }
                let col = (plus.p_star.to_vector() - minus.p_star.to_vector()) / (2.0 * step);
                if which == 0 {
                    fd_mu.set_column(t, &col);
                } else {
                    fd_sig.set_column(t, &col);
                }
            }
        }
        if !stable {
            out.unstable += 1;
            continue;
        }
        out.configurations += 1;
        for (analytic, fd) in [(&sens.dp_dmu, &fd_mu), (&sens.dp_dsigma2, &fd_sig)] {
            let floor = 1e-3 * fd.amax().max(analytic.amax()).max(1e-12);
            for t in 0..horizon {
                let diff = (analytic.column(t) - fd.column(t)).amax();
                let scale = fd.column(t).amax().max(floor);
                out.worst_rel = out.worst_rel.max(diff / scale);
            }
        }
        for (i, frozen) in sens.frozen.iter().enumerate() {
            if *frozen {
                out.frozen_total += 1;
                // the analytic rows must be exactly zero; re-solves sit on the
                // bound up to rounding
                let moving = sens.dp_dmu.row(i).iter().any(|v| *v != 0.0)
                    || sens.dp_dsigma2.row(i).iter().any(|v| *v != 0.0)
                    || fd_mu.row(i).amax() > 1e-9
                    || fd_sig.row(i).amax() > 1e-9;
                if moving {
                    out.frozen_moving += 1;
                }
            }
        }
    }
    out
}

/// Relative error of `task_gradient_theta` against central differences of
/// the full forecast, dispatch and realized-loss pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct EndToEndSummary {
    pub coordinates: usize,
    pub worst_rel: f64,
}

/// Small pretrained network on one synthetic year, reference system.
pub struct Pipeline {
    pub system: lfednet_core::SystemConfig,
    pub constraints: lfednet_core::ConstraintSet,
    pub stats: lfednet_core::data::NormStats,
    pub examples: Vec<lfednet_core::data::TrainingExample>,
    pub params: lfednet_core::net::NetworkParams,
    pub sigma2: Vec<f64>,
}

pub fn small_pipeline(seed: u64) -> Pipeline {
    use lfednet_core::data::{build_dataset, synth_generate, NormStats, SynthProfile, FEATURE_DIM};
    use lfednet_core::net::{NetConfig, NetworkParams};
    use lfednet_core::train::{pretrain, residual_variance, Silent, TrainingConfig};

    let recs = synth_generate(seed, 1, &SynthProfile::default());
    let raw = build_dataset(&recs).unwrap();
    let stats = NormStats::fit(&raw).unwrap();
    let examples: Vec<_> = raw.iter().map(|e| stats.normalize_example(e)).collect();
    let cfg = TrainingConfig {
        pretrain_epochs: 30,
        hidden_width: 16,
        hidden_layers: 2,
        seed,
        ..Default::default()
    };
    let net = NetConfig {
        input_dim: FEATURE_DIM,
        hidden_width: 16,
        hidden_layers: 2,
    };
    let (params, _) = pretrain(NetworkParams::init(net, seed), &examples, &cfg, &mut Silent).unwrap();
    let sigma2 = residual_variance(&params, &examples).unwrap();
    let (system, constraints) = reference_system();
    Pipeline {
        system,
        constraints,
        stats,
        examples,
        params,
        sigma2,
    }
}

impl Pipeline {
    pub fn context(&self, include_cost: bool) -> lfednet_core::taskgrad::TaskContext<'_> {
        lfednet_core::taskgrad::TaskContext {
            system: &self.system,
            constraints: &self.constraints,
            stats: &self.stats,
            sigma2: &self.sigma2,
            include_cost,
            sqp: tight(),
        }
    }
}

/// Coordinates are drawn among those whose analytic derivative is at least
/// 1% of the largest, so the relative error is meaningful.
pub fn end_to_end_gradient(coordinates: usize, seed: u64) -> EndToEndSummary {
    use lfednet_core::net::predict;
    use lfednet_core::taskgrad::{task_gradient_theta, task_loss};

    let pipe = small_pipeline(seed);
    let ctx = pipe.context(true);
    let mut r = rng(seed);
    let sample = &pipe.examples[r.random_range(0..pipe.examples.len())];
    let tg = task_gradient_theta(&pipe.params, &sample.x, &sample.y_train, &ctx, None).unwrap();
    let y_actual: Vec<f64> = sample.y_train.iter().map(|y| pipe.stats.denormalize_load(*y)).collect();
    let xm = DMatrix::from_row_slice(1, sample.x.len(), &sample.x);
    let loss_at = |theta_i: usize, v: f64| {
        let mut p = pipe.params.clone();
        p.theta_mut()[theta_i] = v;
        let y_hat: Vec<f64> = predict(&p, &xm).unwrap().iter().copied().collect();
        let res = ctx.dispatch(&y_hat, Some(&tg.p_star)).unwrap();
        task_loss(&res.p_star, &y_actual, ctx.system, true).unwrap().total
    };
    let g_max = tg.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let candidates: Vec<usize> = (0..tg.grad.len()).filter(|&i| tg.grad[i].abs() >= 1e-2 * g_max).collect();
    let mut out = EndToEndSummary {
        coordinates,
        worst_rel: 0.0,
    };
    for _ in 0..coordinates {
        let i = candidates[r.random_range(0..candidates.len())];
        let theta = pipe.params.theta()[i];
        let h = 1e-4;
        let fd = (loss_at(i, theta + h) - loss_at(i, theta - h)) / (2.0 * h);
        out.worst_rel = out.worst_rel.max(rel_err(tg.grad[i], fd, 0.0));
    }
    out
}
