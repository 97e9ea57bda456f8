//! Gaussian closed forms for the expected dispatch penalties.
//!
//! With load `y ~ N(mu, sigma2)` every penalty in the dispatch objective is a
//! scaled partial expectation `E[(s - y)+]` or `E[(y - s)+]` of some threshold
//! `s` that is linear in the dispatch. Both have the closed form
//!
//! ```text
//! E[(s - y)+] = sigma2 * PDF(s; mu, sigma2) + (s - mu) * CDF(s; mu, sigma2)
//! E[(y - s)+] = E[(s - y)+] - (s - mu)
//! ```
//!
//! and first/second derivatives in `s` of `CDF` and `PDF`.

use alloc::vec::Vec;

use crate::grid::{Generator, SystemConfig};

/// Lower bound on every variance handed to the closed forms.
pub const SIGMA2_FLOOR: f64 = 1e-6;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density and distribution function at `x`.
///
/// The CDF is `erfc(-x/sqrt 2)/2` with the FreeBSD msun `erfc` (via `libm`),
/// accurate to about one ulp across the real line, including the far tails.
pub fn std_normal(x: f64) -> (f64, f64) {
    let pdf = INV_SQRT_2PI * libm::exp(-0.5 * x * x);
    let cdf = 0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2);
    (pdf, cdf)
}

/// Mean and variance of the load in one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHour {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianHour {
    /// Variances below [`SIGMA2_FLOOR`] are raised to the floor.
    pub fn new(mu: f64, sigma2: f64) -> Self {
        GaussianHour {
            mu,
            sigma2: sigma2.max(SIGMA2_FLOOR),
        }
    }

    pub fn sigma(&self) -> f64 {
        libm::sqrt(self.sigma2)
    }
}

/// An expected penalty as a function of its threshold argument `s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyEval {
    pub value: f64,
    /// d value / d s
    pub d_s: f64,
    /// d² value / d s²
    pub d2_s: f64,
    /// d (d value / d s) / d sigma2, the mixed partial used by the sensitivity
    /// analysis. The mixed partial in `mu` is `-d2_s`.
    pub d_s_dsigma2: f64,
}

impl PenaltyEval {
    fn scaled(self, k: f64) -> Self {
        PenaltyEval {
            value: k * self.value,
            d_s: k * self.d_s,
            d2_s: k * self.d2_s,
            d_s_dsigma2: k * self.d_s_dsigma2,
        }
    }
}

/// `E[(s - y)+]` for `y ~ hour`.
pub fn expected_excess(s: f64, hour: GaussianHour) -> PenaltyEval {
    let sigma = hour.sigma();
    let d = s - hour.mu;
    let z = d / sigma;
    let (phi, cdf) = std_normal(z);
    PenaltyEval {
        value: sigma * phi + d * cdf,
        d_s: cdf,
        d2_s: phi / sigma,
        d_s_dsigma2: -z * phi / (2.0 * hour.sigma2),
    }
}

/// `E[(y - s)+]` for `y ~ hour`.
pub fn expected_shortfall(s: f64, hour: GaussianHour) -> PenaltyEval {
    let mut e = expected_excess(s, hour);
    e.value -= s - hour.mu;
    e.d_s -= 1.0;
    e
}

/// Expected balance penalty `E[lambda_s (y - s)+ + lambda_e (s - y)+]` at total
/// generation `s`.
pub fn expected_balance_penalty(
    s: f64,
    hour: GaussianHour,
    lambda_s: f64,
    lambda_e: f64,
) -> PenaltyEval {
    let sigma = hour.sigma();
    let d = s - hour.mu;
    let z = d / sigma;
    let (phi, cdf) = std_normal(z);
    let lam = lambda_s + lambda_e;
    PenaltyEval {
        value: lam * (sigma * phi + d * cdf) - lambda_s * d,
        d_s: lam * cdf - lambda_s,
        d2_s: lam * phi / sigma,
        d_s_dsigma2: -lam * z * phi / (2.0 * hour.sigma2),
    }
}

/// Expected overload penalties of one line in one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePenalty {
    pub line: usize,
    pub gamma: f64,
    /// Load level at which the flow reaches `+F_l`, `(G_l - F_l) / gamma`.
    pub s_plus: f64,
    /// Load level at which the flow reaches `-F_l`, `(G_l + F_l) / gamma`.
    pub s_minus: f64,
    /// Expected penalty on flow above `+F_l`, as a function of `s_plus`.
    pub over: PenaltyEval,
    /// Expected penalty on flow below `-F_l`, as a function of `s_minus`.
    pub under: PenaltyEval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPenalty {
    pub value: f64,
    pub lines: Vec<LinePenalty>,
}

/// Expected line overload penalty for one hour of dispatch.
///
/// The flow on line `l` is `G_l - gamma_l y`, so `(flow - F)+` equals
/// `|gamma_l| (s_plus - y)+` when `gamma_l > 0` and `|gamma_l| (y - s_plus)+`
/// when `gamma_l < 0`; symmetrically for the reverse direction. Each
/// expectation therefore carries a `|gamma_l|` factor.
pub fn expected_flow_penalty(
    p_hour: &[f64],
    hour: GaussianHour,
    system: &SystemConfig,
) -> FlowPenalty {
    let lambda_l = system.penalties().lambda_l;
    let mut value = 0.0;
    let mut lines = Vec::with_capacity(system.lines().len());
    for (l, line) in system.lines().iter().enumerate() {
        let gamma = system.gamma(l);
        let flow_gen = system.generation_flow(l, p_hour);
        let s_plus = (flow_gen - line.flow_limit) / gamma;
        let s_minus = (flow_gen + line.flow_limit) / gamma;
        let k = lambda_l * libm::fabs(gamma);
        let (over, under) = if gamma > 0.0 {
            (
                expected_excess(s_plus, hour),
                expected_shortfall(s_minus, hour),
            )
        } else {
            (
                expected_shortfall(s_plus, hour),
                expected_excess(s_minus, hour),
            )
        };
        let over = over.scaled(k);
        let under = under.scaled(k);
        value += over.value + under.value;
        lines.push(LinePenalty {
            line: l,
            gamma,
            s_plus,
            s_minus,
            over,
            under,
        });
    }
    FlowPenalty { value, lines }
}

/// `E[½(sum P - y)²] + sum_g (a P² + b P + c)`.
pub fn expected_quadratic_terms(p_hour: &[f64], hour: GaussianHour, gens: &[Generator]) -> f64 {
    let s: f64 = p_hour.iter().sum();
    let d = s - hour.mu;
    let cost: f64 = p_hour
        .iter()
        .zip(gens)
        .map(|(p, g)| g.a * p * p + g.b * p + g.c)
        .sum();
    0.5 * (d * d + hour.sigma2) + cost
}
