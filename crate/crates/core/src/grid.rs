//! Power-system data model.
//!
//! Dispatch vectors are flattened hour-major: entry `t * n_gen + g` holds the
//! output of generator `g` in hour `t`. Every matrix built downstream uses the
//! same order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Tolerance on the sum of the bus load distribution factors.
pub const LOAD_FACTOR_SUM_TOL: f64 = 1e-9;
/// Load factors summing to within this of 1 are silently renormalized.
pub const LOAD_FACTOR_RENORM_TOL: f64 = 1e-6;
/// Lines with `|gamma| <= DEGENERATE_GAMMA` are rejected.
pub const DEGENERATE_GAMMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    /// Quadratic cost coefficient, $/MW²h.
    pub a: f64,
    /// Linear cost coefficient, $/MWh.
    pub b: f64,
    /// Fixed cost, $/h.
    pub c: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Output in the hour before the horizon. Enables the hour-1 ramp rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    /// One shift factor per bus, in the order of `SystemConfig::buses`.
    pub shift_factors: Vec<f64>,
    /// Flow limit in MW.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub lambda_s: f64,
    pub lambda_e: f64,
    pub lambda_l: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties {
            lambda_s: 50.0,
            lambda_e: 0.5,
            lambda_l: 50.0,
        }
    }
}

/// Load factors as they appear in a system document: either one value per
/// bus or a single scalar applied at every bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoadFactors {
    Scalar(f64),
    PerBus(Vec<f64>),
}

fn default_horizon() -> usize {
    24
}

/// The JSON shape of a system description, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub buses: Vec<String>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub lines: Vec<Line>,
    pub load_factors: LoadFactors,
    #[serde(default)]
    pub penalties: Penalties,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

/// A single violated invariant found by [`validate_system`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyBuses,
    DuplicateBus(String),
    NoGenerators,
    ZeroHorizon,
    UnknownBus { generator: String, bus: String },
    BoundsInverted { generator: String },
    NonPositiveRamp { generator: String },
    NegativeQuadraticCost { generator: String },
    NonFinite { item: String },
    InitialOutputUnreachable { generator: String },
    LoadFactorCount { expected: usize, found: usize },
    NegativeLoadFactor { bus: String },
    LoadFactorSum { sum: f64 },
    NegativePenalty { name: &'static str },
    ShiftFactorCount { line: String, expected: usize, found: usize },
    NonPositiveFlowLimit { line: String },
    DegenerateLine { line: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyBuses => write!(f, "no buses"),
            Violation::DuplicateBus(b) => write!(f, "duplicate bus {b}"),
            Violation::NoGenerators => write!(f, "no generators"),
            Violation::ZeroHorizon => write!(f, "horizon must be at least one hour"),
            Violation::UnknownBus { generator, bus } => {
                write!(f, "generator {generator}: unknown bus {bus}")
            }
            Violation::BoundsInverted { generator } => {
                write!(f, "generator {generator}: bounds inverted (p_min > p_max)")
            }
            Violation::NonPositiveRamp { generator } => {
                write!(f, "generator {generator}: ramp limits must be positive")
            }
            Violation::NegativeQuadraticCost { generator } => {
                write!(f, "generator {generator}: negative quadratic cost coefficient")
            }
            Violation::NonFinite { item } => write!(f, "{item}: non-finite value"),
            Violation::InitialOutputUnreachable { generator } => write!(
                f,
                "generator {generator}: no hour-1 output within limits is reachable from p_initial"
            ),
            Violation::LoadFactorCount { expected, found } => {
                write!(f, "expected {expected} load factors, found {found}")
            }
            Violation::NegativeLoadFactor { bus } => write!(f, "bus {bus}: negative load factor"),
            Violation::LoadFactorSum { sum } => write!(f, "load factors sum to {sum}, not 1"),
            Violation::NegativePenalty { name } => write!(f, "negative penalty {name}"),
            Violation::ShiftFactorCount {
                line,
                expected,
                found,
            } => write!(f, "line {line}: expected {expected} shift factors, found {found}"),
            Violation::NonPositiveFlowLimit { line } => {
                write!(f, "line {line}: flow limit must be positive")
            }
            Violation::DegenerateLine { line } => write!(
                f,
                "line {line}: degenerate line coefficient (shift factors orthogonal to load factors)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("invalid system: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A validated power system. Only obtainable through [`validate_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    buses: Vec<String>,
    generators: Vec<Generator>,
    lines: Vec<Line>,
    load_factors: Vec<f64>,
    penalties: Penalties,
    horizon: usize,
    gen_bus: Vec<usize>,
    gammas: Vec<f64>,
}

impl SystemConfig {
    pub fn buses(&self) -> &[String] {
        &self.buses
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn load_factors(&self) -> &[f64] {
        &self.load_factors
    }

    pub fn penalties(&self) -> Penalties {
        self.penalties
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    /// Length of the flattened dispatch vector, `horizon * n_gen`.
    pub fn n_vars(&self) -> usize {
        self.horizon * self.generators.len()
    }

    /// Bus index of generator `g`.
    pub fn gen_bus(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    /// `gamma_l = sum_m Gamma_{l,m} k_m`, the sensitivity of line `l` to total load.
    pub fn gamma(&self, l: usize) -> f64 {
        self.gammas[l]
    }

    /// Shift factor of line `l` at the bus of generator `g`.
    pub fn line_gen_factor(&self, l: usize, g: usize) -> f64 {
        self.lines[l].shift_factors[self.gen_bus[g]]
    }

    /// Generation-only part of the flow on line `l`: `sum_m Gamma_{l,m} sum_{g in m} P_g`.
    pub fn generation_flow(&self, l: usize, p_hour: &[f64]) -> f64 {
        p_hour
            .iter()
            .enumerate()
            .map(|(g, p)| self.line_gen_factor(l, g) * p)
            .sum()
    }

    /// Same system with different penalty coefficients.
    pub fn with_penalties(&self, penalties: Penalties) -> Result<SystemConfig, GridError> {
        let mut doc = self.to_document();
        doc.penalties = penalties;
        validate_system(doc)
    }

    /// Same system with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<SystemConfig, GridError> {
        let mut doc = self.to_document();
        doc.horizon = horizon;
        validate_system(doc)
    }

    pub fn to_document(&self) -> SystemDocument {
        SystemDocument {
            buses: self.buses.clone(),
            generators: self.generators.clone(),
            lines: self.lines.clone(),
            load_factors: LoadFactors::PerBus(self.load_factors.clone()),
            penalties: self.penalties,
            horizon: self.horizon,
        }
    }

    /// The 3-bus, 3-generator, 24-hour reference system.
    ///
    /// Triangle network with equal line reactances, bus 3 as the slack for the
    /// shift factors. Loads are split 50/20/30 across the buses; line 1-2 is
    /// the constrained corridor and binds in the reverse direction at high load.
    pub fn reference_3bus() -> SystemConfig {
        validate_system(reference_3bus_document()).expect("reference system is valid")
    }
}

pub fn reference_3bus_document() -> SystemDocument {
    let gen = |id: &str, bus: &str, a: f64, b: f64, c: f64, p_max: f64, ramp: f64| Generator {
        id: id.to_string(),
        bus: bus.to_string(),
        a,
        b,
        c,
        p_min: 0.0,
        p_max,
        ramp_up: ramp,
        ramp_down: ramp,
        p_initial: None,
    };
    let third = 1.0 / 3.0;
    SystemDocument {
        buses: vec!["B1".into(), "B2".into(), "B3".into()],
        generators: vec![
            gen("G1", "B1", 0.004, 15.0, 200.0, 600.0, 120.0),
            gen("G2", "B2", 0.006, 20.0, 150.0, 500.0, 150.0),
            gen("G3", "B3", 0.010, 25.0, 100.0, 400.0, 200.0),
        ],
        lines: vec![
            Line {
                id: "L12".into(),
                shift_factors: vec![third, -third, 0.0],
                flow_limit: 90.0,
            },
            Line {
                id: "L13".into(),
                shift_factors: vec![2.0 * third, third, 0.0],
                flow_limit: 250.0,
            },
            Line {
                id: "L23".into(),
                shift_factors: vec![third, 2.0 * third, 0.0],
                flow_limit: 250.0,
            },
        ],
        load_factors: LoadFactors::PerBus(vec![0.5, 0.2, 0.3]),
        penalties: Penalties::default(),
        horizon: 24,
    }
}

/// Check every invariant of a system document and build the validated form.
///
/// All violations are collected and reported together.
pub fn validate_system(raw: SystemDocument) -> Result<SystemConfig, GridError> {
    let mut errs = Vec::new();
    let n_bus = raw.buses.len();
    if n_bus == 0 {
        errs.push(Violation::EmptyBuses);
    }
    for (i, b) in raw.buses.iter().enumerate() {
        if raw.buses[..i].contains(b) {
            errs.push(Violation::DuplicateBus(b.clone()));
        }
    }
    if raw.generators.is_empty() {
        errs.push(Violation::NoGenerators);
    }
    if raw.horizon == 0 {
        errs.push(Violation::ZeroHorizon);
    }

    let mut gen_bus = Vec::with_capacity(raw.generators.len());
    for gen in &raw.generators {
        match raw.buses.iter().position(|b| *b == gen.bus) {
            Some(i) => gen_bus.push(i),
            None => errs.push(Violation::UnknownBus {
                generator: gen.id.clone(),
                bus: gen.bus.clone(),
            }),
        }
        let values = [
            gen.a,
            gen.b,
            gen.c,
            gen.p_min,
            gen.p_max,
            gen.ramp_up,
            gen.ramp_down,
            gen.p_initial.unwrap_or(0.0),
        ];
        if values.iter().any(|v| !v.is_finite()) {
            errs.push(Violation::NonFinite {
                item: format!("generator {}", gen.id),
            });
            continue;
        }
        if gen.p_min > gen.p_max {
            errs.push(Violation::BoundsInverted {
                generator: gen.id.clone(),
            });
        }
        if gen.ramp_up <= 0.0 || gen.ramp_down <= 0.0 {
            errs.push(Violation::NonPositiveRamp {
                generator: gen.id.clone(),
            });
        }
        if gen.a < 0.0 {
            errs.push(Violation::NegativeQuadraticCost {
                generator: gen.id.clone(),
            });
        }
        if let Some(p0) = gen.p_initial {
            let lo = gen.p_min.max(p0 - gen.ramp_down);
            let hi = gen.p_max.min(p0 + gen.ramp_up);
            if lo > hi {
                errs.push(Violation::InitialOutputUnreachable {
                    generator: gen.id.clone(),
                });
            }
        }
    }

    let mut load_factors = match raw.load_factors {
        LoadFactors::Scalar(k) => vec![k; n_bus],
        LoadFactors::PerBus(v) => v,
    };
    if load_factors.len() != n_bus {
        errs.push(Violation::LoadFactorCount {
            expected: n_bus,
            found: load_factors.len(),
        });
    } else if n_bus > 0 {
        for (k, b) in load_factors.iter().zip(&raw.buses) {
            if !k.is_finite() {
                errs.push(Violation::NonFinite {
                    item: format!("load factor at bus {b}"),
                });
            } else if *k < 0.0 {
                errs.push(Violation::NegativeLoadFactor { bus: b.clone() });
            }
        }
        let sum: f64 = load_factors.iter().sum();
        if (sum - 1.0).abs() > LOAD_FACTOR_SUM_TOL {
            if (sum - 1.0).abs() <= LOAD_FACTOR_RENORM_TOL {
                for k in load_factors.iter_mut() {
                    *k /= sum;
                }
            } else {
                errs.push(Violation::LoadFactorSum { sum });
            }
        }
    }

    let p = raw.penalties;
    for (name, v) in [
        ("lambda_s", p.lambda_s),
        ("lambda_e", p.lambda_e),
        ("lambda_l", p.lambda_l),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            errs.push(Violation::NegativePenalty { name });
        }
    }

    let mut gammas = Vec::with_capacity(raw.lines.len());
    for line in &raw.lines {
        if line.shift_factors.len() != n_bus {
            errs.push(Violation::ShiftFactorCount {
                line: line.id.clone(),
                expected: n_bus,
                found: line.shift_factors.len(),
            });
            continue;
        }
        if line.shift_factors.iter().any(|v| !v.is_finite()) || !line.flow_limit.is_finite() {
            errs.push(Violation::NonFinite {
                item: format!("line {}", line.id),
            });
            continue;
        }
        if line.flow_limit <= 0.0 {
            errs.push(Violation::NonPositiveFlowLimit {
                line: line.id.clone(),
            });
        }
        if load_factors.len() == n_bus {
            let gamma: f64 = line
                .shift_factors
                .iter()
                .zip(&load_factors)
                .map(|(s, k)| s * k)
                .sum();
            if gamma.abs() <= DEGENERATE_GAMMA {
                errs.push(Violation::DegenerateLine {
                    line: line.id.clone(),
                });
            }
            gammas.push(gamma);
        }
    }

    if !errs.is_empty() {
        return Err(GridError::Invalid(errs));
    }
    Ok(SystemConfig {
        buses: raw.buses,
        generators: raw.generators,
        lines: raw.lines,
        load_factors,
        penalties: raw.penalties,
        horizon: raw.horizon,
        gen_bus,
        gammas,
    })
}

/// Power flow on `line` for one hour:
/// `sum_m Gamma_{l,m} (sum_{g in m} P_g - k_m y)`.
pub fn line_flow(
    p_hour: &[f64],
    y: f64,
    system: &SystemConfig,
    line: usize,
) -> Result<f64, GridError> {
    if p_hour.len() != system.n_gen() {
        return Err(GridError::Dimension {
            expected: system.n_gen(),
            found: p_hour.len(),
        });
    }
    Ok(system.generation_flow(line, p_hour) - system.gamma(line) * y)
}

/// Generator outputs over the horizon, hour-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    horizon: usize,
    n_gen: usize,
    values: Vec<f64>,
}

impl DispatchSchedule {
    pub fn zeros(horizon: usize, n_gen: usize) -> Self {
        DispatchSchedule {
            horizon,
            n_gen,
            values: vec![0.0; horizon * n_gen],
        }
    }

    pub fn from_flat(horizon: usize, n_gen: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != horizon * n_gen {
            return Err(GridError::Dimension {
                expected: horizon * n_gen,
                found: values.len(),
            });
        }
        Ok(DispatchSchedule {
            horizon,
            n_gen,
            values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn get(&self, t: usize, g: usize) -> f64 {
        self.values[t * self.n_gen + g]
    }

    pub fn set(&mut self, t: usize, g: usize, v: f64) {
        self.values[t * self.n_gen + g] = v;
    }

    pub fn hour(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_gen..(t + 1) * self.n_gen]
    }

    pub fn total(&self, t: usize) -> f64 {
        self.hour(t).iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

/// Which physical constraint a row of the constraint matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    RampUp { gen: usize, hour: usize },
    RampDown { gen: usize, hour: usize },
    Upper { gen: usize, hour: usize },
    Lower { gen: usize, hour: usize },
}

impl RowKind {
    /// Flattened index of the single variable a box row bounds.
    pub fn box_var(&self, n_gen: usize) -> Option<usize> {
        match *self {
            RowKind::Upper { gen, hour } | RowKind::Lower { gen, hour } => Some(hour * n_gen + gen),
            _ => None,
        }
    }
}

/// Linear inequalities `G vec(P) <= h` for the ramp and output limits.
///
/// Row order: for each generator, for each hour, a ramp-up row followed by a
/// ramp-down row (hour 1 only when `p_initial` is set); then for each
/// generator, for each hour, an upper-bound row followed by a lower-bound row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub g_matrix: DMatrix<f64>,
    pub h_vector: DVector<f64>,
    pub rows: Vec<RowKind>,
}

impl ConstraintSet {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// True when `G x <= h + tol` holds for every row.
    pub fn is_satisfied(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// `max_i (g_i x - h_i)`, clipped below at zero.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let r = &self.g_matrix * xv - &self.h_vector;
        r.iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

pub fn build_constraints(system: &SystemConfig) -> ConstraintSet {
    let n_gen = system.n_gen();
    let horizon = system.horizon();
    let n = system.n_vars();
    let idx = |t: usize, g: usize| t * n_gen + g;

    let mut rows: Vec<(RowKind, Vec<(usize, f64)>, f64)> = Vec::new();
    for (g, gen) in system.generators().iter().enumerate() {
        for t in 0..horizon {
            if t == 0 {
                if let Some(p0) = gen.p_initial {
                    rows.push((
                        RowKind::RampUp { gen: g, hour: 0 },
                        vec![(idx(0, g), 1.0)],
                        gen.ramp_up + p0,
                    ));
                    rows.push((
                        RowKind::RampDown { gen: g, hour: 0 },
                        vec![(idx(0, g), -1.0)],
                        gen.ramp_down - p0,
                    ));
                }
                continue;
            }
            rows.push((
                RowKind::RampUp { gen: g, hour: t },
                vec![(idx(t, g), 1.0), (idx(t - 1, g), -1.0)],
                gen.ramp_up,
            ));
            rows.push((
                RowKind::RampDown { gen: g, hour: t },
                vec![(idx(t - 1, g), 1.0), (idx(t, g), -1.0)],
                gen.ramp_down,
            ));
        }
    }
    for (g, gen) in system.generators().iter().enumerate() {
        for t in 0..horizon {
            rows.push((
                RowKind::Upper { gen: g, hour: t },
                vec![(idx(t, g), 1.0)],
                gen.p_max,
            ));
            rows.push((
                RowKind::Lower { gen: g, hour: t },
                vec![(idx(t, g), -1.0)],
                -gen.p_min,
            ));
        }
    }

    let mut g_matrix = DMatrix::zeros(rows.len(), n);
    let mut h_vector = DVector::zeros(rows.len());
    let mut kinds = Vec::with_capacity(rows.len());
    for (i, (kind, coeffs, rhs)) in rows.into_iter().enumerate() {
        for (j, v) in coeffs {
            g_matrix[(i, j)] = v;
        }
        h_vector[i] = rhs;
        kinds.push(kind);
    }
    ConstraintSet {
        g_matrix,
        h_vector,
        rows: kinds,
    }
}
