//! Supply-chain topology, inflow controls and cost weights.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{Profile, StepFn};

/// Relative tolerance used when checking that a real number is an integer
/// multiple of a mesh quantity.
pub(crate) const MULTIPLE_TOL: f64 = 1e-9;

/// Returns `Some(n)` when `value` is (numerically) `n * unit`.
pub(crate) fn integer_multiple(value: f64, unit: f64) -> Option<i64> {
    if !(unit > 0.0) || !value.is_finite() {
        return None;
    }
    let ratio = value / unit;
    let n = ratio.round();
    if (ratio - n).abs() <= MULTIPLE_TOL * n.abs().max(1.0) {
        Some(n as i64)
    } else {
        None
    }
}

/// One arc of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Processor {
    pub length: f64,
    pub velocity: f64,
    pub max_rate: f64,
}

impl Processor {
    pub fn new(length: f64, velocity: f64, max_rate: f64) -> Self {
        Self {
            length,
            velocity,
            max_rate,
        }
    }

    /// `min(mu, v * rho)`.
    pub fn flux(&self, density: f64) -> f64 {
        (self.velocity * density).min(self.max_rate)
    }

    pub fn transit_time(&self) -> f64 {
        self.length / self.velocity
    }
}

/// Processors in series with a queue in front of every processor but the
/// first. Processor and queue indices are zero-based: queue `j` feeds
/// processor `j` and exists for `j >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyChain {
    processors: Vec<Processor>,
    /// Initial density of each processor in local coordinates `[0, L_j]`.
    initial_density: Vec<StepFn>,
    /// Initial queue contents; entry 0 is unused and kept at zero.
    initial_queues: Vec<f64>,
    base_unit: Option<f64>,
}

impl SupplyChain {
    pub fn new(
        processors: Vec<Processor>,
        initial_density: Vec<StepFn>,
        initial_queues: Vec<f64>,
        base_unit: Option<f64>,
    ) -> Result<Self> {
        let p = processors.len();
        if p == 0 {
            return Err(Error::InvalidChain(
                "a chain needs at least one processor".into(),
            ));
        }
        if initial_density.len() != p {
            return Err(Error::InvalidChain(format!(
                "{} processors but {} initial densities",
                p,
                initial_density.len()
            )));
        }
        let initial_queues = match initial_queues.len() {
            n if n == p => initial_queues,
            n if n + 1 == p => std::iter::once(0.0).chain(initial_queues).collect(),
            n => {
                return Err(Error::InvalidChain(format!(
                    "{p} processors need {} initial queues, got {n}",
                    p - 1
                )))
            }
        };
        Ok(Self {
            processors,
            initial_density,
            initial_queues,
            base_unit,
        })
    }

    /// Initially empty chain.
    pub fn empty(processors: Vec<Processor>, base_unit: Option<f64>) -> Result<Self> {
        let p = processors.len();
        Self::new(
            processors,
            vec![StepFn::constant(0.0); p],
            vec![0.0; p],
            base_unit,
        )
    }

    pub fn len(&self) -> usize {
        self.processors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.processors.is_empty()
    }

    pub fn processors(&self) -> &[Processor] {
        &self.processors
    }

    pub fn processor(&self, j: usize) -> &Processor {
        &self.processors[j]
    }

    pub fn initial_density(&self, j: usize) -> &StepFn {
        &self.initial_density[j]
    }

    pub fn initial_queue(&self, j: usize) -> f64 {
        self.initial_queues[j]
    }

    pub fn base_unit(&self) -> Option<f64> {
        self.base_unit
    }

    /// Left endpoint `a_j` in global coordinates.
    pub fn start(&self, j: usize) -> f64 {
        self.processors[..j].iter().map(|p| p.length).sum()
    }

    /// Right endpoint `b_j` in global coordinates.
    pub fn end(&self, j: usize) -> f64 {
        self.start(j) + self.processors[j].length
    }

    /// Common length unit: the configured one, or one inferred from small
    /// rational ratios between the lengths.
    pub fn effective_base_unit(&self) -> Option<f64> {
        if let Some(d) = self.base_unit {
            return Some(d);
        }
        let l0 = self.processors[0].length;
        if !(l0 > 0.0) {
            return None;
        }
        let mut denominator: u64 = 1;
        for p in &self.processors[1..] {
            let (_, q) = rational_approx(p.length / l0, 1000)?;
            denominator = lcm(denominator, q);
        }
        Some(l0 / denominator as f64)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Best rational approximation with denominator at most `max_den`, accepted
/// only if it reproduces `x` to `MULTIPLE_TOL`.
fn rational_approx(x: f64, max_den: u64) -> Option<(u64, u64)> {
    if !(x > 0.0) || !x.is_finite() {
        return None;
    }
    // continued-fraction convergents
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > 1e12 {
            break;
        }
        let a = a as u64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - x).abs() <= MULTIPLE_TOL * x {
            return Some((h1, k1));
        }
        let frac = r - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    None
}

/// A violated standing assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveParameter {
        processor: usize,
        name: &'static str,
        value: f64,
    },
    /// `v_j * rho_{j,0} > mu_j` somewhere on the processor.
    CapacityExceeded {
        processor: usize,
        flux: f64,
        capacity: f64,
    },
    NegativeDensity {
        processor: usize,
        value: f64,
    },
    /// No common length unit exists, or a length is not a multiple of it.
    Incommensurable {
        processor: usize,
        length: f64,
    },
    NegativeQueue {
        queue: usize,
        value: f64,
    },
    QueueBeforeFirstProcessor {
        value: f64,
    },
    /// A knot of the initial density lies outside `(0, L_j)`.
    KnotOutsideProcessor {
        processor: usize,
        knot: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveParameter {
                processor,
                name,
                value,
            } => write!(
                f,
                "processor {}: {} = {} must be positive",
                processor + 1,
                name,
                value
            ),
            Violation::CapacityExceeded {
                processor,
                flux,
                capacity,
            } => write!(
                f,
                "processor {}: initial flux {} exceeds max rate {} (H1)",
                processor + 1,
                flux,
                capacity
            ),
            Violation::NegativeDensity { processor, value } => {
                write!(
                    f,
                    "processor {}: negative initial density {}",
                    processor + 1,
                    value
                )
            }
            Violation::Incommensurable { processor, length } => write!(
                f,
                "processor {}: length {} is not a multiple of a common base unit (H2)",
                processor + 1,
                length
            ),
            Violation::NegativeQueue { queue, value } => {
                write!(f, "queue {}: negative initial content {}", queue + 1, value)
            }
            Violation::QueueBeforeFirstProcessor { value } => {
                write!(
                    f,
                    "the first processor has no queue, got initial content {value}"
                )
            }
            Violation::KnotOutsideProcessor { processor, knot } => write!(
                f,
                "processor {}: initial density knot {} outside the processor",
                processor + 1,
                knot
            ),
        }
    }
}

/// Outcome of [`validate_chain`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal remarks, e.g. processors where the density-form and the
    /// flux-form capacity bounds disagree.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidChain(msgs.join("; ")))
        }
    }
}

/// Checks positivity, the capacity bound on the initial data (in flux form
/// `v_j rho <= mu_j`) and commensurability of the lengths.
pub fn validate_chain(chain: &SupplyChain) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (j, p) in chain.processors.iter().enumerate() {
        for (name, value) in [
            ("length", p.length),
            ("velocity", p.velocity),
            ("max_rate", p.max_rate),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                report.violations.push(Violation::NonPositiveParameter {
                    processor: j,
                    name,
                    value,
                });
            }
        }
        let rho = &chain.initial_density[j];
        for &k in rho.knots() {
            if !(k > 0.0 && k < p.length) {
                report.violations.push(Violation::KnotOutsideProcessor {
                    processor: j,
                    knot: k,
                });
            }
        }
        let rho_max = rho.max_value();
        let rho_min = rho.min_value();
        if rho_min < 0.0 {
            report.violations.push(Violation::NegativeDensity {
                processor: j,
                value: rho_min,
            });
        }
        let flux = p.velocity * rho_max;
        if flux > p.max_rate * (1.0 + MULTIPLE_TOL) {
            report.violations.push(Violation::CapacityExceeded {
                processor: j,
                flux,
                capacity: p.max_rate,
            });
        } else if rho_max > p.max_rate {
            report.notes.push(format!(
                "processor {}: density {} exceeds mu = {} but flux {} is admissible",
                j + 1,
                rho_max,
                p.max_rate,
                flux
            ));
        }
    }
    if chain.initial_queues[0] != 0.0 {
        report
            .violations
            .push(Violation::QueueBeforeFirstProcessor {
                value: chain.initial_queues[0],
            });
    }
    for (j, &q) in chain.initial_queues.iter().enumerate().skip(1) {
        if !(q >= 0.0) {
            report
                .violations
                .push(Violation::NegativeQueue { queue: j, value: q });
        }
    }
    match chain.effective_base_unit() {
        Some(delta) => {
            for (j, p) in chain.processors.iter().enumerate() {
                if p.length > 0.0 && integer_multiple(p.length, delta).is_none() {
                    report.violations.push(Violation::Incommensurable {
                        processor: j,
                        length: p.length,
                    });
                }
            }
        }
        None => {
            for (j, p) in chain.processors.iter().enumerate().skip(1) {
                report.violations.push(Violation::Incommensurable {
                    processor: j,
                    length: p.length,
                });
            }
        }
    }
    report
}

/// Piecewise-constant inflow with breakpoints on a time lattice.
///
/// `levels[k]` holds on `[tau_k, tau_{k+1})` with `tau_0 = 0` and
/// `tau_{delta+1} = T`; breakpoints are strictly increasing in `(0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantControl {
    horizon: f64,
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    quantum: f64,
}

impl PiecewiseConstantControl {
    pub fn new(
        horizon: f64,
        breakpoints: Vec<f64>,
        levels: Vec<f64>,
        quantum: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidControl(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if !(quantum > 0.0) {
            return Err(Error::InvalidControl(format!(
                "quantum {quantum} must be positive"
            )));
        }
        if levels.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidControl(format!(
                "{} breakpoints need {} levels, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                levels.len()
            )));
        }
        if levels.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
            return Err(Error::InvalidControl(
                "levels must be finite and nonnegative".into(),
            ));
        }
        let mut previous = 0.0;
        for (index, &tau) in breakpoints.iter().enumerate() {
            if !(tau > previous) || tau >= horizon {
                return Err(Error::InvalidControl(format!(
                    "breakpoints must be strictly increasing inside (0, {horizon}); got {tau} at position {}",
                    index + 1
                )));
            }
            if integer_multiple(tau, quantum).is_none() {
                return Err(Error::Unquantized {
                    index,
                    tau,
                    quantum,
                });
            }
            previous = tau;
        }
        Ok(Self {
            horizon,
            breakpoints,
            levels,
            quantum,
        })
    }

    pub fn constant(horizon: f64, level: f64, quantum: f64) -> Result<Self> {
        Self::new(horizon, Vec::new(), vec![level], quantum)
    }

    /// Builds a control from switching times that may touch `0`, `T` or each
    /// other; empty segments are absorbed (the later level wins a collision).
    pub fn from_switching_times(
        horizon: f64,
        taus: &[f64],
        levels: &[f64],
        quantum: f64,
    ) -> Result<Self> {
        if levels.len() != taus.len() + 1 {
            return Err(Error::InvalidControl(format!(
                "{} switching times need {} levels, got {}",
                taus.len(),
                taus.len() + 1,
                levels.len()
            )));
        }
        // clamp, then make nondecreasing
        let mut clamped = Vec::with_capacity(taus.len());
        let mut floor = 0.0_f64;
        for &t in taus {
            let c = t.clamp(0.0, horizon).max(floor);
            clamped.push(c);
            floor = c;
        }
        let tol = MULTIPLE_TOL * quantum;
        let mut bps = Vec::new();
        let mut lvls = Vec::new();
        for k in 0..levels.len() {
            let start = if k == 0 { 0.0 } else { clamped[k - 1] };
            let end = if k == taus.len() { horizon } else { clamped[k] };
            if end - start > tol {
                if !lvls.is_empty() {
                    bps.push(start);
                }
                lvls.push(levels[k]);
            }
        }
        Self::new(horizon, bps, lvls, quantum)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn discontinuities(&self) -> usize {
        self.breakpoints.len()
    }

    /// Lattice indices `n(k)` with `tau_k = n(k) * dt`.
    pub fn breakpoint_steps(&self, dt: f64) -> Result<Vec<usize>> {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(index, &tau)| match integer_multiple(tau, dt) {
                Some(n) if n >= 0 => Ok(n as usize),
                _ => Err(Error::Unquantized {
                    index,
                    tau,
                    quantum: dt,
                }),
            })
            .collect()
    }
}

/// `sum_k |u_k - u_{k-1}|`.
pub fn control_tv(u: &PiecewiseConstantControl) -> f64 {
    u.levels.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Right-continuous evaluation; `u(T)` is the last level.
pub fn eval_control(u: &PiecewiseConstantControl, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= u.horizon) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: u.horizon,
        });
    }
    Ok(u.levels[u.breakpoints.partition_point(|b| *b <= t)])
}

/// Shifts every breakpoint by `xi[k]`, clamping to `[0, T]` and merging
/// collisions. Crossing breakpoints are treated as colliding.
pub fn shift_control(u: &PiecewiseConstantControl, xi: &[f64]) -> Result<PiecewiseConstantControl> {
    if xi.len() != u.breakpoints.len() {
        return Err(Error::InvalidControl(format!(
            "{} shifts for {} breakpoints",
            xi.len(),
            u.breakpoints.len()
        )));
    }
    let moved: Vec<f64> = u.breakpoints.iter().zip(xi).map(|(t, s)| t + s).collect();
    PiecewiseConstantControl::from_switching_times(u.horizon, &moved, &u.levels, u.quantum)
}

/// Checks a control against the chain's first capacity and a total
/// variation budget.
pub fn validate_control(
    u: &PiecewiseConstantControl,
    chain: &SupplyChain,
    tv_budget: Option<f64>,
) -> Result<()> {
    let mu1 = chain.processor(0).max_rate;
    if let Some(bad) = u.levels.iter().find(|l| **l > mu1 * (1.0 + MULTIPLE_TOL)) {
        return Err(Error::InvalidControl(format!(
            "level {bad} exceeds the first processor's max rate {mu1}"
        )));
    }
    if let Some(c) = tv_budget {
        let tv = control_tv(u);
        if tv > c * (1.0 + MULTIPLE_TOL) {
            return Err(Error::InvalidControl(format!(
                "total variation {tv} exceeds budget {c}"
            )));
        }
    }
    Ok(())
}

/// Switching times as descent variables: lattice indices that may coincide
/// or sit on `0` / `T`, together with the levels they separate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSchedule {
    horizon: f64,
    quantum: f64,
    steps: Vec<i64>,
    levels: Vec<f64>,
}

impl SwitchingSchedule {
    pub fn new(horizon: f64, quantum: f64, steps: Vec<i64>, levels: Vec<f64>) -> Result<Self> {
        if levels.len() != steps.len() + 1 {
            return Err(Error::InvalidControl(format!(
                "{} switching times need {} levels, got {}",
                steps.len(),
                steps.len() + 1,
                levels.len()
            )));
        }
        let last = integer_multiple(horizon, quantum).ok_or_else(|| {
            Error::InvalidControl(format!("horizon {horizon} is not a multiple of {quantum}"))
        })?;
        if steps.iter().any(|n| *n < 0 || *n > last) || steps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidControl(format!(
                "switching steps {steps:?} must be nondecreasing in [0, {last}]"
            )));
        }
        Ok(Self {
            horizon,
            quantum,
            steps,
            levels,
        })
    }

    /// Converts real switching times, which must lie on the lattice.
    pub fn from_taus(horizon: f64, quantum: f64, taus: &[f64], levels: Vec<f64>) -> Result<Self> {
        let steps = taus
            .iter()
            .enumerate()
            .map(|(index, &tau)| {
                integer_multiple(tau, quantum).ok_or(Error::Unquantized {
                    index,
                    tau,
                    quantum,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(horizon, quantum, steps, levels)
    }

    pub fn from_control(u: &PiecewiseConstantControl) -> Self {
        Self {
            horizon: u.horizon,
            quantum: u.quantum,
            steps: u
                .breakpoints
                .iter()
                .map(|t| (t / u.quantum).round() as i64)
                .collect(),
            levels: u.levels.clone(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn steps(&self) -> &[i64] {
        &self.steps
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of lattice steps in `[0, T]`.
    pub fn horizon_steps(&self) -> i64 {
        (self.horizon / self.quantum).round() as i64
    }

    pub fn taus(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|n| *n as f64 * self.quantum)
            .collect()
    }

    /// Same levels, new switching steps.
    pub fn with_steps(&self, steps: Vec<i64>) -> Result<Self> {
        Self::new(self.horizon, self.quantum, steps, self.levels.clone())
    }

    /// The control this schedule represents, with empty segments merged.
    pub fn control(&self) -> Result<PiecewiseConstantControl> {
        PiecewiseConstantControl::from_switching_times(
            self.horizon,
            &self.taus(),
            &self.levels,
            self.quantum,
        )
    }

    /// Re-expresses the schedule on a finer lattice.
    pub fn refined(&self, factor: i64) -> Self {
        Self {
            horizon: self.horizon,
            quantum: self.quantum / factor as f64,
            steps: self.steps.iter().map(|n| n * factor).collect(),
            levels: self.levels.clone(),
        }
    }
}

/// Weights and target of the cost functional on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub alpha1: StepFn,
    pub alpha2: StepFn,
    pub psi: Profile,
    pub horizon: f64,
}

impl CostSpec {
    pub fn new(alpha1: StepFn, alpha2: StepFn, psi: Profile, horizon: f64) -> Result<Self> {
        if alpha1.min_value() < 0.0 || alpha2.min_value() < 0.0 || psi.min_value() < 0.0 {
            return Err(Error::Config(
                "cost weights and target must be nonnegative".into(),
            ));
        }
        Ok(Self {
            alpha1,
            alpha2,
            psi,
            horizon,
        })
    }

    /// Queue-only cost with constant weight.
    pub fn queues_only(weight: f64, horizon: f64) -> Self {
        Self {
            alpha1: StepFn::constant(weight),
            alpha2: StepFn::constant(0.0),
            psi: Profile::constant(0.0),
            horizon,
        }
    }
}
