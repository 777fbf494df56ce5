//! Cost functional, projections, cross-solver distances, observed orders and
//! the finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::func::{weighted_linear_integral, weighted_square_integral, LinearFn, StepFn};
use crate::model::{
    integer_multiple, CostSpec, PiecewiseConstantControl, SupplyChain, SwitchingSchedule,
    MULTIPLE_TOL,
};
use crate::upwind::{build_grid, ue_simulate, Grid, UeTrajectory};
use crate::wft::{wft_solve, WftSolution, DEFAULT_EVENT_CAP};

/// `J = J1 + J2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// Weighted queue content.
    pub j1: f64,
    /// Weighted squared outflow tracking error.
    pub j2: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.j1 + self.j2
    }
}

/// Either solver's output.
#[derive(Debug, Clone, Copy)]
pub enum Trajectory<'a> {
    Upwind(&'a UeTrajectory),
    FrontTracking(&'a WftSolution),
}

fn check_horizon(found: f64, cost: &CostSpec) -> Result<()> {
    if (found - cost.horizon).abs() > MULTIPLE_TOL * cost.horizon.max(1.0) {
        return Err(Error::HorizonMismatch {
            trajectory: found,
            expected: cost.horizon,
        });
    }
    Ok(())
}

pub fn cost(trajectory: Trajectory<'_>, spec: &CostSpec) -> Result<CostBreakdown> {
    match trajectory {
        Trajectory::Upwind(t) => ue_cost(t, spec),
        Trajectory::FrontTracking(s) => wft_cost(s, spec),
    }
}

/// Exact integrals of the piecewise-linear queue interpolants and of the
/// per-step constant outflow.
pub fn ue_cost(traj: &UeTrajectory, spec: &CostSpec) -> Result<CostBreakdown> {
    let grid = &traj.grid;
    check_horizon(grid.horizon, spec)?;
    let t_end = grid.horizon;
    let mut j1 = 0.0;
    for j in 1..grid.processors() {
        let q = &traj.processors[j].queue;
        let dt = grid.dt[j];
        for n in 0..grid.steps[j] {
            let a = n as f64 * dt;
            let b = ((n + 1) as f64 * dt).min(t_end);
            let qb = q[n] + (q[n + 1] - q[n]) * (b - a) / dt;
            j1 += weighted_linear_integral(&spec.alpha1, q[n], qb, a, b);
        }
    }
    let last = grid.processors() - 1;
    let dt = grid.dt[last];
    let mut j2 = 0.0;
    for n in 0..grid.steps[last] {
        let a = n as f64 * dt;
        let b = ((n + 1) as f64 * dt).min(t_end);
        j2 += weighted_square_integral(&spec.alpha2, traj.exit_flux(last, n), &spec.psi, a, b);
    }
    Ok(CostBreakdown { j1, j2 })
}

/// Exact cost of a front-tracking solution.
pub fn wft_cost(sol: &WftSolution, spec: &CostSpec) -> Result<CostBreakdown> {
    check_horizon(sol.horizon(), spec)?;
    let t_end = sol.horizon();
    let p = sol.processors().len();
    let mut j1 = 0.0;
    for j in 1..p {
        for w in sol.queue_points(j).windows(2) {
            let (a, qa) = w[0];
            let (b, qb) = w[1];
            j1 += weighted_linear_integral(&spec.alpha1, qa, qb, a, b.min(t_end));
        }
    }
    let flux = sol.exit_flux(p - 1);
    let j2 = step_square_integral(&flux, spec, 0.0, t_end);
    Ok(CostBreakdown { j1, j2 })
}

/// `∫_a^b alpha2 (f - psi)^2` for a step function `f`.
pub(crate) fn step_square_integral(f: &StepFn, spec: &CostSpec, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut left = a;
    for k in f.knots_in(a, b).chain(std::iter::once(b)) {
        total += weighted_square_integral(&spec.alpha2, f.value(left), &spec.psi, left, k);
        left = k;
    }
    total
}

/// Piecewise-constant reconstruction of a density row on `[start, start +
/// N dx)`.
pub fn project_pc(row: &[f64], start: f64, dx: f64) -> StepFn {
    let knots = (1..row.len()).map(|i| start + i as f64 * dx).collect();
    StepFn::new(knots, row.to_vec()).unwrap_or_else(|_| StepFn::constant(row[0]))
}

/// Piecewise-linear interpolant of a queue series sampled every `dt`.
pub fn project_pl(series: &[f64], dt: f64) -> Result<LinearFn> {
    LinearFn::new(
        series
            .iter()
            .enumerate()
            .map(|(n, q)| (n as f64 * dt, *q))
            .collect(),
    )
}

fn step_at(t: f64, dt: f64) -> usize {
    match integer_multiple(t, dt) {
        Some(n) => n.max(0) as usize,
        None => (t / dt).floor().max(0.0) as usize,
    }
}

/// `Σ_j ‖π_PC(ρ_ue) − ρ_wft‖_L1 + Σ_j |π_PL(q_ue) − q_wft|` at time `t`.
/// Off-lattice times use the last UE step before `t`.
pub fn solver_distance(ue: &UeTrajectory, wft: &WftSolution, t: f64) -> Result<f64> {
    let grid = &ue.grid;
    if (grid.horizon - wft.horizon()).abs() > MULTIPLE_TOL * grid.horizon {
        return Err(Error::HorizonMismatch {
            trajectory: wft.horizon(),
            expected: grid.horizon,
        });
    }
    if !(0.0..=grid.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: grid.horizon,
        });
    }
    let mut total = 0.0;
    for j in 0..grid.processors() {
        let dt = grid.dt[j];
        let n = step_at(t, dt);
        let row = ue.density_row(j, n);
        let v = ue.velocity(j);
        let length = grid.cells[j] as f64 * grid.dx;
        let entry = wft.entry_profile(j);
        // density discontinuities of the exact solution inside the processor
        let mut cuts: Vec<f64> = entry
            .knots_in(t - length / v, t)
            .map(|s| v * (t - s))
            .collect();
        cuts.extend((1..row.len()).map(|i| i as f64 * grid.dx));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut left = 0.0;
        for right in cuts.into_iter().chain(std::iter::once(length)) {
            if right > left {
                let mid = 0.5 * (left + right);
                let cell = ((mid / grid.dx) as usize).min(row.len() - 1);
                total += (row[cell] - wft.density(j, mid, t)).abs() * (right - left);
            }
            left = right;
        }
        if j > 0 {
            let q = &ue.processors[j].queue;
            let i = ((t / dt).floor() as usize).min(q.len() - 1);
            let q_ue = if i + 1 < q.len() {
                q[i] + (q[i + 1] - q[i]) * (t - i as f64 * dt) / dt
            } else {
                q[i]
            };
            total += (q_ue - wft.queue_at(j, t)).abs();
        }
    }
    Ok(total)
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nu: u32,
    pub dx: f64,
    pub distance: f64,
    /// `log2(d_{nu-1} / d_nu)`; `None` on the first row, infinite when both
    /// distances vanish to roundoff.
    pub order: Option<f64>,
}

/// Distances at `t` between UE solutions on nested grids and the exact
/// solution, with observed orders between successive levels.
pub fn convergence_order(
    chain: &SupplyChain,
    control: &PiecewiseConstantControl,
    base_dx: f64,
    nu_list: &[u32],
    t: f64,
) -> Result<Vec<ConvergenceRow>> {
    if nu_list.len() < 3 {
        return Err(Error::TooFewLevels(nu_list.len()));
    }
    if nu_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid("refinement levels must be increasing".into()));
    }
    let exact = wft_solve(chain, control, DEFAULT_EVENT_CAP)?;
    distance_study(chain, control, &exact, base_dx, nu_list, t)
}

/// Like [`convergence_order`] without the minimum level count.
pub fn distance_study(
    chain: &SupplyChain,
    control: &PiecewiseConstantControl,
    exact: &WftSolution,
    base_dx: f64,
    nu_list: &[u32],
    t: f64,
) -> Result<Vec<ConvergenceRow>> {
    let scale = control.levels().iter().fold(1.0_f64, |m, u| m.max(u.abs()));
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(nu_list.len());
    for &nu in nu_list {
        let grid = build_grid(chain, base_dx, nu, control.horizon())?;
        let ue = ue_simulate(chain, control, &grid)?;
        let distance = solver_distance(&ue, exact, t)?;
        let order = rows.last().map(|prev| {
            let floor = 1e-12 * scale;
            if prev.distance <= floor && distance <= floor {
                f64::INFINITY
            } else {
                (prev.distance / distance).log2()
            }
        });
        rows.push(ConvergenceRow {
            nu,
            dx: grid.dx,
            distance,
            order,
        });
    }
    Ok(rows)
}

/// Cost of a schedule simulated with the UE scheme.
pub fn schedule_cost(
    chain: &SupplyChain,
    schedule: &SwitchingSchedule,
    grid: &Grid,
    spec: &CostSpec,
) -> Result<CostBreakdown> {
    let traj = ue_simulate(chain, &schedule.control()?, grid)?;
    ue_cost(&traj, spec)
}

/// Central difference `(J(tau_k + dt) - J(tau_k - dt)) / (2 dt)`.
pub fn fd_gradient(
    chain: &SupplyChain,
    schedule: &SwitchingSchedule,
    grid: &Grid,
    spec: &CostSpec,
    k: usize,
) -> Result<f64> {
    let steps = schedule.steps();
    if k >= steps.len() {
        return Err(Error::InvalidShift {
            index: k,
            delta: 0.0,
        });
    }
    let dq = schedule.quantum();
    if integer_multiple(dq, grid.quantum()) != Some(1) {
        return Err(Error::Unquantized {
            index: k,
            tau: dq,
            quantum: grid.quantum(),
        });
    }
    let n = steps[k];
    let lower = if k == 0 { 0 } else { steps[k - 1] };
    let upper = steps
        .get(k + 1)
        .copied()
        .unwrap_or(schedule.horizon_steps());
    if n - 1 < lower || n + 1 > upper {
        return Err(Error::InvalidShift {
            index: k,
            delta: dq,
        });
    }
    let shifted = |delta: i64| -> Result<f64> {
        let mut s = steps.to_vec();
        s[k] += delta;
        Ok(schedule_cost(chain, &schedule.with_steps(s)?, grid, spec)?.total())
    };
    Ok((shifted(1)? - shifted(-1)?) / (2.0 * dq))
}

/// Magnitude below which a gradient component counts as stationary:
/// `10 dt_q (1 + |J|) / T^2`.
pub fn noise_floor(quantum: f64, cost: f64, horizon: f64) -> f64 {
    10.0 * quantum * (1.0 + cost.abs()) / (horizon * horizon)
}
