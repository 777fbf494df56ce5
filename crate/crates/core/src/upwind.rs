//! Upwind finite volumes on each processor coupled to explicit Euler steps
//! for the queues.
//!
//! Every processor runs on its own clock `dt_j = dx / v_j`, so the upwind
//! update is an exact shift by one cell. Queue `j` steps on processor `j`'s
//! clock and consumes the upstream exit flux averaged over the exact overlap
//! of its step with the upstream steps.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{integer_multiple, PiecewiseConstantControl, SupplyChain, MULTIPLE_TOL};

/// Space and time meshes at refinement level `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nu: u32,
    pub base_dx: f64,
    pub dx: f64,
    pub horizon: f64,
    /// `dt_j = dx / v_j`.
    pub dt: Vec<f64>,
    /// `N_j = L_j / dx`.
    pub cells: Vec<usize>,
    /// `M_j = ceil(T / dt_j)`.
    pub steps: Vec<usize>,
}

impl Grid {
    /// Time quantum for the control: the first processor's step.
    pub fn quantum(&self) -> f64 {
        self.dt[0]
    }

    pub fn processors(&self) -> usize {
        self.dt.len()
    }

    /// Time of step `n` on processor `j`'s clock.
    pub fn time(&self, j: usize, n: usize) -> f64 {
        n as f64 * self.dt[j]
    }
}

pub(crate) fn ceil_steps(span: f64, dt: f64) -> usize {
    let r = span / dt;
    let n = r.round();
    if (r - n).abs() <= MULTIPLE_TOL * n.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

pub fn build_grid(chain: &SupplyChain, base_dx: f64, nu: u32, horizon: f64) -> Result<Grid> {
    if !(base_dx > 0.0) || !base_dx.is_finite() {
        return Err(Error::Grid(format!("base dx {base_dx} must be positive")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Grid(format!("horizon {horizon} must be positive")));
    }
    let delta = chain
        .effective_base_unit()
        .ok_or_else(|| Error::Grid("processor lengths have no common base unit".into()))?;
    if integer_multiple(delta, base_dx).is_none() {
        return Err(Error::Grid(format!(
            "base dx {base_dx} does not divide the base unit {delta}"
        )));
    }
    let dx = base_dx / f64::from(2u32.pow(nu));
    let mut cells = Vec::with_capacity(chain.len());
    for (j, p) in chain.processors().iter().enumerate() {
        match integer_multiple(p.length, dx) {
            Some(n) if n > 0 => cells.push(n as usize),
            _ => {
                return Err(Error::Grid(format!(
                    "dx {dx} does not divide length {} of processor {}",
                    p.length,
                    j + 1
                )))
            }
        }
    }
    let dt: Vec<f64> = chain.processors().iter().map(|p| dx / p.velocity).collect();
    let steps = dt.iter().map(|d| ceil_steps(horizon, *d)).collect();
    Ok(Grid {
        nu,
        base_dx,
        dx,
        horizon,
        dt,
        cells,
        steps,
    })
}

/// Samples each initial density at the left cell edges, taking right limits.
pub fn sample_initial(chain: &SupplyChain, grid: &Grid) -> Vec<Vec<f64>> {
    (0..chain.len())
        .map(|j| {
            let rho = chain.initial_density(j);
            (0..grid.cells[j])
                .map(|i| rho.value((i as f64 + 1e-9) * grid.dx))
                .collect()
        })
        .collect()
}

/// One upwind step under CFL equality: shifts the row one cell downstream,
/// fills cell 0 from the ghost value and returns the density that left.
pub fn upwind_step(row: &mut VecDeque<f64>, ghost: f64) -> f64 {
    row.push_front(ghost);
    row.pop_back().unwrap_or(ghost)
}

/// Inflow into processor `j >= 1`: as many parts as possible.
pub fn inflow_rate(queue: f64, upstream_flux: f64, max_rate: f64) -> f64 {
    if queue > 0.0 {
        max_rate
    } else {
        upstream_flux.min(max_rate)
    }
}

/// Upstream exit flux seen by step `n` of a clock with step `dt`: the time
/// average of the upstream per-step fluxes (step `dt_up`) over the exact
/// overlap with `[n dt, (n + 1) dt)`.
pub fn aggregate_upstream_flux(history: &[f64], dt_up: f64, dt: f64, n: usize) -> Result<f64> {
    let lo = n as f64 * dt / dt_up;
    let hi = (n + 1) as f64 * dt / dt_up;
    let tol = MULTIPLE_TOL * hi.max(1.0);
    let first = (lo + tol).floor() as usize;
    let end = ((hi - tol).ceil() as usize).max(first + 1);
    if end > history.len() {
        return Err(Error::MissingHistory {
            processor: 0,
            step: end - 1,
        });
    }
    if end == first + 1 {
        return Ok(history[first]);
    }
    let total: f64 = (first..end)
        .map(|l| {
            let a = (l as f64).max(lo);
            let b = ((l + 1) as f64).min(hi);
            history[l] * (b - a)
        })
        .sum();
    Ok(total / (hi - lo))
}

/// Result of one Euler step of a queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueStep {
    pub value: f64,
    /// The queue was positive and hit zero during the step.
    pub emptied: bool,
}

pub fn euler_queue_step(queue: f64, f_up: f64, f_inc: f64, dt: f64) -> QueueStep {
    let raw = queue + dt * (f_up - f_inc);
    let scale = queue.abs() + dt * (f_up.abs() + f_inc.abs());
    let value = if raw <= 1e-12 * scale { 0.0 } else { raw };
    QueueStep {
        value,
        emptied: queue > 0.0 && value == 0.0,
    }
}

/// Output of [`ue_simulate`] for one processor and the queue in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorTrace {
    /// Density in the last cell at steps `0..=run`.
    pub exit_density: Vec<f64>,
    /// Applied inflow `f_inc^n` for steps `0..run`.
    pub inflow: Vec<f64>,
    /// Aggregated upstream flux for steps `0..run` (empty for the first
    /// processor).
    pub upstream_flux: Vec<f64>,
    /// Queue content at steps `0..=run` (empty for the first processor).
    pub queue: Vec<f64>,
    /// `emptied[n]` flags the step `n -> n + 1`.
    pub emptied: Vec<bool>,
    pub initial: Vec<f64>,
    /// Density row after the last step.
    pub final_row: Vec<f64>,
}

impl ProcessorTrace {
    /// Number of steps simulated; at least `M_j`, more when a downstream
    /// queue needs the exit history beyond the horizon.
    pub fn run(&self) -> usize {
        self.inflow.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeTrajectory {
    pub grid: Grid,
    pub processors: Vec<ProcessorTrace>,
    velocities: Vec<f64>,
    max_rates: Vec<f64>,
}

impl UeTrajectory {
    /// Density row of processor `j` at step `n`, rebuilt from the ghost
    /// history (bit-identical to stepping the row).
    pub fn density_row(&self, j: usize, n: usize) -> Vec<f64> {
        let tr = &self.processors[j];
        let cells = self.grid.cells[j];
        let v = self.velocities[j];
        (0..cells)
            .map(|i| {
                if n > i {
                    tr.inflow[n - 1 - i] / v
                } else {
                    tr.initial[i - n]
                }
            })
            .collect()
    }

    /// Exit flux of processor `j` during step `n`.
    pub fn exit_flux(&self, j: usize, n: usize) -> f64 {
        (self.velocities[j] * self.processors[j].exit_density[n]).min(self.max_rates[j])
    }

    /// Outflow of the last processor per step on `[0, M_P)`.
    pub fn outflow_trace(&self) -> Vec<f64> {
        let last = self.processors.len() - 1;
        (0..self.grid.steps[last])
            .map(|n| self.exit_flux(last, n))
            .collect()
    }

    pub fn velocity(&self, j: usize) -> f64 {
        self.velocities[j]
    }

    pub fn max_rate(&self, j: usize) -> f64 {
        self.max_rates[j]
    }

    /// Mass stored on processor `j` at step `n`.
    pub fn processor_mass(&self, j: usize, n: usize) -> f64 {
        self.grid.dx * self.density_row(j, n).iter().sum::<f64>()
    }
}

/// Index of the control level active at step `n` of the first clock.
fn level_at(steps: &[usize], n: usize) -> usize {
    steps.partition_point(|s| *s <= n)
}

pub fn ue_simulate(
    chain: &SupplyChain,
    control: &PiecewiseConstantControl,
    grid: &Grid,
) -> Result<UeTrajectory> {
    if (control.horizon() - grid.horizon).abs() > MULTIPLE_TOL * grid.horizon {
        return Err(Error::HorizonMismatch {
            trajectory: control.horizon(),
            expected: grid.horizon,
        });
    }
    if grid.processors() != chain.len() {
        return Err(Error::Grid(format!(
            "grid has {} processors, chain has {}",
            grid.processors(),
            chain.len()
        )));
    }
    let breakpoint_steps = control.breakpoint_steps(grid.quantum())?;
    let levels = control.levels();
    let p = chain.len();

    // Steps needed on every clock so downstream queues see a full history.
    let mut run = grid.steps.clone();
    for j in (0..p.saturating_sub(1)).rev() {
        let need = ceil_steps(run[j + 1] as f64 * grid.dt[j + 1], grid.dt[j]);
        run[j] = run[j].max(need);
    }

    let initial = sample_initial(chain, grid);
    let mut traces: Vec<ProcessorTrace> = Vec::with_capacity(p);
    let mut upstream_flux_history: Vec<f64> = Vec::new();
    for j in 0..p {
        let proc = chain.processor(j);
        let steps = run[j];
        let mut row: VecDeque<f64> = initial[j].iter().copied().collect();
        let mut exit_density = Vec::with_capacity(steps + 1);
        let mut inflow = Vec::with_capacity(steps);
        let mut upstream_flux = Vec::new();
        let mut queue = Vec::new();
        let mut emptied = Vec::new();
        let mut q = chain.initial_queue(j);
        if j > 0 {
            upstream_flux.reserve(steps);
            queue.reserve(steps + 1);
            emptied.reserve(steps);
            queue.push(q);
        }
        for n in 0..steps {
            exit_density.push(*row.back().unwrap());
            let f_inc = if j == 0 {
                levels[level_at(&breakpoint_steps, n)]
            } else {
                let f_up =
                    aggregate_upstream_flux(&upstream_flux_history, grid.dt[j - 1], grid.dt[j], n)
                        .map_err(|_| Error::MissingHistory {
                            processor: j - 1,
                            step: n,
                        })?;
                let f_inc = inflow_rate(q, f_up, proc.max_rate);
                let next = euler_queue_step(q, f_up, f_inc, grid.dt[j]);
                q = next.value;
                upstream_flux.push(f_up);
                queue.push(q);
                emptied.push(next.emptied);
                f_inc
            };
            inflow.push(f_inc);
            upwind_step(&mut row, f_inc / proc.velocity);
        }
        exit_density.push(*row.back().unwrap());
        upstream_flux_history = exit_density[..steps]
            .iter()
            .map(|rho| proc.flux(*rho))
            .collect();
        traces.push(ProcessorTrace {
            exit_density,
            inflow,
            upstream_flux,
            queue,
            emptied,
            initial: initial[j].clone(),
            final_row: row.into_iter().collect(),
        });
    }
    Ok(UeTrajectory {
        grid: grid.clone(),
        processors: traces,
        velocities: chain.processors().iter().map(|p| p.velocity).collect(),
        max_rates: chain.processors().iter().map(|p| p.max_rate).collect(),
    })
}

/// Terms of the discrete mass balance at the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBalance {
    pub inflow: f64,
    pub stored: f64,
    pub queued: f64,
    pub outflow: f64,
}

impl MassBalance {
    pub fn error(&self) -> f64 {
        self.inflow - (self.stored + self.queued + self.outflow)
    }
}

/// Mass balance of a trajectory whose horizon is a whole number of steps on
/// every clock.
pub fn ue_mass_balance(chain: &SupplyChain, traj: &UeTrajectory) -> Result<MassBalance> {
    let grid = &traj.grid;
    let t = grid.horizon;
    for j in 0..grid.processors() {
        if integer_multiple(t, grid.dt[j]).is_none() {
            return Err(Error::Grid(format!(
                "horizon {t} is not a whole number of steps on processor {}",
                j + 1
            )));
        }
    }
    let initial_mass: f64 = (0..chain.len())
        .map(|j| grid.dx * traj.processors[j].initial.iter().sum::<f64>() + chain.initial_queue(j))
        .sum();
    let dt1 = grid.dt[0];
    let inflow = initial_mass
        + traj.processors[0].inflow[..grid.steps[0]]
            .iter()
            .map(|f| f * dt1)
            .sum::<f64>();
    let stored = (0..chain.len())
        .map(|j| traj.processor_mass(j, grid.steps[j]))
        .sum();
    let queued = (1..chain.len())
        .map(|j| traj.processors[j].queue[grid.steps[j]])
        .sum();
    let last = chain.len() - 1;
    let outflow = traj.outflow_trace().iter().map(|f| f * grid.dt[last]).sum();
    Ok(MassBalance {
        inflow,
        stored,
        queued,
        outflow,
    })
}
