//! Generalized tangent vectors: first-order shifts of the control
//! discontinuities carried through the chain, and the cost sensitivities
//! they produce.
//!
//! Sign convention: a positive shift `xi` on processor `j` delays a
//! discontinuity by `xi / v_j`. Probing `tau_k` with `+dt` therefore injects
//! `xi = v_1 dt`, and `(Σ Y1 + Y2) / dt` approximates `dJ / d tau_k`.
//!
//! Each shift is carried by a *front*: the density jump it displaces, stored
//! with the jump it owns. Under CFL equality upwind rows shift one cell per
//! step, so a front entering processor `j` at step `n` reaches the queue at
//! step `n + N_j`; the sparse front lists are the nonzero entries of the
//! dense tangent rows.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::func::StepFn;
use crate::model::{integer_multiple, CostSpec, SupplyChain, SwitchingSchedule};
use crate::report::{fmt_num, Table};
use crate::upwind::{ue_simulate, Grid, UeTrajectory};
use crate::wft::{wft_solve, EventKind, WftSolution, DEFAULT_EVENT_CAP};

/// Which rule handled an interaction with a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InteractionCase {
    /// Front reaches an empty queue that stays empty.
    A11,
    /// Front reaches an empty queue and changes its content.
    A12,
    /// Front reaches a nonempty queue.
    A2,
    /// The queue empties.
    B,
}

/// Outcome of a front-queue interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub case: InteractionCase,
    /// Shift of the front leaving into the downstream processor.
    pub xi_out: f64,
    /// Density jump owned by the outgoing front.
    pub drho_out: f64,
    /// Queue shift increment.
    pub eta_delta: f64,
}

/// A displaced density jump entering processor `processor` at step `step` of
/// its clock (upwind) or at time `time` (front tracking).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Front {
    pub processor: usize,
    pub step: usize,
    pub time: f64,
    pub xi: f64,
    pub drho: f64,
}

/// Front `xi_in` with own jump `drho_in` reaches a queue whose upstream flux
/// right after the arrival is `f_after`.
///
/// While the queue is empty the downstream inflow is `g(f) = min(f, mu)`:
/// the delay `xi_in / v_up` swaps `f_after` for `f_before` in both the
/// downstream inflow and the queue's net gain, which yields the outgoing jump
/// and the queue shift. A nonempty queue absorbs the whole flux change.
pub fn front_hits_queue(
    xi_in: f64,
    drho_in: f64,
    queue_empty: bool,
    f_after: f64,
    v_up: f64,
    v_down: f64,
    mu: f64,
) -> Interaction {
    let f_before = f_after - v_up * drho_in;
    if !queue_empty {
        return Interaction {
            case: InteractionCase::A2,
            xi_out: 0.0,
            drho_out: 0.0,
            eta_delta: -xi_in * drho_in,
        };
    }
    let g = |f: f64| f.min(mu);
    let pass = g(f_after) - g(f_before);
    let held = (f_after - g(f_after)) - (f_before - g(f_before));
    let eta_delta = -(xi_in / v_up) * held;
    Interaction {
        case: if eta_delta == 0.0 {
            InteractionCase::A11
        } else {
            InteractionCase::A12
        },
        xi_out: if pass == 0.0 {
            0.0
        } else {
            v_down / v_up * xi_in
        },
        drho_out: pass / v_down,
        eta_delta,
    }
}

/// A queue with shift `eta` empties while its upstream flux is `f_up < mu`:
/// the emptying moves by `eta / (mu - f_up)` and so does the downstream drop
/// from `mu` to `f_up`.
pub fn queue_empties(eta: f64, f_up: f64, v_down: f64, mu: f64) -> Result<Interaction> {
    let gap = mu - f_up;
    if !(gap > 0.0) {
        return Err(Error::InconsistentEvent(format!(
            "queue cannot empty with upstream flux {f_up} >= max rate {mu}"
        )));
    }
    Ok(Interaction {
        case: InteractionCase::B,
        xi_out: v_down * eta / gap,
        drho_out: (f_up - mu) / v_down,
        eta_delta: -eta,
    })
}

/// Shift injected for discontinuity `k` (0-based) probed by `sign * dt_1`.
pub fn init_tangent(
    k: usize,
    sign: f64,
    schedule: &SwitchingSchedule,
    grid: &Grid,
    v1: f64,
) -> Result<Front> {
    let dt = grid.quantum();
    let n = schedule.steps()[k];
    if integer_multiple(schedule.quantum(), dt) != Some(1) {
        return Err(Error::Unquantized {
            index: k,
            tau: schedule.quantum(),
            quantum: dt,
        });
    }
    let levels = schedule.levels();
    Ok(Front {
        processor: 0,
        step: n as usize,
        time: n as f64 * dt,
        xi: v1 * sign * dt,
        drho: (levels[k + 1] - levels[k]) / v1,
    })
}

/// Dense tangent row update: the same shift as the density rows.
pub fn advect_tangent(row: &mut VecDeque<f64>) {
    row.push_front(0.0);
    row.pop_back();
}

/// One step of the queue-cost sensitivity.
///
/// A positive queue adds `alpha1 eta dt`. An emptying step adds the
/// triangle `½ alpha1 eta xi_out / v_down` swept by the delayed emptying.
pub fn accumulate_y1(
    y1: f64,
    q_now: f64,
    q_next: f64,
    alpha1: f64,
    eta: f64,
    dt: f64,
    xi_out: f64,
    v_down: f64,
) -> f64 {
    if q_next > 0.0 {
        y1 + alpha1 * eta * dt
    } else if q_now > 0.0 {
        y1 + 0.5 * alpha1 * eta * xi_out / v_down
    } else {
        y1
    }
}

/// Outflow-tracking sensitivity of a front with shift `xi` leaving the last
/// processor: during the delay `xi / v` the outflow is `f_before` instead of
/// `f_after`.
pub fn accumulate_y2(
    y2: f64,
    f_before: f64,
    f_after: f64,
    psi: f64,
    alpha2: f64,
    xi: f64,
    v: f64,
) -> f64 {
    y2 + alpha2 * (xi / v) * ((f_before - psi).powi(2) - (f_after - psi).powi(2))
}

/// Tangent-norm bookkeeping for one interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub queue: usize,
    pub case: InteractionCase,
    pub time: f64,
    pub before: f64,
    pub after: f64,
    /// The queue shift increment opposed the existing shift, so part of the
    /// norm cancelled.
    pub cancellation: bool,
}

fn record(
    queue: usize,
    time: f64,
    xi_in: f64,
    drho_in: f64,
    eta: f64,
    it: &Interaction,
) -> NormRecord {
    let before = (xi_in * drho_in).abs() + eta.abs();
    let after = (it.xi_out * it.drho_out).abs() + (eta + it.eta_delta).abs();
    let cancellation = match it.case {
        InteractionCase::B => false,
        _ => eta != 0.0 && it.eta_delta != 0.0 && eta.signum() != it.eta_delta.signum(),
    };
    NormRecord {
        queue,
        case: it.case,
        time,
        before,
        after,
        cancellation,
    }
}

/// Sensitivities produced by one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// Per queue (index 0 unused).
    pub y1: Vec<f64>,
    pub y2: f64,
    pub records: Vec<NormRecord>,
}

impl Propagation {
    pub fn total(&self) -> f64 {
        self.y1.iter().sum::<f64>() + self.y2
    }
}

fn midpoint(a: f64, dt: f64, horizon: f64) -> (f64, f64) {
    let b = (a + dt).min(horizon);
    (0.5 * (a + b), b - a)
}

/// Carries `front` through a shared upwind trajectory.
pub fn propagate_ue(
    traj: &UeTrajectory,
    chain: &SupplyChain,
    cost: &CostSpec,
    front: Front,
) -> Result<Propagation> {
    let grid = &traj.grid;
    let p = chain.len();
    let horizon = grid.horizon;
    let mut fronts: Vec<Vec<Front>> = vec![Vec::new(); p];
    fronts[front.processor].push(front);
    let mut y1 = vec![0.0; p];
    let mut y2 = 0.0;
    let mut records = Vec::new();
    for j in 0..p {
        let mut list = std::mem::take(&mut fronts[j]);
        list.sort_by_key(|f| f.step);
        let cells = grid.cells[j];
        let v = traj.velocity(j);
        let dt = grid.dt[j];
        if j + 1 == p {
            for f in list {
                let e = f.step + cells;
                if e >= grid.steps[j] || f.xi == 0.0 {
                    continue;
                }
                let f_after = traj.exit_flux(j, e);
                let f_before = f_after - v * f.drho;
                let (tm, _) = midpoint(e as f64 * dt, dt, horizon);
                y2 = accumulate_y2(
                    y2,
                    f_before,
                    f_after,
                    cost.psi.value(tm),
                    cost.alpha2.value(tm),
                    f.xi,
                    v,
                );
            }
            continue;
        }
        let d = j + 1;
        let dt_d = grid.dt[d];
        let v_d = traj.velocity(d);
        let mu = traj.max_rate(d);
        let steps_d = grid.steps[d];
        let mut arrivals: Vec<(usize, Front)> = list
            .into_iter()
            .filter(|f| f.xi != 0.0)
            .filter_map(|f| {
                let e = f.step + cells;
                let t = e as f64 * dt;
                let m = crate::upwind::ceil_steps(t, dt_d);
                (m < steps_d).then_some((m, f))
            })
            .collect();
        arrivals.sort_by_key(|a| a.0);
        let tr = &traj.processors[d];
        let mut eta = 0.0;
        let mut next = 0;
        for m in 0..steps_d {
            while next < arrivals.len() && arrivals[next].0 == m {
                let f = arrivals[next].1;
                next += 1;
                let it = front_hits_queue(
                    f.xi,
                    f.drho,
                    tr.queue[m] == 0.0,
                    tr.upstream_flux[m],
                    v,
                    v_d,
                    mu,
                );
                records.push(record(d, m as f64 * dt_d, f.xi, f.drho, eta, &it));
                eta += it.eta_delta;
                if it.xi_out != 0.0 {
                    fronts[d].push(Front {
                        processor: d,
                        step: m,
                        time: m as f64 * dt_d,
                        xi: it.xi_out,
                        drho: it.drho_out,
                    });
                }
            }
            if eta == 0.0 {
                continue;
            }
            let (tm, span) = midpoint(m as f64 * dt_d, dt_d, horizon);
            let alpha1 = cost.alpha1.value(tm);
            let (q_now, q_next) = (tr.queue[m], tr.queue[m + 1]);
            let f_up = tr.upstream_flux[m];
            if q_next > 0.0 || f_up >= mu {
                // a balanced empty queue keeps its extra content
                y1[d] = accumulate_y1(y1[d], q_now, 1.0, alpha1, eta, span, 0.0, v_d);
            } else {
                let it = queue_empties(eta, f_up, v_d, mu)?;
                records.push(record(d, m as f64 * dt_d, 0.0, 0.0, eta, &it));
                y1[d] = accumulate_y1(y1[d], 1.0, 0.0, alpha1, eta, dt_d, it.xi_out, v_d);
                fronts[d].push(Front {
                    processor: d,
                    step: m + 1,
                    time: (m + 1) as f64 * dt_d,
                    xi: it.xi_out,
                    drho: it.drho_out,
                });
                eta = 0.0;
            }
        }
    }
    Ok(Propagation { y1, y2, records })
}

/// `∫_a^b alpha1 · 1{q > 0}` along a piecewise-linear queue.
fn positive_weight(points: &[(f64, f64)], alpha1: &StepFn, a: f64, b: f64) -> f64 {
    points
        .windows(2)
        .filter(|w| w[0].1 > 0.0 || w[1].1 > 0.0)
        .map(|w| alpha1.integral(w[0].0.max(a), w[1].0.min(b)))
        .sum()
}

/// Carries `front` through an exact front-tracking solution. Times are
/// exact; the second-order emptying triangle is not included.
pub fn propagate_wft(sol: &WftSolution, cost: &CostSpec, front: Front) -> Result<Propagation> {
    let procs = sol.processors();
    let p = procs.len();
    let horizon = sol.horizon();
    let mut fronts: Vec<Vec<Front>> = vec![Vec::new(); p];
    fronts[front.processor].push(front);
    let mut y1 = vec![0.0; p];
    let mut y2 = 0.0;
    let mut records = Vec::new();
    for j in 0..p {
        let mut list = std::mem::take(&mut fronts[j]);
        list.sort_by(|a, b| a.time.total_cmp(&b.time));
        let v = procs[j].velocity;
        let transit = procs[j].transit_time();
        if j + 1 == p {
            for f in list {
                let t = f.time + transit;
                if t >= horizon || f.xi == 0.0 {
                    continue;
                }
                let f_after = procs[j].flux(sol.exit_density(j, t));
                let f_before = f_after - v * f.drho;
                y2 = accumulate_y2(
                    y2,
                    f_before,
                    f_after,
                    cost.psi.value(t),
                    cost.alpha2.value(t),
                    f.xi,
                    v,
                );
            }
            continue;
        }
        let d = j + 1;
        let v_d = procs[d].velocity;
        let mu = procs[d].max_rate;
        // (time, priority, payload): emptying before arrivals at equal times
        let mut timeline: Vec<(f64, u8, Option<Front>, f64)> = sol
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::QueueEmpties && e.location == d)
            .map(|e| (e.time, 0, None, e.upstream_after))
            .collect();
        timeline.extend(
            list.into_iter()
                .filter(|f| f.xi != 0.0 && f.time + transit < horizon)
                .map(|f| (f.time + transit, 1, Some(f), 0.0)),
        );
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let points = sol.queue_points(d);
        let scale = points.iter().fold(1.0_f64, |m, q| m.max(q.1));
        let mut eta = 0.0;
        let mut t_prev = 0.0;
        for (t, _, payload, f_up) in timeline {
            if eta != 0.0 {
                y1[d] += eta * positive_weight(points, &cost.alpha1, t_prev, t);
            }
            t_prev = t;
            match payload {
                None if eta != 0.0 => {
                    let it = queue_empties(eta, f_up, v_d, mu)?;
                    records.push(record(d, t, 0.0, 0.0, eta, &it));
                    fronts[d].push(Front {
                        processor: d,
                        step: 0,
                        time: t,
                        xi: it.xi_out,
                        drho: it.drho_out,
                    });
                    eta = 0.0;
                }
                None => {}
                Some(f) => {
                    let empty = sol.queue_at(d, t) <= 1e-12 * scale;
                    let f_after = procs[j].flux(sol.exit_density(j, t));
                    let it = front_hits_queue(f.xi, f.drho, empty, f_after, v, v_d, mu);
                    records.push(record(d, t, f.xi, f.drho, eta, &it));
                    eta += it.eta_delta;
                    if it.xi_out != 0.0 {
                        fronts[d].push(Front {
                            processor: d,
                            step: 0,
                            time: t,
                            xi: it.xi_out,
                            drho: it.drho_out,
                        });
                    }
                }
            }
        }
        if eta != 0.0 {
            y1[d] += eta * positive_weight(points, &cost.alpha1, t_prev, horizon);
        }
    }
    Ok(Propagation { y1, y2, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Upwind,
    FrontTracking,
}

/// Probe direction(s) for each discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Probe {
    #[default]
    Forward,
    Backward,
    /// Average of forward and backward probes.
    Symmetric,
}

/// Sensitivities of one discontinuity.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub tau: f64,
    /// Per queue (index 0 unused), normalized by the probe.
    pub y1: Vec<f64>,
    pub y2: f64,
    /// `dJ / d tau_k`.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub components: Vec<Component>,
    pub records: Vec<NormRecord>,
}

impl GradientReport {
    pub fn values(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.g).collect()
    }

    /// Columns `k, tau_k, Y1 per queue, Y2, g_k`.
    pub fn to_table(&self, queues: usize) -> Table {
        let mut header = vec!["k".to_string(), "tau".to_string()];
        header.extend((2..=queues).map(|j| format!("y1_q{j}")));
        header.extend(["y2".to_string(), "g".to_string()]);
        let mut t = Table::new(header);
        for (k, c) in self.components.iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), fmt_num(c.tau)];
            row.extend(c.y1[1..].iter().map(|y| fmt_num(*y)));
            row.push(fmt_num(c.y2));
            row.push(fmt_num(c.g));
            t.push(row);
        }
        t
    }
}

enum Solved {
    Upwind(UeTrajectory),
    FrontTracking(WftSolution),
}

/// Gradient of `J` with respect to every switching time, from one shared
/// simulation.
pub fn gradient(
    chain: &SupplyChain,
    schedule: &SwitchingSchedule,
    grid: &Grid,
    cost: &CostSpec,
    backend: Backend,
    probe: Probe,
) -> Result<GradientReport> {
    let control = schedule.control()?;
    let solved = match backend {
        Backend::Upwind => Solved::Upwind(ue_simulate(chain, &control, grid)?),
        Backend::FrontTracking => {
            Solved::FrontTracking(wft_solve(chain, &control, DEFAULT_EVENT_CAP)?)
        }
    };
    let signs: &[f64] = match probe {
        Probe::Forward => &[1.0],
        Probe::Backward => &[-1.0],
        Probe::Symmetric => &[1.0, -1.0],
    };
    let v1 = chain.processor(0).velocity;
    let dt = grid.quantum();
    let taus = schedule.taus();
    let mut components = Vec::with_capacity(schedule.len());
    let mut records = Vec::new();
    for k in 0..schedule.len() {
        let mut y1 = vec![0.0; chain.len()];
        let mut y2 = 0.0;
        for &sign in signs {
            let front = init_tangent(k, sign, schedule, grid, v1)?;
            let prop = match &solved {
                Solved::Upwind(traj) => propagate_ue(traj, chain, cost, front)?,
                Solved::FrontTracking(sol) => propagate_wft(sol, cost, front)?,
            };
            let norm = sign * dt * signs.len() as f64;
            for (acc, y) in y1.iter_mut().zip(&prop.y1) {
                *acc += y / norm;
            }
            y2 += prop.y2 / norm;
            records.extend(prop.records);
        }
        let g = y1.iter().sum::<f64>() + y2;
        components.push(Component {
            tau: taus[k],
            y1,
            y2,
            g,
        });
    }
    Ok(GradientReport {
        components,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::Profile;
    use crate::model::{PiecewiseConstantControl, Processor};
    use crate::upwind::{build_grid, upwind_step};

    #[test]
    fn passing_front_keeps_its_shift() {
        let it = front_hits_queue(0.02, 50.0, true, 50.0, 1.0, 1.0, 75.0);
        assert_eq!(it.case, InteractionCase::A11);
        assert_eq!(it.xi_out, 0.02);
        assert_eq!(it.eta_delta, 0.0);
        let it = front_hits_queue(0.02, 50.0, true, 50.0, 1.0, 2.0, 75.0);
        assert_eq!(it.xi_out, 0.04);
        assert_eq!(it.drho_out, 25.0);
    }

    /// A delayed saturating front leaves 0.02 * 25 fewer parts queued.
    #[test]
    fn saturating_front_on_an_empty_queue() {
        let it = front_hits_queue(0.02, 100.0, true, 100.0, 1.0, 1.0, 75.0);
        assert_eq!(it.case, InteractionCase::A12);
        assert!((it.eta_delta + 0.5).abs() < 1e-15);
        assert_eq!(it.xi_out, 0.02);
        assert_eq!(it.drho_out, 75.0);
    }

    #[test]
    fn nonempty_queue_absorbs_the_front() {
        let it = front_hits_queue(0.02, 10.0, false, 90.0, 1.0, 1.0, 75.0);
        assert_eq!(it.case, InteractionCase::A2);
        assert_eq!(it.xi_out, 0.0);
        assert!((it.eta_delta + 0.2).abs() < 1e-15);
    }

    #[test]
    fn emptying_shift() {
        let it = queue_empties(0.5, 50.0, 1.0, 75.0).unwrap();
        assert!((it.xi_out - 0.02).abs() < 1e-15);
        assert_eq!(it.drho_out, -25.0);
        assert!(queue_empties(0.5, 75.0, 1.0, 75.0).is_err());
    }

    #[test]
    fn accumulators() {
        assert_eq!(accumulate_y1(0.0, 0.0, 0.0, 1.0, 0.0, 0.02, 0.0, 1.0), 0.0);
        let mut y = 0.0;
        for _ in 0..7 {
            y = accumulate_y1(y, 1.0, 1.0, 1.0, 0.3, 0.02, 0.0, 1.0);
        }
        assert!((y - 7.0 * 0.3 * 0.02).abs() < 1e-15);
        assert_eq!(
            accumulate_y1(0.0, 1.0, 0.0, 2.0, 0.5, 0.02, 0.04, 1.0),
            0.02
        );
        assert_eq!(accumulate_y2(0.0, 3.0, 3.0, 1.0, 1.0, 0.02, 1.0), 0.0);
        assert_eq!(accumulate_y2(0.0, 0.0, 7.0, 0.0, 0.0, 0.02, 1.0), 0.0);
        // a delayed rise of height h costs h^2 during the delay
        assert!((accumulate_y2(0.0, 0.0, 7.0, 7.0, 1.0, 0.02, 1.0) - 49.0 * 0.02).abs() < 1e-12);
    }

    #[test]
    fn injected_shift() {
        let chain = SupplyChain::empty(vec![Processor::new(1.0, 1.0, 200.0)], None).unwrap();
        let grid = build_grid(&chain, 0.02, 0, 10.0).unwrap();
        let s = SwitchingSchedule::from_taus(10.0, 0.02, &[1.0, 3.0], vec![90.0, 100.0, 125.0])
            .unwrap();
        let f = init_tangent(0, 1.0, &s, &grid, 1.0).unwrap();
        assert_eq!(f.xi, 0.02);
        assert_eq!(f.step, 50);
        assert_eq!(f.drho, 10.0);
        assert_eq!(init_tangent(0, -1.0, &s, &grid, 1.0).unwrap().xi, -0.02);
    }

    /// Dense tangent rows advected with the density rows keep every shift on
    /// the jump it was injected with.
    #[test]
    fn shifts_stay_on_their_jumps() {
        let mut xi: VecDeque<f64> = vec![0.0; 6].into();
        let mut rho: VecDeque<f64> = vec![0.0; 6].into();
        xi[0] = 0.02;
        rho[0] = 4.0;
        for _ in 0..4 {
            advect_tangent(&mut xi);
            upwind_step(&mut rho, 4.0);
            let i = xi.iter().position(|s| *s != 0.0).unwrap();
            assert_eq!(rho[i], 4.0);
            assert_eq!(rho[i + 1], 0.0);
        }
        let mut row: VecDeque<f64> = vec![0.5, 0.0, 0.0].into();
        advect_tangent(&mut row);
        assert_eq!(row, VecDeque::from(vec![0.0, 0.5, 0.0]));
        let mut zero: VecDeque<f64> = vec![0.0; 3].into();
        advect_tangent(&mut zero);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    fn two_arc() -> SupplyChain {
        SupplyChain::empty(
            vec![
                Processor::new(1.0, 1.0, 200.0),
                Processor::new(1.0, 1.0, 75.0),
            ],
            Some(1.0),
        )
        .unwrap()
    }

    #[test]
    fn control_without_discontinuities_has_empty_gradient() {
        let chain = two_arc();
        let grid = build_grid(&chain, 0.02, 0, 2.0).unwrap();
        let s = SwitchingSchedule::new(2.0, 0.02, vec![], vec![50.0]).unwrap();
        let r = gradient(
            &chain,
            &s,
            &grid,
            &CostSpec::queues_only(1.0, 2.0),
            Backend::Upwind,
            Probe::Forward,
        )
        .unwrap();
        assert!(r.values().is_empty());
    }

    #[test]
    fn sensitivities_are_linear_in_the_probe_without_emptying() {
        let chain = two_arc();
        let t = 4.0;
        let grid = build_grid(&chain, 0.02, 0, t).unwrap();
        let u = PiecewiseConstantControl::new(t, vec![0.5, 1.0], vec![100.0, 60.0, 120.0], 0.02)
            .unwrap();
        let traj = ue_simulate(&chain, &u, &grid).unwrap();
        let cost = CostSpec::new(
            StepFn::constant(1.0),
            StepFn::constant(0.3),
            Profile::constant(70.0),
            t,
        )
        .unwrap();
        let s = SwitchingSchedule::from_control(&u);
        for k in 0..2 {
            let f = init_tangent(k, 1.0, &s, &grid, 1.0).unwrap();
            let a = propagate_ue(&traj, &chain, &cost, f).unwrap();
            let b = propagate_ue(
                &traj,
                &chain,
                &cost,
                Front {
                    xi: 2.0 * f.xi,
                    ..f
                },
            )
            .unwrap();
            assert!(a.records.iter().all(|r| r.case != InteractionCase::B));
            assert_eq!(b.y2, 2.0 * a.y2);
            for (x, y) in a.y1.iter().zip(&b.y1) {
                assert!((y - 2.0 * x).abs() <= 1e-14 * x.abs());
            }
            let z = propagate_ue(&traj, &chain, &cost, Front { xi: 0.0, ..f }).unwrap();
            assert_eq!(z.total(), 0.0);
        }
    }
}
