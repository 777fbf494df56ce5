//! Exact event-driven wave-front tracking.
//!
//! With `v_j rho <= mu_j` the flux on every processor is linear, so every
//! Riemann problem is solved by one contact moving at `v_j` and waves never
//! interact inside a processor. The density on processor `j` is then fully
//! described by its *entry profile* `E_j(s)`: the density of the parts that
//! entered at time `s`, so `rho_j(x, t) = E_j(t - x / v_j)`. Initial data
//! occupies `s < 0`. Queues are piecewise linear between events.

use std::fmt;

use crate::error::{Error, Result};
use crate::func::StepFn;
use crate::model::{PiecewiseConstantControl, Processor, SupplyChain, MULTIPLE_TOL};

/// Default safety cap on processed events.
pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

/// A contact discontinuity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub speed: f64,
    pub left: f64,
    pub right: f64,
}

impl Wave {
    pub fn jump(&self) -> f64 {
        self.right - self.left
    }
}

/// Solves the Riemann problem `(left, right)` on `processor`. Returns `None`
/// when the states coincide.
pub fn solve_rp(left: f64, right: f64, processor: &Processor) -> Result<Option<Wave>> {
    for (index, rho) in [left, right].into_iter().enumerate() {
        let flux = processor.velocity * rho;
        if rho < 0.0 || flux > processor.max_rate * (1.0 + MULTIPLE_TOL) {
            return Err(Error::CapacityExceeded {
                processor: index,
                flux,
                capacity: processor.max_rate,
            });
        }
    }
    if left == right {
        return Ok(None);
    }
    Ok(Some(Wave {
        speed: processor.velocity,
        left,
        right,
    }))
}

/// Event kinds in tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    QueueEmpties,
    WaveHitsQueue,
    ControlJump,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::QueueEmpties => "queue-empties",
            EventKind::WaveHitsQueue => "wave-hits-queue",
            EventKind::ControlJump => "control-jump",
        })
    }
}

/// A scheduled event. `location` is the queue index for queue events (the
/// queue in front of processor `location`) and the breakpoint index for
/// control jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub location: usize,
}

/// A processed event with the inflow it leaves on the affected processor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedEvent {
    pub time: f64,
    pub kind: EventKind,
    pub location: usize,
    /// Processor whose inflow the event sets.
    pub processor: usize,
    pub inflow_after: f64,
    /// Upstream flux at the queue after the event (control level for jumps).
    pub upstream_after: f64,
}

/// Mutable solver state at time `t`.
#[derive(Debug, Clone)]
pub struct WftState {
    processors: Vec<Processor>,
    control: PiecewiseConstantControl,
    time: f64,
    entry: Vec<StepFn>,
    /// Next entry-profile knot of each processor still to reach its end.
    next_arrival: Vec<usize>,
    next_jump: usize,
    queue: Vec<f64>,
    upstream: Vec<f64>,
    inflow: Vec<f64>,
    queue_points: Vec<Vec<(f64, f64)>>,
    log: Vec<LoggedEvent>,
}

fn entry_from_initial(rho: &StepFn, p: &Processor) -> StepFn {
    let first = rho.value_left(p.length);
    let samples = rho
        .knots()
        .iter()
        .rev()
        .map(|&x| (-x / p.velocity, rho.value_left(x)))
        .collect::<Vec<_>>();
    StepFn::from_samples(first, samples)
}

impl WftState {
    pub fn new(chain: &SupplyChain, control: &PiecewiseConstantControl) -> Result<Self> {
        let processors = chain.processors().to_vec();
        let p = processors.len();
        let mut entry: Vec<StepFn> = (0..p)
            .map(|j| entry_from_initial(chain.initial_density(j), &processors[j]))
            .collect();
        let mut queue = vec![0.0; p];
        let mut upstream = vec![0.0; p];
        let mut inflow = vec![0.0; p];
        let u0 = control.levels()[0];
        upstream[0] = u0;
        inflow[0] = u0;
        for j in 0..p {
            if j > 0 {
                queue[j] = chain.initial_queue(j);
                let up = &processors[j - 1];
                upstream[j] = up.flux(entry[j - 1].value(-up.transit_time()));
                inflow[j] =
                    crate::upwind::inflow_rate(queue[j], upstream[j], processors[j].max_rate);
            }
            let rho_in = inflow[j] / processors[j].velocity;
            solve_rp(rho_in, rho_in, &processors[j])?;
            entry[j].push(0.0, rho_in);
        }
        let next_arrival = entry
            .iter()
            .zip(&processors)
            .map(|(e, p)| e.knots().partition_point(|s| s + p.transit_time() <= 0.0))
            .collect();
        let queue_points = queue.iter().map(|q| vec![(0.0, *q)]).collect();
        Ok(Self {
            processors,
            control: control.clone(),
            time: 0.0,
            entry,
            next_arrival,
            next_jump: 0,
            queue,
            upstream,
            inflow,
            queue_points,
            log: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn queue(&self, j: usize) -> f64 {
        self.queue[j]
    }

    pub fn slope(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.upstream[j] - self.inflow[j]
        }
    }

    fn tie_tolerance(&self) -> f64 {
        1e-10 * self.control.horizon().max(1.0)
    }

    /// Earliest pending event, or `None` when nothing happens before the
    /// horizon.
    pub fn next_event(&self) -> Option<Event> {
        let mut candidates: Vec<Event> = Vec::new();
        for j in 1..self.processors.len() {
            let slope = self.slope(j);
            if self.queue[j] > 0.0 && slope < 0.0 {
                candidates.push(Event {
                    time: self.time + self.queue[j] / -slope,
                    kind: EventKind::QueueEmpties,
                    location: j,
                });
            }
        }
        for j in 0..self.processors.len().saturating_sub(1) {
            let knots = self.entry[j].knots();
            if let Some(s) = knots.get(self.next_arrival[j]) {
                candidates.push(Event {
                    time: s + self.processors[j].transit_time(),
                    kind: EventKind::WaveHitsQueue,
                    location: j + 1,
                });
            }
        }
        if let Some(&tau) = self.control.breakpoints().get(self.next_jump) {
            candidates.push(Event {
                time: tau,
                kind: EventKind::ControlJump,
                location: self.next_jump,
            });
        }
        let earliest = candidates
            .iter()
            .map(|e| e.time)
            .fold(f64::INFINITY, f64::min);
        if !(earliest < self.control.horizon()) {
            return None;
        }
        let tol = self.tie_tolerance();
        candidates
            .into_iter()
            .filter(|e| e.time <= earliest + tol)
            .min_by(|a, b| a.kind.cmp(&b.kind).then(a.location.cmp(&b.location)))
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.time;
        if dt > 0.0 {
            for j in 1..self.processors.len() {
                let slope = self.slope(j);
                if slope != 0.0 {
                    let q = self.queue[j] + slope * dt;
                    self.queue[j] = if q <= 1e-12 * (self.queue[j] + slope.abs() * dt) {
                        0.0
                    } else {
                        q
                    };
                }
            }
            self.time = t;
        }
    }

    fn set_inflow(&mut self, j: usize) -> Result<()> {
        let p = self.processors[j];
        let new = if j == 0 {
            self.upstream[0]
        } else {
            crate::upwind::inflow_rate(self.queue[j], self.upstream[j], p.max_rate)
        };
        if new != self.inflow[j] {
            solve_rp(self.inflow[j] / p.velocity, new / p.velocity, &p)?;
            self.inflow[j] = new;
            self.entry[j].push(self.time, new / p.velocity);
        }
        Ok(())
    }

    pub fn apply_event(&mut self, event: &Event) -> Result<()> {
        if event.time + self.tie_tolerance() < self.time {
            return Err(Error::InconsistentEvent(format!(
                "event at {} precedes the state time {}",
                event.time, self.time
            )));
        }
        let before: Vec<f64> = (0..self.processors.len()).map(|j| self.slope(j)).collect();
        self.advance_to(event.time.max(self.time));
        let processor = match event.kind {
            EventKind::QueueEmpties => {
                let j = event.location;
                if j == 0 || j >= self.processors.len() || before[j] >= 0.0 {
                    return Err(Error::InconsistentEvent(format!(
                        "queue {} cannot empty with slope {}",
                        j + 1,
                        before.get(j).copied().unwrap_or(0.0)
                    )));
                }
                self.queue[j] = 0.0;
                self.set_inflow(j)?;
                j
            }
            EventKind::WaveHitsQueue => {
                let j = event.location;
                if j == 0 || j >= self.processors.len() {
                    return Err(Error::InconsistentEvent(format!("no queue {}", j + 1)));
                }
                let up = self.processors[j - 1];
                let idx = self.next_arrival[j - 1];
                let knots = self.entry[j - 1].knots();
                if idx >= knots.len() {
                    return Err(Error::InconsistentEvent(format!(
                        "no wave pending on processor {}",
                        j
                    )));
                }
                let s = knots[idx];
                self.next_arrival[j - 1] += 1;
                self.upstream[j] = up.flux(self.entry[j - 1].value(s));
                self.set_inflow(j)?;
                j
            }
            EventKind::ControlJump => {
                let k = event.location;
                if k != self.next_jump {
                    return Err(Error::InconsistentEvent(format!(
                        "control jump {} out of order",
                        k + 1
                    )));
                }
                self.next_jump += 1;
                self.upstream[0] = self.control.levels()[k + 1];
                self.set_inflow(0)?;
                0
            }
        };
        for j in 1..self.processors.len() {
            if self.slope(j) != before[j] || j == processor {
                let point = (self.time, self.queue[j]);
                if self.queue_points[j].last() != Some(&point) {
                    self.queue_points[j].push(point);
                }
            }
        }
        self.log.push(LoggedEvent {
            time: self.time,
            kind: event.kind,
            location: event.location,
            processor,
            inflow_after: self.inflow[processor],
            upstream_after: self.upstream[processor],
        });
        Ok(())
    }

    fn finish(mut self) -> WftSolution {
        let horizon = self.control.horizon();
        self.advance_to(horizon);
        for j in 0..self.processors.len() {
            let point = (horizon, self.queue[j]);
            if self.queue_points[j].last().map(|p| p.0) != Some(horizon) {
                self.queue_points[j].push(point);
            }
        }
        WftSolution {
            processors: self.processors,
            horizon,
            entry: self.entry,
            queue_points: self.queue_points,
            events: self.log,
        }
    }
}

/// Exact solution on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WftSolution {
    processors: Vec<Processor>,
    horizon: f64,
    entry: Vec<StepFn>,
    queue_points: Vec<Vec<(f64, f64)>>,
    events: Vec<LoggedEvent>,
}

pub fn wft_solve(
    chain: &SupplyChain,
    control: &PiecewiseConstantControl,
    event_cap: usize,
) -> Result<WftSolution> {
    let mut state = WftState::new(chain, control)?;
    let mut count = 0;
    while let Some(event) = state.next_event() {
        count += 1;
        if count > event_cap {
            return Err(Error::EventCapExceeded(event_cap));
        }
        state.apply_event(&event)?;
    }
    Ok(state.finish())
}

impl WftSolution {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn processors(&self) -> &[Processor] {
        &self.processors
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    /// Entry profile `E_j(s)` of processor `j`.
    pub fn entry_profile(&self, j: usize) -> &StepFn {
        &self.entry[j]
    }

    /// Breakpoints `(t, q)` of queue `j`'s piecewise-linear trajectory.
    pub fn queue_points(&self, j: usize) -> &[(f64, f64)] {
        &self.queue_points[j]
    }

    /// Density at local position `x` of processor `j` at time `t`.
    pub fn density(&self, j: usize, x: f64, t: f64) -> f64 {
        self.entry[j].value(t - x / self.processors[j].velocity)
    }

    /// Density leaving processor `j` at time `t` (right limit in time).
    pub fn exit_density(&self, j: usize, t: f64) -> f64 {
        self.entry[j].value(t - self.processors[j].transit_time())
    }

    /// Exit flux of processor `j` as a step function of time.
    pub fn exit_flux(&self, j: usize) -> StepFn {
        let p = &self.processors[j];
        let e = &self.entry[j];
        let shift = p.transit_time();
        StepFn::from_samples(
            p.flux(e.values()[0]),
            e.knots()
                .iter()
                .zip(&e.values()[1..])
                .map(|(s, v)| (s + shift, p.flux(*v)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn queue_at(&self, j: usize, t: f64) -> f64 {
        let pts = &self.queue_points[j];
        let i = pts.partition_point(|p| p.0 <= t);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[i - 1].1;
        }
        let (t0, q0) = pts[i - 1];
        let (t1, q1) = pts[i];
        if t1 == t0 {
            q1
        } else {
            q0 + (q1 - q0) * (t - t0) / (t1 - t0)
        }
    }

    /// Mass stored on processor `j` at time `t`.
    pub fn processor_mass(&self, j: usize, t: f64) -> f64 {
        let p = &self.processors[j];
        p.velocity * self.entry[j].integral(t - p.transit_time(), t)
    }

    /// Mass balance terms at the horizon: `(inflow, stored, queued,
    /// outflow)`, all exact.
    pub fn mass_balance(
        &self,
        chain: &SupplyChain,
        control: &PiecewiseConstantControl,
    ) -> crate::upwind::MassBalance {
        let t = self.horizon;
        let p = self.processors.len();
        let initial: f64 = (0..p)
            .map(|j| self.processor_mass(j, 0.0) + chain.initial_queue(j))
            .sum();
        let levels = control.levels();
        let mut edges = vec![0.0];
        edges.extend_from_slice(control.breakpoints());
        edges.push(t);
        let inflow: f64 = levels
            .iter()
            .zip(edges.windows(2))
            .map(|(u, w)| u * (w[1] - w[0]))
            .sum();
        crate::upwind::MassBalance {
            inflow: initial + inflow,
            stored: (0..p).map(|j| self.processor_mass(j, t)).sum(),
            queued: (1..p).map(|j| self.queue_at(j, t)).sum(),
            outflow: self.exit_flux(p - 1).integral(0.0, t),
        }
    }

    /// Event log as delimited text.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("time,kind,location,detail\n");
        for e in &self.events {
            let location = match e.kind {
                EventKind::ControlJump => format!("tau{}", e.location + 1),
                _ => format!("queue{}", e.location + 1),
            };
            out.push_str(&format!(
                "{},{},{},inflow={}\n",
                crate::report::fmt_num(e.time),
                e.kind,
                location,
                crate::report::fmt_num(e.inflow_after)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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
    fn riemann_problems() {
        let p = Processor::new(1.0, 1.0, 200.0);
        let w = solve_rp(0.0, 90.0, &p).unwrap().unwrap();
        assert_eq!(w.speed, 1.0);
        assert_eq!(w.jump(), 90.0);
        assert!(solve_rp(5.0, 5.0, &p).unwrap().is_none());
        assert!(solve_rp(0.0, 300.0, &p).is_err());
    }

    #[test]
    fn arrival_kinematics() {
        let chain = SupplyChain::new(
            vec![
                Processor::new(1.0, 1.0, 200.0),
                Processor::new(1.0, 1.0, 75.0),
            ],
            vec![
                StepFn::new(vec![0.3], vec![10.0, 0.0]).unwrap(),
                StepFn::constant(0.0),
            ],
            vec![0.0],
            Some(0.1),
        )
        .unwrap();
        let u = PiecewiseConstantControl::constant(5.0, 0.0, 0.02).unwrap();
        let state = WftState::new(&chain, &u).unwrap();
        let e = state.next_event().unwrap();
        assert_eq!(e.kind, EventKind::WaveHitsQueue);
        assert!((e.time - 0.7).abs() < 1e-14);
    }

    #[test]
    fn emptying_time_is_solved_exactly() {
        let chain = SupplyChain::new(
            vec![
                Processor::new(1.0, 1.0, 200.0),
                Processor::new(1.0, 1.0, 75.0),
            ],
            vec![StepFn::constant(60.0), StepFn::constant(0.0)],
            vec![0.0, 0.3],
            Some(1.0),
        )
        .unwrap();
        let u = PiecewiseConstantControl::constant(5.0, 60.0, 0.02).unwrap();
        let state = WftState::new(&chain, &u).unwrap();
        assert_eq!(state.slope(1), -15.0);
        let e = state.next_event().unwrap();
        assert_eq!(e.kind, EventKind::QueueEmpties);
        assert!((e.time - 0.02).abs() < 1e-15);
    }

    #[test]
    fn first_event_is_the_first_breakpoint() {
        let u = PiecewiseConstantControl::new(10.0, vec![1.0, 3.0], vec![90.0, 100.0, 125.0], 0.02)
            .unwrap();
        let state = WftState::new(&two_arc(), &u).unwrap();
        let e = state.next_event().unwrap();
        // the 90-front reaches queue 2 at t = 1 too; queue events go first
        assert!((e.time - 1.0).abs() < 1e-14);
        assert_eq!(e.kind, EventKind::WaveHitsQueue);
        let mut s = state.clone();
        s.apply_event(&e).unwrap();
        let e2 = s.next_event().unwrap();
        assert_eq!(e2.kind, EventKind::ControlJump);
        assert!((s.slope(1) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn saturating_front_builds_a_queue() {
        let u = PiecewiseConstantControl::constant(5.0, 100.0, 0.02).unwrap();
        let sol = wft_solve(&two_arc(), &u, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(sol.queue_at(1, 1.0), 0.0);
        assert!((sol.queue_at(1, 3.0) - 50.0).abs() < 1e-12);
        assert_eq!(sol.exit_density(1, 1.99), 0.0);
        assert_eq!(sol.exit_density(1, 2.0), 75.0);
        assert_eq!(sol.density(1, 0.5, 1.6), 75.0);
    }

    #[test]
    fn subcritical_front_passes_through() {
        let u = PiecewiseConstantControl::constant(5.0, 50.0, 0.02).unwrap();
        let sol = wft_solve(&two_arc(), &u, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(sol.queue_at(1, 4.0), 0.0);
        assert_eq!(sol.exit_density(1, 2.5), 50.0);
    }

    #[test]
    fn emptying_switches_the_downstream_inflow() {
        let chain = two_arc();
        let u = PiecewiseConstantControl::new(5.0, vec![0.5], vec![100.0, 50.0], 0.02).unwrap();
        let sol = wft_solve(&chain, &u, DEFAULT_EVENT_CAP).unwrap();
        // queue reaches 12.5 at t = 1.5 and drains at 25 per unit time
        let empties: Vec<_> = sol
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::QueueEmpties)
            .collect();
        assert_eq!(empties.len(), 1);
        assert!((empties[0].time - 2.0).abs() < 1e-12);
        assert_eq!(empties[0].inflow_after, 50.0);
        assert_eq!(sol.exit_density(1, 2.99), 75.0);
        assert_eq!(sol.exit_density(1, 3.0), 50.0);
    }

    #[test]
    fn idle_chain_has_no_events() {
        let u = PiecewiseConstantControl::constant(5.0, 0.0, 0.02).unwrap();
        let sol = wft_solve(&two_arc(), &u, DEFAULT_EVENT_CAP).unwrap();
        assert!(sol.events().is_empty());
        assert_eq!(sol.queue_at(1, 5.0), 0.0);
    }

    #[test]
    fn event_cap_is_enforced() {
        let u = PiecewiseConstantControl::new(5.0, vec![0.5], vec![100.0, 50.0], 0.02).unwrap();
        assert!(matches!(
            wft_solve(&two_arc(), &u, 1),
            Err(Error::EventCapExceeded(1))
        ));
    }

    fn random_case(
        mus: &[f64],
        vels: &[f64],
        levels: &[f64],
        seed: usize,
    ) -> (SupplyChain, PiecewiseConstantControl) {
        let procs: Vec<Processor> = mus
            .iter()
            .zip(vels)
            .map(|(m, v)| Processor::new(1.0, *v, *m))
            .collect();
        let chain = SupplyChain::empty(procs, Some(1.0)).unwrap();
        let dq = 0.01;
        let mut bps: Vec<f64> = (1..levels.len())
            .map(|k| ((seed * 31 + k * 17) % 499 + 1) as f64 * dq)
            .collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let lv: Vec<f64> = levels
            .iter()
            .take(bps.len() + 1)
            .map(|l| l * mus[0])
            .collect();
        (
            chain,
            PiecewiseConstantControl::new(6.0, bps, lv, dq).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn exact_mass_balance_and_queue_shape(
            mus in proptest::collection::vec(20.0f64..150.0, 2..6),
            vels in proptest::collection::vec(0.5f64..2.0, 6),
            levels in proptest::collection::vec(0.0f64..1.0, 1..5),
            seed in 0usize..1000,
        ) {
            let (chain, u) = random_case(&mus, &vels[..mus.len()], &levels, seed);
            let sol = wft_solve(&chain, &u, DEFAULT_EVENT_CAP).unwrap();
            let mb = sol.mass_balance(&chain, &u);
            prop_assert!(mb.error().abs() <= 1e-10 * mb.inflow.max(1.0), "{:?}", mb);
            let total_mu: f64 = mus.iter().sum();
            for j in 1..mus.len() {
                let pts = sol.queue_points(j);
                prop_assert!(pts.iter().all(|p| p.1 >= 0.0));
                prop_assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0));
                for w in pts.windows(2) {
                    if w[1].0 > w[0].0 {
                        let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                        prop_assert!(slope > -total_mu && slope < mus[j - 1].max(mus[0]) + 1e-6);
                    }
                }
            }
            let again = wft_solve(&chain, &u, DEFAULT_EVENT_CAP).unwrap();
            prop_assert_eq!(sol, again);
        }
    }
}
