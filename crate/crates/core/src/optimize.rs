//! Quantized steepest descent over the switching times.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{schedule_cost, CostBreakdown};
use crate::error::{Error, Result};
use crate::model::{CostSpec, SupplyChain, SwitchingSchedule};
use crate::report::{fmt_num, Table};
use crate::tangent::{gradient, Backend, Probe};
use crate::upwind::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepPolicy {
    /// Always take the step scaled by the base coefficient.
    Fixed,
    /// Halve the coefficient until `J` decreases or the step vanishes.
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    /// Base step coefficient `h` (time per unit of `dJ / d tau`).
    pub h: f64,
    /// Iterations with unchanged `J` before stopping.
    pub patience: usize,
    pub max_iterations: usize,
    pub policy: StepPolicy,
    /// Halvings tried per iteration under backtracking.
    pub max_halvings: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            h: 0.02,
            patience: 5,
            max_iterations: 200,
            policy: StepPolicy::Backtracking,
            max_halvings: 40,
        }
    }
}

impl DescentConfig {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!(
                "descent step h = {} must be positive",
                self.h
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("descent patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    /// `J` unchanged for `patience` iterations.
    Converged,
    MaxIterations,
    /// Every switching time sits on `0` or `T`.
    Pinned,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Pinned => "pinned",
        })
    }
}

/// State after iteration `iteration` (0 is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub steps: Vec<i64>,
    pub taus: Vec<f64>,
    pub cost: CostBreakdown,
    pub gradient: Vec<f64>,
    /// Quantized move that produced this state, in lattice steps.
    pub moved: Vec<i64>,
    /// Step coefficient that produced this state.
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl DescentTrace {
    pub fn last(&self) -> &IterationRecord {
        self.iterations
            .last()
            .expect("a trace holds the starting point")
    }

    /// One row per iteration: `iteration, tau_1.., J1, J2, J, step_1..`.
    pub fn to_table(&self) -> Table {
        let d = self.iterations[0].taus.len();
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=d).map(|k| format!("tau{k}")));
        header.extend(["j1", "j2", "j"].map(String::from));
        header.extend((1..=d).map(|k| format!("step{k}")));
        header.push("h".into());
        let mut t = Table::new(header);
        for r in &self.iterations {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.taus.iter().map(|x| fmt_num(*x)));
            row.extend([r.cost.j1, r.cost.j2, r.cost.total()].map(fmt_num));
            let quantum = self.quantum();
            row.extend(r.moved.iter().map(|m| fmt_num(*m as f64 * quantum)));
            row.push(fmt_num(r.h));
            t.push(row);
        }
        t
    }

    fn quantum(&self) -> f64 {
        self.iterations
            .iter()
            .flat_map(|r| r.steps.iter().zip(&r.taus))
            .find(|(s, _)| **s != 0)
            .map(|(s, t)| t / *s as f64)
            .unwrap_or(0.0)
    }
}

/// `tau' = tau - trunc(h g / dt_q) dt_q`, clamped to `[0, T]` and kept
/// nondecreasing. Works on lattice indices.
pub fn descent_step(steps: &[i64], gradient: &[f64], h: f64, quantum: f64, last: i64) -> Vec<i64> {
    let mut out = Vec::with_capacity(steps.len());
    let mut floor = 0;
    for (n, g) in steps.iter().zip(gradient) {
        let moved = (-h * g / quantum).trunc();
        let moved = if moved.is_finite() {
            moved.clamp(-(last as f64), last as f64) as i64
        } else {
            0
        };
        let next = (n + moved).clamp(0, last).max(floor);
        out.push(next);
        floor = next;
    }
    out
}

fn unchanged(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs())
}

pub fn optimize(
    chain: &SupplyChain,
    start: &SwitchingSchedule,
    grid: &Grid,
    cost: &CostSpec,
    config: &DescentConfig,
) -> Result<DescentTrace> {
    config.validate()?;
    let quantum = start.quantum();
    let last = start.horizon_steps();
    let evaluate = |s: &SwitchingSchedule| schedule_cost(chain, s, grid, cost);
    let grad = |s: &SwitchingSchedule| -> Result<Vec<f64>> {
        Ok(gradient(chain, s, grid, cost, Backend::Upwind, Probe::Forward)?.values())
    };
    let mut current = start.clone();
    let mut j = evaluate(&current)?;
    let mut g = grad(&current)?;
    let mut iterations = vec![IterationRecord {
        iteration: 0,
        steps: current.steps().to_vec(),
        taus: current.taus(),
        cost: j,
        gradient: g.clone(),
        moved: vec![0; current.len()],
        h: 0.0,
    }];
    let mut still = 0;
    let stop = loop {
        if !current.is_empty() && current.steps().iter().all(|n| *n == 0 || *n == last) {
            break StopReason::Pinned;
        }
        if iterations.len() > config.max_iterations {
            break StopReason::MaxIterations;
        }
        let mut h = config.h;
        let mut accepted: Option<(SwitchingSchedule, CostBreakdown)> = None;
        for _ in 0..=config.max_halvings {
            let cand = descent_step(current.steps(), &g, h, quantum, last);
            if cand == current.steps() {
                break;
            }
            let s = current.with_steps(cand)?;
            let jc = evaluate(&s)?;
            if config.policy == StepPolicy::Fixed || jc.total() < j.total() {
                accepted = Some((s, jc));
                break;
            }
            h *= 0.5;
        }
        let moved: Vec<i64>;
        let previous = j.total();
        match accepted {
            Some((s, jc)) => {
                moved = s
                    .steps()
                    .iter()
                    .zip(current.steps())
                    .map(|(a, b)| a - b)
                    .collect();
                current = s;
                j = jc;
                g = grad(&current)?;
            }
            None => {
                moved = vec![0; current.len()];
                h = 0.0;
            }
        }
        iterations.push(IterationRecord {
            iteration: iterations.len(),
            steps: current.steps().to_vec(),
            taus: current.taus(),
            cost: j,
            gradient: g.clone(),
            moved,
            h,
        });
        if unchanged(previous, j.total()) {
            still += 1;
            if still >= config.patience {
                break StopReason::Converged;
            }
        } else {
            still = 0;
        }
    };
    Ok(DescentTrace { iterations, stop })
}
