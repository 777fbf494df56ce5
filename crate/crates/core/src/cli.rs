//! Subcommand drivers. Each one validates the configuration, computes every
//! output in memory and only then hands back the files to write, so a failed
//! run never leaves partial output behind.
//!
//! Outputs (all comma-separated with a header row):
//!
//! | subcommand  | files                                                        |
//! |-------------|--------------------------------------------------------------|
//! | `simulate`  | `cost.csv`, `queue_<j>.csv`, `outflow.csv`, `density.csv`    |
//! | `optimize`  | `trace.csv`, `summary.csv`                                   |
//! | `compare`   | `convergence.csv`, `events.csv`                              |
//! | `gradcheck` | `gradcheck.csv`, `gradient.csv`                              |
//!
//! `density.csv` is written when `output.densities = true` and `events.csv`
//! unless `output.events = false`.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::analysis::{
    convergence_order, distance_study, fd_gradient, noise_floor, ue_cost, CostBreakdown,
};
use crate::config::{RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::optimize::optimize;
use crate::report::{fmt_num, Table};
use crate::tangent::{gradient, Backend};
use crate::upwind::ue_simulate;
use crate::wft::{wft_solve, DEFAULT_EVENT_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Simulate,
    Optimize,
    Compare,
    Gradcheck,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::Compare => "compare",
            Command::Gradcheck => "gradcheck",
        })
    }
}

/// Result of a subcommand: files to write, a short summary for stdout and
/// the process exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub stdout: String,
    pub warnings: Vec<String>,
    pub exit_code: i32,
}

impl Outcome {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| annotate(e, dir))?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| annotate(e, &path))?;
        }
        Ok(())
    }
}

fn annotate(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub fn run(command: Command, config: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Simulate => cmd_simulate(config),
        Command::Optimize => cmd_optimize(config),
        Command::Compare => cmd_compare(config),
        Command::Gradcheck => cmd_gradcheck(config),
    }
}

fn cost_table(c: &CostBreakdown) -> Table {
    let mut t = Table::new(["j1", "j2", "j"]);
    t.push_nums(&[c.j1, c.j2, c.total()]);
    t
}

fn cost_line(c: &CostBreakdown) -> String {
    format!(
        "J1 = {}, J2 = {}, J = {}\n",
        fmt_num(c.j1),
        fmt_num(c.j2),
        fmt_num(c.total())
    )
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    let Scenario {
        chain,
        schedule,
        cost,
        grid,
        warnings,
        ..
    } = config.scenario(None)?;
    let traj = ue_simulate(&chain, &schedule.control()?, &grid)?;
    let breakdown = ue_cost(&traj, &cost)?;
    let mut files = vec![("cost.csv".to_string(), cost_table(&breakdown).to_csv())];
    for j in 1..chain.len() {
        let mut t = Table::new(["t", "value"]);
        for (n, q) in traj.processors[j].queue[..=grid.steps[j]]
            .iter()
            .enumerate()
        {
            t.push_nums(&[grid.time(j, n), *q]);
        }
        files.push((format!("queue_{}.csv", j + 1), t.to_csv()));
    }
    let last = chain.len() - 1;
    let mut t = Table::new(["t", "flux"]);
    for (n, f) in traj.outflow_trace().iter().enumerate() {
        t.push_nums(&[grid.time(last, n), *f]);
    }
    files.push(("outflow.csv".into(), t.to_csv()));
    if config.output.densities {
        let mut t = Table::new(["processor", "x", "rho"]);
        for j in 0..chain.len() {
            let x0 = chain.start(j);
            for (i, rho) in traj.density_row(j, grid.steps[j]).iter().enumerate() {
                let x = x0 + (i as f64 + 0.5) * grid.dx;
                t.push(vec![(j + 1).to_string(), fmt_num(x), fmt_num(*rho)]);
            }
        }
        files.push(("density.csv".into(), t.to_csv()));
    }
    Ok(Outcome {
        files,
        stdout: cost_line(&breakdown),
        warnings,
        exit_code: 0,
    })
}

pub fn cmd_optimize(config: &RunConfig) -> Result<Outcome> {
    let s = config.scenario(None)?;
    let trace = optimize(&s.chain, &s.schedule, &s.grid, &s.cost, &s.descent)?;
    let last = trace.last();
    let mut summary = Table::new(["key", "value"]);
    summary.push(vec!["stop".into(), trace.stop.to_string()]);
    summary.push(vec!["iterations".into(), last.iteration.to_string()]);
    for (k, tau) in last.taus.iter().enumerate() {
        summary.push(vec![format!("tau{}", k + 1), fmt_num(*tau)]);
    }
    summary.push(vec!["j1".into(), fmt_num(last.cost.j1)]);
    summary.push(vec!["j2".into(), fmt_num(last.cost.j2)]);
    summary.push(vec!["j".into(), fmt_num(last.cost.total())]);
    let taus: Vec<String> = last.taus.iter().map(|t| fmt_num(*t)).collect();
    let stdout = format!(
        "{} after {} iterations at taus = ({}), J = {}\n",
        trace.stop,
        last.iteration,
        taus.join(", "),
        fmt_num(last.cost.total())
    );
    Ok(Outcome {
        files: vec![
            ("trace.csv".into(), trace.to_table().to_csv()),
            ("summary.csv".into(), summary.to_csv()),
        ],
        stdout,
        warnings: s.warnings,
        exit_code: 0,
    })
}

pub fn cmd_compare(config: &RunConfig) -> Result<Outcome> {
    let nu_list = config
        .grid
        .nu_list
        .clone()
        .ok_or_else(|| Error::Config("compare needs grid.nu_list".into()))?;
    if nu_list.is_empty() {
        return Err(Error::Config("grid.nu_list is empty".into()));
    }
    let s = config.scenario(nu_list.iter().copied().min())?;
    let horizon = config.control.horizon;
    let t = config.grid.distance_time.unwrap_or(horizon);
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let control = s.schedule.control()?;
    let exact = wft_solve(&s.chain, &control, DEFAULT_EVENT_CAP)?;
    let rows = if nu_list.len() >= 3 {
        convergence_order(&s.chain, &control, config.grid.base_dx, &nu_list, t)?
    } else {
        distance_study(&s.chain, &control, &exact, config.grid.base_dx, &nu_list, t)?
    };
    let mut table = Table::new(["nu", "dx", "distance", "order"]);
    let mut stdout = String::new();
    for r in &rows {
        let order = r.order.map(fmt_num).unwrap_or_default();
        stdout.push_str(&format!(
            "nu = {}: distance {}{}\n",
            r.nu,
            fmt_num(r.distance),
            if order.is_empty() {
                String::new()
            } else {
                format!(", order {order}")
            }
        ));
        table.push(vec![
            r.nu.to_string(),
            fmt_num(r.dx),
            fmt_num(r.distance),
            order,
        ]);
    }
    let mut files = vec![("convergence.csv".to_string(), table.to_csv())];
    if config.output.events {
        files.push(("events.csv".into(), exact.events_csv()));
    }
    Ok(Outcome {
        files,
        stdout,
        warnings: s.warnings,
        exit_code: 0,
    })
}

/// Outcome of comparing one gradient component with its finite difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckStatus {
    Ok,
    Fail,
    /// Both values below the noise floor.
    Stationary,
    /// The switching time cannot be moved one step both ways.
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Ok => "ok",
            CheckStatus::Fail => "fail",
            CheckStatus::Stationary => "stationary",
            CheckStatus::Skipped => "skipped",
        })
    }
}

/// Relative error of `tangent` against `fd`, measured against the larger
/// of `|fd|` and the noise floor.
pub fn check_component(tangent: f64, fd: f64, floor: f64, tolerance: f64) -> (f64, CheckStatus) {
    if tangent.abs() <= floor && fd.abs() <= floor {
        return (
            (tangent - fd).abs() / floor.max(f64::MIN_POSITIVE),
            CheckStatus::Stationary,
        );
    }
    let rel = (tangent - fd).abs() / fd.abs().max(floor);
    let status = if rel <= tolerance {
        CheckStatus::Ok
    } else {
        CheckStatus::Fail
    };
    (rel, status)
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<Outcome> {
    let s = config.scenario(None)?;
    let tolerance = config.gradcheck.tolerance;
    if !(tolerance > 0.0) {
        return Err(Error::Config("gradcheck.tolerance must be positive".into()));
    }
    let report = gradient(
        &s.chain,
        &s.schedule,
        &s.grid,
        &s.cost,
        Backend::Upwind,
        config.probe(),
    )?;
    let j = crate::analysis::schedule_cost(&s.chain, &s.schedule, &s.grid, &s.cost)?.total();
    let floor = noise_floor(s.schedule.quantum(), j, s.schedule.horizon());
    let mut table = Table::new(["k", "tau", "tangent", "fd", "rel_error", "status"]);
    let mut failures = 0;
    for (k, c) in report.components.iter().enumerate() {
        let mut row = vec![(k + 1).to_string(), fmt_num(c.tau), fmt_num(c.g)];
        match fd_gradient(&s.chain, &s.schedule, &s.grid, &s.cost, k) {
            Ok(fd) => {
                let (rel, status) = check_component(c.g, fd, floor, tolerance);
                if status == CheckStatus::Fail {
                    failures += 1;
                }
                row.extend([fmt_num(fd), fmt_num(rel), status.to_string()]);
            }
            Err(Error::InvalidShift { .. }) => {
                row.extend([
                    String::new(),
                    String::new(),
                    CheckStatus::Skipped.to_string(),
                ]);
            }
            Err(e) => return Err(e),
        }
        table.push(row);
    }
    let stdout = format!(
        "{} components, {} failed (tolerance {}, noise floor {})\n",
        report.components.len(),
        failures,
        fmt_num(tolerance),
        fmt_num(floor)
    );
    Ok(Outcome {
        files: vec![
            ("gradcheck.csv".into(), table.to_csv()),
            (
                "gradient.csv".into(),
                report.to_table(s.chain.len()).to_csv(),
            ),
        ],
        stdout,
        warnings: s.warnings,
        exit_code: if failures > 0 { 1 } else { 0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ARC: &str = r#"
[chain]
max_rate = [200, 75]

[control]
horizon = 20.0
taus = [5.0, 12.0]
levels = [100, 80, 50]

[cost]
alpha1 = 0.5
alpha2 = 0.5
psi = { knots = [10.0], values = [100, 75] }

[grid]
base_dx = 0.02
"#;

    fn cfg(overrides: &[&str]) -> RunConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::parse(TWO_ARC, &o).unwrap()
    }

    #[test]
    fn simulate_reaches_capacity() {
        let out = cmd_simulate(&cfg(&[])).unwrap();
        let outflow = out.file("outflow.csv").unwrap();
        let at = |t: &str| {
            outflow
                .lines()
                .find(|l| l.starts_with(&format!("{t},")))
                .and_then(|l| l.split(',').nth(1))
                .unwrap()
                .to_string()
        };
        assert_eq!(at("0"), "0");
        assert_eq!(at("3"), "75");
        assert!(out.file("queue_2.csv").is_some());
        assert!(out.file("density.csv").is_none());
    }

    #[test]
    fn zero_inflow_gives_zero_cost() {
        let out = cmd_simulate(&cfg(&[
            "control.taus=[]",
            "control.levels=[0]",
            "cost.alpha2=0",
            "output.densities=true",
        ]))
        .unwrap();
        assert_eq!(out.file("cost.csv").unwrap(), "j1,j2,j\n0,0,0\n");
        let all_zero = |name: &str| {
            out.file(name)
                .unwrap()
                .lines()
                .skip(1)
                .all(|l| l.rsplit(',').next() == Some("0"))
        };
        assert!(all_zero("outflow.csv"));
        assert!(all_zero("queue_2.csv"));
        assert!(all_zero("density.csv"));
    }

    #[test]
    fn off_grid_tau_warns_and_runs() {
        let out = cmd_simulate(&cfg(&["control.taus=[5.007, 12.0]"])).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn gradcheck_statuses() {
        let out = cmd_gradcheck(&cfg(&["control.taus=[]", "control.levels=[100]"])).unwrap();
        assert_eq!(out.file("gradcheck.csv").unwrap().lines().count(), 1);
        assert_eq!(out.exit_code, 0);
        let out = cmd_gradcheck(&cfg(&["control.taus=[0.0, 12.0]"])).unwrap();
        let rows: Vec<&str> = out.file("gradcheck.csv").unwrap().lines().collect();
        assert!(rows[1].ends_with(",skipped"), "{}", rows[1]);
    }

    #[test]
    fn status_classification() {
        assert_eq!(check_component(1.0, 1.02, 0.1, 0.05).1, CheckStatus::Ok);
        assert_eq!(check_component(1.0, 1.2, 0.1, 0.05).1, CheckStatus::Fail);
        assert_eq!(
            check_component(0.01, -0.02, 0.1, 0.05).1,
            CheckStatus::Stationary
        );
    }

    #[test]
    fn compare_single_level_is_a_plain_report() {
        let out = cmd_compare(&cfg(&[
            "grid.nu_list=[0]",
            "control.horizon=4.0",
            "control.taus=[1.0, 2.0]",
        ]))
        .unwrap();
        let csv = out.file("convergence.csv").unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
        assert!(cmd_compare(&cfg(&[])).is_err());
    }
}
