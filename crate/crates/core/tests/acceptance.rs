//! One line per acceptance criterion. Tolerances are pinned here.

mod common;

use std::time::{Duration, Instant};

use chainflow::analysis::{convergence_order, fd_gradient, noise_floor, schedule_cost, ue_cost};
use chainflow::cli::{run, Command};
use chainflow::optimize::{optimize, DescentTrace};
use chainflow::tangent::{gradient, Backend, InteractionCase, Probe};
use chainflow::upwind::{build_grid, ue_mass_balance, ue_simulate};
use chainflow::wft::{wft_solve, DEFAULT_EVENT_CAP};
use common::{load, random_case, PACKAGED};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{RngAlgorithm, TestRng, TestRunner};

/// Case-a queue cost at the starting point on the `dx = 0.02` grid, frozen
/// from the hand-computed queue triangles and confirmed by both solvers.
const GOLDEN_J1: f64 = 1902.5;
/// Reference values are per-step queue sums on a `0.016` time step.
const REFERENCE_J1: f64 = 117_799.059;
const REFERENCE_FINAL_J: f64 = 69_498.245;
const REFERENCE_STEP: f64 = 0.016;
const REL_TOL: f64 = 0.02;
const GRADIENT_TOL: f64 = 0.05;
const ORDER_RATIO: f64 = 1.8;
const MASS_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-10;
const TRACKING_TOL: f64 = 1e-6;
const RANDOM_CHAINS: usize = 200;

/// The tracking target asks for outflow 100 while the empty two-processor
/// line cannot deliver anything before `t = 2`, so `J >= 0.5 * 100^2 * 2`
/// for every schedule. The criterion is evaluated as stated and reported.
const UNATTAINABLE: [u32; 1] = [4];

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let s = load("case_a", &[]).scenario(None).unwrap();
    let ue = ue_simulate(&s.chain, &s.schedule.control().unwrap(), &s.grid).unwrap();
    let j = ue_cost(&ue, &s.cost).unwrap();
    let wft = wft_solve(&s.chain, &s.schedule.control().unwrap(), DEFAULT_EVENT_CAP).unwrap();
    let exact = chainflow::analysis::wft_cost(&wft, &s.cost).unwrap();
    let elapsed = start.elapsed();
    let reference_scale = j.j1 / REFERENCE_STEP;
    let pass = rel(j.j1, GOLDEN_J1) <= 1e-12
        && rel(exact.j1, GOLDEN_J1) <= 1e-12
        && rel(reference_scale, REFERENCE_J1) <= REL_TOL
        && elapsed < Duration::from_secs(10);
    Verdict {
        id: 1,
        pass,
        detail: format!(
            "J1 = {} (golden {GOLDEN_J1}, exact {}), per-step sum {:.3} vs {REFERENCE_J1} ({:.2}%), {:.2?}",
            j.j1,
            exact.j1,
            reference_scale,
            100.0 * rel(reference_scale, REFERENCE_J1),
            elapsed
        ),
    }
}

fn accepted_costs_nonincreasing(trace: &DescentTrace) -> bool {
    trace
        .iterations
        .windows(2)
        .all(|w| w[1].cost.total() <= w[0].cost.total() || w[1].moved.iter().all(|m| *m == 0))
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let s = load("case_a", &[]).scenario(None).unwrap();
    let trace = optimize(&s.chain, &s.schedule, &s.grid, &s.cost, &s.descent).unwrap();
    let elapsed = start.elapsed();
    let last = trace.last();
    let target = REFERENCE_FINAL_J * GOLDEN_J1 / REFERENCE_J1;
    let j = last.cost.total();
    let pass = (8.5..=9.5).contains(&last.taus[0])
        && (8.6..=9.6).contains(&last.taus[1])
        && accepted_costs_nonincreasing(&trace)
        && rel(j, target) <= REL_TOL
        && elapsed < Duration::from_secs(300);
    Verdict {
        id: 2,
        pass,
        detail: format!(
            "taus = {:?}, J = {j} vs {target:.3} ({:.2}%), {} ({} iterations), {:.2?}",
            last.taus,
            100.0 * rel(j, target),
            trace.stop,
            last.iteration,
            elapsed
        ),
    }
}

fn criterion_3() -> Verdict {
    let s = load("case_b", &[]).scenario(None).unwrap();
    let trace = optimize(&s.chain, &s.schedule, &s.grid, &s.cost, &s.descent).unwrap();
    let last = trace.last();
    let pass = last.steps[0] == 0 && (8.5..=9.6).contains(&last.taus[1]);
    Verdict {
        id: 3,
        pass,
        detail: format!(
            "taus = {:?}, J = {}, {}",
            last.taus,
            last.cost.total(),
            trace.stop
        ),
    }
}

fn criterion_4() -> Verdict {
    let s = load("two_arc_tracking", &[]).scenario(None).unwrap();
    let trace = optimize(&s.chain, &s.schedule, &s.grid, &s.cost, &s.descent).unwrap();
    let last = trace.last();
    let origin = s.schedule.with_steps(vec![0, 0]).unwrap();
    let at_origin = schedule_cost(&s.chain, &origin, &s.grid, &s.cost).unwrap();
    let pass = last.steps.iter().all(|n| *n == 0) && last.cost.total().abs() <= TRACKING_TOL;
    Verdict {
        id: 4,
        pass,
        detail: format!(
            "reached taus = {:?} with J = {} ({}); J(0, 0) = {}; lower bound 10000",
            last.taus,
            last.cost.total(),
            trace.stop,
            at_origin.total()
        ),
    }
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0_f64;
    let mut checked = 0;
    let mut notes = Vec::new();
    for name in ["two_arc_tracking", "case_a"] {
        let s = load(name, &[]).scenario(None).unwrap();
        let g = gradient(
            &s.chain,
            &s.schedule,
            &s.grid,
            &s.cost,
            Backend::Upwind,
            Probe::Forward,
        )
        .unwrap()
        .values();
        let j = schedule_cost(&s.chain, &s.schedule, &s.grid, &s.cost)
            .unwrap()
            .total();
        let floor = noise_floor(s.schedule.quantum(), j, s.schedule.horizon());
        for (k, gk) in g.iter().enumerate() {
            let fd = fd_gradient(&s.chain, &s.schedule, &s.grid, &s.cost, k).unwrap();
            if fd.abs() > floor {
                worst = worst.max(rel(*gk, fd));
                checked += 1;
            }
            notes.push(format!("{name}[{}]: {gk} vs {fd}", k + 1));
        }
    }
    Verdict {
        id: 5,
        pass: checked == 4 && worst <= GRADIENT_TOL,
        detail: format!(
            "{checked} components above the floor, worst {worst:.2e}; {}",
            notes.join(", ")
        ),
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let cfg = load("convergence", &[]);
    let s = cfg.scenario(Some(0)).unwrap();
    let control = s.schedule.control().unwrap();
    let t = cfg.grid.distance_time.unwrap();
    let nu = cfg.grid.nu_list.clone().unwrap();
    let rows = convergence_order(&s.chain, &control, cfg.grid.base_dx, &nu, t).unwrap();
    let elapsed = start.elapsed();
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| w[0].distance / w[1].distance)
        .collect();
    let pass = nu == [0, 1, 2, 3]
        && ratios.iter().all(|r| *r >= ORDER_RATIO)
        && elapsed < Duration::from_secs(120);
    let distances: Vec<f64> = rows.iter().map(|r| r.distance).collect();
    Verdict {
        id: 6,
        pass,
        detail: format!("distances {distances:?}, ratios {ratios:.3?}, {elapsed:.2?}"),
    }
}

fn criterion_7() -> Verdict {
    let mut worst_wft = 0.0_f64;
    for name in PACKAGED {
        let s = load(name, &[]).scenario(None).unwrap();
        let control = s.schedule.control().unwrap();
        let sol = wft_solve(&s.chain, &control, DEFAULT_EVENT_CAP).unwrap();
        let b = sol.mass_balance(&s.chain, &control);
        worst_wft = worst_wft.max(b.error().abs() / b.inflow.max(1.0));
    }
    let cfg = load("convergence", &[]);
    let s = cfg.scenario(Some(0)).unwrap();
    let control = s.schedule.control().unwrap();
    let mut ks = Vec::new();
    for nu in cfg.grid.nu_list.clone().unwrap() {
        let grid = build_grid(&s.chain, cfg.grid.base_dx, nu, cfg.control.horizon).unwrap();
        let traj = ue_simulate(&s.chain, &control, &grid).unwrap();
        let b = ue_mass_balance(&s.chain, &traj).unwrap();
        ks.push(b.error().abs() / (grid.dx * cfg.control.horizon));
    }
    let monotone = ks.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    Verdict {
        id: 7,
        pass: worst_wft <= MASS_TOL && monotone,
        detail: format!("WFT worst relative error {worst_wft:.2e}; UE K per level {ks:.3?}"),
    }
}

fn criterion_8() -> Verdict {
    let mut runner = TestRunner::new_with_rng(
        Default::default(),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let mut counts = [0usize; 4];
    let mut worst = 0.0_f64;
    let mut cancelled = 0usize;
    let mut failures = Vec::new();
    let strategy = random_case();
    for _ in 0..RANDOM_CHAINS {
        let case = strategy.new_tree(&mut runner).unwrap().current();
        let grid = build_grid(&case.chain, case.base_dx, 0, case.schedule.horizon()).unwrap();
        let cost = chainflow::model::CostSpec::queues_only(1.0, case.schedule.horizon());
        for backend in [Backend::Upwind, Backend::FrontTracking] {
            let report = match gradient(
                &case.chain,
                &case.schedule,
                &grid,
                &cost,
                backend,
                Probe::Symmetric,
            ) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{backend:?}: {e}"));
                    continue;
                }
            };
            for r in &report.records {
                counts[match r.case {
                    InteractionCase::A11 => 0,
                    InteractionCase::A12 => 1,
                    InteractionCase::A2 => 2,
                    InteractionCase::B => 3,
                }] += 1;
                let scale = r.before.max(f64::MIN_POSITIVE);
                if r.cancellation {
                    cancelled += 1;
                    if r.after > r.before * (1.0 + NORM_TOL) {
                        failures.push(format!("{r:?}"));
                    }
                } else {
                    let e = (r.after - r.before).abs() / scale;
                    worst = worst.max(if r.before == 0.0 && r.after == 0.0 {
                        0.0
                    } else {
                        e
                    });
                    if e > NORM_TOL && !(r.before == 0.0 && r.after == 0.0) {
                        failures.push(format!("{r:?}"));
                    }
                }
            }
        }
    }
    let all_cases = counts.iter().all(|c| *c > 0);
    Verdict {
        id: 8,
        pass: failures.is_empty() && all_cases,
        detail: format!(
            "{RANDOM_CHAINS} random chains; events a.1.1/a.1.2/a.2/b = {counts:?}, {cancelled} with cancellation, worst relative change {worst:.2e}, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    }
}

fn criterion_9() -> Verdict {
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for name in PACKAGED {
        let cfg = load(name, &[]);
        for command in [
            Command::Simulate,
            Command::Optimize,
            Command::Compare,
            Command::Gradcheck,
        ] {
            if command == Command::Compare && cfg.grid.nu_list.is_none() {
                continue;
            }
            let a = run(command, &cfg).unwrap();
            let b = run(command, &load(name, &[])).unwrap();
            runs += 1;
            if a != b {
                mismatches.push(format!("{name} {command}"));
            }
        }
    }
    Verdict {
        id: 9,
        pass: mismatches.is_empty() && runs > 0,
        detail: format!("{runs} subcommand runs repeated, mismatches {mismatches:?}"),
    }
}

fn main() {
    let verdicts = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    for v in &verdicts {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {}: {}", v.id, v.detail);
    }
    let unexpected: Vec<u32> = verdicts
        .iter()
        .filter(|v| !v.pass && !UNATTAINABLE.contains(&v.id))
        .map(|v| v.id)
        .collect();
    if !unexpected.is_empty() {
        eprintln!("failed criteria {unexpected:?}");
        std::process::exit(1);
    }
}
