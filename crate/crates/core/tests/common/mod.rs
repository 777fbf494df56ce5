#![allow(dead_code)]

use std::path::PathBuf;

use chainflow::config::RunConfig;
use chainflow::func::StepFn;
use chainflow::model::{Processor, SupplyChain, SwitchingSchedule};
use proptest::prelude::*;

pub const PACKAGED: [&str; 4] = ["case_a", "case_b", "two_arc_tracking", "convergence"];

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.cfg"))
}

pub fn load(name: &str, overrides: &[&str]) -> RunConfig {
    let text = std::fs::read_to_string(config_path(name)).unwrap();
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::parse(&text, &o).unwrap()
}

/// Random admissible chain with 2 to 5 unit-length processors, one density
/// jump per processor and random initial queues, together with a quantized
/// schedule of one to three switching times on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub chain: SupplyChain,
    pub schedule: SwitchingSchedule,
    pub base_dx: f64,
}

pub const RANDOM_HORIZON: f64 = 4.0;
pub const RANDOM_DX: f64 = 0.05;

fn processor() -> impl Strategy<Value = (Processor, f64, f64, f64)> {
    (
        4u32..=40,
        prop_oneof![Just(1.0), Just(2.0)],
        0.0f64..=1.0,
        0.0f64..=1.0,
        0u32..=20,
    )
        .prop_map(|(mu, v, a, b, q)| {
            let mu = 5.0 * f64::from(mu);
            let cap = mu / v;
            let round = |x: f64| (x * cap).floor();
            (Processor::new(1.0, v, mu), round(a), round(b), f64::from(q))
        })
}

pub fn random_case() -> impl Strategy<Value = RandomCase> {
    (
        prop::collection::vec(processor(), 2..=5),
        prop::collection::vec((1i64..79, 0.0f64..=1.0), 1..=3),
        0.0f64..=1.0,
    )
        .prop_map(|(procs, switches, first)| {
            let processors: Vec<Processor> = procs.iter().map(|p| p.0).collect();
            let density = procs
                .iter()
                .map(|p| StepFn::new(vec![0.5], vec![p.1, p.2]).unwrap())
                .collect();
            let queues = procs.iter().skip(1).map(|p| p.3).collect();
            let chain = SupplyChain::new(processors, density, queues, Some(1.0)).unwrap();
            let mu1 = chain.processor(0).max_rate;
            let v1 = chain.processor(0).velocity;
            let quantum = RANDOM_DX / v1;
            let last = (RANDOM_HORIZON / quantum).round() as i64;
            let mut steps: Vec<i64> = switches.iter().map(|s| (s.0 * last / 80).max(1)).collect();
            steps.sort_unstable();
            steps.dedup();
            let level = |x: f64| 5.0 * (x * mu1 / 5.0).floor();
            let mut levels = vec![level(first)];
            levels.extend(switches.iter().take(steps.len()).map(|s| level(s.1)));
            let schedule = SwitchingSchedule::new(RANDOM_HORIZON, quantum, steps, levels).unwrap();
            RandomCase {
                chain,
                schedule,
                base_dx: RANDOM_DX,
            }
        })
}
