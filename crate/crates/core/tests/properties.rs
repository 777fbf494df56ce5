mod common;

use chainflow::model::CostSpec;
use chainflow::tangent::{gradient, Backend, Probe};
use chainflow::upwind::build_grid;
use common::random_case;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every queue interaction preserves `Σ |xi| |Δρ| + |η|`; it can only
    /// drop when a queue shift increment cancels part of the existing one.
    #[test]
    fn tangent_norm_is_conserved(case in random_case(), forward in any::<bool>()) {
        let grid = build_grid(&case.chain, case.base_dx, 0, case.schedule.horizon()).unwrap();
        let cost = CostSpec::queues_only(1.0, case.schedule.horizon());
        let probe = if forward { Probe::Forward } else { Probe::Backward };
        for backend in [Backend::Upwind, Backend::FrontTracking] {
            let report = gradient(&case.chain, &case.schedule, &grid, &cost, backend, probe).unwrap();
            for r in &report.records {
                if r.cancellation {
                    prop_assert!(r.after <= r.before * (1.0 + 1e-10), "{:?}", r);
                } else {
                    prop_assert!((r.after - r.before).abs() <= 1e-10 * r.before, "{:?}", r);
                }
            }
        }
    }

    #[test]
    fn gradients_have_one_finite_component_per_switch(case in random_case()) {
        let grid = build_grid(&case.chain, case.base_dx, 0, case.schedule.horizon()).unwrap();
        let cost = CostSpec::queues_only(1.0, case.schedule.horizon());
        for backend in [Backend::Upwind, Backend::FrontTracking] {
            let g = gradient(&case.chain, &case.schedule, &grid, &cost, backend, Probe::Symmetric)
                .unwrap()
                .values();
            prop_assert_eq!(g.len(), case.schedule.len());
            prop_assert!(g.iter().all(|x| x.is_finite()));
        }
    }
}
