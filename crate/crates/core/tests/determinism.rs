//! Parallel and sequential execution produce bitwise identical results.
//!
//! A single test, because the default execution policy is process-global.

use slfv_core::chain::run;
use slfv_core::diagnostics::suite::{run_suite, SuiteConfig};
use slfv_core::diagnostics::{martingale_drift, total_mass, Method, Snapshot};
use slfv_core::exec::{self, Execution};
use slfv_core::geometry::{union_volume_with, VolumeMethod};
use slfv_core::rng::{substream, Purpose};
use slfv_core::Params;

fn estimates() -> Vec<u64> {
    let t = run(Params::new(2, 1.0, 0.5, 1.0, 1.0, 12), 80, &mut []).unwrap();
    let snap = Snapshot::new(t.state());
    let mut rng = substream(12, Purpose::Estimator, 0);
    let method = Method::MonteCarlo { samples: 30_000 };
    let mut out = vec![
        total_mass(&snap, method, &mut rng).unwrap().value,
        martingale_drift(&snap, method, &mut rng).unwrap().value,
    ];
    let suite = run_suite(&SuiteConfig::new(Params::new(1, 1.0, 0.5, 1.0, 1.0, 0), vec![1, 2, 3], 60)).unwrap();
    out.extend(suite.rows.iter().map(|r| r.slack));
    out.into_iter().map(f64::to_bits).collect()
}

#[test]
fn execution_policy_does_not_change_results() {
    let t = run(Params::new(3, 1.0, 0.5, 1.0, 1.0, 4), 60, &mut []).unwrap();
    let u = t.state().cluster().to_union();
    let vol = |e| {
        let mut rng = substream(4, Purpose::Estimator, 0);
        union_volume_with(&u, VolumeMethod::MonteCarlo { samples: 50_000 }, &mut rng, e).unwrap()
    };
    assert_eq!(vol(Execution::Parallel), vol(Execution::Sequential));

    exec::set_default_execution(Execution::Parallel);
    let par = estimates();
    exec::set_default_execution(Execution::Sequential);
    let seq = estimates();
    exec::set_default_execution(Execution::Parallel);
    assert_eq!(par, seq);
}
