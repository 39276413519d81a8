mod common;

use speedychain::harness::{run_scenario, Scenario};
use speedychain::metrics::MetricKind;

/// Timings bracket local work only, so link latency must not move them.
#[test]
fn latency_does_not_leak_into_timings() {
    let base = common::small("hygiene", 3);
    let fast = run_scenario(&Scenario {
        link: common::latency_link(0.0),
        ..base.clone()
    })
    .unwrap();
    let slow = run_scenario(&Scenario {
        link: common::latency_link(80.0),
        ..base
    })
    .unwrap();
    assert!(fast.passed && slow.passed);
    assert!(slow.simulation.end_time > fast.simulation.end_time);
    for kind in MetricKind::ALL {
        let (a, b) = (fast.summary.mean_us(kind).unwrap(), slow.summary.mean_us(kind).unwrap());
        assert!((a - b).abs() <= 0.10 * a, "{kind}: {a} vs {b}");
    }
}
