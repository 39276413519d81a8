//! One line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use speedychain::harness::{run_attack, run_grid, run_scenario, write_run, attack_base, AttackKind, Check, Scenario};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_checks(checks: &[Check], extra: String) -> Outcome {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    Outcome {
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            extra
        } else {
            format!("{extra}; failed: {}", failed.join("; "))
        },
    }
}

fn ledger_integrity() -> Outcome {
    let t = Instant::now();
    let sweep = common::tamper_sweep(&[0, 1, 2, 5, 10, 20]);
    let took = t.elapsed();
    Outcome {
        passed: sweep.false_negatives.is_empty() && took < Duration::from_secs(10),
        detail: format!(
            "{} mutations, {} false negatives, {:.2} s",
            sweep.mutations,
            sweep.false_negatives.len(),
            took.as_secs_f64()
        ),
    }
}

fn decoupling() -> Outcome {
    from_checks(&common::decoupling(1_000), "1000 appends, header hash fixed".into())
}

fn grid() -> (Outcome, Outcome) {
    let base = Scenario {
        name: "acceptance".into(),
        raw_metrics: false,
        ..Scenario::default()
    };
    let t = Instant::now();
    let g = match run_grid(&base, None, |o| {
        eprintln!(
            "  cell {}x{} {}",
            o.scenario.blockchain_size,
            o.scenario.tx_per_vehicle,
            if o.passed { "ok" } else { "FAIL" }
        )
    }) {
        Ok(g) => g,
        Err(e) => {
            let o = || Outcome {
                passed: false,
                detail: e.to_string(),
            };
            return (o(), o());
        }
    };
    let took = t.elapsed();
    let cells = g.check("grid_cells_passed").cloned().into_iter().collect::<Vec<_>>();
    let mut c3 = from_checks(
        &cells,
        format!("{} cells, 15 RSIs, {:.0} s", g.cells.len(), took.as_secs_f64()),
    );
    if took >= Duration::from_secs(600) {
        c3.passed = false;
        c3.detail.push_str(" (over the 10 min budget)");
    }
    let shape: Vec<Check> = g.checks.iter().filter(|c| c.name != "grid_cells_passed").cloned().collect();
    let c4 = from_checks(&shape, format!("{} shape checks", shape.len()));
    (c3, c4)
}

fn attacks() -> Outcome {
    let mut checks = Vec::new();
    for kind in AttackKind::ALL {
        for seed in 1..=5 {
            let s = Scenario { seed, ..attack_base() };
            match run_attack(kind, &s) {
                Ok(o) => checks.push(Check::new(
                    &format!("{}_seed{seed}", kind.as_str()),
                    o.passed,
                    o.failures().map(|c| c.name.clone()).collect::<Vec<_>>().join(","),
                )),
                Err(e) => checks.push(Check::new(kind.as_str(), false, e.to_string())),
            }
        }
    }
    from_checks(&checks, format!("{} runs", checks.len()))
}

fn kui() -> Outcome {
    let checks: Vec<Check> = (1..=3).flat_map(common::kui_rotation).collect();
    from_checks(&checks, format!("{} checks over 3 seeds", checks.len()))
}

fn determinism() -> Outcome {
    let mut s = common::small("acceptance-determinism", 7);
    s.link.drop_probability = 0.02;
    let files = ["metrics.csv", "summary.csv", "report.json"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().expect("tempdir");
        let written = run_scenario(&s).map_err(|e| e.to_string()).and_then(|o| {
            write_run(dir.path(), &o).map_err(|e| e.to_string())?;
            files
                .iter()
                .map(|f| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()
        });
        runs.push(written);
    }
    match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => {
            let differ: Vec<&str> = files.iter().zip(a.iter().zip(b)).filter(|(_, (x, y))| x != y).map(|(f, _)| *f).collect();
            Outcome {
                passed: differ.is_empty(),
                detail: format!("{} files compared, differing: {differ:?}", files.len()),
            }
        }
        (Err(e), _) | (_, Err(e)) => Outcome {
            passed: false,
            detail: e.clone(),
        },
    }
}

fn partition() -> Outcome {
    let mut checks = Vec::new();
    for (seed, k) in [(1, 1), (2, 6), (3, 25)] {
        checks.extend(common::partition_flush(seed, k));
        checks.extend(common::mule_forward(seed, k));
    }
    from_checks(&checks, format!("{} checks, flush and mule", checks.len()))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "ledger integrity", ledger_integrity()),
        (2, "header/ledger decoupling", decoupling()),
    ];
    let (c3, c4) = grid();
    results.push((3, "9-cell grid", c3));
    results.push((4, "scaling shape", c4));
    results.push((5, "attack suite", attacks()));
    results.push((6, "key update interval", kui()));
    results.push((7, "determinism", determinism()));
    results.push((8, "partition and mule", partition()));
    results.sort_by_key(|r| r.0);

    let mut all = true;
    for (n, name, o) in &results {
        println!("criterion {n} {}: {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        all &= o.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
