use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speedychain::harness::{
    attack_base, run_attack, run_grid, run_scenario, write_json, write_run, AttackKind, Check, RunOutcome, Scenario,
};

#[derive(Parser)]
#[command(name = "speedychain", about = "Run ledger simulations, the scaling grid and attack scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV and JSON files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override any scenario field, e.g. `--set link.drop_probability=0.01`.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file (defaults apply to every missing field).
    Run {
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the 3x3 grid of blockchain size x transactions per vehicle.
    Grid {
        /// Base scenario; the grid sets blockchain_size and tx_per_vehicle.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Keep raw metric records for every cell (large for big cells).
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named attack (sybil, tamper, malicious_rsi) over several seeds.
    Attack {
        kind: AttackKind,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Consecutive seeds to run, starting at the scenario seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: Option<&PathBuf>, base: Scenario, common: &Common) -> Result<Scenario, String> {
    let mut s = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Scenario::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => base,
    };
    for o in &common.overrides {
        s.set(o).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

fn print_checks(prefix: &str, checks: &[Check]) {
    for c in checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        println!("{mark} {prefix}{}: {}", c.name, c.detail);
    }
}

fn print_summary(o: &RunOutcome) {
    println!("{:<18} {:>8} {:>12} {:>12} {:>12}", "kind", "samples", "mean_us", "ci95_low", "ci95_high");
    for r in &o.summary.rows {
        let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.3}"));
        println!(
            "{:<18} {:>8} {:>12} {:>12} {:>12}",
            r.kind.as_str(),
            r.samples,
            f(r.mean_us),
            f(r.ci95_low_us),
            f(r.ci95_high_us)
        );
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.cmd {
        Cmd::Run { scenario, common } => {
            let s = load(scenario.as_ref(), Scenario::default(), &common)?;
            let o = run_scenario(&s).map_err(|e| e.to_string())?;
            write_run(&common.out, &o).map_err(|e| e.to_string())?;
            print_summary(&o);
            print_checks("", &o.checks);
            Ok(o.passed)
        }
        Cmd::Grid {
            scenario,
            raw,
            common,
        } => {
            let base = Scenario {
                name: "grid".into(),
                raw_metrics: raw,
                ..Scenario::default()
            };
            let s = load(scenario.as_ref(), base, &common)?;
            let grid = run_grid(&s, Some(&common.out), |o| {
                let s = &o.scenario;
                let failed = o.failures().count();
                println!(
                    "cell {}x{}: {} ({} events, sim {} ms{})",
                    s.blockchain_size,
                    s.tx_per_vehicle,
                    if o.passed { "ok" } else { "FAIL" },
                    o.simulation.events_processed,
                    o.simulation.end_time,
                    if failed > 0 { format!(", {failed} failed checks") } else { String::new() }
                );
            })
            .map_err(|e| e.to_string())?;
            print_checks("", &grid.checks);
            for c in &grid.observations {
                println!("note {}: {} ({})", c.name, c.detail, if c.passed { "holds" } else { "does not hold" });
            }
            Ok(grid.passed)
        }
        Cmd::Attack {
            kind,
            scenario,
            seeds,
            common,
        } => {
            let base = load(scenario.as_ref(), attack_base(), &common)?;
            let mut all = true;
            let mut reports = Vec::new();
            for seed in base.seed..base.seed + seeds {
                let s = Scenario { seed, ..base.clone() };
                let o = run_attack(kind, &s).map_err(|e| e.to_string())?;
                print_checks(&format!("seed {seed} "), &o.checks);
                write_run(&common.out.join(format!("seed_{seed}")), &o).map_err(|e| e.to_string())?;
                all &= o.passed;
                reports.push(serde_json::json!({ "seed": seed, "passed": o.passed, "checks": o.checks }));
            }
            let summary = serde_json::json!({ "attack": kind.as_str(), "passed": all, "runs": reports });
            write_json(&common.out.join("attack.json"), &summary).map_err(|e| e.to_string())?;
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
