//! Scenario runner: the 3x3 scaling grid, adversarial runs, summary
//! statistics and CSV/JSON output.

mod attack;
mod build;
mod grid;
mod output;
mod run;
mod scenario;
mod summary;

pub use attack::{attack_base, run_attack};
pub use build::{build, rsi_positions, Built};
pub use grid::{cell_scenario, run_grid, run_grid_over, GridCell, GridError, GridOutcome, GRID_SIZES, GRID_TXS};
pub use output::{grid_csv_name, write_json, write_metrics_csv, write_run, write_summary_csv, SUMMARY_HEADER};
pub use run::{audit, evaluate, forge, run_scenario, Check, RunOutcome, TamperLog, Tamperer};
pub use scenario::{Adversary, AttackKind, MobilityOverride, Scenario, ScenarioError};
pub use summary::{ci95_half_width_ns, SummaryRow, SummaryTable, MIN_CI_SAMPLES};
