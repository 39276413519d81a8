use std::io;
use std::path::Path;

use serde::Serialize;

use super::output::{grid_csv_name, write_json, write_run, write_summary_csv};
use super::run::{run_scenario, Check, RunOutcome};
use super::scenario::{Scenario, ScenarioError};
use super::summary::{SummaryRow, SummaryTable};
use crate::metrics::MetricKind;

pub const GRID_SIZES: [u32; 3] = [50, 100, 650];
pub const GRID_TXS: [u32; 3] = [10, 100, 1_000];

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One finished cell, without its raw records.
#[derive(Clone, Debug, Serialize)]
pub struct GridCell {
    pub blockchain_size: u32,
    pub tx_per_vehicle: u32,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub summary: SummaryTable,
    pub end_time: u64,
    pub events_processed: u64,
    pub digest: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridOutcome {
    pub passed: bool,
    pub cells: Vec<GridCell>,
    /// Shape assertions over the whole grid.
    pub checks: Vec<Check>,
    /// Comparisons reported but not asserted.
    pub observations: Vec<Check>,
}

impl GridOutcome {
    pub fn cell(&self, size: u32, tx: u32) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.blockchain_size == size && c.tx_per_vehicle == tx)
    }

    pub fn mean(&self, kind: MetricKind, size: u32, tx: u32) -> Option<f64> {
        self.cell(size, tx).and_then(|c| c.summary.mean_us(kind))
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn cell_scenario(base: &Scenario, size: u32, tx: u32) -> Scenario {
    Scenario {
        name: format!("{}-{size}x{tx}", base.name),
        blockchain_size: size,
        tx_per_vehicle: tx,
        ..base.clone()
    }
}

/// Runs the 3x3 grid over `sizes` x `txs` (normally [`GRID_SIZES`] x
/// [`GRID_TXS`]). With `out`, each cell writes its own directory and the
/// grid writes one CSV per metric kind. `progress` sees every cell as it
/// finishes.
pub fn run_grid_over(
    base: &Scenario,
    sizes: &[u32],
    txs: &[u32],
    out: Option<&Path>,
    mut progress: impl FnMut(&RunOutcome),
) -> Result<GridOutcome, GridError> {
    let mut cells = Vec::new();
    for &size in sizes {
        for &tx in txs {
            let s = cell_scenario(base, size, tx);
            let outcome = run_scenario(&s)?;
            if let Some(dir) = out {
                write_run(&dir.join(format!("cell_{size}x{tx}")), &outcome)?;
            }
            progress(&outcome);
            let honest = outcome.simulation.node_digests.get(&0).cloned();
            cells.push(GridCell {
                blockchain_size: size,
                tx_per_vehicle: tx,
                passed: outcome.passed,
                checks: outcome.checks,
                summary: outcome.summary,
                end_time: outcome.simulation.end_time,
                events_processed: outcome.simulation.events_processed,
                digest: honest,
            });
        }
    }
    fill_growth(&mut cells, sizes, txs);
    let (checks, observations) = shape_checks(&cells, sizes, txs);
    let passed = cells.iter().all(|c| c.passed) && checks.iter().all(|c| c.passed);
    let grid = GridOutcome {
        passed,
        cells,
        checks,
        observations,
    };
    if let Some(dir) = out {
        for kind in MetricKind::ALL {
            let rows: Vec<&SummaryRow> = grid.cells.iter().filter_map(|c| c.summary.row(kind)).collect();
            write_summary_csv(&dir.join(grid_csv_name(kind)), rows)?;
        }
        write_json(&dir.join("grid.json"), &grid)?;
    }
    Ok(grid)
}

pub fn run_grid(base: &Scenario, out: Option<&Path>, progress: impl FnMut(&RunOutcome)) -> Result<GridOutcome, GridError> {
    run_grid_over(base, &GRID_SIZES, &GRID_TXS, out, progress)
}

fn mean_at(cells: &[GridCell], kind: MetricKind, size: u32, tx: u32) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.blockchain_size == size && c.tx_per_vehicle == tx)
        .and_then(|c| c.summary.mean_us(kind))
}

fn fill_growth(cells: &mut [GridCell], sizes: &[u32], txs: &[u32]) {
    let snapshot: Vec<GridCell> = cells.to_vec();
    for c in cells.iter_mut() {
        let si = sizes.iter().position(|&s| s == c.blockchain_size);
        let ti = txs.iter().position(|&t| t == c.tx_per_vehicle);
        for row in &mut c.summary.rows {
            let Some(m) = row.mean_us else { continue };
            if let Some(i) = si.filter(|&i| i > 0) {
                row.growth_vs_size = mean_at(&snapshot, row.kind, sizes[i - 1], row.tx_count).map(|p| m / p);
            }
            if let Some(i) = ti.filter(|&i| i > 0) {
                row.growth_vs_tx = mean_at(&snapshot, row.kind, row.blockchain_size, txs[i - 1]).map(|p| m / p);
            }
        }
    }
}

fn fmt_series(v: &[Option<f64>]) -> String {
    v.iter()
        .map(|m| m.map_or("-".to_string(), |x| format!("{x:.3}")))
        .collect::<Vec<_>>()
        .join(" -> ")
}

fn series_ok(v: &[Option<f64>], strict: bool) -> bool {
    v.iter().all(Option::is_some)
        && v.windows(2).all(|w| {
            let (a, b) = (w[0].expect("checked"), w[1].expect("checked"));
            if strict {
                b > a
            } else {
                b >= a
            }
        })
}

fn shape_checks(cells: &[GridCell], sizes: &[u32], txs: &[u32]) -> (Vec<Check>, Vec<Check>) {
    let mut checks = Vec::new();
    let failing: Vec<String> = cells
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}x{}", c.blockchain_size, c.tx_per_vehicle))
        .collect();
    checks.push(Check::new(
        "grid_cells_passed",
        failing.is_empty(),
        format!("{} cells, failing: {failing:?}", cells.len()),
    ));

    let tx_add = |s, t| mean_at(cells, MetricKind::TxAdd, s, t);
    for &t in txs {
        let series: Vec<_> = sizes.iter().map(|&s| tx_add(s, t)).collect();
        checks.push(Check::new(
            &format!("tx_add_nondecreasing_in_size_tx{t}"),
            series_ok(&series, false),
            fmt_series(&series),
        ));
    }
    for &s in sizes {
        let series: Vec<_> = txs.iter().map(|&t| tx_add(s, t)).collect();
        checks.push(Check::new(
            &format!("tx_add_nondecreasing_in_tx_size{s}"),
            series_ok(&series, false),
            fmt_series(&series),
        ));
    }
    let mut below = Vec::new();
    let mut ratios = Vec::new();
    for c in cells {
        let b = c.summary.mean_us(MetricKind::BlockAdd);
        let t = c.summary.mean_us(MetricKind::TxAdd);
        match (b, t) {
            (Some(b), Some(t)) if b > t => ratios.push(b / t),
            _ => below.push(format!("{}x{}", c.blockchain_size, c.tx_per_vehicle)),
        }
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "block_add_exceeds_tx_add",
        below.is_empty(),
        format!("min ratio {lo:.2}; failing cells {below:?}"),
    ));
    for &s in sizes {
        let series: Vec<_> = txs.iter().map(|&t| mean_at(cells, MetricKind::MerkleBuild, s, t)).collect();
        checks.push(Check::new(
            &format!("merkle_build_increasing_size{s}"),
            series_ok(&series, true),
            fmt_series(&series),
        ));
    }

    let mut observations = Vec::new();
    if let (Some(&small), Some(&large), Some(&t0), Some(&t1)) = (sizes.first(), sizes.last(), txs.first(), txs.last()) {
        let growth = |s| Some(tx_add(s, t1)? - tx_add(s, t0)?);
        let (gs, gl) = (growth(small), growth(large));
        observations.push(Check::new(
            &format!("tx_add_growth_{large}_exceeds_{small}"),
            matches!((gs, gl), (Some(a), Some(b)) if b > a),
            format!("absolute growth over tx axis: {small} -> {gs:?} us, {large} -> {gl:?} us"),
        ));
    }
    (checks, observations)
}
