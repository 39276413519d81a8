use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::metrics::{KindStats, MetricKind};

/// Fewer samples than this and no interval is reported.
pub const MIN_CI_SAMPLES: u64 = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: MetricKind,
    pub blockchain_size: u32,
    pub tx_count: u32,
    pub samples: u64,
    pub mean_us: Option<f64>,
    /// Student-t 95% interval on the mean.
    pub ci95_low_us: Option<f64>,
    pub ci95_high_us: Option<f64>,
    pub min_us: Option<f64>,
    pub max_us: Option<f64>,
    /// Mean over the mean of the next-smaller blockchain_size, same tx_count.
    pub growth_vs_size: Option<f64>,
    /// Mean over the mean of the next-smaller tx_count, same blockchain_size.
    pub growth_vs_tx: Option<f64>,
}

impl SummaryRow {
    pub fn from_stats(kind: MetricKind, blockchain_size: u32, tx_count: u32, s: &KindStats) -> SummaryRow {
        let mean_ns = s.mean_ns();
        let half = ci95_half_width_ns(s);
        let us = |ns: f64| ns / 1e3;
        SummaryRow {
            kind,
            blockchain_size,
            tx_count,
            samples: s.count,
            mean_us: mean_ns.map(us),
            ci95_low_us: mean_ns.zip(half).map(|(m, h)| us(m - h)),
            ci95_high_us: mean_ns.zip(half).map(|(m, h)| us(m + h)),
            min_us: (s.count > 0).then(|| us(s.min_ns as f64)),
            max_us: (s.count > 0).then(|| us(s.max_ns as f64)),
            growth_vs_size: None,
            growth_vs_tx: None,
        }
    }
}

/// Half width of the two-sided 95% interval, nanoseconds.
pub fn ci95_half_width_ns(s: &KindStats) -> Option<f64> {
    if s.count < MIN_CI_SAMPLES {
        return None;
    }
    let var = s.variance_ns2()?;
    let t = StudentsT::new(0.0, 1.0, (s.count - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Some(t * (var / s.count as f64).sqrt())
}

/// Per-kind summary of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn from_stats(blockchain_size: u32, tx_count: u32, stats: &[(MetricKind, KindStats)]) -> SummaryTable {
        SummaryTable {
            rows: stats
                .iter()
                .map(|(k, s)| SummaryRow::from_stats(*k, blockchain_size, tx_count, s))
                .collect(),
        }
    }

    pub fn row(&self, kind: MetricKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn mean_us(&self, kind: MetricKind) -> Option<f64> {
        self.row(kind).and_then(|r| r.mean_us)
    }

    pub fn populated(&self, kind: MetricKind) -> bool {
        self.row(kind).is_some_and(|r| r.samples > 0)
    }
}
