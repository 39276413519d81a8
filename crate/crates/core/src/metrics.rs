//! Structured timing records emitted by the node state machines.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// RSI that created a block: join, witness and finalize handling.
    BlockAdd,
    /// RSI that received a transaction from a vehicle.
    TxAdd,
    /// RSI applying a block broadcast by a peer.
    PeerBlockUpdate,
    /// RSI applying a transaction broadcast by a peer.
    PeerTxUpdate,
    /// Merkle root computation.
    MerkleBuild,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::BlockAdd,
        MetricKind::TxAdd,
        MetricKind::PeerBlockUpdate,
        MetricKind::PeerTxUpdate,
        MetricKind::MerkleBuild,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::BlockAdd => "block_add",
            MetricKind::TxAdd => "tx_add",
            MetricKind::PeerBlockUpdate => "peer_block_update",
            MetricKind::PeerTxUpdate => "peer_tx_update",
            MetricKind::MerkleBuild => "merkle_build",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kind: MetricKind,
    pub node: u32,
    /// Blocks in the measuring node's chain at the time of measurement.
    pub chain_size: u32,
    pub elapsed_ns: u64,
    pub sim_time: u64,
}

impl MetricRecord {
    pub fn elapsed_us(&self) -> f64 {
        self.elapsed_ns as f64 / 1e3
    }
}

/// Formats nanoseconds as microseconds with three decimals, exactly.
pub fn format_us(ns: u64) -> String {
    format!("{}.{:03}", ns / 1000, ns % 1000)
}

/// Running moments for one metric kind. Sums are exact integers so merges
/// and means do not depend on accumulation order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: u64,
    pub sum_ns: u128,
    pub sum_sq_ns: u128,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl KindStats {
    pub fn add(&mut self, ns: u64) {
        if self.count == 0 || ns < self.min_ns {
            self.min_ns = ns;
        }
        self.max_ns = self.max_ns.max(ns);
        self.count += 1;
        self.sum_ns += ns as u128;
        self.sum_sq_ns += (ns as u128) * (ns as u128);
    }

    pub fn merge(&mut self, other: &KindStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 || other.min_ns < self.min_ns {
            self.min_ns = other.min_ns;
        }
        self.max_ns = self.max_ns.max(other.max_ns);
        self.count += other.count;
        self.sum_ns += other.sum_ns;
        self.sum_sq_ns += other.sum_sq_ns;
    }

    pub fn mean_ns(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_ns as f64 / self.count as f64)
    }

    /// Unbiased sample variance, computed from exact integer sums.
    pub fn variance_ns2(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as u128;
        // n * sum_sq - sum^2 is exact and non-negative.
        let num = n * self.sum_sq_ns - self.sum_ns * self.sum_ns;
        Some(num as f64 / (n * (n - 1)) as f64)
    }
}

/// Per-node collector. Always keeps running per-kind statistics; keeps the
/// individual records only when asked to.
#[derive(Clone, Debug, Default)]
pub struct MetricsSink {
    keep_raw: bool,
    records: Vec<MetricRecord>,
    stats: [KindStats; 5],
}

impl MetricsSink {
    pub fn new(keep_raw: bool) -> Self {
        MetricsSink {
            keep_raw,
            ..Default::default()
        }
    }

    pub fn record(&mut self, r: MetricRecord) {
        self.stats[r.kind.index()].add(r.elapsed_ns);
        if self.keep_raw {
            self.records.push(r);
        }
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn stats(&self, kind: MetricKind) -> &KindStats {
        &self.stats[kind.index()]
    }

    pub fn merge_into(&self, totals: &mut [KindStats; 5]) {
        for (t, s) in totals.iter_mut().zip(&self.stats) {
            t.merge(s);
        }
    }
}
