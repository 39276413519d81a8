//! RSI and vehicle state machines.
//!
//! Nodes only talk through [`crate::protocol::Message`]s carried by the
//! simulator. Each node handles its inputs serially; nothing is shared.

mod rsi;
mod vehicle;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::ledger::Timestamp;
use crate::meter::{CostModel, TimingMode};
use crate::metrics::MetricsSink;
use crate::protocol::RejectReason;
use crate::simnet::{Actor, Ctx, EdgeClass, Input, LinkModel};

pub use rsi::{RsiBehavior, RsiState};
pub use vehicle::{KeyRecord, SybilClaim, SybilPlan, VehicleBehavior, VehiclePlan, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessPolicy {
    /// Distinct positive witness reports needed to confirm a join.
    pub required_reports: u32,
    /// Witnesses are queried within this many meters of the claimed spot.
    pub query_radius: f64,
    /// How long an unconfirmed join stays in the pool, ms.
    pub pool_timeout: u64,
}

impl Default for WitnessPolicy {
    fn default() -> Self {
        WitnessPolicy {
            required_reports: 1,
            query_radius: 400.0,
            pool_timeout: 5_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("witness policy needs required_reports >= 1")]
pub struct PolicyError;

impl WitnessPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.required_reports >= 1 {
            Ok(())
        } else {
            Err(PolicyError)
        }
    }
}

/// Settings every node in a run shares.
#[derive(Clone, Debug)]
pub struct ProtocolParams {
    pub authority_pk: PublicKey,
    /// RSI public keys by RSI index.
    pub rsi_pks: Vec<PublicKey>,
    pub witness: WitnessPolicy,
    /// A witness reports "observed" when some vehicle is this close to the
    /// claimed position.
    pub presence_tolerance: f64,
    pub expiration_window: u64,
    pub kui_period: u64,
    pub beacon_period: u64,
    /// Periodic timers (beacons, KUI ticks) stop after this instant so the
    /// simulation can drain.
    pub periodic_until: Timestamp,
    pub slot: SlotSchedule,
    /// Vehicle gives up on an unanswered join after this long and resends.
    pub join_timeout: u64,
    pub join_retries: u32,
    /// Per-block cap on buffered out-of-order transactions.
    pub reorder_capacity: usize,
    pub timing: TimingMode,
    pub cost_model: CostModel,
    pub keep_raw_metrics: bool,
}

/// Round-robin header allocation. RSI `i` may allocate new headers only in
/// slots `k` with `k % rsi_count == i`, slot `k` spanning
/// `[k * len, (k + 1) * len)`. Allocations still unbound at the deadline
/// are withdrawn, so every block a slot produces reaches every peer before
/// the next slot begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchedule {
    pub len: u64,
    pub rsi_count: u64,
    /// Offset from slot start after which unbound allocations are dropped.
    pub deadline: u64,
}

impl SlotSchedule {
    /// Long enough for offer, binding reply and broadcast to complete
    /// inside one slot under the worst-case latencies of `link`.
    pub fn for_link(link: &LinkModel, rsi_count: usize) -> SlotSchedule {
        let (_, v2r) = link.latency(EdgeClass::VehicleRsi).bounds();
        let (_, r2r) = link.latency(EdgeClass::RsiRsi).bounds();
        let len = (2 * v2r + 2 * r2r + 4).max(20);
        SlotSchedule {
            len,
            rsi_count: rsi_count as u64,
            deadline: len - r2r - 1,
        }
    }

    pub fn cycle(&self) -> u64 {
        self.len * self.rsi_count
    }

    /// Start of the first slot owned by `rsi` that begins at or after `t`.
    pub fn next_start(&self, rsi: usize, t: Timestamp) -> Timestamp {
        let mut k = t.div_ceil(self.len);
        let r = k % self.rsi_count;
        let want = rsi as u64;
        k += (want + self.rsi_count - r) % self.rsi_count;
        k * self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeTimer {
    Beacon,
    KuiTick,
    SlotStart,
    SlotDeadline(u64),
    PoolTimeout(PublicKey, Timestamp),
    Bootstrap,
    EmitTx,
    Rotate,
    JoinRetry(u64),
    Sybil,
}

pub(crate) fn reject_counter(r: RejectReason) -> &'static str {
    match r {
        RejectReason::BadSignature => "tx_rejected.bad_signature",
        RejectReason::BrokenChainLink => "tx_rejected.broken_chain_link",
        RejectReason::BlockExpired => "tx_rejected.block_expired",
        RejectReason::DuplicateKey => "tx_rejected.duplicate_key",
        RejectReason::UnknownDevice => "tx_rejected.unknown_device",
        RejectReason::KeyMismatch => "tx_rejected.key_mismatch",
        RejectReason::Malformed => "tx_rejected.malformed",
    }
}

/// Either role, as one actor type for the simulator.
#[derive(Debug)]
pub enum SimNode {
    Rsi(Box<RsiState>),
    Vehicle(Box<VehicleState>),
}

impl SimNode {
    pub fn as_rsi(&self) -> Option<&RsiState> {
        match self {
            SimNode::Rsi(r) => Some(r),
            SimNode::Vehicle(_) => None,
        }
    }

    pub fn as_vehicle(&self) -> Option<&VehicleState> {
        match self {
            SimNode::Vehicle(v) => Some(v),
            SimNode::Rsi(_) => None,
        }
    }
}

impl Actor for SimNode {
    type Timer = NodeTimer;

    fn handle(&mut self, ctx: &mut Ctx<'_, NodeTimer>, inputs: Vec<Input<NodeTimer>>) {
        match self {
            SimNode::Rsi(r) => r.handle(ctx, inputs),
            SimNode::Vehicle(v) => v.handle(ctx, inputs),
        }
    }

    fn state_digest(&self) -> Option<Digest> {
        self.as_rsi().map(|r| r.chain().digest())
    }

    fn metrics(&self) -> Option<&MetricsSink> {
        self.as_rsi().map(RsiState::metrics)
    }
}

/// Shared handle to run-wide settings.
pub type Params = Arc<ProtocolParams>;

#[cfg(test)]
mod tests;
