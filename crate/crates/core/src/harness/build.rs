use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::scenario::{Adversary, Scenario, ScenarioError};
use crate::crypto::{Hasher, KeyPair};
use crate::ledger::Blockchain;
use crate::node::{
    NodeTimer, ProtocolParams, RsiBehavior, RsiState, SimNode, SybilClaim, SybilPlan, VehicleBehavior, VehiclePlan,
    VehicleState,
};
use crate::protocol::Message;
use crate::simnet::{Adjacency, MobilityTrace, NodeId, Point, Projection, Simulator, Topology, World};

/// A scenario turned into a ready-to-run simulator.
pub struct Built {
    pub sim: Simulator<SimNode>,
    pub params: Arc<ProtocolParams>,
    pub authority: KeyPair,
    /// RSI indices that follow the protocol.
    pub honest_rsis: Vec<NodeId>,
    pub vehicles: Vec<NodeId>,
    /// Where vehicle 1 claims its fake identities sit, when it runs a
    /// sybil attack.
    pub sybil_spot: Option<Point>,
}

/// 32 seed bytes for `label`/`index` under the scenario seed.
pub(crate) fn derive_seed(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Hasher::new();
    h.update(b"speedychain/harness/");
    h.update(label.as_bytes());
    h.update(&seed.to_be_bytes());
    h.update(&index.to_be_bytes());
    h.finish().0
}

fn derive_u64(seed: u64, label: &str, index: u64) -> u64 {
    let b = derive_seed(seed, label, index);
    u64::from_be_bytes(b[..8].try_into().expect("8 bytes"))
}

pub fn rsi_positions(s: &Scenario) -> Vec<Point> {
    if !s.rsi_positions.is_empty() {
        return s.rsi_positions.clone();
    }
    (0..s.rsi_count)
        .map(|i| {
            let (row, col) = (i / s.grid_cols, i % s.grid_cols);
            Point::new(col as f64 * s.rsi_spacing, row as f64 * s.rsi_spacing)
        })
        .collect()
}

fn malicious_rsi(s: &Scenario) -> Option<usize> {
    matches!(s.adversary, Some(Adversary::MaliciousRsi)).then(|| s.rsi_count as usize - 1)
}

/// Parking spots: uniform in a disc around the home RSI, vehicles dealt
/// round-robin over the honest RSIs.
fn park(s: &Scenario, rsis: &[Point]) -> Vec<Point> {
    let homes = rsis.len() - malicious_rsi(s).map_or(0, |_| 1);
    let mut rng = ChaCha20Rng::from_seed(derive_seed(s.seed, "layout", 0));
    (0..s.blockchain_size as usize)
        .map(|i| {
            let home = rsis[i % homes];
            let r = s.vehicle_spread * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            Point::new(home.x + r * a.cos(), home.y + r * a.sin())
        })
        .collect()
}

pub fn build(s: &Scenario) -> Result<Built, ScenarioError> {
    s.validate()?;
    let projection = Projection::default();
    let rsi_pos = rsi_positions(s);
    let origin_tag = projection
        .to_geotag(&rsi_pos[0])
        .ok_or_else(|| ScenarioError::Invalid("RSI grid falls outside valid coordinates".into()))?;

    let mut mobility: Vec<MobilityTrace> = park(s, &rsi_pos).into_iter().map(MobilityTrace::stationary).collect();
    for m in &s.mobility {
        mobility[m.vehicle as usize] = MobilityTrace {
            waypoints: m.waypoints.clone(),
        };
    }
    let topo = Topology {
        rsi_positions: rsi_pos.clone(),
        adjacency: s.adjacency.clone(),
        rsi_range: s.rsi_range,
        v2v_range: s.v2v_range,
        projection,
    };
    let world = World::new(topo, mobility, s.link.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;

    let authority = KeyPair::from_seed(derive_seed(s.seed, "authority", 0));
    let rsi_keys: Vec<KeyPair> = (0..s.rsi_count as u64)
        .map(|i| KeyPair::from_seed(derive_seed(s.seed, "rsi", i)))
        .collect();
    let params = Arc::new(ProtocolParams {
        authority_pk: authority.public,
        rsi_pks: rsi_keys.iter().map(|k| k.public).collect(),
        witness: s.witness_policy,
        presence_tolerance: s.presence_tolerance,
        expiration_window: s.expiration_window,
        kui_period: s.kui_period,
        beacon_period: s.beacon_period,
        periodic_until: s.effective_periodic_until(),
        slot: s.slot_schedule(),
        join_timeout: s.join_timeout,
        join_retries: s.join_retries,
        reorder_capacity: s.reorder_capacity,
        timing: s.timing,
        cost_model: s.cost_model,
        keep_raw_metrics: s.raw_metrics,
    });

    let relay = !matches!(s.adjacency, Adjacency::FullMesh);
    let chain = Blockchain::new(&authority, origin_tag);
    let bad_rsi = malicious_rsi(s);
    let mut actors = Vec::with_capacity(world.node_count());
    for (i, kp) in rsi_keys.into_iter().enumerate() {
        let id = NodeId(i as u32);
        let credential = Message::credential(&authority, kp.public);
        let behavior = if bad_rsi == Some(i) {
            RsiBehavior::MutateRebroadcast
        } else {
            RsiBehavior::Honest
        };
        let peers = world.rsi_peers(id).to_vec();
        actors.push(SimNode::Rsi(Box::new(RsiState::new(
            id,
            i,
            kp,
            credential,
            chain.clone(),
            peers,
            relay,
            behavior,
            params.clone(),
        ))));
    }

    let tx_start = s.effective_tx_start();
    let sybil_spot = match s.adversary {
        Some(Adversary::Sybil { .. }) => {
            // Halfway toward the next row (or column): no vehicle parks
            // farther than `vehicle_spread` from an RSI.
            let off = s.rsi_spacing / 2.0;
            let p = rsi_pos[0];
            Some(if s.rsi_count > s.grid_cols {
                Point::new(p.x, p.y + off)
            } else {
                Point::new(p.x + off, p.y)
            })
        }
        _ => None,
    };
    let mut vehicles = Vec::with_capacity(s.blockchain_size as usize);
    let mut timers = Vec::new();
    for v in 0..s.blockchain_size as usize {
        let id = world.vehicle_id(v);
        let plan = VehiclePlan {
            bootstrap_at: v as u64 * s.join_stagger,
            tx_count: s.tx_per_vehicle,
            tx_start,
            tx_interval: s.tx_interval,
            payload_bytes: s.payload_bytes,
            rotations: s.rotations,
            mule: s.mule,
        };
        let behavior = match (s.adversary, v) {
            (Some(Adversary::Sybil { identities }), 0 | 1) => {
                let claim = match (v, sybil_spot) {
                    (1, Some(p)) => SybilClaim::At { x: p.x, y: p.y },
                    _ => SybilClaim::Far,
                };
                timers.push((id, tx_start, NodeTimer::Sybil));
                VehicleBehavior::Sybil(SybilPlan {
                    identities,
                    claim,
                    at: tx_start,
                })
            }
            _ => VehicleBehavior::Honest,
        };
        timers.push((id, plan.bootstrap_at, NodeTimer::Bootstrap));
        let seed = derive_u64(s.seed, "vehicle", v as u64);
        actors.push(SimNode::Vehicle(Box::new(VehicleState::new(
            id,
            seed,
            plan,
            behavior,
            params.clone(),
        ))));
        vehicles.push(id);
    }

    let honest_rsis = (0..s.rsi_count as usize)
        .filter(|&i| bad_rsi != Some(i))
        .map(|i| NodeId(i as u32))
        .collect();
    let rsi_count = s.rsi_count;
    let mut sim = Simulator::new(world, actors, s.seed, s.execution.effective());
    for i in 0..rsi_count {
        sim.schedule_timer(NodeId(i), 0, NodeTimer::Beacon);
        if s.kui_period <= params.periodic_until {
            sim.schedule_timer(NodeId(i), s.kui_period, NodeTimer::KuiTick);
        }
    }
    for (id, at, t) in timers {
        sim.schedule_timer(id, at, t);
    }
    Ok(Built {
        sim,
        params,
        authority,
        honest_rsis,
        vehicles,
        sybil_spot,
    })
}
