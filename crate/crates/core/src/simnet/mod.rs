//! Deterministic discrete-event network simulator: RSI and vehicle
//! placement, mobility, link latency, loss and partitions, and the ground
//! truth witnesses consult.

mod engine;
mod geometry;
mod world;

pub use engine::{Actor, Ctx, DeliveryRecord, Injection, Input, Interceptor, KindCounts, SimulationReport, Simulator};
pub use geometry::{Point, Projection};
pub use world::{
    Adjacency, EdgeClass, Latency, LinkModel, MobilityTrace, NodeId, Partition, Role, Topology, TopologyError,
    Waypoint, World,
};
