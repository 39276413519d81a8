//! Permissioned blockchain for vehicle-to-infrastructure data exchange.
//!
//! Each device owns one block: an immutable header linked into the chain
//! and an appendable ledger of signed, hash-chained transactions. Roadside
//! units (RSIs) validate and replicate; vehicles join through a
//! witness-confirmed handshake, rotate keys periodically and keep only a
//! Merkle root plus their own membership proof.

pub mod crypto;
pub mod harness;
pub mod ledger;
pub mod meter;
pub mod node;
pub mod metrics;
pub mod par;
pub mod protocol;
pub mod simnet;
