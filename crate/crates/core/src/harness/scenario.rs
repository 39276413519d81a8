use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Timestamp;
use crate::meter::{CostModel, TimingMode};
use crate::node::{SlotSchedule, WitnessPolicy};
use crate::par::Execution;
use crate::simnet::{Adjacency, LinkModel, Point, Waypoint};

/// Replaces the parked position of one vehicle with a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityOverride {
    pub vehicle: u32,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adversary {
    /// Vehicle 0 requests joins for identities far outside coverage and
    /// vehicle 1 for identities at an empty spot inside it.
    Sybil { identities: u32 },
    /// Forged copies of `vehicle`'s submissions are injected on its uplink
    /// and on the RSI backhaul.
    Tamperer { vehicle: u32 },
    /// The last RSI rebroadcasts every transaction with a byte flipped.
    MaliciousRsi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Sybil,
    Tamper,
    MaliciousRsi,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Sybil, AttackKind::Tamper, AttackKind::MaliciousRsi];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Sybil => "sybil",
            AttackKind::Tamper => "tamper",
            AttackKind::MaliciousRsi => "malicious_rsi",
        }
    }

    pub fn adversary(self) -> Adversary {
        match self {
            AttackKind::Sybil => Adversary::Sybil { identities: 3 },
            AttackKind::Tamper => Adversary::Tamperer { vehicle: 0 },
            AttackKind::MaliciousRsi => Adversary::MaliciousRsi,
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown attack `{s}` (sybil, tamper, malicious_rsi)"))
    }
}

/// One simulation run. Every field has a default, so a scenario file only
/// lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Vehicles, each joining once: the number of device blocks created.
    pub blockchain_size: u32,
    pub tx_per_vehicle: u32,
    pub rsi_count: u32,
    /// RSIs sit on a grid this many columns wide.
    pub grid_cols: u32,
    pub rsi_spacing: f64,
    /// Explicit RSI placement, meters; replaces the grid when non-empty.
    pub rsi_positions: Vec<Point>,
    pub rsi_range: f64,
    pub v2v_range: f64,
    /// Vehicles park uniformly within this radius of their home RSI.
    pub vehicle_spread: f64,
    pub adjacency: Adjacency,
    pub witness_policy: WitnessPolicy,
    pub presence_tolerance: f64,
    pub kui_period: u64,
    pub expiration_window: u64,
    pub beacon_period: u64,
    /// Vehicle `i` boots at `i * join_stagger`.
    pub join_stagger: u64,
    pub join_timeout: u64,
    pub join_retries: u32,
    pub reorder_capacity: usize,
    pub tx_interval: u64,
    pub payload_bytes: usize,
    /// Derived from the join phase when unset.
    pub tx_start: Option<Timestamp>,
    /// Derived from the emission phase when unset.
    pub periodic_until: Option<Timestamp>,
    pub max_time: Option<Timestamp>,
    /// Fresh-key re-joins per vehicle after its block expires.
    pub rotations: u32,
    pub mule: bool,
    pub link: LinkModel,
    pub mobility: Vec<MobilityOverride>,
    pub adversary: Option<Adversary>,
    pub timing: TimingMode,
    pub cost_model: CostModel,
    pub execution: Execution,
    /// Keep every metric record (for metrics.csv), not just the summaries.
    pub raw_metrics: bool,
    /// Vehicles whose ledgers are hashed into a Merkle root after the run.
    pub merkle_samples: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 1,
            blockchain_size: 50,
            tx_per_vehicle: 10,
            rsi_count: 15,
            grid_cols: 5,
            rsi_spacing: 300.0,
            rsi_positions: Vec::new(),
            rsi_range: 250.0,
            v2v_range: 100.0,
            vehicle_spread: 100.0,
            adjacency: Adjacency::FullMesh,
            witness_policy: WitnessPolicy::default(),
            presence_tolerance: 25.0,
            kui_period: 30_000,
            expiration_window: 60_000,
            beacon_period: 1_000,
            join_stagger: 5,
            join_timeout: 6_000,
            join_retries: 3,
            reorder_capacity: 256,
            tx_interval: 20,
            payload_bytes: 16,
            tx_start: None,
            periodic_until: None,
            max_time: None,
            rotations: 0,
            mule: true,
            link: LinkModel::default(),
            mobility: Vec::new(),
            adversary: None,
            timing: TimingMode::Metered,
            cost_model: CostModel::default(),
            execution: Execution::Parallel,
            raw_metrics: true,
            merkle_samples: 50,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Invalid(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("scenario file: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.witness_policy.validate().map_err(|e| invalid(e.to_string()))?;
        if self.rsi_count == 0 {
            return Err(invalid("rsi_count must be at least 1"));
        }
        if !self.rsi_positions.is_empty() && self.rsi_positions.len() != self.rsi_count as usize {
            return Err(invalid("rsi_positions must list exactly rsi_count points"));
        }
        if self.grid_cols == 0 {
            return Err(invalid("grid_cols must be at least 1"));
        }
        if matches!(self.adversary, Some(Adversary::MaliciousRsi)) && self.rsi_count < 2 {
            return Err(invalid("a malicious RSI needs at least one honest RSI"));
        }
        if let Some(Adversary::Sybil { .. }) = self.adversary {
            if self.blockchain_size < 2 {
                return Err(invalid("the sybil attack needs two vehicles"));
            }
        }
        if let Some(Adversary::Tamperer { vehicle }) = self.adversary {
            if vehicle >= self.blockchain_size {
                return Err(invalid(format!("tamperer targets vehicle {vehicle}, which does not exist")));
            }
        }
        if self.vehicle_spread >= self.rsi_range {
            return Err(invalid("vehicle_spread must be below rsi_range so parked vehicles are covered"));
        }
        if self.kui_period == 0 || self.beacon_period == 0 || self.tx_interval == 0 {
            return Err(invalid("periods and intervals must be positive"));
        }
        if !(0.0..=1.0).contains(&self.link.drop_probability) {
            return Err(invalid("drop_probability must lie in [0, 1]"));
        }
        if let Some(m) = self.mobility.iter().find(|m| m.vehicle >= self.blockchain_size) {
            return Err(invalid(format!("mobility override for missing vehicle {}", m.vehicle)));
        }
        Ok(())
    }

    /// Applies `field=value`, where `field` is a dotted path into the
    /// scenario and `value` is a TOML value (bare words are strings).
    pub fn set(&mut self, assignment: &str) -> Result<(), ScenarioError> {
        let bad = |msg: String| ScenarioError::Override(assignment.to_string(), msg);
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| bad("expected field=value".into()))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let mut slot = &mut root;
        let parts: Vec<&str> = path.trim().split('.').collect();
        for (i, key) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| bad(format!("`{}` is not a table", parts[..i].join("."))))?;
            if i + 1 == parts.len() {
                table.insert(key.to_string(), value.clone());
                break;
            }
            slot = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = root.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        Ok(())
    }

    pub fn slot_schedule(&self) -> SlotSchedule {
        SlotSchedule::for_link(&self.link, self.rsi_count as usize)
    }

    /// Last vehicle boots, then two full slot cycles and a second of slack
    /// for witnessing before anyone emits.
    pub fn effective_tx_start(&self) -> Timestamp {
        self.tx_start.unwrap_or_else(|| {
            self.blockchain_size as u64 * self.join_stagger + 2 * self.slot_schedule().cycle() + 1_000
        })
    }

    pub fn tx_end(&self) -> Timestamp {
        self.effective_tx_start() + self.tx_per_vehicle as u64 * self.tx_interval
    }

    /// Beacons run a second past the last emission, partition heal or
    /// waypoint, so buffering vehicles see coverage return.
    pub fn effective_periodic_until(&self) -> Timestamp {
        self.periodic_until.unwrap_or_else(|| {
            let heal = self.link.partitions.iter().map(|p| p.until);
            let moved = self.mobility.iter().filter_map(|m| m.waypoints.last().map(|w| w.at));
            heal.chain(moved).fold(self.tx_end(), u64::max) + 1_000
        })
    }

    pub fn effective_max_time(&self) -> Timestamp {
        self.max_time.unwrap_or_else(|| {
            self.effective_periodic_until()
                + self.expiration_window.max(self.witness_policy.pool_timeout)
                + self.join_timeout * (self.join_retries as u64 + 1)
        })
    }
}
