use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::build::{build, Built};
use super::scenario::{Adversary, Scenario, ScenarioError};
use super::summary::SummaryTable;
use crate::crypto::{Digest, MerkleTree, PublicKey};
use crate::ledger::{validate_chain_with, Blockchain, Transaction};
use crate::meter;
use crate::metrics::{KindStats, MetricKind, MetricRecord};
use crate::protocol::{Decode, Encode, Message, MessageKind};
use crate::simnet::{Injection, Interceptor, NodeId, SimulationReport};

/// One named assertion about a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Check {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything a run produces. Serializes to `report.json`; raw metric
/// records go to `metrics.csv` instead.
#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub summary: SummaryTable,
    pub simulation: SimulationReport,
    #[serde(skip)]
    pub records: Vec<MetricRecord>,
}

impl RunOutcome {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// What the in-flight tamperer forged and what it saw go by.
#[derive(Debug, Default)]
pub struct TamperLog {
    pub originals: BTreeSet<Digest>,
    pub forged: BTreeSet<Digest>,
}

/// Flips one payload byte of every transaction `vehicle` submits and
/// injects the copy on the same radio link and on every backhaul link out
/// of the receiving RSI.
pub struct Tamperer {
    pub vehicle: NodeId,
    pub rsis: Vec<NodeId>,
    pub log: Arc<Mutex<TamperLog>>,
}

pub fn forge(tx: &Transaction) -> Transaction {
    let mut forged = tx.clone();
    match forged.payload.first_mut() {
        Some(b) => *b ^= 0x01,
        None => forged.payload.push(0x01),
    }
    forged
}

impl Interceptor for Tamperer {
    fn on_send(&mut self, _now: u64, from: NodeId, to: NodeId, kind: MessageKind, bytes: &[u8]) -> Vec<Injection> {
        if from != self.vehicle || kind != MessageKind::TxSubmit {
            return Vec::new();
        }
        let Ok(Message::TxSubmit { pk, tx }) = Message::from_bytes(bytes) else {
            return Vec::new();
        };
        let forged = forge(&tx);
        {
            let mut log = self.log.lock().expect("tamper log");
            log.originals.insert(tx.digest());
            log.forged.insert(forged.digest());
        }
        let submit: Arc<[u8]> = Message::TxSubmit { pk, tx: forged.clone() }.to_bytes().into();
        let gossip: Arc<[u8]> = Message::TxBroadcast { pk, tx: forged }.to_bytes().into();
        let mut out = vec![Injection {
            from,
            to,
            kind: MessageKind::TxSubmit,
            bytes: submit,
        }];
        out.extend(self.rsis.iter().filter(|&&r| r != to).map(|&r| Injection {
            from: to,
            to: r,
            kind: MessageKind::TxBroadcast,
            bytes: gossip.clone(),
        }));
        out
    }
}

pub fn run_scenario(s: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let mut built = build(s)?;
    let tamper = match s.adversary {
        Some(Adversary::Tamperer { vehicle }) => {
            let log = Arc::new(Mutex::new(TamperLog::default()));
            built.sim.set_interceptor(Box::new(Tamperer {
                vehicle: built.vehicles[vehicle as usize],
                rsis: built.honest_rsis.clone(),
                log: log.clone(),
            }));
            Some(log)
        }
        _ => None,
    };
    let report = built.sim.run_until_quiescent(s.effective_max_time());
    Ok(evaluate(s, &built, report, tamper.as_deref()))
}

/// Checks a finished simulation and summarizes its metrics.
pub fn evaluate(s: &Scenario, built: &Built, report: SimulationReport, tamper: Option<&Mutex<TamperLog>>) -> RunOutcome {
    let mut checks = audit(s, built, &report);
    if let Some(log) = tamper {
        checks.extend(tamper_checks(built, &report, &log.lock().expect("tamper log")));
    }
    let (probe_stats, probe_records) = merkle_probe(s, built);
    let mut stats: Vec<(MetricKind, KindStats)> = MetricKind::ALL.iter().map(|&k| (k, report.stats(k))).collect();
    stats[MetricKind::ALL.iter().position(|&k| k == MetricKind::MerkleBuild).expect("listed")]
        .1
        .merge(&probe_stats);
    let summary = SummaryTable::from_stats(s.blockchain_size, s.tx_per_vehicle, &stats);
    let mut records = report.metrics.clone();
    records.extend(probe_records);
    let passed = checks.iter().all(|c| c.passed);
    RunOutcome {
        scenario: s.clone(),
        passed,
        checks,
        summary,
        simulation: report,
        records,
    }
}

fn chain_of(built: &Built, id: NodeId) -> &Blockchain {
    built.sim.actor(id).as_rsi().expect("RSI ids hold RSIs").chain()
}

fn reference(built: &Built) -> &Blockchain {
    chain_of(built, built.honest_rsis[0])
}

/// Protocol-level invariants every run must satisfy, plus the checks of
/// its adversary.
pub fn audit(s: &Scenario, built: &Built, report: &SimulationReport) -> Vec<Check> {
    let mut checks = vec![Check::new(
        "quiescent",
        report.quiescent,
        format!("end_time {} of {}", report.end_time, s.effective_max_time()),
    )];

    let digests: BTreeSet<&String> = built
        .honest_rsis
        .iter()
        .filter_map(|id| report.node_digests.get(&id.0))
        .collect();
    checks.push(Check::new(
        "honest_chains_identical",
        digests.len() == 1,
        format!("{} distinct digest(s): {:?}", digests.len(), digests),
    ));

    let chain = reference(built);
    let exec = s.execution.effective();
    checks.push(Check::new(
        "chain_valid",
        validate_chain_with(chain, exec),
        format!("{} blocks, {} transactions", chain.len(), chain.transaction_count()),
    ));

    let mut missing = Vec::new();
    for &v in &built.vehicles {
        let vs = built.sim.actor(v).as_vehicle().expect("vehicle ids hold vehicles");
        let stored: usize = vs
            .key_history()
            .iter()
            .filter_map(|k| chain.peek_block(&k.pk))
            .map(|b| b.len().saturating_sub(1))
            .sum();
        if stored != vs.emitted() as usize || vs.emitted() < s.tx_per_vehicle {
            missing.push(format!("{v}: emitted {} of {}, stored {stored}", vs.emitted(), s.tx_per_vehicle));
        }
    }
    checks.push(Check::new(
        "all_transactions_stored",
        missing.is_empty(),
        if missing.is_empty() {
            format!("{} vehicles x {} transactions", built.vehicles.len(), s.tx_per_vehicle)
        } else {
            missing.iter().take(5).cloned().collect::<Vec<_>>().join("; ")
        },
    ));

    match s.adversary {
        Some(Adversary::Sybil { .. }) => checks.extend(sybil_checks(built)),
        Some(Adversary::MaliciousRsi) => checks.extend(malicious_rsi_checks(s, built, report)),
        _ => {}
    }
    checks
}

fn sybil_checks(built: &Built) -> Vec<Check> {
    let mut fakes: Vec<PublicKey> = Vec::new();
    for &v in &built.vehicles[..2] {
        fakes.extend(built.sim.actor(v).as_vehicle().expect("vehicle").sybil_keys());
    }
    let mut leaked = Vec::new();
    for i in 0..built.sim.world().rsi_count() as u32 {
        let chain = chain_of(built, NodeId(i));
        leaked.extend(fakes.iter().filter(|pk| chain.peek_block(pk).is_some()).map(|pk| (i, *pk)));
    }
    let mut checks = vec![
        Check::new("sybil_identities_requested", !fakes.is_empty(), format!("{} fake keys", fakes.len())),
        Check::new(
            "sybil_no_block_anywhere",
            leaked.is_empty(),
            format!("{} fake key(s) hold a block", leaked.len()),
        ),
    ];
    if let Some(spot) = built.sybil_spot {
        let world = built.sim.world();
        let launch = built.sim.actor(built.vehicles[1]).as_vehicle().expect("vehicle").plan().tx_start;
        let empty = !world.vehicle_present_near(&spot, built.params.presence_tolerance, launch, NodeId(u32::MAX));
        checks.push(Check::new(
            "sybil_claimed_spot_empty",
            empty,
            format!("({:.1}, {:.1}) at t={launch}", spot.x, spot.y),
        ));
    }
    checks
}

fn tamper_checks(built: &Built, report: &SimulationReport, log: &TamperLog) -> Vec<Check> {
    let mut forged_found = 0;
    let mut originals_missing = 0;
    let mut silent = Vec::new();
    for &r in &built.honest_rsis {
        let chain = chain_of(built, r);
        let stored: BTreeSet<Digest> = chain
            .blocks()
            .iter()
            .flat_map(|b| b.tx_digests().iter().copied())
            .collect();
        forged_found += log.forged.iter().filter(|d| stored.contains(d)).count();
        originals_missing += log.originals.iter().filter(|d| !stored.contains(d)).count();
        if report.node_counter(r, "tx_rejected.bad_signature") == 0 {
            silent.push(r.to_string());
        }
    }
    vec![
        Check::new("tamper_forgeries_injected", !log.forged.is_empty(), format!("{} forged", log.forged.len())),
        Check::new(
            "tamper_forgeries_absent",
            forged_found == 0,
            format!("{forged_found} forged transaction copies stored"),
        ),
        Check::new(
            "tamper_originals_present",
            originals_missing == 0,
            format!("{originals_missing} original copies missing"),
        ),
        Check::new(
            "tamper_rejected_by_every_rsi",
            silent.is_empty(),
            format!("RSIs without a bad-signature rejection: {silent:?}"),
        ),
    ]
}

fn malicious_rsi_checks(s: &Scenario, built: &Built, report: &SimulationReport) -> Vec<Check> {
    let bad = NodeId(s.rsi_count - 1);
    let sent = report.node_counter(bad, "mutations_sent");
    let chain = reference(built);
    // A mutation of any stored transaction, by the rebroadcaster's rule.
    let mut mutated_stored = 0;
    let stored: BTreeSet<Digest> = chain
        .blocks()
        .iter()
        .flat_map(|b| b.tx_digests().iter().copied())
        .collect();
    for b in &chain.blocks()[1..] {
        for tx in &b.ledger()[1..] {
            let mut m = tx.clone();
            match m.payload.first_mut() {
                Some(x) => *x ^= 0xff,
                None => m.payload.push(0xff),
            }
            if stored.contains(&m.digest()) {
                mutated_stored += 1;
            }
        }
    }
    let silent: Vec<String> = built
        .honest_rsis
        .iter()
        .filter(|&&r| report.node_counter(r, "tx_rejected.bad_signature") == 0)
        .map(ToString::to_string)
        .collect();
    vec![
        Check::new("malicious_rsi_mutations_sent", sent > 0, format!("{sent} mutated rebroadcasts")),
        Check::new(
            "malicious_rsi_mutations_absent",
            mutated_stored == 0,
            format!("{mutated_stored} mutated copies on honest chains"),
        ),
        Check::new(
            "malicious_rsi_rejected_by_honest",
            silent.is_empty(),
            format!("honest RSIs without a bad-signature rejection: {silent:?}"),
        ),
    ]
}

/// Vehicle-side Merkle root over its own stored transactions, as a light
/// client would compute it. One record per sampled vehicle, leaves =
/// transactions emitted under its current key.
fn merkle_probe(s: &Scenario, built: &Built) -> (KindStats, Vec<MetricRecord>) {
    let mut stats = KindStats::default();
    let mut records = Vec::new();
    let chain = reference(built);
    let n = built.vehicles.len();
    let samples = (s.merkle_samples as usize).min(n);
    for k in 0..samples {
        let v = built.vehicles[k * n / samples];
        let Some(pk) = built.sim.actor(v).as_vehicle().and_then(|vs| vs.key_history().last().map(|r| r.pk)) else {
            continue;
        };
        let Some(block) = chain.peek_block(&pk) else { continue };
        let txs = &block.ledger()[1..];
        if txs.is_empty() {
            continue;
        }
        let (_, ns) = meter::measure(s.timing, &s.cost_model, || {
            let leaves: Vec<Digest> = txs.iter().map(Transaction::digest).collect();
            MerkleTree::from_leaves(leaves).expect("non-empty").root()
        });
        stats.add(ns);
        records.push(MetricRecord {
            kind: MetricKind::MerkleBuild,
            node: v.0,
            chain_size: chain.len() as u32,
            elapsed_ns: ns,
            sim_time: built.sim.now(),
        });
    }
    (stats, records)
}
