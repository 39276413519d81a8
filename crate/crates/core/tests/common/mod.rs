//! Scenario builders and checks shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use speedychain::crypto::{hash, merkle_verify, Digest, KeyPair, MembershipProof, PublicKey};
use speedychain::harness::{build, evaluate, Built, Check, MobilityOverride, RunOutcome, Scenario};
use speedychain::ledger::{
    create_block, make_genesis_tx, validate_block, validate_chain, AccessLevel, BlockHeader, Blockchain, DeviceBlock, Geotag,
    Transaction,
};
use speedychain::node::SimNode;
use speedychain::protocol::Encode;
use speedychain::simnet::{LinkModel, NodeId, Partition, Point, Waypoint};

pub fn kp(n: u64) -> KeyPair {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&n.to_be_bytes());
    seed[31] = 0x17;
    KeyPair::from_seed(seed)
}

pub fn here() -> Geotag {
    Geotag::from_degrees(45.0701, 7.6868).unwrap()
}

/// A bound device block followed by `n` signed transactions.
pub fn block_with(device: &KeyPair, n: u64) -> DeviceBlock {
    let chain = Blockchain::new(&kp(0), here());
    let g = make_genesis_tx(device, here(), 5);
    let pending = create_block(chain.tip(), &g, 100_000, 5).unwrap();
    let h = pending.header_hash();
    let mut b = pending.bind(g.bind(device, h)).unwrap();
    for i in 1..=n {
        let tx = Transaction::new_signed(
            device,
            b.tail_digest(),
            format!("reading-{i:04}").into_bytes(),
            here(),
            AccessLevel::OwnerOnly,
            10 + i,
        );
        b.append_transaction(tx, 10 + i).unwrap();
    }
    b
}

fn flip_each<const N: usize>(bytes: &[u8; N]) -> Vec<[u8; N]> {
    (0..N)
        .map(|i| {
            let mut b = *bytes;
            b[i] ^= 0x01;
            b
        })
        .collect()
}

fn other_levels(a: AccessLevel) -> Vec<AccessLevel> {
    [AccessLevel::Public, AccessLevel::OwnerOnly, AccessLevel::NamedProvider]
        .into_iter()
        .filter(|&l| l != a)
        .collect()
}

fn nudged(t: u64) -> Vec<u64> {
    let mut v = vec![t + 1];
    if t > 0 {
        v.push(t - 1);
    }
    v
}

/// Every single-field variant of `tx`.
pub fn tx_mutations(tx: &Transaction) -> Vec<(String, Transaction)> {
    let mut out = Vec::new();
    let mut push = |name: String, f: &dyn Fn(&mut Transaction)| {
        let mut m = tx.clone();
        f(&mut m);
        if m != *tx {
            out.push((name, m));
        }
    };
    for (i, d) in flip_each(&tx.prev_tx_hash.0).into_iter().enumerate() {
        push(format!("prev_tx_hash[{i}]"), &|m| m.prev_tx_hash = Digest(d));
    }
    for i in 0..tx.payload.len() {
        push(format!("payload[{i}]"), &|m| m.payload[i] ^= 0x01);
    }
    push("payload+1".into(), &|m| m.payload.push(0));
    push("payload-1".into(), &|m| {
        m.payload.pop();
    });
    let (lat, lon) = tx.geotag.e7();
    for (dl, dn) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
        if let Some(g) = Geotag::from_e7(lat + dl, lon + dn) {
            push(format!("geotag{dl:+}{dn:+}"), &|m| m.geotag = g);
        }
    }
    for l in other_levels(tx.access_level) {
        push(format!("access_level={l:?}"), &|m| m.access_level = l);
    }
    for t in nudged(tx.timestamp) {
        push(format!("timestamp={t}"), &|m| m.timestamp = t);
    }
    for (i, s) in flip_each(&tx.signature.0).into_iter().enumerate() {
        push(format!("signature[{i}]"), &|m| m.signature = speedychain::crypto::Signature(s));
    }
    out
}

pub fn header_mutations(h: &BlockHeader) -> Vec<(String, BlockHeader)> {
    let mut out = Vec::new();
    for (i, b) in flip_each(&h.device_pk.0).into_iter().enumerate() {
        out.push((format!("device_pk[{i}]"), BlockHeader { device_pk: PublicKey(b), ..h.clone() }));
    }
    for (i, b) in flip_each(&h.prev_header_hash.0).into_iter().enumerate() {
        out.push((
            format!("prev_header_hash[{i}]"),
            BlockHeader {
                prev_header_hash: Digest(b),
                ..h.clone()
            },
        ));
    }
    for t in nudged(h.expiration) {
        out.push((format!("expiration={t}"), BlockHeader { expiration: t, ..h.clone() }));
    }
    for t in nudged(h.created_at) {
        out.push((format!("created_at={t}"), BlockHeader { created_at: t, ..h.clone() }));
    }
    for l in other_levels(h.access_level) {
        out.push((format!("access_level={l:?}"), BlockHeader { access_level: l, ..h.clone() }));
    }
    out
}

pub struct Sweep {
    pub mutations: usize,
    pub false_negatives: Vec<String>,
}

/// Applies every single-field mutation at every position of blocks holding
/// each of `sizes` transactions (plus genesis) and validates each result.
pub fn tamper_sweep(sizes: &[u64]) -> Sweep {
    let device = kp(42);
    let mut sweep = Sweep {
        mutations: 0,
        false_negatives: Vec::new(),
    };
    for &n in sizes {
        let block = block_with(&device, n);
        assert!(validate_block(&block), "unmutated block must validate");
        let (header, ledger) = block.clone().into_parts();
        for (name, h) in header_mutations(&header) {
            sweep.mutations += 1;
            if validate_block(&DeviceBlock::from_parts(h, ledger.clone())) {
                sweep.false_negatives.push(format!("n={n} header.{name}"));
            }
        }
        for (pos, tx) in ledger.iter().enumerate() {
            for (name, m) in tx_mutations(tx) {
                let mut l = ledger.clone();
                l[pos] = m;
                sweep.mutations += 1;
                if validate_block(&DeviceBlock::from_parts(header.clone(), l)) {
                    sweep.false_negatives.push(format!("n={n} tx[{pos}].{name}"));
                }
            }
        }
    }
    sweep
}

/// Appending leaves the header hash alone; any header field change moves it.
pub fn decoupling(appends: u64) -> Vec<Check> {
    let device = kp(7);
    let mut block = block_with(&device, 0);
    let before = block.header().hash();
    for i in 1..=appends {
        let tx = Transaction::new_signed(&device, block.tail_digest(), i.to_be_bytes().to_vec(), here(), AccessLevel::Public, 10 + i);
        block.append_transaction(tx, 10 + i).unwrap();
    }
    let after = block.header().hash();
    let moved = header_mutations(block.header())
        .iter()
        .filter(|(_, h)| h.hash() != before)
        .count();
    let total = header_mutations(block.header()).len();
    vec![
        Check::new(
            "header_hash_unchanged_by_appends",
            before == after && block.header_hash() == before && block.len() as u64 == appends + 1,
            format!("{appends} appends, {} -> {}", before.to_hex(), after.to_hex()),
        ),
        Check::new(
            "header_field_changes_move_hash",
            moved == total,
            format!("{moved}/{total} header mutations change the hash"),
        ),
        Check::new("block_with_appends_validates", validate_block(&block), "validate_block"),
    ]
}

/// Small deployment used by the integration suites.
pub fn small(name: &str, seed: u64) -> Scenario {
    Scenario {
        name: name.into(),
        seed,
        blockchain_size: 12,
        tx_per_vehicle: 8,
        rsi_count: 4,
        grid_cols: 2,
        merkle_samples: 12,
        ..Scenario::default()
    }
}

fn vehicle(sim_node: &SimNode) -> &speedychain::node::VehicleState {
    sim_node.as_vehicle().expect("vehicle")
}

/// Forced rotation: short expiration window, one rotation per vehicle,
/// Merkle roots published every `kui_period`.
pub fn kui_rotation(seed: u64) -> Vec<Check> {
    let s = Scenario {
        name: "kui".into(),
        seed,
        blockchain_size: 20,
        tx_per_vehicle: 3,
        rsi_count: 4,
        grid_cols: 2,
        expiration_window: 8_000,
        kui_period: 5_000,
        periodic_until: Some(20_000),
        rotations: 1,
        ..Scenario::default()
    };
    let mut b = build(&s).unwrap();
    let (first_tick, second_tick) = (5_050, 15_050);
    b.sim.run_until(first_tick);
    let old: Vec<(PublicKey, Digest, Option<MembershipProof>, Option<Digest>)> = b
        .vehicles
        .iter()
        .map(|&v| {
            let vs = vehicle(b.sim.actor(v));
            let rec = vs.key_history().last().expect("joined before first tick");
            (rec.pk, rec.header, vs.membership_proof().cloned(), vs.merkle_root())
        })
        .collect();
    b.sim.run_until(second_tick);
    let now = b.sim.now();

    let mut checks = Vec::new();
    let old_proofs_ok = old.iter().all(|(pk, _, p, r)| {
        matches!((p, r), (Some(p), Some(r)) if merkle_verify(r, &hash(pk.as_bytes()), p))
    });
    checks.push(Check::new("old_proofs_valid_before_rotation", old_proofs_ok, "every vehicle held a proof at t=5050"));

    let mut stale_accepted = 0;
    let mut fresh_rejected = 0;
    let mut linked = Vec::new();
    let mut not_rotated = 0;
    let rsis: Vec<NodeId> = (0..s.rsi_count).map(NodeId).collect();
    for (i, &v) in b.vehicles.iter().enumerate() {
        let vs = vehicle(b.sim.actor(v));
        let (old_pk, old_header, old_proof, _) = &old[i];
        let Some(new) = vs.key_history().last().filter(|r| r.pk != *old_pk) else {
            not_rotated += 1;
            continue;
        };
        let root = vs.merkle_root().expect("root after rotation");
        if let Some(p) = old_proof {
            if merkle_verify(&root, &hash(old_pk.as_bytes()), p) {
                stale_accepted += 1;
            }
        }
        match vs.membership_proof() {
            Some(p) if merkle_verify(&root, &hash(new.pk.as_bytes()), p) => {}
            _ => fresh_rejected += 1,
        }
        let chain = b.sim.actor(rsis[0]).as_rsi().unwrap().chain();
        let old_block = chain.block_by_key(old_pk).expect("old block kept");
        let new_block = chain.block_by_key(&new.pk).expect("new block stored");
        let new_bytes = new_block.to_bytes();
        let old_bytes = old_block.to_bytes();
        let mut needles: Vec<Vec<u8>> = vec![old_pk.0.to_vec(), old_header.0.to_vec()];
        needles.extend(old_block.tx_digests().iter().map(|d| d.0.to_vec()));
        let mut back: Vec<Vec<u8>> = vec![new.pk.0.to_vec(), new.header.0.to_vec()];
        back.extend(new_block.tx_digests().iter().map(|d| d.0.to_vec()));
        let contains = |hay: &[u8], n: &[u8]| hay.windows(n.len()).any(|w| w == n);
        if needles.iter().any(|n| contains(&new_bytes, n)) || back.iter().any(|n| contains(&old_bytes, n)) {
            linked.push(v.to_string());
        }
    }
    checks.push(Check::new("every_vehicle_rotated", not_rotated == 0, format!("{not_rotated} without a new key")));
    checks.push(Check::new(
        "old_proof_fails_new_root",
        stale_accepted == 0,
        format!("{stale_accepted} stale proofs accepted"),
    ));
    checks.push(Check::new(
        "new_proof_verifies",
        fresh_rejected == 0,
        format!("{fresh_rejected} vehicles without a verifying proof"),
    ));

    let mut bad_counts = Vec::new();
    for &r in &rsis {
        let chain = b.sim.actor(r).as_rsi().unwrap().chain();
        for &v in &b.vehicles {
            let active = vehicle(b.sim.actor(v))
                .key_history()
                .iter()
                .filter(|k| chain.find_block(&k.pk, now).is_some())
                .count();
            if active != 1 {
                bad_counts.push(format!("{r}/{v}: {active}"));
            }
        }
    }
    checks.push(Check::new(
        "one_active_block_per_vehicle",
        bad_counts.is_empty(),
        format!("at t={now}, off counts: {bad_counts:?}"),
    ));
    checks.push(Check::new(
        "no_link_between_old_and_new",
        linked.is_empty(),
        format!("linked vehicles: {linked:?}"),
    ));
    let digests: std::collections::BTreeSet<_> = rsis
        .iter()
        .map(|&r| b.sim.actor(r).as_rsi().unwrap().chain().digest())
        .collect();
    checks.push(Check::new("chains_identical", digests.len() == 1, format!("{} digests", digests.len())));
    checks
}

/// Runs `s` and keeps the simulator for inspection.
pub fn run_built(s: &Scenario) -> (Built, RunOutcome) {
    let mut b = build(s).unwrap();
    let report = b.sim.run_until_quiescent(s.effective_max_time());
    let out = evaluate(s, &b, report, None);
    (b, out)
}

/// Every RSI holds `v`'s `k` transactions in emission order on a chain
/// that validates.
pub fn in_order(b: &Built, v: NodeId, k: u32) -> Check {
    let pk = vehicle(b.sim.actor(v)).key_history().last().expect("joined").pk;
    let mut bad = Vec::new();
    for r in 0..b.sim.world().rsi_count() as u32 {
        let chain = b.sim.actor(NodeId(r)).as_rsi().unwrap().chain();
        let Some(block) = chain.block_by_key(&pk) else {
            bad.push(format!("n{r}: no block"));
            continue;
        };
        let txs = &block.ledger()[1..];
        let ordered = txs.windows(2).all(|w| w[0].timestamp < w[1].timestamp);
        if txs.len() != k as usize || !ordered || !validate_chain(chain) {
            bad.push(format!("n{r}: {} txs, ordered {ordered}", txs.len()));
        }
    }
    Check::new("stored_in_order", bad.is_empty(), format!("{k} transactions; problems {bad:?}"))
}

/// Vehicle 0 is cut off from everyone while it emits, then reconnects.
pub fn partition_flush(seed: u64, k: u32) -> Vec<Check> {
    let mut s = Scenario {
        name: "partition".into(),
        seed,
        blockchain_size: 3,
        tx_per_vehicle: k,
        rsi_count: 2,
        grid_cols: 2,
        merkle_samples: 3,
        ..Scenario::default()
    };
    let start = s.effective_tx_start();
    let heal = s.tx_end() + 300;
    let target = NodeId(s.rsi_count);
    s.link.partitions = vec![Partition {
        from: start - 10,
        until: heal,
        nodes: vec![target.0],
    }];
    let (b, out) = run_built(&s);
    let mut checks = out.checks.clone();
    let buffered = out.simulation.node_counter(target, "tx_buffered");
    checks.push(Check::new("emissions_buffered", buffered == k as u64, format!("{buffered} of {k} buffered")));
    let acked = out.simulation.node_counter(target, "tx_acked");
    checks.push(Check::new("acked_after_heal", acked == k as u64, format!("{acked} acks")));
    checks.push(in_order(&b, target, k));
    checks
}

/// Vehicle 1 drives out of coverage and hands its transactions to
/// vehicle 0, which is parked within radio range of both it and an RSI.
pub fn mule_forward(seed: u64, k: u32) -> Vec<Check> {
    let mut s = Scenario {
        name: "mule".into(),
        seed,
        blockchain_size: 3,
        tx_per_vehicle: k,
        rsi_count: 2,
        rsi_positions: vec![Point::new(0.0, 0.0), Point::new(0.0, 300.0)],
        merkle_samples: 3,
        ..Scenario::default()
    };
    let start = s.effective_tx_start();
    let at = |t: u64, x: f64, y: f64| Waypoint { at: t, pos: Point::new(x, y) };
    s.mobility = vec![
        MobilityOverride {
            vehicle: 0,
            waypoints: vec![at(0, 230.0, 0.0)],
        },
        MobilityOverride {
            vehicle: 1,
            waypoints: vec![at(0, 100.0, 0.0), at(start - 200, 100.0, 0.0), at(start - 100, 320.0, 0.0)],
        },
    ];
    let (b, out) = run_built(&s);
    let world = b.sim.world();
    let target = b.vehicles[1];
    let isolated = (start..=s.tx_end()).step_by(5).all(|t| !world.covered(target, t));
    let mut checks = out.checks.clone();
    checks.push(Check::new("target_out_of_coverage", isolated, "no RSI in range while emitting"));
    let forwarded = out.simulation.node_counter(target, "tx_forwarded");
    checks.push(Check::new("forwarded_to_neighbor", forwarded == k as u64, format!("{forwarded} of {k} forwarded")));
    let carried = out.simulation.node_counter(b.vehicles[0], "mule_relayed")
        + out.simulation.node_counter(b.vehicles[0], "mule_buffered");
    checks.push(Check::new("neighbor_carried", carried >= k as u64, format!("{carried} carried")));
    checks.push(in_order(&b, target, k));
    checks
}

pub fn latency_link(ms: f64) -> LinkModel {
    let mut l = LinkModel::default();
    l.rsi_rsi.base_ms = ms;
    l.vehicle_rsi.base_ms = ms;
    l.vehicle_vehicle.base_ms = ms;
    l
}
