use std::sync::Arc;

use super::*;
use crate::crypto::{hash, merkle_build_canonical, KeyPair, PublicKey};
use crate::ledger::{create_block, make_genesis_tx, AccessLevel, Blockchain, DeviceBlock, Geotag, Transaction};
use crate::protocol::{Encode, Message, RejectReason};
use crate::simnet::{Adjacency, MobilityTrace, NodeId, Point, Projection, Topology, World};

fn kp(n: u64) -> KeyPair {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&n.to_be_bytes());
    seed[31] = 0x5c;
    KeyPair::from_seed(seed)
}

fn authority() -> KeyPair {
    kp(1_000)
}

fn origin() -> Geotag {
    Projection::default().to_geotag(&Point::new(0.0, 0.0)).unwrap()
}

fn params(rsis: usize, required: u32) -> Params {
    Arc::new(ProtocolParams {
        authority_pk: authority().public,
        rsi_pks: (0..rsis as u64).map(|i| kp(100 + i).public).collect(),
        witness: WitnessPolicy {
            required_reports: required,
            ..Default::default()
        },
        presence_tolerance: 25.0,
        expiration_window: 10_000,
        kui_period: 30_000,
        beacon_period: 1_000,
        periodic_until: 100_000,
        slot: SlotSchedule::for_link(&LinkModel::default(), rsis),
        join_timeout: 6_000,
        join_retries: 3,
        reorder_capacity: 64,
        timing: TimingMode::Metered,
        cost_model: CostModel::default(),
        keep_raw_metrics: true,
    })
}

/// RSIs 300 m apart on the x axis, vehicles parked where given.
fn world(rsis: usize, vehicles: &[(f64, f64)]) -> World {
    let topo = Topology {
        rsi_positions: (0..rsis).map(|i| Point::new(i as f64 * 300.0, 0.0)).collect(),
        adjacency: Adjacency::FullMesh,
        rsi_range: 250.0,
        v2v_range: 100.0,
        projection: Projection::default(),
    };
    let mobility = vehicles
        .iter()
        .map(|&(x, y)| MobilityTrace::stationary(Point::new(x, y)))
        .collect();
    World::new(topo, mobility, LinkModel::default()).unwrap()
}

fn rsi(index: usize, rsis: usize, chain: Blockchain, p: &Params) -> RsiState {
    let me = kp(100 + index as u64);
    let cred = Message::credential(&authority(), me.public);
    let peers = (0..rsis as u32).filter(|&i| i as usize != index).map(NodeId).collect();
    RsiState::new(
        NodeId(index as u32),
        index,
        me,
        cred,
        chain,
        peers,
        false,
        RsiBehavior::Honest,
        p.clone(),
    )
}

fn deliver(from: NodeId, m: &Message) -> Input<NodeTimer> {
    Input::Message {
        from,
        kind: m.kind(),
        bytes: m.to_bytes().into(),
    }
}

fn joined(device: &KeyPair, chain: &Blockchain, window: u64, now: u64) -> DeviceBlock {
    let g = make_genesis_tx(device, origin(), now);
    let pending = create_block(chain.tip(), &g, window, now).unwrap();
    let h = pending.header_hash();
    pending.bind(g.bind(device, h)).unwrap()
}

fn chain_with(devices: &[&KeyPair], window: u64) -> Blockchain {
    let mut chain = Blockchain::new(&authority(), origin());
    for d in devices {
        let b = joined(d, &chain, window, 0);
        chain.push_block(b).unwrap();
    }
    chain
}

fn tx_after(device: &KeyPair, prev: crate::crypto::Digest, n: u8, at: u64) -> Transaction {
    Transaction::new_signed(device, prev, vec![n; 8], origin(), AccessLevel::OwnerOnly, at)
}

fn vehicle(id: u32, p: &Params) -> VehicleState {
    VehicleState::new(NodeId(id), id as u64, VehiclePlan::default(), VehicleBehavior::Honest, p.clone())
}

#[test]
fn slot_schedule_rounds_up_to_own_slot() {
    let s = SlotSchedule::for_link(&LinkModel::default(), 15);
    assert_eq!(s.len, 20);
    assert_eq!(s.cycle(), 300);
    assert_eq!(s.next_start(0, 0), 0);
    assert_eq!(s.next_start(0, 1), 300);
    assert_eq!(s.next_start(3, 61), 360);
    assert_eq!(s.next_start(3, 60), 60);
    assert_eq!(s.next_start(14, 281), 580);
    assert!(s.deadline < s.len);
}

#[test]
fn witness_policy_needs_a_report() {
    assert!(WitnessPolicy::default().validate().is_ok());
    let p = WitnessPolicy {
        required_reports: 0,
        ..Default::default()
    };
    assert_eq!(p.validate(), Err(PolicyError));
}

#[test]
fn bootstrap_emits_verifying_genesis_and_buffers_without_rsi() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0)]);
    let mut v = vehicle(1, &p);
    let mut ctx = Ctx::new(5, NodeId(1), &w);
    let Message::JoinRequest { genesis } = v.bootstrap(&mut ctx) else { panic!() };
    assert!(genesis.verify());
    assert!(!genesis.is_bound());
    assert_eq!(Some(genesis.embedded_pk()), v.public_key());
    assert_eq!(v.key_expiry(), 5 + p.expiration_window);
    // No credential seen yet: nothing leaves the vehicle.
    assert!(ctx.sent_messages().is_empty());
    assert!(v.join_pending());

    // First contact releases the request.
    let cred = Message::credential(&authority(), kp(100).public);
    let mut ctx = Ctx::new(6, NodeId(1), &w);
    v.handle(&mut ctx, vec![deliver(NodeId(0), &cred)]);
    let sent = ctx.sent_messages();
    assert_eq!(sent.len(), 1);
    assert_eq!(sent[0], (NodeId(0), Message::JoinRequest { genesis }));
    assert!(!v.join_pending());
}

#[test]
fn two_bootstraps_use_distinct_keys() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0)]);
    let mut v = vehicle(1, &p);
    let mut ctx = Ctx::new(0, NodeId(1), &w);
    v.bootstrap(&mut ctx);
    let a = v.public_key().unwrap();
    v.rotate_key(&mut ctx);
    assert_ne!(a, v.public_key().unwrap());
}

#[test]
fn verify_rsi_checks_the_authority_signature() {
    let p = params(2, 1);
    let mut v = vehicle(2, &p);
    let good = kp(100).public;
    let sig = crate::crypto::sign(&authority().private, &crate::protocol::credential_signing_bytes(&good));
    assert!(v.verify_rsi(&good, &sig));
    assert!(v.trusted_rsis().contains(&good));

    let other = kp(101).public;
    let by_peer = crate::crypto::sign(&kp(100).private, &crate::protocol::credential_signing_bytes(&other));
    assert!(!v.verify_rsi(&other, &by_peer));

    let mut tampered = other;
    tampered.0[0] ^= 1;
    let sig = crate::crypto::sign(&authority().private, &crate::protocol::credential_signing_bytes(&other));
    assert!(!v.verify_rsi(&tampered, &sig));
    assert_eq!(v.trusted_rsis().len(), 1);
}

#[test]
fn join_fans_out_to_every_neighbor_in_radius() {
    let p = params(1, 1);
    // Joiner at (10, 0); three vehicles within 400 m; one far away.
    let w = world(1, &[(10.0, 0.0), (50.0, 10.0), (-100.0, 0.0), (200.0, 200.0), (900.0, 0.0)]);
    let mut r = rsi(0, 1, chain_with(&[], 10_000), &p);
    let joiner = kp(7);
    let g = make_genesis_tx(&joiner, w.geotag_of(NodeId(1), 0), 0);
    let mut ctx = Ctx::new(0, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &Message::JoinRequest { genesis: g })]);
    let sent = ctx.sent_messages();
    assert_eq!(sent.len(), 3);
    let mut to: Vec<u32> = sent.iter().map(|s| s.0 .0).collect();
    to.sort();
    assert_eq!(to, vec![2, 3, 4]);
    assert!(sent
        .iter()
        .all(|(_, m)| matches!(m, Message::WitnessQuery { pk, .. } if *pk == joiner.public)));
    assert!(r.in_pool(&joiner.public));
    assert_eq!(ctx.pending_timers().len(), 1);
}

#[test]
fn join_for_active_key_is_rejected() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0)]);
    let device = kp(7);
    let chain = chain_with(&[&device], 10_000);
    let header = chain.blocks()[1].header_hash();
    let mut r = rsi(0, 1, chain, &p);
    let g = make_genesis_tx(&device, origin(), 3);
    let mut ctx = Ctx::new(3, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &Message::JoinRequest { genesis: g })]);
    assert_eq!(
        ctx.sent_messages(),
        vec![(
            NodeId(1),
            Message::Reject {
                subject: header,
                reason: RejectReason::DuplicateKey
            }
        )]
    );
    assert!(!r.in_pool(&device.public));
}

#[test]
fn join_with_bad_signature_is_rejected() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0)]);
    let mut r = rsi(0, 1, chain_with(&[], 10_000), &p);
    let g = make_genesis_tx(&kp(7), origin(), 3);
    let mut tx = g.transaction().clone();
    tx.timestamp += 1;
    let forged = crate::ledger::GenesisTransaction::from_transaction(tx).unwrap();
    let mut ctx = Ctx::new(3, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &Message::JoinRequest { genesis: forged })]);
    let sent = ctx.sent_messages();
    assert!(matches!(
        sent[0].1,
        Message::Reject {
            reason: RejectReason::BadSignature,
            ..
        }
    ));
    assert_eq!(r.pool_len(), 0);
}

/// RSI 0 with one joiner in its pool; the joiner is vehicle node 2, a
/// witness with an active block is node 3.
fn pooled(required: u32) -> (World, Params, RsiState, KeyPair, KeyPair) {
    let p = params(2, required);
    let w = world(2, &[(10.0, 0.0), (20.0, 0.0)]);
    let witness = kp(8);
    let mut r = rsi(0, 2, chain_with(&[&witness], 100_000), &p);
    let joiner = kp(7);
    let g = make_genesis_tx(&joiner, w.geotag_of(NodeId(2), 0), 0);
    let mut ctx = Ctx::new(0, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(2), &Message::JoinRequest { genesis: g })]);
    (w, p, r, joiner, witness)
}

#[test]
fn one_report_confirms_when_one_is_required() {
    let (w, _, mut r, joiner, witness) = pooled(1);
    let report = Message::witness_report(&witness, joiner.public, true);
    let mut ctx = Ctx::new(7, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &report)]);
    assert_eq!(ctx.counted("join_confirmed"), 1);
    assert!(ctx.pending_timers().iter().any(|t| t.1 == NodeTimer::SlotStart));

    // The slot allocates a header and offers it, signed by the RSI.
    let at = ctx.pending_timers()[0].0;
    let mut ctx = Ctx::new(at, NodeId(0), &w);
    r.handle(&mut ctx, vec![Input::Timer(NodeTimer::SlotStart)]);
    let sent = ctx.sent_messages();
    let Message::HeaderOffer {
        device_pk,
        header_hash,
        expiration,
        rsi_pk,
        rsi_signature,
    } = sent[0].1.clone()
    else {
        panic!("{sent:?}")
    };
    assert_eq!(sent[0].0, NodeId(2));
    assert_eq!(device_pk, joiner.public);
    assert!(crate::crypto::verify(
        &rsi_pk,
        &crate::protocol::offer_signing_bytes(&device_pk, &header_hash, expiration),
        &rsi_signature
    ));

    // Binding completes the block: appended, broadcast, acknowledged.
    let g = make_genesis_tx(&joiner, w.geotag_of(NodeId(2), 0), 0).bind(&joiner, header_hash);
    let mut ctx = Ctx::new(at + 10, NodeId(0), &w);
    let before = r.chain().len();
    r.handle(&mut ctx, vec![deliver(NodeId(2), &Message::JoinRequest { genesis: g })]);
    assert_eq!(r.chain().len(), before + 1);
    assert!(crate::ledger::validate_chain(r.chain()));
    let sent = ctx.sent_messages();
    assert!(matches!(&sent[0], (NodeId(1), Message::BlockBroadcast { block }) if block.header_hash() == header_hash));
    assert_eq!(sent[1], (NodeId(2), Message::Ack { subject: header_hash }));
    assert!(!r.in_pool(&joiner.public));
    assert_eq!(r.metrics().stats(crate::metrics::MetricKind::BlockAdd).count, 1);
}

#[test]
fn one_report_of_two_required_stays_pending() {
    let (w, _, mut r, joiner, witness) = pooled(2);
    let report = Message::witness_report(&witness, joiner.public, true);
    let mut ctx = Ctx::new(7, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &report), deliver(NodeId(3), &report)]);
    assert_eq!(ctx.counted("join_confirmed"), 0);
    assert!(r.in_pool(&joiner.public));
    // An RSI peer is a second, distinct witness.
    let second = Message::witness_report(&kp(101), joiner.public, true);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &second)]);
    assert_eq!(ctx.counted("join_confirmed"), 1);
}

#[test]
fn forged_report_never_confirms_and_entry_expires() {
    let (w, p, mut r, joiner, witness) = pooled(1);
    let Message::WitnessReport {
        pk, witness_pk, observed, ..
    } = Message::witness_report(&witness, joiner.public, true)
    else {
        unreachable!()
    };
    let forged = Message::WitnessReport {
        pk,
        witness_pk,
        observed,
        witness_signature: crate::crypto::Signature([3; 64]),
    };
    let mut ctx = Ctx::new(7, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &forged)]);
    assert_eq!(ctx.counted("witness_bad_signature"), 1);
    let at = p.witness.pool_timeout;
    let mut ctx = Ctx::new(at, NodeId(0), &w);
    r.handle(&mut ctx, vec![Input::Timer(NodeTimer::PoolTimeout(joiner.public, 0))]);
    assert!(!r.in_pool(&joiner.public));
    assert_eq!(ctx.counted("pool_expired"), 1);
}

#[test]
fn report_from_unknown_witness_is_ignored() {
    let (w, _, mut r, joiner, _) = pooled(1);
    let stranger = Message::witness_report(&kp(55), joiner.public, true);
    let mut ctx = Ctx::new(7, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &stranger)]);
    assert_eq!(ctx.counted("witness_unknown"), 1);
    assert_eq!(ctx.counted("join_confirmed"), 0);
}

fn tx_rsi() -> (World, RsiState, KeyPair, DeviceBlock) {
    let p = params(3, 1);
    let w = world(3, &[(10.0, 0.0)]);
    let device = kp(7);
    let chain = chain_with(&[&device], 10_000);
    let block = chain.blocks()[1].clone();
    (w, rsi(0, 3, chain, &p), device, block)
}

#[test]
fn valid_tx_is_acked_and_gossiped() {
    let (w, mut r, device, block) = tx_rsi();
    let tx = tx_after(&device, block.tail_digest(), 1, 5);
    let d = tx.digest();
    let mut ctx = Ctx::new(5, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &Message::TxSubmit { pk: device.public, tx: tx.clone() })]);
    let sent = ctx.sent_messages();
    assert_eq!(sent.len(), 3);
    assert_eq!(sent[0], (NodeId(1), Message::TxBroadcast { pk: device.public, tx: tx.clone() }));
    assert_eq!(sent[1].0, NodeId(2));
    assert_eq!(sent[2], (NodeId(3), Message::Ack { subject: d }));
    assert_eq!(r.chain().blocks()[1].len(), 2);
    assert_eq!(r.metrics().stats(crate::metrics::MetricKind::TxAdd).count, 1);
}

fn rejection(r: &mut RsiState, w: &World, now: u64, pk: PublicKey, tx: Transaction) -> RejectReason {
    let mut ctx = Ctx::new(now, NodeId(0), w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &Message::TxSubmit { pk, tx })]);
    match ctx.sent_messages().pop() {
        Some((NodeId(3), Message::Reject { reason, .. })) => reason,
        other => panic!("expected reject, got {other:?}"),
    }
}

#[test]
fn tx_rejections_carry_the_ledger_reason() {
    let (w, mut r, device, block) = tx_rsi();
    let wrong_key = tx_after(&kp(9), block.tail_digest(), 1, 5);
    assert_eq!(rejection(&mut r, &w, 5, device.public, wrong_key), RejectReason::BadSignature);

    let late = tx_after(&device, block.tail_digest(), 1, 10_001);
    assert_eq!(rejection(&mut r, &w, 10_001, device.public, late), RejectReason::BlockExpired);

    let unknown = tx_after(&kp(9), block.tail_digest(), 1, 5);
    assert_eq!(rejection(&mut r, &w, 5, kp(9).public, unknown), RejectReason::UnknownDevice);

    let mut flipped = tx_after(&device, block.tail_digest(), 1, 5);
    flipped.payload[0] ^= 1;
    assert_eq!(rejection(&mut r, &w, 5, device.public, flipped), RejectReason::BadSignature);

    let good = tx_after(&device, block.tail_digest(), 1, 5);
    let mut ctx = Ctx::new(5, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(3), &Message::TxSubmit { pk: device.public, tx: good })]);
    let fork = tx_after(&device, block.tail_digest(), 2, 6);
    assert_eq!(rejection(&mut r, &w, 6, device.public, fork), RejectReason::BrokenChainLink);
    assert_eq!(r.chain().blocks()[1].len(), 2);
}

#[test]
fn duplicate_broadcast_applies_once() {
    let (w, mut r, device, block) = tx_rsi();
    let tx = tx_after(&device, block.tail_digest(), 1, 5);
    let m = Message::TxBroadcast { pk: device.public, tx };
    let mut ctx = Ctx::new(5, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &m), deliver(NodeId(2), &m)]);
    let mut ctx2 = Ctx::new(9, NodeId(0), &w);
    r.handle(&mut ctx2, vec![deliver(NodeId(1), &m)]);
    assert_eq!(r.chain().blocks()[1].len(), 2);
    assert_eq!(ctx.counted("tx_duplicate") + ctx2.counted("tx_duplicate"), 2);
    // Peer updates are not re-gossiped over a full mesh.
    assert!(ctx.sent_messages().is_empty());
}

#[test]
fn block_with_broken_header_link_is_ignored() {
    let (w, mut r, _, _) = tx_rsi();
    let before = r.chain().digest();
    let other = chain_with(&[&kp(20), &kp(21)], 10_000);
    let stray = other.blocks()[1].clone();
    let mut ctx = Ctx::new(5, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &Message::BlockBroadcast { block: stray })]);
    assert_eq!(r.chain().digest(), before);
    assert_eq!(ctx.counted("peer_block_applied"), 0);
}

#[test]
fn out_of_order_txs_wait_for_their_predecessor() {
    let (w, mut r, device, block) = tx_rsi();
    let t1 = tx_after(&device, block.tail_digest(), 1, 5);
    let t2 = tx_after(&device, t1.digest(), 2, 6);
    let mut ctx = Ctx::new(6, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(1), &Message::TxBroadcast { pk: device.public, tx: t2.clone() })]);
    assert_eq!(r.reorder_len(), 1);
    assert_eq!(r.chain().blocks()[1].len(), 1);
    let mut ctx = Ctx::new(7, NodeId(0), &w);
    r.handle(&mut ctx, vec![deliver(NodeId(2), &Message::TxBroadcast { pk: device.public, tx: t1.clone() })]);
    assert_eq!(r.reorder_len(), 0);
    assert_eq!(r.chain().blocks()[1].ledger()[1..], [t1, t2]);
    assert!(crate::ledger::validate_chain(r.chain()));
}

#[test]
fn batched_and_single_inputs_cost_the_same() {
    let (w, mut a, device, block) = tx_rsi();
    let (_, mut b, _, _) = tx_rsi();
    let mut prev = block.tail_digest();
    let mut txs = Vec::new();
    for i in 0..6u8 {
        let tx = tx_after(&device, prev, i, 5);
        prev = tx.digest();
        txs.push(Message::TxSubmit { pk: device.public, tx });
    }
    let mut ctx = Ctx::new(5, NodeId(0), &w);
    a.handle(&mut ctx, txs.iter().map(|m| deliver(NodeId(3), m)).collect());
    for m in &txs {
        let mut ctx = Ctx::new(5, NodeId(0), &w);
        b.handle(&mut ctx, vec![deliver(NodeId(3), m)]);
    }
    assert_eq!(a.chain().digest(), b.chain().digest());
    let kind = crate::metrics::MetricKind::TxAdd;
    assert_eq!(a.metrics().stats(kind), b.metrics().stats(kind));
    assert_eq!(a.metrics().stats(kind).count, 6);
}

#[test]
fn kui_root_of_one_key_is_its_leaf() {
    let p = params(2, 1);
    let w = world(2, &[]);
    let device = kp(7);
    let mut r = rsi(0, 2, chain_with(&[&device], 100_000), &p);
    let mut ctx = Ctx::new(30_000, NodeId(0), &w);
    r.kui_tick(&mut ctx);
    assert_eq!(r.kui_root(), Some((1, hash(device.public.as_bytes()))));
    assert_eq!(
        ctx.sent_messages(),
        vec![(
            NodeId(1),
            Message::KuiRoot {
                root: hash(device.public.as_bytes()),
                epoch: 1,
                proof: None
            }
        )]
    );
}

#[test]
fn identical_chains_give_identical_roots() {
    let p = params(2, 1);
    let w = world(2, &[]);
    let devices: Vec<KeyPair> = (0..5).map(|i| kp(30 + i)).collect();
    let refs: Vec<&KeyPair> = devices.iter().collect();
    let mut a = rsi(0, 2, chain_with(&refs, 100_000), &p);
    let mut b = rsi(1, 2, chain_with(&refs, 100_000), &p);
    let mut ca = Ctx::new(30_000, NodeId(0), &w);
    let mut cb = Ctx::new(30_000, NodeId(1), &w);
    a.kui_tick(&mut ca);
    b.kui_tick(&mut cb);
    assert_eq!(a.kui_root(), b.kui_root());
    let keys: Vec<PublicKey> = devices.iter().map(|d| d.public).collect();
    assert_eq!(a.kui_root().unwrap().1, merkle_build_canonical(&keys).unwrap().root());
}

#[test]
fn kui_tick_without_active_keys_is_skipped() {
    let p = params(1, 1);
    let w = world(1, &[]);
    let device = kp(7);
    let mut r = rsi(0, 1, chain_with(&[&device], 100), &p);
    let mut ctx = Ctx::new(30_000, NodeId(0), &w);
    r.kui_tick(&mut ctx);
    assert_eq!(ctx.counted("kui_skipped"), 1);
    assert!(ctx.sent_messages().is_empty());
    assert_eq!(r.kui_root(), None);
}

#[test]
fn vehicle_without_active_block_cannot_emit() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0)]);
    let mut v = vehicle(1, &p);
    let mut ctx = Ctx::new(0, NodeId(1), &w);
    assert!(v.emit_tx(&mut ctx, vec![1]).is_none());
    assert_eq!(ctx.counted("emit_rejected"), 1);
}

#[test]
fn witness_answers_from_ground_truth() {
    let p = params(1, 1);
    let w = world(1, &[(10.0, 0.0), (400.0, 0.0)]);
    let mut v = vehicle(2, &p);
    let mut ctx = Ctx::new(0, NodeId(2), &w);
    v.bootstrap(&mut ctx);
    let here = w.geotag_of(NodeId(1), 0);
    let nowhere = Projection::default().to_geotag(&Point::new(150.0, 150.0)).unwrap();
    let mut ctx = Ctx::new(1, NodeId(2), &w);
    v.handle(
        &mut ctx,
        vec![
            deliver(NodeId(0), &Message::WitnessQuery { pk: kp(7).public, geotag: here }),
            deliver(NodeId(0), &Message::WitnessQuery { pk: kp(7).public, geotag: nowhere }),
        ],
    );
    let observed: Vec<bool> = ctx
        .sent_messages()
        .into_iter()
        .map(|(_, m)| match m {
            Message::WitnessReport { observed, .. } => observed,
            _ => panic!(),
        })
        .collect();
    assert_eq!(observed, vec![true, false]);
}
