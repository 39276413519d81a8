use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

use super::{reject_counter, NodeTimer, Params};
use crate::crypto::{self, merkle_build_canonical, merkle_prove, Digest, KeyPair, PublicKey, Signature};
use crate::ledger::{
    create_block, AppendError, Blockchain, ChainError, DeviceBlock, GenesisTransaction, LinkStatus, Timestamp,
    Transaction, UnboundBlock,
};
use crate::meter::{Stopwatch, TimingMode};
use crate::metrics::{MetricKind, MetricRecord, MetricsSink};
use crate::protocol::{witness_signing_bytes, Decode, DecodeError, Encode, Message, RejectReason};
use crate::simnet::{Ctx, Input, NodeId};

/// Cap on blocks parked while waiting for their predecessor header.
const PENDING_BLOCKS: usize = 256;
/// Cap on transactions held for blocks this RSI has not seen yet.
const ORPHAN_TXS: usize = 4096;
/// Signatures checked per batch in the pre-pass.
const BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsiBehavior {
    #[default]
    Honest,
    /// Applies every transaction honestly but rebroadcasts a copy with one
    /// payload byte altered and the original signature.
    MutateRebroadcast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Witnessing,
    Ready,
    Offered,
}

#[derive(Debug)]
struct PoolEntry {
    genesis: GenesisTransaction,
    from: NodeId,
    received_at: Timestamp,
    confirmations: BTreeSet<PublicKey>,
    denials: u32,
    stage: Stage,
    /// Local computation spent on this join so far.
    cost_ns: u64,
}

#[derive(Debug)]
struct Allocation {
    pk: PublicKey,
    pending: UnboundBlock,
    bound: Option<DeviceBlock>,
    vehicle: NodeId,
}

#[derive(Debug)]
struct OpenSlot {
    id: u64,
    start: Timestamp,
    allocations: VecDeque<Allocation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Origin {
    Vehicle,
    Peer,
}

#[derive(Debug)]
struct Parked {
    pk: PublicKey,
    tx: Transaction,
    from: NodeId,
    origin: Origin,
}

#[allow(clippy::large_enum_variant)]
enum Step {
    Msg(NodeId, Result<Message, DecodeError>),
    Timer(NodeTimer),
}

/// Roadside unit: validates, stores and gossips the chain, admits
/// vehicles through the witnessed join, and publishes key-update roots.
#[derive(Debug)]
pub struct RsiState {
    id: NodeId,
    index: usize,
    keypair: KeyPair,
    credential: Arc<[u8]>,
    params: Params,
    chain: Blockchain,
    peers: Vec<NodeId>,
    /// Forward peer updates onward; needed when the RSI graph is not a
    /// full mesh.
    relay: bool,
    behavior: RsiBehavior,
    pool: BTreeMap<PublicKey, PoolEntry>,
    ready: VecDeque<PublicKey>,
    slot: Option<OpenSlot>,
    slot_scheduled: Option<Timestamp>,
    /// Out-of-order transactions for known blocks, keyed by block key.
    reorder: HashMap<PublicKey, Vec<Parked>>,
    /// Peer transactions for blocks not received yet.
    orphans: HashMap<PublicKey, Vec<Parked>>,
    orphan_count: usize,
    /// Peer blocks whose predecessor header has not arrived.
    pending_blocks: Vec<DeviceBlock>,
    registered: BTreeMap<PublicKey, NodeId>,
    kui_epoch: u64,
    kui_root: Option<Digest>,
    metrics: MetricsSink,
}

impl RsiState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: NodeId,
        index: usize,
        keypair: KeyPair,
        credential: Message,
        chain: Blockchain,
        peers: Vec<NodeId>,
        relay: bool,
        behavior: RsiBehavior,
        params: Params,
    ) -> RsiState {
        let metrics = MetricsSink::new(params.keep_raw_metrics);
        RsiState {
            id,
            index,
            keypair,
            credential: credential.to_bytes().into(),
            params,
            chain,
            peers,
            relay,
            behavior,
            pool: BTreeMap::new(),
            ready: VecDeque::new(),
            slot: None,
            slot_scheduled: None,
            reorder: HashMap::new(),
            orphans: HashMap::new(),
            orphan_count: 0,
            pending_blocks: Vec::new(),
            registered: BTreeMap::new(),
            kui_epoch: 0,
            kui_root: None,
            metrics,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public
    }

    pub fn chain(&self) -> &Blockchain {
        &self.chain
    }

    pub fn metrics(&self) -> &MetricsSink {
        &self.metrics
    }

    pub fn behavior(&self) -> RsiBehavior {
        self.behavior
    }

    /// Joins waiting for witnesses or for a header slot.
    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn in_pool(&self, pk: &PublicKey) -> bool {
        self.pool.contains_key(pk)
    }

    pub fn reorder_len(&self) -> usize {
        self.reorder.values().map(Vec::len).sum()
    }

    /// Last published key-update epoch and root.
    pub fn kui_root(&self) -> Option<(u64, Digest)> {
        self.kui_root.map(|r| (self.kui_epoch, r))
    }

    fn stopwatch(&self) -> Stopwatch {
        Stopwatch::start(self.params.timing)
    }

    fn elapsed(&self, sw: &Stopwatch) -> u64 {
        sw.elapsed_ns(&self.params.cost_model)
    }

    fn record(&mut self, kind: MetricKind, now: Timestamp, elapsed_ns: u64) {
        self.metrics.record(MetricRecord {
            kind,
            node: self.id.0,
            chain_size: self.chain.len() as u32,
            elapsed_ns,
            sim_time: now,
        });
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_, NodeTimer>, inputs: Vec<Input<NodeTimer>>) {
        let steps: Vec<Step> = inputs
            .into_iter()
            .map(|i| match i {
                Input::Message { from, bytes, .. } => Step::Msg(from, Message::from_bytes(&bytes)),
                Input::Timer(t) => Step::Timer(t),
            })
            .collect();
        let pre = self.preverify(&steps);
        for (step, pre) in steps.into_iter().zip(pre) {
            match step {
                Step::Msg(from, Ok(m)) => self.dispatch(ctx, from, m, pre),
                Step::Msg(_, Err(_)) => ctx.count("malformed_message"),
                Step::Timer(t) => self.on_timer(ctx, t),
            }
        }
    }

    /// Batch-verifies transaction signatures for known blocks ahead of the
    /// serial pass. Only a successful batch marks its items; anything else
    /// is verified singly when processed, so results and metered costs do
    /// not depend on how inputs were grouped.
    fn preverify(&self, steps: &[Step]) -> Vec<bool> {
        let mut marks = vec![false; steps.len()];
        if self.params.timing != TimingMode::Metered {
            return marks;
        }
        let mut idx = Vec::new();
        let mut keys: Vec<&VerifyingKey> = Vec::new();
        let mut bytes = Vec::new();
        let mut sigs: Vec<&Signature> = Vec::new();
        for (i, s) in steps.iter().enumerate() {
            let (pk, tx) = match s {
                Step::Msg(_, Ok(Message::TxSubmit { pk, tx }))
                | Step::Msg(_, Ok(Message::TxBroadcast { pk, tx }))
                | Step::Msg(_, Ok(Message::TxForward { pk, tx })) => (pk, tx),
                _ => continue,
            };
            if let Some(vk) = self.chain.peek_block(pk).and_then(DeviceBlock::verifying_key) {
                idx.push(i);
                keys.push(vk);
                bytes.push(tx.signing_bytes());
                sigs.push(&tx.signature);
            }
        }
        if idx.len() < 2 {
            return marks;
        }
        let items: Vec<(&VerifyingKey, &[u8], &Signature)> = (0..idx.len())
            .map(|k| (keys[k], &bytes[k][..], sigs[k]))
            .collect();
        let mut ok = vec![false; items.len()];
        for (items, ok) in items.chunks(BATCH).zip(ok.chunks_mut(BATCH)) {
            bisect(items, ok);
        }
        for (k, &i) in idx.iter().enumerate() {
            marks[i] = ok[k];
        }
        marks
    }

    /// Handles one decoded message. `sig_checked` is set when the
    /// transaction's signature already verified in a batch.
    fn dispatch(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, msg: Message, sig_checked: bool) {
        match msg {
            Message::JoinRequest { genesis } => self.handle_join(ctx, from, genesis),
            Message::WitnessQuery { pk, geotag } => {
                let world = ctx.world();
                let p = world.projection().to_point(&geotag);
                let observed = world.vehicle_present_near(&p, self.params.presence_tolerance, ctx.now(), self.id);
                let report = Message::witness_report(&self.keypair, pk, observed);
                ctx.send(from, &report);
            }
            Message::WitnessReport {
                pk,
                witness_pk,
                observed,
                witness_signature,
            } => self.handle_witness_report(ctx, pk, witness_pk, observed, &witness_signature),
            Message::TxSubmit { pk, tx } | Message::TxForward { pk, tx } => {
                self.handle_tx(ctx, from, pk, tx, Origin::Vehicle, sig_checked)
            }
            Message::TxBroadcast { pk, tx } => self.handle_tx(ctx, from, pk, tx, Origin::Peer, sig_checked),
            Message::BlockBroadcast { block } => self.handle_block(ctx, from, block),
            Message::KuiRoot { root, epoch, .. } => {
                if self.kui_epoch == epoch && self.kui_root.is_some() {
                    if self.kui_root == Some(root) {
                        ctx.count("kui_root_match");
                    } else {
                        ctx.count("kui_root_mismatch");
                    }
                }
            }
            _ => ctx.count("unexpected_message"),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, NodeTimer>, t: NodeTimer) {
        match t {
            NodeTimer::Beacon => self.beacon(ctx),
            NodeTimer::KuiTick => {
                self.kui_tick(ctx);
                let next = ctx.now() + self.params.kui_period;
                if next <= self.params.periodic_until {
                    ctx.set_timer_at(next, NodeTimer::KuiTick);
                }
            }
            NodeTimer::SlotStart => self.start_slot(ctx),
            NodeTimer::SlotDeadline(id) => self.close_slot(ctx, id),
            NodeTimer::PoolTimeout(pk, at) => {
                let expired = self
                    .pool
                    .get(&pk)
                    .is_some_and(|e| e.received_at == at && e.stage == Stage::Witnessing);
                if expired {
                    self.pool.remove(&pk);
                    ctx.count("pool_expired");
                }
            }
            _ => ctx.count("unexpected_timer"),
        }
    }

    /// Sends the authority-signed credential to every vehicle in radio
    /// range, then re-arms.
    fn beacon(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        let world = ctx.world();
        let now = ctx.now();
        let here = world.position(self.id, now);
        for v in world.vehicles_within(&here, world.topology().rsi_range, now) {
            ctx.send_bytes(v, crate::protocol::MessageKind::RsiCredential, self.credential.clone());
        }
        let next = now + self.params.beacon_period;
        if self.params.beacon_period > 0 && next <= self.params.periodic_until {
            ctx.set_timer_at(next, NodeTimer::Beacon);
        }
    }

    /// First contact from a vehicle (unbound genesis) or its binding reply.
    pub(crate) fn handle_join(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, genesis: GenesisTransaction) {
        if genesis.is_bound() {
            self.handle_binding(ctx, from, genesis);
            return;
        }
        let sw = self.stopwatch();
        let now = ctx.now();
        let subject = genesis.transaction().digest();
        if !genesis.verify() {
            ctx.send(
                from,
                &Message::Reject {
                    subject,
                    reason: RejectReason::BadSignature,
                },
            );
            ctx.count("join_rejected.bad_signature");
            return;
        }
        let pk = genesis.embedded_pk();
        if let Some(b) = self.chain.find_block(&pk, now) {
            // The subject names the existing header so a vehicle that lost
            // its acknowledgement can still bind to it.
            ctx.send(
                from,
                &Message::Reject {
                    subject: b.header_hash(),
                    reason: RejectReason::DuplicateKey,
                },
            );
            ctx.count("join_rejected.duplicate_key");
            return;
        }
        if self.pool.contains_key(&pk) || self.allocated(&pk) {
            ctx.count("join_duplicate");
            return;
        }
        let world = ctx.world();
        let claimed = world.projection().to_point(&genesis.embedded_geotag());
        let radius = self.params.witness.query_radius;
        let mut targets: Vec<NodeId> = world
            .rsis_within(&claimed, radius)
            .into_iter()
            .chain(world.vehicles_within(&claimed, radius, now))
            .filter(|&n| n != self.id && n != from)
            .collect();
        targets.sort();
        let query = Message::WitnessQuery {
            pk,
            geotag: genesis.embedded_geotag(),
        };
        ctx.broadcast(&targets, &query);
        ctx.count_n("witness_queries", targets.len() as u64);
        ctx.set_timer(self.params.witness.pool_timeout, NodeTimer::PoolTimeout(pk, now));
        let cost_ns = self.elapsed(&sw);
        self.pool.insert(
            pk,
            PoolEntry {
                genesis,
                from,
                received_at: now,
                confirmations: BTreeSet::new(),
                denials: 0,
                stage: Stage::Witnessing,
                cost_ns,
            },
        );
    }

    fn allocated(&self, pk: &PublicKey) -> bool {
        self.slot
            .as_ref()
            .is_some_and(|s| s.allocations.iter().any(|a| &a.pk == pk))
    }

    pub(crate) fn handle_witness_report(
        &mut self,
        ctx: &mut Ctx<'_, NodeTimer>,
        pk: PublicKey,
        witness_pk: PublicKey,
        observed: bool,
        sig: &Signature,
    ) {
        let Some(stage) = self.pool.get(&pk).map(|e| e.stage) else {
            ctx.count("witness_report_unknown");
            return;
        };
        if stage != Stage::Witnessing {
            ctx.count("witness_report_late");
            return;
        }
        let sw = self.stopwatch();
        let now = ctx.now();
        if !crypto::verify(&witness_pk, &witness_signing_bytes(&pk, &witness_pk, observed), sig) {
            ctx.count("witness_bad_signature");
            return;
        }
        let known = witness_pk != pk
            && witness_pk != self.keypair.public
            && (self.params.rsi_pks.contains(&witness_pk) || self.chain.find_block(&witness_pk, now).is_some());
        if !known {
            ctx.count("witness_unknown");
            return;
        }
        let required = self.params.witness.required_reports as usize;
        let cost = self.elapsed(&sw);
        let entry = self.pool.get_mut(&pk).expect("checked above");
        entry.cost_ns += cost;
        if observed {
            entry.confirmations.insert(witness_pk);
        } else {
            entry.denials += 1;
            ctx.count("witness_denied");
        }
        if entry.confirmations.len() >= required {
            entry.stage = Stage::Ready;
            self.ready.push_back(pk);
            ctx.count("join_confirmed");
            self.schedule_slot(ctx);
        }
    }

    fn schedule_slot(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        if self.slot_scheduled.is_some() || self.ready.is_empty() {
            return;
        }
        let from = match &self.slot {
            Some(s) => s.start + 1,
            None => ctx.now(),
        };
        let at = self.params.slot.next_start(self.index, from);
        self.slot_scheduled = Some(at);
        ctx.set_timer_at(at, NodeTimer::SlotStart);
    }

    /// Allocates headers, chained in order after the current tip, for every
    /// confirmed join and offers each to its vehicle.
    fn start_slot(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        self.slot_scheduled = None;
        if self.ready.is_empty() || self.slot.is_some() {
            self.schedule_slot(ctx);
            return;
        }
        let now = ctx.now();
        let id = now / self.params.slot.len;
        let mut tip = self.chain.tip().clone();
        let mut allocations = VecDeque::new();
        while let Some(pk) = self.ready.pop_front() {
            let sw = self.stopwatch();
            let Some(entry) = self.pool.get(&pk) else { continue };
            if self.chain.find_block(&pk, now).is_some() {
                self.pool.remove(&pk);
                ctx.count("join_rejected.duplicate_key");
                continue;
            }
            let pending = match create_block(&tip, &entry.genesis, self.params.expiration_window, now) {
                Ok(p) => p,
                Err(_) => {
                    self.pool.remove(&pk);
                    ctx.count("join_rejected.create_failed");
                    continue;
                }
            };
            let offer = Message::header_offer(&self.keypair, pk, pending.header_hash(), pending.header().expiration);
            ctx.send(entry.from, &offer);
            tip = pending.header().clone();
            let vehicle = entry.from;
            let cost = self.elapsed(&sw);
            let entry = self.pool.get_mut(&pk).expect("present");
            entry.stage = Stage::Offered;
            entry.cost_ns += cost;
            allocations.push_back(Allocation {
                pk,
                pending,
                bound: None,
                vehicle,
            });
        }
        if allocations.is_empty() {
            return;
        }
        ctx.count_n("headers_offered", allocations.len() as u64);
        ctx.set_timer_at(now + self.params.slot.deadline, NodeTimer::SlotDeadline(id));
        self.slot = Some(OpenSlot {
            id,
            start: now,
            allocations,
        });
    }

    /// Withdraws offers the vehicles did not bind in time; those joins go
    /// back to the front of the queue for this RSI's next slot.
    fn close_slot(&mut self, ctx: &mut Ctx<'_, NodeTimer>, id: u64) {
        if self.slot.as_ref().map(|s| s.id) != Some(id) {
            return;
        }
        let slot = self.slot.take().expect("checked");
        for a in slot.allocations.into_iter().rev() {
            if let Some(e) = self.pool.get_mut(&a.pk) {
                e.stage = Stage::Ready;
                self.ready.push_front(a.pk);
                ctx.count("offer_withdrawn");
            }
        }
        self.schedule_slot(ctx);
    }

    fn handle_binding(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, genesis: GenesisTransaction) {
        let pk = genesis.embedded_pk();
        let header = genesis.transaction().prev_tx_hash;
        let slot_hit = self.slot.as_ref().and_then(|s| {
            s.allocations
                .iter()
                .position(|a| a.pk == pk && a.bound.is_none() && a.pending.header_hash() == header)
        });
        let Some(pos) = slot_hit else {
            // Resent binding for a block that already made it: re-ack.
            let done = self
                .chain
                .peek_block(&pk)
                .is_some_and(|b| b.header_hash() == header && b.ledger()[0] == *genesis.transaction());
            if done {
                ctx.send(from, &Message::Ack { subject: header });
                ctx.count("binding_reacked");
            } else {
                ctx.count("binding_stale");
            }
            return;
        };
        let sw = self.stopwatch();
        let slot = self.slot.as_mut().expect("hit");
        let pending = slot.allocations[pos].pending.clone();
        match pending.bind(genesis) {
            Ok(block) => slot.allocations[pos].bound = Some(block),
            Err(e) => {
                ctx.count("binding_rejected");
                let reason = match e {
                    AppendError::KeyMismatch => RejectReason::KeyMismatch,
                    AppendError::BrokenChainLink => RejectReason::BrokenChainLink,
                    _ => RejectReason::BadSignature,
                };
                ctx.send(from, &Message::Reject { subject: header, reason });
                return;
            }
        }
        let cost = self.elapsed(&sw);
        if let Some(e) = self.pool.get_mut(&pk) {
            e.cost_ns += cost;
        }
        self.finalize_ready(ctx);
    }

    /// Appends bound allocations in allocation order, stopping at the first
    /// one still waiting for its vehicle.
    fn finalize_ready(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        let now = ctx.now();
        loop {
            let Some(slot) = self.slot.as_mut() else { return };
            if !slot.allocations.front().is_some_and(|a| a.bound.is_some()) {
                return;
            }
            let a = slot.allocations.pop_front().expect("front");
            let sw = self.stopwatch();
            let block = a.bound.expect("bound");
            let header = block.header_hash();
            match self.chain.push_block(block.clone()) {
                Ok(()) => {
                    ctx.broadcast(&self.peers, &Message::BlockBroadcast { block });
                    ctx.send(a.vehicle, &Message::Ack { subject: header });
                    self.registered.insert(a.pk, a.vehicle);
                    let prior = self.pool.remove(&a.pk).map_or(0, |e| e.cost_ns);
                    let cost = prior + self.elapsed(&sw);
                    self.record(MetricKind::BlockAdd, now, cost);
                    ctx.count("block_created");
                    self.drain_orphans(ctx, a.pk);
                }
                Err(_) => {
                    // The tip moved under this slot; later allocations are
                    // linked to a header that will never exist.
                    ctx.count("allocation_failed");
                    let slot = self.slot.take().expect("open");
                    for pk in std::iter::once(a.pk).chain(slot.allocations.iter().map(|x| x.pk)).rev() {
                        if let Some(e) = self.pool.get_mut(&pk) {
                            e.stage = Stage::Ready;
                            self.ready.push_front(pk);
                        }
                    }
                    self.schedule_slot(ctx);
                    return;
                }
            }
        }
    }

    /// Block gossip from a peer: validated in full before it is linked.
    fn handle_block(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, block: DeviceBlock) {
        let header = block.header_hash();
        if self.chain.contains_header(&header) || self.pending_blocks.iter().any(|b| b.header_hash() == header) {
            ctx.count("block_duplicate");
            return;
        }
        let prev = block.header().prev_header_hash;
        if prev != self.chain.tip_hash() {
            if self.chain.contains_header(&prev) || self.pending_blocks.len() >= PENDING_BLOCKS {
                ctx.count("block_rejected");
            } else {
                self.pending_blocks.push(block);
                ctx.count("block_parked");
            }
            return;
        }
        self.apply_block(ctx, from, block);
        // Parked blocks may now link.
        while let Some(i) = self
            .pending_blocks
            .iter()
            .position(|b| b.header().prev_header_hash == self.chain.tip_hash())
        {
            let b = self.pending_blocks.swap_remove(i);
            self.apply_block(ctx, from, b);
        }
    }

    fn apply_block(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, block: DeviceBlock) {
        let sw = self.stopwatch();
        let pk = *block.device_pk();
        let relay = self.relay.then(|| block.clone());
        match self.chain.push_block(block) {
            Ok(()) => {
                if let Some(block) = relay {
                    let to: Vec<NodeId> = self.peers.iter().copied().filter(|&p| p != from).collect();
                    ctx.broadcast(&to, &Message::BlockBroadcast { block });
                }
                let cost = self.elapsed(&sw);
                self.record(MetricKind::PeerBlockUpdate, ctx.now(), cost);
                ctx.count("peer_block_applied");
                if self.pool.remove(&pk).is_some() {
                    self.ready.retain(|k| k != &pk);
                }
                self.drain_orphans(ctx, pk);
            }
            Err(ChainError::DuplicateKey) => ctx.count("block_rejected.duplicate_key"),
            Err(_) => ctx.count("block_rejected"),
        }
    }

    fn drain_orphans(&mut self, ctx: &mut Ctx<'_, NodeTimer>, pk: PublicKey) {
        if let Some(list) = self.orphans.remove(&pk) {
            self.orphan_count -= list.len();
            for p in list {
                self.handle_tx(ctx, p.from, p.pk, p.tx, p.origin, false);
            }
        }
    }

    /// Validates and appends one transaction; answers the vehicle and
    /// gossips on success.
    fn handle_tx(
        &mut self,
        ctx: &mut Ctx<'_, NodeTimer>,
        from: NodeId,
        pk: PublicKey,
        tx: Transaction,
        origin: Origin,
        sig_checked: bool,
    ) {
        let sw = self.stopwatch();
        let now = ctx.now();
        let digest = tx.digest();
        let Some(block) = self.chain.block_by_key(&pk) else {
            match origin {
                Origin::Vehicle => self.reject(ctx, from, digest, RejectReason::UnknownDevice, origin),
                Origin::Peer if self.orphan_count < ORPHAN_TXS => {
                    self.orphans.entry(pk).or_default().push(Parked { pk, tx, from, origin });
                    self.orphan_count += 1;
                    ctx.count("tx_orphaned");
                }
                Origin::Peer => ctx.count("tx_orphan_dropped"),
            }
            return;
        };
        let verdict = match block.link_status(&tx, &digest) {
            LinkStatus::Duplicate => {
                if origin == Origin::Vehicle {
                    ctx.send(from, &Message::Ack { subject: digest });
                }
                ctx.count("tx_duplicate");
                return;
            }
            LinkStatus::Tail => block.check_transaction_with(&tx, now, sig_checked),
            status => {
                // Authenticity first so a tampered copy is always reported as
                // such, whatever it links to.
                let expired = now > block.header().expiration || tx.timestamp > block.header().expiration;
                let sig_ok = if sig_checked {
                    let _ = tx.signing_bytes();
                    crate::meter::record_verify();
                    true
                } else {
                    block.verify_tx(&tx)
                };
                if expired {
                    Err(AppendError::BlockExpired)
                } else if !sig_ok {
                    Err(AppendError::BadSignature)
                } else if status == LinkStatus::Fork {
                    Err(AppendError::BrokenChainLink)
                } else {
                    self.park(ctx, pk, tx, from, origin);
                    return;
                }
            }
        };
        match verdict {
            Ok(()) => {
                self.accept(ctx, from, pk, tx, digest, origin, sw);
                self.drain_reorder(ctx, pk);
            }
            Err(e) => {
                let reason = match e {
                    AppendError::BadSignature => RejectReason::BadSignature,
                    AppendError::BlockExpired => RejectReason::BlockExpired,
                    AppendError::KeyMismatch => RejectReason::KeyMismatch,
                    _ => RejectReason::BrokenChainLink,
                };
                self.reject(ctx, from, digest, reason, origin);
            }
        }
    }

    fn reject(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, subject: Digest, reason: RejectReason, origin: Origin) {
        ctx.count(reject_counter(reason));
        match origin {
            Origin::Vehicle => ctx.send(from, &Message::Reject { subject, reason }),
            Origin::Peer => ctx.count("peer_tx_rejected"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accept(
        &mut self,
        ctx: &mut Ctx<'_, NodeTimer>,
        from: NodeId,
        pk: PublicKey,
        tx: Transaction,
        digest: Digest,
        origin: Origin,
        sw: Stopwatch,
    ) {
        let now = ctx.now();
        let block = self.chain.block_by_key_mut(&pk).expect("checked by caller");
        block.push_unchecked(tx.clone(), digest);
        let gossip_to: Vec<NodeId> = match origin {
            Origin::Vehicle => self.peers.clone(),
            Origin::Peer if self.relay => self.peers.iter().copied().filter(|&p| p != from).collect(),
            Origin::Peer => Vec::new(),
        };
        if self.behavior == RsiBehavior::MutateRebroadcast {
            let mut forged = tx.clone();
            match forged.payload.first_mut() {
                Some(b) => *b ^= 0xff,
                None => forged.payload.push(0xff),
            }
            ctx.broadcast(&gossip_to, &Message::TxBroadcast { pk, tx });
            ctx.broadcast(&self.peers, &Message::TxBroadcast { pk, tx: forged });
            ctx.count("mutations_sent");
        } else {
            ctx.broadcast(&gossip_to, &Message::TxBroadcast { pk, tx });
        }
        let kind = match origin {
            Origin::Vehicle => {
                ctx.send(from, &Message::Ack { subject: digest });
                MetricKind::TxAdd
            }
            Origin::Peer => MetricKind::PeerTxUpdate,
        };
        let cost = self.elapsed(&sw);
        self.record(kind, now, cost);
        ctx.count(match origin {
            Origin::Vehicle => "tx_accepted",
            Origin::Peer => "peer_tx_applied",
        });
    }

    fn park(&mut self, ctx: &mut Ctx<'_, NodeTimer>, pk: PublicKey, tx: Transaction, from: NodeId, origin: Origin) {
        let list = self.reorder.entry(pk).or_default();
        if list.len() >= self.params.reorder_capacity {
            ctx.count("tx_reorder_overflow");
            return;
        }
        list.push(Parked { pk, tx, from, origin });
        ctx.count("tx_buffered");
    }

    /// Applies buffered transactions that now extend the tail.
    fn drain_reorder(&mut self, ctx: &mut Ctx<'_, NodeTimer>, pk: PublicKey) {
        loop {
            let Some(tail) = self.chain.peek_block(&pk).map(DeviceBlock::tail_digest) else { return };
            let Some(list) = self.reorder.get_mut(&pk) else { return };
            let Some(i) = list.iter().position(|p| p.tx.prev_tx_hash == tail) else { return };
            let p = list.swap_remove(i);
            if list.is_empty() {
                self.reorder.remove(&pk);
            }
            self.handle_tx(ctx, p.from, p.pk, p.tx, p.origin, false);
        }
    }

    /// Publishes the Merkle root over active device keys: the root alone
    /// to peers, root plus membership proof to each registered vehicle.
    pub(crate) fn kui_tick(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        let now = ctx.now();
        let keys = self.chain.active_device_keys(now);
        if keys.is_empty() {
            ctx.count("kui_skipped");
            return;
        }
        let sw = self.stopwatch();
        let tree = merkle_build_canonical(&keys).expect("non-empty");
        let cost = self.elapsed(&sw);
        self.record(MetricKind::MerkleBuild, now, cost);
        let root = tree.root();
        let epoch = now / self.params.kui_period.max(1);
        self.kui_epoch = epoch;
        self.kui_root = Some(root);
        ctx.broadcast(&self.peers, &Message::KuiRoot { root, epoch, proof: None });
        let active: BTreeSet<PublicKey> = keys.into_iter().collect();
        self.registered.retain(|pk, _| active.contains(pk));
        for (pk, &vehicle) in &self.registered {
            let Some(i) = tree.position(&crypto::hash(pk.as_bytes())) else { continue };
            let proof = merkle_prove(&tree, i).expect("index from tree");
            ctx.send(
                vehicle,
                &Message::KuiRoot {
                    root,
                    epoch,
                    proof: Some(proof),
                },
            );
        }
        ctx.count("kui_published");
    }
}

/// Marks every item of `items` that verifies as part of a passing batch.
/// Splits failing batches down to small groups; whatever is left unmarked
/// is checked singly later.
fn bisect(items: &[(&VerifyingKey, &[u8], &Signature)], ok: &mut [bool]) {
    if items.len() < 2 {
        return;
    }
    if crypto::verify_batch(items) {
        ok.fill(true);
        return;
    }
    let mid = items.len() / 2;
    let (l, r) = ok.split_at_mut(mid);
    bisect(&items[..mid], l);
    bisect(&items[mid..], r);
}
