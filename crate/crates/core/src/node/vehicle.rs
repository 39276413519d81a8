use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{NodeTimer, Params};
use crate::crypto::{self, generate_keypair_with, merkle_verify, Digest, KeyPair, MembershipProof, PublicKey, Signature};
use crate::ledger::{
    make_genesis_tx, make_genesis_tx_with_access, AccessLevel, GenesisTransaction, Timestamp, Transaction,
};
use crate::protocol::{offer_signing_bytes, verify_credential, Decode, Message, RejectReason};
use crate::simnet::{Ctx, Input, NodeId, Point};

/// Buffered hand-offs a mule will carry for other vehicles.
const MULE_CAPACITY: usize = 4096;

/// What a vehicle does during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehiclePlan {
    pub bootstrap_at: Timestamp,
    pub tx_count: u32,
    /// First emission; later ones follow every `tx_interval` ms.
    pub tx_start: Timestamp,
    pub tx_interval: u64,
    pub payload_bytes: usize,
    /// How many times to re-join under a fresh key when the current block
    /// expires.
    pub rotations: u32,
    /// Carry other vehicles' transactions toward an RSI.
    pub mule: bool,
}

impl Default for VehiclePlan {
    fn default() -> Self {
        VehiclePlan {
            bootstrap_at: 0,
            tx_count: 0,
            tx_start: 0,
            tx_interval: 20,
            payload_bytes: 16,
            rotations: 0,
            mule: true,
        }
    }
}

/// Where fake identities claim to be.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "claim", rename_all = "snake_case")]
pub enum SybilClaim {
    /// Far outside every RSI's witness radius.
    Far,
    /// A spot inside the deployment with no vehicle on it.
    At { x: f64, y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SybilPlan {
    pub identities: u32,
    pub claim: SybilClaim,
    pub at: Timestamp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum VehicleBehavior {
    #[default]
    Honest,
    /// Confirms every witness query regardless of ground truth.
    LyingWitness,
    /// Behaves honestly and also requests joins for fake identities.
    Sybil(SybilPlan),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Join {
    Idle,
    /// Unbound genesis sent (or buffered), waiting for a header offer.
    Requested,
    /// Bound genesis sent for `header`, waiting for the RSI's ack.
    Binding { header: Digest, expiration: Timestamp },
    Active { header: Digest },
}

/// A key this vehicle held, with the header it was bound to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyRecord {
    pub pk: PublicKey,
    pub header: Digest,
    pub expiration: Timestamp,
}

/// Vehicle light client. Holds its key, the tail of its own ledger, and the
/// latest key-update root with its membership proof; no chain state.
#[derive(Debug)]
pub struct VehicleState {
    id: NodeId,
    rng: ChaCha20Rng,
    params: Params,
    plan: VehiclePlan,
    behavior: VehicleBehavior,
    keypair: Option<KeyPair>,
    key_expiry: Timestamp,
    genesis: Option<GenesisTransaction>,
    join: Join,
    join_generation: u64,
    join_attempts: u32,
    join_buffered: bool,
    ledger_tail_hash: Digest,
    outbox: VecDeque<(PublicKey, Transaction)>,
    mule_buffer: VecDeque<(PublicKey, Transaction)>,
    merkle_root: Option<Digest>,
    membership_proof: Option<MembershipProof>,
    kui_epoch: u64,
    trusted_rsis: BTreeSet<PublicKey>,
    rsi_nodes: BTreeMap<NodeId, PublicKey>,
    emitted: u32,
    emit_scheduled: bool,
    keys: Vec<KeyRecord>,
    sybil_pks: Vec<PublicKey>,
    rotated: u32,
}

impl VehicleState {
    pub fn new(id: NodeId, seed: u64, plan: VehiclePlan, behavior: VehicleBehavior, params: Params) -> VehicleState {
        VehicleState {
            id,
            rng: ChaCha20Rng::seed_from_u64(seed),
            params,
            plan,
            behavior,
            keypair: None,
            key_expiry: 0,
            genesis: None,
            join: Join::Idle,
            join_generation: 0,
            join_attempts: 0,
            join_buffered: false,
            ledger_tail_hash: Digest::ZERO,
            outbox: VecDeque::new(),
            mule_buffer: VecDeque::new(),
            merkle_root: None,
            membership_proof: None,
            kui_epoch: 0,
            trusted_rsis: BTreeSet::new(),
            rsi_nodes: BTreeMap::new(),
            emitted: 0,
            emit_scheduled: false,
            keys: Vec::new(),
            sybil_pks: Vec::new(),
            rotated: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn plan(&self) -> &VehiclePlan {
        &self.plan
    }

    pub fn public_key(&self) -> Option<PublicKey> {
        self.keypair.as_ref().map(|k| k.public)
    }

    pub fn key_expiry(&self) -> Timestamp {
        self.key_expiry
    }

    pub fn is_active(&self) -> bool {
        matches!(self.join, Join::Active { .. })
    }

    pub fn ledger_tail_hash(&self) -> Digest {
        self.ledger_tail_hash
    }

    pub fn outbox(&self) -> impl Iterator<Item = &Transaction> {
        self.outbox.iter().map(|(_, tx)| tx)
    }

    pub fn outbox_len(&self) -> usize {
        self.outbox.len()
    }

    pub fn join_pending(&self) -> bool {
        self.join_buffered
    }

    pub fn merkle_root(&self) -> Option<Digest> {
        self.merkle_root
    }

    pub fn membership_proof(&self) -> Option<&MembershipProof> {
        self.membership_proof.as_ref()
    }

    pub fn kui_epoch(&self) -> u64 {
        self.kui_epoch
    }

    pub fn trusted_rsis(&self) -> &BTreeSet<PublicKey> {
        &self.trusted_rsis
    }

    /// Transactions signed so far, across all keys.
    pub fn emitted(&self) -> u32 {
        self.emitted
    }

    /// Every key that completed a join, oldest first. Kept for audits only;
    /// the protocol never consults it.
    pub fn key_history(&self) -> &[KeyRecord] {
        &self.keys
    }

    pub fn sybil_keys(&self) -> &[PublicKey] {
        &self.sybil_pks
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_, NodeTimer>, inputs: Vec<Input<NodeTimer>>) {
        for input in inputs {
            match input {
                Input::Timer(t) => self.on_timer(ctx, t),
                Input::Message { from, bytes, .. } => match Message::from_bytes(&bytes) {
                    Ok(m) => self.on_message(ctx, from, m),
                    Err(_) => ctx.count("malformed_message"),
                },
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, NodeTimer>, t: NodeTimer) {
        match t {
            NodeTimer::Bootstrap => {
                self.bootstrap(ctx);
            }
            NodeTimer::EmitTx => {
                self.emit_scheduled = false;
                self.emit_scheduled_tx(ctx);
            }
            NodeTimer::Rotate => {
                if self.is_active() && ctx.now() > self.key_expiry && self.rotated < self.plan.rotations {
                    self.rotated += 1;
                    self.rotate_key(ctx);
                }
            }
            NodeTimer::JoinRetry(generation) => self.retry_join(ctx, generation),
            NodeTimer::Sybil => self.launch_sybils(ctx),
            _ => ctx.count("unexpected_timer"),
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, msg: Message) {
        match msg {
            Message::RsiCredential {
                rsi_pk,
                authority_signature,
            } => {
                if self.verify_rsi(&rsi_pk, &authority_signature) {
                    self.rsi_nodes.insert(from, rsi_pk);
                    self.on_contact(ctx);
                } else {
                    ctx.count("credential_rejected");
                }
            }
            Message::HeaderOffer {
                device_pk,
                header_hash,
                expiration,
                rsi_pk,
                rsi_signature,
            } => self.on_offer(ctx, from, device_pk, header_hash, expiration, rsi_pk, &rsi_signature),
            Message::Ack { subject } => match self.join {
                Join::Binding { header, expiration } if header == subject => self.activate(ctx, header, expiration),
                _ => ctx.count("tx_acked"),
            },
            Message::Reject { subject, reason } => {
                if reason == RejectReason::DuplicateKey && self.join == Join::Requested {
                    // The block exists but its ack was lost: bind to it.
                    self.bind_and_send(ctx, from, subject, self.key_expiry);
                } else {
                    ctx.count("tx_rejected");
                }
            }
            Message::WitnessQuery { pk, geotag } => self.answer_witness(ctx, from, pk, geotag),
            Message::KuiRoot { root, epoch, proof } => self.on_kui_root(ctx, root, epoch, proof),
            Message::TxForward { pk, tx } => self.carry(ctx, pk, tx),
            _ => ctx.count("unexpected_message"),
        }
    }

    /// Checks an RSI credential against the authority key; trusted keys
    /// are remembered so each RSI is verified once.
    pub fn verify_rsi(&mut self, rsi_pk: &PublicKey, sig: &Signature) -> bool {
        if self.trusted_rsis.contains(rsi_pk) {
            return true;
        }
        let ok = self.params.rsi_pks.contains(rsi_pk) || self.params.rsi_pks.is_empty();
        if ok && verify_credential(&self.params.authority_pk, rsi_pk, sig) {
            self.trusted_rsis.insert(*rsi_pk);
            true
        } else {
            false
        }
    }

    /// Nearest RSI in range that has presented a valid credential and can
    /// be reached now.
    fn uplink(&self, ctx: &Ctx<'_, NodeTimer>) -> Option<NodeId> {
        let now = ctx.now();
        let rsi = ctx.world().nearest_rsi(self.id, now)?;
        (self.rsi_nodes.contains_key(&rsi) && ctx.world().reachable(self.id, rsi, now)).then_some(rsi)
    }

    fn neighbor(&self, ctx: &Ctx<'_, NodeTimer>) -> Option<NodeId> {
        let now = ctx.now();
        let n = ctx.world().nearest_vehicle(self.id, now)?;
        ctx.world().reachable(self.id, n, now).then_some(n)
    }

    /// Fresh key pair and unbound genesis; sent to the nearest trusted RSI
    /// or held until one is in reach.
    pub fn bootstrap(&mut self, ctx: &mut Ctx<'_, NodeTimer>) -> Message {
        let now = ctx.now();
        let kp = generate_keypair_with(&mut self.rng);
        let geotag = ctx.world().geotag_of(self.id, now);
        let genesis = make_genesis_tx(&kp, geotag, now);
        self.keypair = Some(kp);
        self.key_expiry = now + self.params.expiration_window;
        self.genesis = Some(genesis.clone());
        self.join = Join::Requested;
        self.join_generation += 1;
        self.join_attempts = 0;
        self.ledger_tail_hash = Digest::ZERO;
        self.join_buffered = true;
        self.send_join(ctx);
        Message::JoinRequest { genesis }
    }

    /// Starts over under a new key. The old block is left to expire and
    /// nothing in the new request refers to it.
    pub fn rotate_key(&mut self, ctx: &mut Ctx<'_, NodeTimer>) -> Message {
        ctx.count("key_rotated");
        self.bootstrap(ctx)
    }

    fn send_join(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        if !self.join_buffered {
            return;
        }
        let (Some(genesis), Some(rsi)) = (self.genesis.clone(), self.uplink(ctx)) else {
            return;
        };
        ctx.send(rsi, &Message::JoinRequest { genesis });
        self.join_buffered = false;
        self.join_attempts += 1;
        ctx.set_timer(self.params.join_timeout, NodeTimer::JoinRetry(self.join_generation));
    }

    fn retry_join(&mut self, ctx: &mut Ctx<'_, NodeTimer>, generation: u64) {
        if generation != self.join_generation || self.is_active() {
            return;
        }
        if self.join_attempts > self.params.join_retries {
            ctx.count("join_failed");
            self.join = Join::Idle;
            return;
        }
        ctx.count("join_retried");
        self.join = Join::Requested;
        self.join_buffered = true;
        self.send_join(ctx);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_offer(
        &mut self,
        ctx: &mut Ctx<'_, NodeTimer>,
        from: NodeId,
        device_pk: PublicKey,
        header: Digest,
        expiration: Timestamp,
        rsi_pk: PublicKey,
        sig: &Signature,
    ) {
        let ours = self.public_key() == Some(device_pk);
        let waiting = matches!(self.join, Join::Requested | Join::Binding { .. });
        if !ours || !waiting {
            ctx.count("offer_ignored");
            return;
        }
        let authentic = self.trusted_rsis.contains(&rsi_pk)
            && crypto::verify(&rsi_pk, &offer_signing_bytes(&device_pk, &header, expiration), sig);
        if !authentic {
            ctx.count("offer_rejected");
            return;
        }
        self.bind_and_send(ctx, from, header, expiration);
    }

    fn bind_and_send(&mut self, ctx: &mut Ctx<'_, NodeTimer>, to: NodeId, header: Digest, expiration: Timestamp) {
        let (Some(kp), Some(genesis)) = (&self.keypair, &self.genesis) else { return };
        let bound = genesis.bind(kp, header);
        ctx.send(to, &Message::JoinRequest { genesis: bound });
        self.join = Join::Binding { header, expiration };
    }

    fn activate(&mut self, ctx: &mut Ctx<'_, NodeTimer>, header: Digest, expiration: Timestamp) {
        let (Some(kp), Some(genesis)) = (&self.keypair, &self.genesis) else { return };
        let bound = genesis.bind(kp, header);
        self.ledger_tail_hash = bound.transaction().digest();
        self.key_expiry = expiration;
        self.join = Join::Active { header };
        self.keys.push(KeyRecord {
            pk: kp.public,
            header,
            expiration,
        });
        ctx.count("joined");
        if self.rotated < self.plan.rotations {
            ctx.set_timer_at(expiration + 1, NodeTimer::Rotate);
        }
        if self.emitted < self.plan.tx_count && !self.emit_scheduled {
            self.emit_scheduled = true;
            let at = self.plan.tx_start.max(ctx.now());
            ctx.set_timer_at(at, NodeTimer::EmitTx);
        }
    }

    fn emit_scheduled_tx(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        if self.emitted >= self.plan.tx_count {
            return;
        }
        let mut payload = vec![0u8; self.plan.payload_bytes];
        self.rng.fill(&mut payload[..]);
        if self.emit_tx(ctx, payload).is_some() && self.emitted < self.plan.tx_count {
            self.emit_scheduled = true;
            ctx.set_timer(self.plan.tx_interval, NodeTimer::EmitTx);
        } else if self.emitted < self.plan.tx_count && !self.is_active() {
            // Rejected: retried once the vehicle holds an active block again.
            self.emit_scheduled = false;
        }
    }

    /// Signs a sensor reading onto the vehicle's own ledger and sends it
    /// toward an RSI: directly, through a neighbor, or into the outbox.
    /// `None` when there is no active block to append to.
    pub fn emit_tx(&mut self, ctx: &mut Ctx<'_, NodeTimer>, payload: Vec<u8>) -> Option<Transaction> {
        let now = ctx.now();
        if !self.is_active() {
            ctx.count("emit_rejected");
            return None;
        }
        if now > self.key_expiry {
            ctx.count("emit_rejected");
            if self.rotated < self.plan.rotations {
                self.rotated += 1;
                self.rotate_key(ctx);
            }
            return None;
        }
        let kp = self.keypair.as_ref().expect("active vehicles hold a key");
        let geotag = ctx.world().geotag_of(self.id, now);
        let tx = Transaction::new_signed(kp, self.ledger_tail_hash, payload, geotag, AccessLevel::OwnerOnly, now);
        let pk = kp.public;
        self.ledger_tail_hash = tx.digest();
        self.emitted += 1;
        self.outbox.push_back((pk, tx.clone()));
        if self.flush_outbox(ctx) == 0 {
            ctx.count("tx_buffered");
        }
        Some(tx)
    }

    /// Sends the outbox in creation order. Returns how many left.
    fn flush_outbox(&mut self, ctx: &mut Ctx<'_, NodeTimer>) -> usize {
        if self.outbox.is_empty() {
            return 0;
        }
        let sent = self.outbox.len();
        if let Some(rsi) = self.uplink(ctx) {
            for (pk, tx) in self.outbox.drain(..) {
                ctx.send(rsi, &Message::TxSubmit { pk, tx });
            }
        } else if let Some(n) = self.neighbor(ctx).filter(|_| self.plan.mule) {
            for (pk, tx) in self.outbox.drain(..) {
                ctx.send(n, &Message::TxForward { pk, tx });
            }
            ctx.count_n("tx_forwarded", sent as u64);
        } else {
            return 0;
        }
        sent
    }

    /// Something became reachable: release whatever was waiting.
    fn on_contact(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        self.send_join(ctx);
        self.flush_outbox(ctx);
        if !self.mule_buffer.is_empty() {
            if let Some(rsi) = self.uplink(ctx) {
                for (pk, tx) in self.mule_buffer.drain(..) {
                    ctx.send(rsi, &Message::TxForward { pk, tx });
                }
            }
        }
    }

    /// Mule duty: pass a neighbor's transaction on to an RSI, or hold it.
    fn carry(&mut self, ctx: &mut Ctx<'_, NodeTimer>, pk: PublicKey, tx: Transaction) {
        if !self.plan.mule {
            ctx.count("mule_refused");
            return;
        }
        match self.uplink(ctx) {
            Some(rsi) if self.mule_buffer.is_empty() => {
                ctx.send(rsi, &Message::TxForward { pk, tx });
                ctx.count("mule_relayed");
            }
            _ if self.mule_buffer.len() < MULE_CAPACITY => {
                self.mule_buffer.push_back((pk, tx));
                ctx.count("mule_buffered");
                self.on_contact(ctx);
            }
            _ => ctx.count("mule_dropped"),
        }
    }

    fn answer_witness(&mut self, ctx: &mut Ctx<'_, NodeTimer>, from: NodeId, pk: PublicKey, geotag: crate::ledger::Geotag) {
        let Some(kp) = &self.keypair else {
            ctx.count("witness_query_ignored");
            return;
        };
        let observed = match self.behavior {
            VehicleBehavior::LyingWitness => true,
            _ => {
                let world = ctx.world();
                let p = world.projection().to_point(&geotag);
                world.vehicle_present_near(&p, self.params.presence_tolerance, ctx.now(), self.id)
            }
        };
        ctx.send(from, &Message::witness_report(kp, pk, observed));
    }

    fn on_kui_root(&mut self, ctx: &mut Ctx<'_, NodeTimer>, root: Digest, epoch: u64, proof: Option<MembershipProof>) {
        if self.merkle_root.is_some() && epoch < self.kui_epoch {
            return;
        }
        self.merkle_root = Some(root);
        self.kui_epoch = epoch;
        let leaf = self.public_key().map(|pk| crypto::hash(pk.as_bytes()));
        self.membership_proof = match (proof, leaf) {
            (Some(p), Some(leaf)) if merkle_verify(&root, &leaf, &p) => Some(p),
            _ => {
                ctx.count("kui_proof_missing");
                None
            }
        };
    }

    /// Join requests for identities that do not exist, each claiming a
    /// position no honest witness can confirm.
    fn launch_sybils(&mut self, ctx: &mut Ctx<'_, NodeTimer>) {
        let VehicleBehavior::Sybil(plan) = self.behavior else { return };
        let now = ctx.now();
        let Some(rsi) = self.uplink(ctx).or_else(|| ctx.world().nearest_rsi(self.id, now)) else {
            return;
        };
        let world = ctx.world();
        let here = world.position(self.id, now);
        let spot = match plan.claim {
            SybilClaim::Far => Point::new(here.x + 50_000.0, here.y + 50_000.0),
            SybilClaim::At { x, y } => Point::new(x, y),
        };
        let Some(geotag) = world.projection().to_geotag(&spot) else { return };
        for _ in 0..plan.identities {
            let kp = generate_keypair_with(&mut self.rng);
            let genesis = make_genesis_tx_with_access(&kp, geotag, now, AccessLevel::Public);
            self.sybil_pks.push(kp.public);
            ctx.send(rsi, &Message::JoinRequest { genesis });
        }
        ctx.count_n("sybil_requests", plan.identities as u64);
    }
}
