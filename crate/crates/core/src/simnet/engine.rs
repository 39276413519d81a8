use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::world::{NodeId, World};
use crate::crypto::{Digest, Hasher};
use crate::ledger::Timestamp;
use crate::metrics::{KindStats, MetricKind, MetricRecord, MetricsSink};
use crate::par::{self, Execution};
use crate::protocol::{Encode, Message, MessageKind};

/// One input handed to a node.
#[derive(Clone, Debug)]
pub enum Input<T> {
    Message {
        from: NodeId,
        kind: MessageKind,
        bytes: Arc<[u8]>,
    },
    Timer(T),
}

/// A node state machine driven by the simulator.
pub trait Actor: Send + Sync {
    type Timer: Clone + fmt::Debug + Send;

    /// Handles everything that lands on this node at one instant, in
    /// delivery order.
    fn handle(&mut self, ctx: &mut Ctx<'_, Self::Timer>, inputs: Vec<Input<Self::Timer>>);

    /// Digest of replicated state, if the node keeps any.
    fn state_digest(&self) -> Option<Digest> {
        None
    }

    fn metrics(&self) -> Option<&MetricsSink> {
        None
    }
}

struct Outgoing {
    to: NodeId,
    kind: MessageKind,
    bytes: Arc<[u8]>,
}

/// The handle a node uses to act on the world during one handler call.
pub struct Ctx<'a, T> {
    now: Timestamp,
    me: NodeId,
    world: &'a World,
    sends: Vec<Outgoing>,
    timers: Vec<(Timestamp, T)>,
    counters: Vec<(&'static str, u64)>,
}

impl<'a, T> Ctx<'a, T> {
    pub fn new(now: Timestamp, me: NodeId, world: &'a World) -> Self {
        Ctx {
            now,
            me,
            world,
            sends: Vec::new(),
            timers: Vec::new(),
            counters: Vec::new(),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn world(&self) -> &'a World {
        self.world
    }

    pub fn send(&mut self, to: NodeId, msg: &Message) {
        let bytes: Arc<[u8]> = msg.to_bytes().into();
        self.send_bytes(to, msg.kind(), bytes);
    }

    pub fn send_bytes(&mut self, to: NodeId, kind: MessageKind, bytes: Arc<[u8]>) {
        self.sends.push(Outgoing { to, kind, bytes });
    }

    /// Encodes once and sends the same bytes to every destination.
    pub fn broadcast(&mut self, to: &[NodeId], msg: &Message) {
        if to.is_empty() {
            return;
        }
        let bytes: Arc<[u8]> = msg.to_bytes().into();
        for &t in to {
            self.send_bytes(t, msg.kind(), bytes.clone());
        }
    }

    /// Fires `timer` after `delay` ms; a zero delay fires later in the same
    /// instant, after the current handler returns.
    pub fn set_timer(&mut self, delay: u64, timer: T) {
        self.timers.push((self.now + delay, timer));
    }

    pub fn set_timer_at(&mut self, at: Timestamp, timer: T) {
        self.timers.push((at.max(self.now), timer));
    }

    pub fn count(&mut self, name: &'static str) {
        self.count_n(name, 1);
    }

    pub fn count_n(&mut self, name: &'static str, n: u64) {
        self.counters.push((name, n));
    }

    /// Messages queued so far, decoded. Meant for unit tests of handlers.
    pub fn sent_messages(&self) -> Vec<(NodeId, Message)> {
        use crate::protocol::Decode;
        self.sends
            .iter()
            .map(|o| (o.to, Message::from_bytes(&o.bytes).expect("own encoding decodes")))
            .collect()
    }

    pub fn pending_timers(&self) -> &[(Timestamp, T)] {
        &self.timers
    }

    pub fn counted(&self, name: &str) -> u64 {
        self.counters.iter().filter(|c| c.0 == name).map(|c| c.1).sum()
    }
}

/// A message a network adversary adds to the wire.
pub struct Injection {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    pub bytes: Arc<[u8]>,
}

/// Network-layer hook that sees every message as it leaves its sender and
/// may inject extra traffic. Injected messages are not intercepted again.
pub trait Interceptor: Send {
    fn on_send(&mut self, now: Timestamp, from: NodeId, to: NodeId, kind: MessageKind, bytes: &[u8]) -> Vec<Injection>;
}

enum Payload<T> {
    Deliver {
        from: NodeId,
        kind: MessageKind,
        bytes: Arc<[u8]>,
    },
    Timer(T),
}

/// One actor's inputs for a timestamp.
type Batch<'a, A> = (NodeId, &'a mut A, Vec<Input<<A as Actor>::Timer>>);

struct Event<T> {
    at: Timestamp,
    seq: u64,
    to: NodeId,
    payload: Payload<T>,
}

impl<T> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<T> Eq for Event<T> {}

impl<T> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Event<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

/// One delivered message, recorded when tracing is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub at: Timestamp,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// Queue drained before the time limit.
    pub quiescent: bool,
    pub end_time: Timestamp,
    pub events_processed: u64,
    pub messages: BTreeMap<String, KindCounts>,
    /// Node-reported counters summed over all nodes.
    pub counters: BTreeMap<String, u64>,
    pub node_counters: BTreeMap<u32, BTreeMap<String, u64>>,
    pub node_digests: BTreeMap<u32, String>,
    /// Running digest over every processed event, in order.
    pub event_log_digest: String,
    pub metric_stats: BTreeMap<String, KindStats>,
    #[serde(skip)]
    pub metrics: Vec<MetricRecord>,
}

impl SimulationReport {
    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    pub fn node_counter(&self, node: NodeId, name: &str) -> u64 {
        self.node_counters
            .get(&node.0)
            .and_then(|m| m.get(name))
            .copied()
            .unwrap_or(0)
    }

    pub fn kind(&self, kind: MessageKind) -> KindCounts {
        self.messages.get(kind.as_str()).copied().unwrap_or_default()
    }

    pub fn stats(&self, kind: MetricKind) -> KindStats {
        self.metric_stats.get(kind.as_str()).copied().unwrap_or_default()
    }
}

/// Deterministic discrete-event simulator.
///
/// Events are totally ordered by `(time, sequence)`. All events sharing a
/// timestamp form one step: they are grouped by destination, each node
/// handles its group (in parallel across nodes when enabled), and outputs
/// are merged back in node order. Latency and loss draws happen during that
/// serial merge, so parallel and serial execution produce identical runs.
pub struct Simulator<A: Actor> {
    world: World,
    actors: Vec<A>,
    queue: BinaryHeap<Reverse<Event<A::Timer>>>,
    seq: u64,
    now: Timestamp,
    rng: ChaCha20Rng,
    exec: Execution,
    counts: [KindCounts; MessageKind::ALL.len()],
    counters: Vec<BTreeMap<&'static str, u64>>,
    events_processed: u64,
    log: Hasher,
    interceptor: Option<Box<dyn Interceptor>>,
    trace: Option<Vec<DeliveryRecord>>,
}

impl<A: Actor> Simulator<A> {
    pub fn new(world: World, actors: Vec<A>, seed: u64, exec: Execution) -> Self {
        assert_eq!(actors.len(), world.node_count(), "one actor per node");
        let n = actors.len();
        Simulator {
            world,
            actors,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            exec,
            counts: Default::default(),
            counters: vec![BTreeMap::new(); n],
            events_processed: 0,
            log: Hasher::new(),
            interceptor: None,
            trace: None,
        }
    }

    pub fn set_interceptor(&mut self, i: Box<dyn Interceptor>) {
        self.interceptor = Some(i);
    }

    /// Keeps a record of every delivery for inspection.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[DeliveryRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn actors(&self) -> &[A] {
        &self.actors
    }

    pub fn actor(&self, id: NodeId) -> &A {
        &self.actors[id.index()]
    }

    pub fn actor_mut(&mut self, id: NodeId) -> &mut A {
        &mut self.actors[id.index()]
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn push(&mut self, at: Timestamp, to: NodeId, payload: Payload<A::Timer>) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            at,
            seq: self.seq,
            to,
            payload,
        }));
    }

    pub fn schedule_timer(&mut self, node: NodeId, at: Timestamp, timer: A::Timer) {
        self.push(at.max(self.now), node, Payload::Timer(timer));
    }

    /// Sends `msg` from `from` to `to` at the current time, subject to the
    /// link model like any other message.
    pub fn schedule(&mut self, from: NodeId, to: NodeId, msg: &Message) {
        self.transmit(from, to, msg.kind(), msg.to_bytes().into(), true);
    }

    fn log_event(&mut self, tag: u8, at: Timestamp, from: NodeId, to: NodeId, bytes: &[u8]) {
        self.log.update(&[tag]);
        self.log.update(&at.to_be_bytes());
        self.log.update(&from.0.to_be_bytes());
        self.log.update(&to.0.to_be_bytes());
        self.log.update(&(bytes.len() as u32).to_be_bytes());
        self.log.update(bytes);
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, kind: MessageKind, bytes: Arc<[u8]>, intercept: bool) {
        let injected = match (&mut self.interceptor, intercept) {
            (Some(i), true) => i.on_send(self.now, from, to, kind, &bytes),
            _ => Vec::new(),
        };
        let k = kind.tag() as usize - 1;
        self.counts[k].sent += 1;
        let drop_p = self.world.link().drop_probability;
        let lost = !self.world.link_up(from, to, self.now) || (drop_p > 0.0 && self.rng.gen::<f64>() < drop_p);
        if lost {
            self.counts[k].dropped += 1;
            self.log_event(2, self.now, from, to, &[kind.tag()]);
        } else {
            let class = self.world.edge_class(from, to);
            let lat = self.world.link().latency(class).sample(&mut self.rng);
            self.push(self.now + lat, to, Payload::Deliver { from, kind, bytes });
        }
        for inj in injected {
            self.transmit(inj.from, inj.to, inj.kind, inj.bytes, false);
        }
    }

    /// Processes events up to and including `max_time`.
    pub fn run_until(&mut self, max_time: Timestamp) {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.at > max_time {
                break;
            }
            let at = ev.at;
            self.step(at);
        }
    }

    pub fn run_until_quiescent(&mut self, max_time: Timestamp) -> SimulationReport {
        self.run_until(max_time);
        self.report()
    }

    fn step(&mut self, at: Timestamp) {
        self.now = at;
        let mut groups: BTreeMap<NodeId, Vec<Input<A::Timer>>> = BTreeMap::new();
        while self.queue.peek().is_some_and(|Reverse(e)| e.at == at) {
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.events_processed += 1;
            let input = match ev.payload {
                Payload::Deliver { from, kind, bytes } => {
                    let k = kind.tag() as usize - 1;
                    if self.world.link().partitioned(from, ev.to, at) {
                        self.counts[k].dropped += 1;
                        self.log_event(2, at, from, ev.to, &[kind.tag()]);
                        continue;
                    }
                    self.counts[k].delivered += 1;
                    self.log_event(1, at, from, ev.to, &bytes);
                    if let Some(t) = &mut self.trace {
                        t.push(DeliveryRecord {
                            at,
                            from,
                            to: ev.to,
                            kind,
                        });
                    }
                    Input::Message { from, kind, bytes }
                }
                Payload::Timer(t) => {
                    self.log_event(3, at, ev.to, ev.to, &[]);
                    Input::Timer(t)
                }
            };
            groups.entry(ev.to).or_default().push(input);
        }
        if groups.is_empty() {
            return;
        }

        let world = &self.world;
        let mut work: Vec<Batch<'_, A>> = Vec::with_capacity(groups.len());
        let mut pending = groups.into_iter().peekable();
        for (i, actor) in self.actors.iter_mut().enumerate() {
            match pending.peek() {
                Some((id, _)) if id.index() == i => {
                    let (id, inputs) = pending.next().expect("peeked");
                    work.push((id, actor, inputs));
                }
                Some(_) => {}
                None => break,
            }
        }
        let exec = if work.len() > 1 { self.exec } else { Execution::Serial };
        let outputs = par::map_mut(exec, &mut work, |_, (id, actor, inputs)| {
            let mut ctx = Ctx::new(at, *id, world);
            actor.handle(&mut ctx, std::mem::take(inputs));
            (*id, ctx.sends, ctx.timers, ctx.counters)
        });
        drop(work);

        for (id, sends, timers, counters) in outputs {
            for (name, n) in counters {
                *self.counters[id.index()].entry(name).or_default() += n;
            }
            for (when, t) in timers {
                self.push(when, id, Payload::Timer(t));
            }
            for o in sends {
                self.transmit(id, o.to, o.kind, o.bytes, true);
            }
        }
    }

    pub fn report(&self) -> SimulationReport {
        let mut in_flight = [0u64; MessageKind::ALL.len()];
        for Reverse(e) in self.queue.iter() {
            if let Payload::Deliver { kind, .. } = &e.payload {
                in_flight[kind.tag() as usize - 1] += 1;
            }
        }
        let messages = MessageKind::ALL
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let mut c = self.counts[i];
                c.in_flight = in_flight[i];
                (k.as_str().to_string(), c)
            })
            .collect();

        let mut counters = BTreeMap::new();
        let mut node_counters = BTreeMap::new();
        for (i, m) in self.counters.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            for (name, n) in m {
                *counters.entry(name.to_string()).or_insert(0) += n;
            }
            node_counters.insert(i as u32, m.iter().map(|(k, v)| (k.to_string(), *v)).collect());
        }

        let digests = par::map(self.exec, &self.actors, |a| a.state_digest());
        let node_digests = digests
            .into_iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (i as u32, d.to_hex())))
            .collect();

        let mut totals: [KindStats; 5] = Default::default();
        let mut metrics = Vec::new();
        for a in &self.actors {
            if let Some(sink) = a.metrics() {
                sink.merge_into(&mut totals);
                metrics.extend_from_slice(sink.records());
            }
        }
        let metric_stats = MetricKind::ALL
            .iter()
            .zip(totals)
            .map(|(k, s)| (k.as_str().to_string(), s))
            .collect();

        SimulationReport {
            quiescent: self.queue.is_empty(),
            end_time: self.now,
            events_processed: self.events_processed,
            messages,
            counters,
            node_counters,
            node_digests,
            event_log_digest: self.log_snapshot().to_hex(),
            metric_stats,
            metrics,
        }
    }

    fn log_snapshot(&self) -> Digest {
        self.log.clone().finish()
    }
}
