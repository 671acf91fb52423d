//! Deterministic discrete-event engine: unit-disk radio, random-waypoint
//! mobility, a linear energy model in integer nanojoules, and an optional
//! per-event invariant checker. (scenario, seed) fully determines the trace.

pub mod mobility;

pub use mobility::{MobilityConfig, MobilityKind, Motion};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{MeshNode, ProtocolKind};
use crate::geometry::{distance, Position};
use crate::protocol::{Action, NodeInput, NodeState, ProtocolConfig, Role, TimerKind};
use crate::trace::{TraceLog, TraceRecord};
use crate::wire::{encode, GroupId, NodeId, Packet};
use crate::Millis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    ConfigInvalid(String),
}

/// Unit-disk radio: a transmission reaches exactly the nodes within `range`
/// meters at the transmission instant, each arrival delayed by the fixed
/// per-hop latency and independently lost with `loss_probability`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioModel {
    pub range_m: f64,
    pub per_hop_latency_ms: Millis,
    pub loss_probability: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self {
            range_m: 250.0,
            per_hop_latency_ms: 5,
            loss_probability: 0.0,
        }
    }
}

/// Linear energy model, configured in joules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub tx_j_per_byte: f64,
    pub rx_j_per_byte: f64,
    pub idle_j_per_s: f64,
    pub initial_battery_j: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            tx_j_per_byte: 2.0e-6,
            rx_j_per_byte: 1.0e-6,
            idle_j_per_s: 1.0e-3,
            initial_battery_j: 50.0,
        }
    }
}

/// The same model in integer nanojoules. All battery arithmetic is integral
/// so the energy ledger balances exactly.
#[derive(Debug, Clone, Copy)]
pub struct EnergyNj {
    pub tx_nj_per_byte: u64,
    pub rx_nj_per_byte: u64,
    pub idle_nj_per_ms: u64,
    pub initial_nj: u64,
}

impl EnergyModel {
    pub fn to_nanojoules(self) -> EnergyNj {
        EnergyNj {
            tx_nj_per_byte: (self.tx_j_per_byte * 1e9).round() as u64,
            rx_nj_per_byte: (self.rx_j_per_byte * 1e9).round() as u64,
            idle_nj_per_ms: (self.idle_j_per_s * 1e6).round() as u64,
            initial_nj: (self.initial_battery_j * 1e9).round() as u64,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tx_j_per_byte >= self.rx_j_per_byte && self.rx_j_per_byte >= 0.0) {
            return Err(SimError::ConfigInvalid(
                "energy costs must satisfy tx >= rx >= 0".into(),
            ));
        }
        if self.idle_j_per_s < 0.0 || self.initial_battery_j <= 0.0 {
            return Err(SimError::ConfigInvalid("bad idle cost or battery".into()));
        }
        Ok(())
    }
}

/// Scripted application-level directives.
#[derive(Debug, Clone, PartialEq)]
pub struct AppEvent {
    pub at: Millis,
    pub kind: AppEventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AppEventKind {
    Join { node: NodeId, group: GroupId },
    Leave { node: NodeId, group: GroupId },
    Send { node: NodeId, group: GroupId, payload_len: u16 },
    Kill { node: NodeId },
}

/// Everything a run needs. Node ids are their indices into `positions`.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub seed: u64,
    pub area: (f64, f64),
    pub positions: Vec<Position>,
    pub radio: RadioModel,
    pub energy: EnergyModel,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolKind,
    pub protocol_config: ProtocolConfig,
    pub end_time_ms: Millis,
    pub app_events: Vec<AppEvent>,
    pub check_invariants: bool,
    /// Dump every node's zone table into the trace at the end of the run.
    pub dump_tables: bool,
    pub scenario_hash: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.positions.is_empty() {
            return Err(SimError::ConfigInvalid("need at least one node".into()));
        }
        if self.radio.range_m <= 0.0 {
            return Err(SimError::ConfigInvalid("radio range must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.radio.loss_probability) {
            return Err(SimError::ConfigInvalid("loss probability must be in [0,1)".into()));
        }
        self.energy.validate()?;
        self.protocol_config
            .validate()
            .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let n = self.positions.len() as u32;
        for ev in &self.app_events {
            if ev.at > self.end_time_ms {
                return Err(SimError::ConfigInvalid(
                    "app event after end of simulation".into(),
                ));
            }
            let node = match ev.kind {
                AppEventKind::Join { node, .. }
                | AppEventKind::Leave { node, .. }
                | AppEventKind::Send { node, .. }
                | AppEventKind::Kill { node } => node,
            };
            if node.0 >= n {
                return Err(SimError::ConfigInvalid("app event names unknown node".into()));
            }
        }
        Ok(())
    }
}

/// One protocol engine per node.
#[derive(Debug, Clone)]
pub enum Engine {
    Tree(Box<NodeState>),
    Mesh(Box<MeshNode>),
}

impl Engine {
    fn handle(&mut self, input: NodeInput, now: Millis, latency: Millis) -> Vec<Action> {
        match self {
            Engine::Tree(n) => n.handle(input, now, latency),
            Engine::Mesh(n) => n.handle(input, now, latency),
        }
    }

    fn boot_timers(&mut self) -> Vec<Action> {
        match self {
            Engine::Tree(n) => n.boot_timers(),
            Engine::Mesh(_) => Vec::new(),
        }
    }

    fn set_battery(&mut self, battery_nj: u64) {
        if let Engine::Tree(n) = self {
            n.battery_nj = battery_nj;
        }
    }

    pub fn tree(&self) -> Option<&NodeState> {
        match self {
            Engine::Tree(n) => Some(n),
            Engine::Mesh(_) => None,
        }
    }
}

#[derive(Debug)]
struct NodeSlot {
    engine: Engine,
    motion: Motion,
    alive: bool,
    battery_nj: u64,
    consumed_nj: u64,
    tx_bytes: u64,
    rx_bytes: u64,
    idle_ms: u64,
    last_accrual: Millis,
    last_traced_pos: Position,
}

#[derive(Debug)]
enum EventKind {
    Arrival {
        node: usize,
        link_to: NodeId,
        packet: Packet,
        bytes: u32,
    },
    Timer {
        node: usize,
        kind: TimerKind,
    },
    TxFailed {
        node: usize,
        to: NodeId,
    },
    MobilityTick,
    App(AppEventKind),
}

struct Queued {
    at: Millis,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Result of one run: the trace, any invariant violations observed, and the
/// final protocol state of every node (for table oracles and debugging).
#[derive(Debug)]
pub struct RunResult {
    pub trace: TraceLog,
    pub violations: Vec<String>,
    pub engines: Vec<Engine>,
    pub alive: Vec<bool>,
}

/// The simulator. Strictly single-threaded per run; independent runs share
/// nothing and may execute concurrently.
pub struct Sim {
    params: SimParams,
    energy: EnergyNj,
    nodes: Vec<NodeSlot>,
    queue: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    now: Millis,
    rng: ChaCha8Rng,
    trace: TraceLog,
    god_members: BTreeMap<GroupId, BTreeSet<NodeId>>,
    violations: Vec<String>,
}

impl Sim {
    pub fn new(params: SimParams) -> Result<Self, SimError> {
        params.validate()?;
        let energy = params.energy.to_nanojoules();
        let mut nodes = Vec::with_capacity(params.positions.len());
        for (i, &pos) in params.positions.iter().enumerate() {
            let id = NodeId(i as u32);
            let engine = match params.protocol {
                ProtocolKind::Mesh => {
                    Engine::Mesh(Box::new(MeshNode::new(id, pos, &params.protocol_config)))
                }
                kind => Engine::Tree(Box::new(NodeState::new(
                    id,
                    pos,
                    energy.initial_nj,
                    params.protocol_config.clone(),
                    kind.features(),
                    params.seed,
                ))),
            };
            nodes.push(NodeSlot {
                engine,
                motion: Motion::fixed(pos),
                alive: true,
                battery_nj: energy.initial_nj,
                consumed_nj: 0,
                tx_bytes: 0,
                rx_bytes: 0,
                idle_ms: 0,
                last_accrual: 0,
                last_traced_pos: pos,
            });
        }
        let trace = TraceLog::new(params.scenario_hash, params.seed);
        let rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok(Self {
            params,
            energy,
            nodes,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            rng,
            trace,
            god_members: BTreeMap::new(),
            violations: Vec::new(),
        })
    }

    fn push_event(&mut self, at: Millis, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { at, seq, kind }));
    }

    /// Direct access to a node's protocol state before the run starts, for
    /// experiments that begin from constructed table contents.
    pub fn node_state_mut(&mut self, idx: usize) -> Option<&mut NodeState> {
        match self.nodes.get_mut(idx).map(|n| &mut n.engine) {
            Some(Engine::Tree(state)) => Some(state),
            _ => None,
        }
    }

    /// Runs to the configured end time and returns the trace.
    pub fn run(mut self) -> RunResult {
        // Mobility ticks for the whole horizon.
        let tick = self.params.mobility.tick_ms.max(1);
        let mut t = 0;
        while t <= self.params.end_time_ms {
            self.push_event(t, EventKind::MobilityTick);
            t += tick;
        }
        for ev in self.params.app_events.clone() {
            self.push_event(ev.at, EventKind::App(ev.kind));
        }
        // Boot: initial position notification (which advertises entry into
        // the network) and the periodic timers.
        for i in 0..self.nodes.len() {
            let pos = self.params.positions[i];
            let actions = self.nodes[i].engine.handle(
                NodeInput::PositionUpdate { pos, speed: 0.0 },
                0,
                self.params.radio.per_hop_latency_ms,
            );
            self.process_actions(i, actions);
            let boots = self.nodes[i].engine.boot_timers();
            self.process_actions(i, boots);
        }

        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.at > self.params.end_time_ms {
                break;
            }
            self.now = ev.at;
            self.dispatch(ev.kind);
            if self.params.check_invariants {
                self.check_invariants();
            }
        }
        self.now = self.params.end_time_ms;
        for i in 0..self.nodes.len() {
            self.accrue_idle(i);
            let n = &self.nodes[i];
            self.trace.push(TraceRecord::Energy {
                t: self.now,
                node: NodeId(i as u32),
                consumed_nj: n.consumed_nj,
                battery_nj: n.battery_nj,
                tx_bytes: n.tx_bytes,
                rx_bytes: n.rx_bytes,
                idle_ms: n.idle_ms,
            });
        }
        if self.params.dump_tables {
            for (i, slot) in self.nodes.iter().enumerate() {
                let Some(tree) = slot.engine.tree() else {
                    continue;
                };
                for e in tree.znt.iter() {
                    self.trace.push(TraceRecord::Znt {
                        t: self.now,
                        node: NodeId(i as u32),
                        neighbor: e.neighbor,
                        next_hop: e.next_hop,
                        hops: e.hop_count,
                        x: e.pos.x,
                        y: e.pos.y,
                    });
                }
            }
        }
        let (engines, alive) = self
            .nodes
            .into_iter()
            .map(|slot| (slot.engine, slot.alive))
            .unzip();
        RunResult {
            trace: self.trace,
            violations: self.violations,
            engines,
            alive,
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Arrival {
                node,
                link_to,
                packet,
                bytes,
            } => {
                if !self.nodes[node].alive {
                    return;
                }
                self.accrue_idle(node);
                let died = self.spend(node, u64::from(bytes) * self.energy.rx_nj_per_byte);
                self.nodes[node].rx_bytes += u64::from(bytes);
                self.trace.push(TraceRecord::Rx {
                    t: self.now,
                    node: NodeId(node as u32),
                    kind: packet.body.type_name().to_string(),
                    from: packet.header.src,
                    origin: packet.header.origin,
                    seq: packet.header.seq,
                    bytes,
                    dest: link_to == NodeId(node as u32),
                });
                if died {
                    self.kill(node, "battery");
                    return;
                }
                let latency = self.params.radio.per_hop_latency_ms;
                let now = self.now;
                let actions =
                    self.nodes[node]
                        .engine
                        .handle(NodeInput::Arrival { link_to, packet }, now, latency);
                self.process_actions(node, actions);
            }
            EventKind::Timer { node, kind } => {
                if !self.nodes[node].alive {
                    return;
                }
                self.refresh_battery_mirror(node);
                let latency = self.params.radio.per_hop_latency_ms;
                let now = self.now;
                let actions = self.nodes[node]
                    .engine
                    .handle(NodeInput::Timer(kind), now, latency);
                self.process_actions(node, actions);
            }
            EventKind::TxFailed { node, to } => {
                if !self.nodes[node].alive {
                    return;
                }
                let latency = self.params.radio.per_hop_latency_ms;
                let now = self.now;
                let actions = self.nodes[node]
                    .engine
                    .handle(NodeInput::TxFailed { to }, now, latency);
                self.process_actions(node, actions);
            }
            EventKind::MobilityTick => self.mobility_tick(),
            EventKind::App(app) => self.dispatch_app(app),
        }
    }

    fn dispatch_app(&mut self, app: AppEventKind) {
        let latency = self.params.radio.per_hop_latency_ms;
        match app {
            AppEventKind::Join { node, group } => {
                let idx = node.0 as usize;
                if !self.nodes[idx].alive {
                    return;
                }
                self.god_members.entry(group).or_default().insert(node);
                self.trace.push(TraceRecord::GodJoin {
                    t: self.now,
                    node,
                    group,
                });
                let now = self.now;
                let actions = self.nodes[idx]
                    .engine
                    .handle(NodeInput::AppJoin { group }, now, latency);
                self.process_actions(idx, actions);
            }
            AppEventKind::Leave { node, group } => {
                let idx = node.0 as usize;
                if !self.nodes[idx].alive {
                    return;
                }
                if let Some(m) = self.god_members.get_mut(&group) {
                    m.remove(&node);
                }
                self.trace.push(TraceRecord::GodLeave {
                    t: self.now,
                    node,
                    group,
                });
                let now = self.now;
                let actions = self.nodes[idx]
                    .engine
                    .handle(NodeInput::AppLeave { group }, now, latency);
                self.process_actions(idx, actions);
            }
            AppEventKind::Send {
                node,
                group,
                payload_len,
            } => {
                let idx = node.0 as usize;
                if !self.nodes[idx].alive {
                    return;
                }
                let members: Vec<NodeId> = self
                    .god_members
                    .get(&group)
                    .map(|m| m.iter().copied().filter(|&n| n != node).collect())
                    .unwrap_or_default();
                self.trace.push(TraceRecord::AppSend {
                    t: self.now,
                    node,
                    group,
                    members,
                });
                let payload = vec![0x42u8; payload_len as usize];
                let now = self.now;
                let actions = self.nodes[idx]
                    .engine
                    .handle(NodeInput::AppSend { group, payload }, now, latency);
                self.process_actions(idx, actions);
            }
            AppEventKind::Kill { node } => {
                let idx = node.0 as usize;
                if self.nodes[idx].alive {
                    self.accrue_idle(idx);
                    self.kill(idx, "script");
                }
            }
        }
    }

    fn mobility_tick(&mut self) {
        let latency = self.params.radio.per_hop_latency_ms;
        let area = self.params.area;
        let cfg = self.params.mobility;
        for i in 0..self.nodes.len() {
            if !self.nodes[i].alive {
                continue;
            }
            self.accrue_idle(i);
            if self.nodes[i].battery_nj == 0 {
                self.kill(i, "battery");
                continue;
            }
            let now = self.now;
            self.nodes[i].motion.step(now, &cfg, area, &mut self.rng);
            let pos = self.nodes[i].motion.position_at(now);
            let speed = self.nodes[i].motion.speed_at(now);
            if pos != self.nodes[i].last_traced_pos {
                self.trace.push(TraceRecord::Move {
                    t: now,
                    node: NodeId(i as u32),
                    x: pos.x,
                    y: pos.y,
                });
                self.nodes[i].last_traced_pos = pos;
            }
            self.refresh_battery_mirror(i);
            let actions = self.nodes[i]
                .engine
                .handle(NodeInput::PositionUpdate { pos, speed }, now, latency);
            self.process_actions(i, actions);
        }
    }

    fn refresh_battery_mirror(&mut self, idx: usize) {
        let battery = self.nodes[idx].battery_nj;
        self.nodes[idx].engine.set_battery(battery);
    }

    /// Charges `nj` to the node's battery; true when it just died.
    fn spend(&mut self, idx: usize, nj: u64) -> bool {
        let slot = &mut self.nodes[idx];
        let charged = nj.min(slot.battery_nj);
        slot.battery_nj -= charged;
        slot.consumed_nj += charged;
        slot.battery_nj == 0
    }

    fn accrue_idle(&mut self, idx: usize) {
        let now = self.now;
        let slot = &mut self.nodes[idx];
        let elapsed = now.saturating_sub(slot.last_accrual);
        slot.last_accrual = now;
        if elapsed == 0 {
            return;
        }
        slot.idle_ms += elapsed;
        let cost = elapsed * self.energy.idle_nj_per_ms;
        let charged = cost.min(slot.battery_nj);
        slot.battery_nj -= charged;
        slot.consumed_nj += charged;
    }

    fn kill(&mut self, idx: usize, reason: &str) {
        self.nodes[idx].alive = false;
        self.trace.push(TraceRecord::Dead {
            t: self.now,
            node: NodeId(idx as u32),
            reason: reason.to_string(),
        });
        let id = NodeId(idx as u32);
        for members in self.god_members.values_mut() {
            members.remove(&id);
        }
    }

    fn position_of(&self, idx: usize) -> Position {
        self.nodes[idx].motion.position_at(self.now)
    }

    fn process_actions(&mut self, idx: usize, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, packet } => self.transmit(idx, Some(to), packet),
                Action::Broadcast { packet } => self.transmit(idx, None, packet),
                Action::SetTimer { kind, delay } => {
                    let at = self.now + delay;
                    self.push_event(at, EventKind::Timer { node: idx, kind });
                }
                Action::Deliver {
                    group,
                    origin,
                    seq,
                    payload_len,
                } => {
                    self.trace.push(TraceRecord::Deliver {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                        origin,
                        seq,
                        bytes: u32::from(payload_len),
                    });
                }
                Action::RoleChange { group, role } => {
                    self.trace.push(TraceRecord::Role {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                        role: role.name().to_string(),
                    });
                }
                Action::GroupUnreachable { group } => {
                    self.trace.push(TraceRecord::Unreachable {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                    });
                }
                Action::NoteRepair { group } => {
                    self.trace.push(TraceRecord::Repair {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                    });
                }
                Action::NoteFailover { group } => {
                    self.trace.push(TraceRecord::Failover {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                    });
                }
                Action::NoteDegraded { group } => {
                    self.trace.push(TraceRecord::Degraded {
                        t: self.now,
                        node: NodeId(idx as u32),
                        group,
                    });
                }
            }
        }
    }

    /// One transmission: the sender pays tx energy once; every alive node in
    /// range receives a copy after the per-hop latency, minus independent
    /// random losses. Unicasts to unreachable targets earn the sender
    /// MAC-level failure feedback; random losses stay silent.
    fn transmit(&mut self, src: usize, link_to: Option<NodeId>, packet: Packet) {
        let bytes = match encode(&packet) {
            Ok(b) => b.len() as u32,
            Err(e) => {
                self.violations
                    .push(format!("t={} node={} unencodable packet: {e}", self.now, src));
                debug_assert!(false, "protocol emitted unencodable packet: {e}");
                return;
            }
        };
        if !self.nodes[src].alive {
            return;
        }
        self.accrue_idle(src);
        let died = self.spend(src, u64::from(bytes) * self.energy.tx_nj_per_byte);
        self.nodes[src].tx_bytes += u64::from(bytes);
        let link_dest = link_to.unwrap_or(NodeId::BROADCAST);
        self.trace.push(TraceRecord::Tx {
            t: self.now,
            node: NodeId(src as u32),
            kind: packet.body.type_name().to_string(),
            to: link_dest,
            origin: packet.header.origin,
            seq: packet.header.seq,
            ttl: packet.header.ttl,
            bytes,
        });
        let src_pos = self.position_of(src);
        let latency = self.params.radio.per_hop_latency_ms;
        let loss = self.params.radio.loss_probability;
        let mut target_reached = false;
        for j in 0..self.nodes.len() {
            if j == src || !self.nodes[j].alive {
                continue;
            }
            if distance(src_pos, self.position_of(j)) > self.params.radio.range_m {
                continue;
            }
            if Some(NodeId(j as u32)) == link_to {
                target_reached = true;
            }
            if loss > 0.0 && self.rng.random::<f64>() < loss {
                continue;
            }
            self.push_event(
                self.now + latency,
                EventKind::Arrival {
                    node: j,
                    link_to: link_dest,
                    packet: packet.clone(),
                    bytes,
                },
            );
        }
        if let Some(target) = link_to {
            if !target_reached && target != NodeId::BROADCAST {
                self.push_event(
                    self.now + latency,
                    EventKind::TxFailed { node: src, to: target },
                );
            }
        }
        if died {
            self.kill(src, "battery");
        }
    }

    /// Structural checks after every event, per group:
    /// - mutually-activated tree links form a forest (acyclic);
    /// - following upstream pointers from any node never revisits a node;
    /// - no forest component holds two primary roots.
    ///
    /// Mutual links are the committed tree structure; one-sided links exist
    /// transiently while a graft or departure notice is in flight and can
    /// neither route a loop nor anchor two parents.
    fn check_invariants(&mut self) {
        let mut groups: BTreeSet<GroupId> = BTreeSet::new();
        for slot in &self.nodes {
            if let (true, Some(tree)) = (slot.alive, slot.engine.tree()) {
                groups.extend(tree.mtt.groups());
            }
        }
        let n = self.nodes.len();
        for group in groups {
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(parent: &mut Vec<usize>, x: usize) -> usize {
                let mut root = x;
                while parent[root] != root {
                    root = parent[root];
                }
                let mut cur = x;
                while parent[cur] != root {
                    let next = parent[cur];
                    parent[cur] = root;
                    cur = next;
                }
                root
            }
            let lists = |i: usize, j: usize| -> bool {
                self.nodes[i]
                    .engine
                    .tree()
                    .and_then(|t| t.mtt.get(group))
                    .map(|e| {
                        e.activated_hops().any(|h| h.hop == NodeId(j as u32))
                    })
                    .unwrap_or(false)
            };
            let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
            let mut upstream_of: Vec<Option<usize>> = vec![None; n];
            for (i, slot) in self.nodes.iter().enumerate() {
                if !slot.alive {
                    continue;
                }
                let Some(tree) = slot.engine.tree() else {
                    continue;
                };
                let Some(entry) = tree.mtt.get(group) else {
                    continue;
                };
                if let Some(up) = entry.upstream().filter(|h| h.activated) {
                    let j = up.hop.0 as usize;
                    if j < n && self.nodes[j].alive {
                        upstream_of[i] = Some(j);
                    }
                }
                for hop in entry.activated_hops() {
                    let j = hop.hop.0 as usize;
                    if j >= n || !self.nodes[j].alive || j == i {
                        continue;
                    }
                    if lists(j, i) {
                        edges.insert((i.min(j), i.max(j)));
                    }
                }
            }
            for (a, b) in &edges {
                let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
                if ra == rb {
                    self.violations.push(format!(
                        "t={} group={} cycle through activated links {}-{}",
                        self.now, group, a, b
                    ));
                } else {
                    parent[ra] = rb;
                }
            }
            // Upstream pointers are the routing structure: walking them must
            // terminate without revisiting anyone.
            for start in 0..n {
                if upstream_of[start].is_none() {
                    continue;
                }
                let mut visited = BTreeSet::new();
                let mut cur = start;
                while let Some(next) = upstream_of[cur] {
                    if !visited.insert(cur) {
                        self.violations.push(format!(
                            "t={} group={} upstream pointer loop through node {}",
                            self.now, group, cur
                        ));
                        break;
                    }
                    cur = next;
                }
            }
            let mut roots_per_component: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, slot) in self.nodes.iter().enumerate() {
                if !slot.alive {
                    continue;
                }
                let Some(tree) = slot.engine.tree() else {
                    continue;
                };
                if tree.role(group) == Role::PrimaryRoot {
                    let c = find(&mut parent, i);
                    roots_per_component.entry(c).or_default().push(i);
                }
            }
            for (_, roots) in roots_per_component {
                if roots.len() > 1 {
                    self.violations.push(format!(
                        "t={} group={} multiple primary roots in one component: {:?}",
                        self.now, group, roots
                    ));
                }
            }
        }
    }
}

/// Ground-truth adjacency for a static layout: edge iff distance is within
/// range (boundary-inclusive), mirroring the radio exactly.
pub fn connectivity_oracle(positions: &[Position], range: f64) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if distance(positions[i], positions[j]) <= range {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Nodes within `k` hops of `src` (excluding `src`), by breadth-first search.
pub fn bfs_k_hops(adj: &[Vec<usize>], src: usize, k: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[src] = 0;
    let mut frontier = std::collections::VecDeque::from([src]);
    let mut out = BTreeSet::new();
    while let Some(u) = frontier.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                out.insert(v);
                frontier.push_back(v);
            }
        }
    }
    out
}

/// True when the unit-disk graph over the positions is connected.
pub fn is_connected(positions: &[Position], range: f64) -> bool {
    if positions.is_empty() {
        return true;
    }
    let adj = connectivity_oracle(positions, range);
    let reached = bfs_k_hops(&adj, 0, positions.len());
    reached.len() == positions.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Position {
        Position::new(x, y).unwrap()
    }

    fn base_params(positions: Vec<Position>) -> SimParams {
        SimParams {
            seed: 1,
            area: (1000.0, 1000.0),
            positions,
            radio: RadioModel::default(),
            energy: EnergyModel::default(),
            mobility: MobilityConfig::default(),
            protocol: ProtocolKind::Seelamp,
            protocol_config: ProtocolConfig::default(),
            end_time_ms: 10_000,
            app_events: Vec::new(),
            check_invariants: false,
            dump_tables: false,
            scenario_hash: 0,
        }
    }

    #[test]
    fn lone_node_drains_idle_plus_entry_advertisement() {
        let result = Sim::new(base_params(vec![p(0.0, 0.0)])).unwrap().run();
        // Nothing to hear and nobody to hear us: the only transmission is
        // the network-entry advertisement, and the battery account balances
        // exactly: 10 s of idle plus that one send.
        assert!(!result
            .trace
            .records
            .iter()
            .any(|r| matches!(r, TraceRecord::Rx { .. })));
        let tx_bytes: u64 = result
            .trace
            .records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Tx { kind, bytes, .. } => {
                    assert_eq!(kind, "LOCN");
                    Some(u64::from(*bytes))
                }
                _ => None,
            })
            .sum();
        assert_eq!(tx_bytes, 38);
        let energy = result
            .trace
            .records
            .iter()
            .find_map(|r| match r {
                TraceRecord::Energy { battery_nj, idle_ms, .. } => Some((*battery_nj, *idle_ms)),
                _ => None,
            })
            .unwrap();
        let nj = EnergyModel::default().to_nanojoules();
        assert_eq!(energy.1, 10_000);
        assert_eq!(
            energy.0,
            nj.initial_nj - 10_000 * nj.idle_nj_per_ms - tx_bytes * nj.tx_nj_per_byte
        );
    }

    #[test]
    fn neighbor_hears_advertisement_after_latency() {
        let result = Sim::new(base_params(vec![p(0.0, 0.0), p(100.0, 0.0)]))
            .unwrap()
            .run();
        let rx = result
            .trace
            .records
            .iter()
            .find_map(|r| match r {
                TraceRecord::Rx { t, node, kind, .. } if kind == "LOCN" && node.0 == 1 => Some(*t),
                _ => None,
            })
            .expect("node 1 heard node 0");
        assert_eq!(rx, RadioModel::default().per_hop_latency_ms);
    }

    #[test]
    fn out_of_range_nodes_never_hear() {
        let result = Sim::new(base_params(vec![p(0.0, 0.0), p(500.0, 0.0)]))
            .unwrap()
            .run();
        assert!(!result
            .trace
            .records
            .iter()
            .any(|r| matches!(r, TraceRecord::Rx { .. })));
    }

    #[test]
    fn connectivity_boundary_inclusive() {
        let positions = vec![p(0.0, 0.0), p(250.0, 0.0)];
        let adj = connectivity_oracle(&positions, 250.0);
        assert_eq!(adj[0], vec![1]);
    }

    #[test]
    fn triangle_is_complete_graph() {
        let positions = vec![p(0.0, 0.0), p(100.0, 0.0), p(50.0, 86.0)];
        let adj = connectivity_oracle(&positions, 250.0);
        assert_eq!(adj.iter().map(Vec::len).sum::<usize>(), 6);
    }

    #[test]
    fn oracle_matches_brute_force_filter() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let positions: Vec<Position> = (0..40)
            .map(|_| {
                p(
                    rng.random_range(0.0..1000.0),
                    rng.random_range(0.0..1000.0),
                )
            })
            .collect();
        let adj = connectivity_oracle(&positions, 250.0);
        for i in 0..positions.len() {
            for j in 0..positions.len() {
                if i == j {
                    continue;
                }
                let expect = distance(positions[i], positions[j]) <= 250.0;
                assert_eq!(adj[i].contains(&j), expect);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let mut params = base_params(vec![p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0)]);
        params.mobility = MobilityConfig {
            kind: MobilityKind::RandomWaypoint {
                speed_min: 1.0,
                speed_max: 10.0,
                pause_ms: 1000,
            },
            tick_ms: 100,
        };
        params.radio.loss_probability = 0.1;
        params.app_events = vec![
            AppEvent {
                at: 100,
                kind: AppEventKind::Join {
                    node: NodeId(0),
                    group: GroupId(1),
                },
            },
            AppEvent {
                at: 2_000,
                kind: AppEventKind::Send {
                    node: NodeId(0),
                    group: GroupId(1),
                    payload_len: 32,
                },
            },
        ];
        let a = Sim::new(params.clone()).unwrap().run();
        let b = Sim::new(params).unwrap().run();
        assert_eq!(a.trace.render(), b.trace.render());
    }
}
