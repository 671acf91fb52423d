//! The per-node protocol state machine.
//!
//! A node consumes timestamped inputs (packet arrivals, timers, position and
//! battery updates, application requests) and emits actions (sends,
//! broadcasts, timer arms, deliveries, role changes). Handlers are pure with
//! respect to `NodeState` + input, so a run is fully determined by its event
//! sequence and every simulation replays exactly.
//!
//! Layout: this module holds the node state, input dispatch, and the
//! neighborhood-connectivity handlers (position advertisements, acks,
//! promiscuous snooping). `search` implements group search, replies and
//! directional forwarding; `tree` implements grafting, data forwarding,
//! periodic tree refresh and link repair; `maintenance` implements leaving,
//! power handoff, backup-root election and failover.

mod config;
mod maintenance;
mod search;
mod tree;

pub use config::{ConfigError, Features, ProtocolConfig};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{distance, Position};
use crate::tables::{
    MulticastTreeTable, RequestTable, RtEntry, ZntEntry, ZoneNeighborTable, ZNT_CAPACITY,
};
use crate::wire::{GroupId, NodeId, Packet, PacketBody, PacketHeader};
use crate::Millis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("already a member of the group")]
    AlreadyMember,
}

/// Per-group role of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    NonMember,
    Member,
    Intermediate,
    BackupRoot,
    PrimaryRoot,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::NonMember => "NON_MEMBER",
            Role::Member => "MEMBER",
            Role::Intermediate => "INTERMEDIATE",
            Role::BackupRoot => "BACKUP_ROOT",
            Role::PrimaryRoot => "PRIMARY_ROOT",
        }
    }
}

/// Timers a node can arm. The kernel redelivers them as [`NodeInput::Timer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKind {
    SearchTimeout { group: GroupId, token: u32 },
    TreeUpdate,
    PowerCheck,
    TableSweep,
    BackupElect { group: GroupId },
    BackupConfirm { group: GroupId, candidate: NodeId },
    RootLiveness { group: GroupId },
    /// Mesh baseline: periodic membership re-flood.
    MeshRefresh,
}

/// What a handler asks the kernel to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Unicast to a link-layer neighbor.
    Send { to: NodeId, packet: Packet },
    /// One transmission heard by everyone in radio range.
    Broadcast { packet: Packet },
    SetTimer { kind: TimerKind, delay: Millis },
    /// Hand a payload to the application.
    Deliver {
        group: GroupId,
        origin: NodeId,
        seq: u32,
        payload_len: u16,
    },
    RoleChange { group: GroupId, role: Role },
    /// A data-routing search exhausted the network without finding the group.
    GroupUnreachable { group: GroupId },
    /// Diagnostics for the metrics pipeline.
    NoteRepair { group: GroupId },
    NoteFailover { group: GroupId },
    /// Directional selection degraded to forwarding at every zone neighbor.
    NoteDegraded { group: GroupId },
}

/// One timestamped input to a node.
#[derive(Debug, Clone)]
pub enum NodeInput {
    /// A packet heard on the air. `link_to` is the link-layer destination
    /// (`NodeId::BROADCAST` for broadcasts); everything else in range hears
    /// the transmission too and snoops it.
    Arrival { link_to: NodeId, packet: Packet },
    Timer(TimerKind),
    /// The kernel's MAC-level feedback: a unicast to `to` could not be
    /// delivered (destination out of range or dead).
    TxFailed { to: NodeId },
    PositionUpdate { pos: Position, speed: f64 },
    AppJoin { group: GroupId },
    AppLeave { group: GroupId },
    AppSend { group: GroupId, payload: Vec<u8> },
}

/// Phase of a pending group search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchPhase {
    InZone,
    Network,
}

/// Requester-side bookkeeping for one outstanding search.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub join: bool,
    pub repair: bool,
    pub issued_at: Millis,
    pub phase: SearchPhase,
    /// Cumulative hop budget spent so far; compared against the network
    /// diameter to decide when the search is exhausted.
    pub coverage: u8,
    /// A remote member learned from a request-cache reply, chased
    /// geographically when directional forwarding is on.
    pub target: Option<(NodeId, Position)>,
    /// Direct replier whose uplink chain we are waiting for.
    pub await_chain: Option<NodeId>,
    /// Original search packet, re-issued on escalation.
    pub cached_body: PacketBody,
    pub cached_seq: u32,
    pub cached_timestamp: Millis,
    /// Matches timeout timers to the escalation round that armed them.
    pub token: u32,
    /// Repairs remember the unreachable parent so the regraft can tell a
    /// still-alive one to drop us.
    pub old_parent: Option<NodeId>,
    /// A backup root probing for proof of life: only a reply originated by
    /// this node counts, and exhaustion means promotion, not failure.
    pub probe_root: Option<NodeId>,
    /// A repair that lost the leader itself already waited once for the
    /// backup to take over.
    pub grace_used: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardRoute {
    pub next_hop: NodeId,
    pub recorded_at: Millis,
}

/// Root-side backup election state.
#[derive(Debug, Clone, Default)]
pub(crate) struct BackupElection {
    pub confirmed: Option<NodeId>,
    pub awaiting: Option<NodeId>,
    pub declined: BTreeSet<NodeId>,
}

/// The full state of one node running the shared-tree protocol.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub pos: Position,
    pub last_advertised: Option<Position>,
    pub speed: f64,
    /// Battery mirror in nanojoules, refreshed by the kernel before every
    /// handler invocation. The energy ledger itself lives in the kernel.
    pub battery_nj: u64,
    pub initial_battery_nj: u64,
    pub znt: ZoneNeighborTable,
    pub mtt: MulticastTreeTable,
    pub rt: RequestTable,
    pub roles: BTreeMap<GroupId, Role>,
    pub config: ProtocolConfig,
    pub features: Features,

    /// Application-level memberships; delivery is keyed on these, roles
    /// track tree duty.
    pub(crate) member_of: BTreeSet<GroupId>,
    /// Own uplink chain per group: parent first, leader last. Empty for a
    /// leader.
    pub(crate) root_paths: BTreeMap<GroupId, Vec<NodeId>>,
    pub(crate) pending: BTreeMap<GroupId, SearchState>,
    pub(crate) pending_sends: BTreeMap<GroupId, Vec<Vec<u8>>>,
    /// Duplicate suppression over (origin, seq).
    pub(crate) seen: BTreeSet<(NodeId, u32)>,
    /// Payloads already handed to the application, per (origin, seq).
    pub(crate) delivered: BTreeSet<(NodeId, u32)>,
    /// Root-transit mode processes a payload once per direction.
    pub(crate) seen_down: BTreeSet<(NodeId, u32)>,
    /// Searches this node has already forwarded directionally.
    pub(crate) fwd_seen: BTreeSet<(NodeId, u32)>,
    /// Predecessor toward each known packet origin (reverse path).
    pub(crate) reverse: BTreeMap<NodeId, NodeId>,
    /// Next hop toward a replying tree member, per (group, member).
    pub(crate) forward_routes: BTreeMap<(GroupId, NodeId), ForwardRoute>,
    /// Uplink chains cached while relaying a reply, committed if a graft
    /// follows the same path. Keyed by (group, replier).
    pub(crate) chain_cache: BTreeMap<(GroupId, NodeId), (Vec<NodeId>, Millis)>,
    /// Where to forward the chain companion of a relayed reply.
    pub(crate) companion_routes: BTreeMap<(GroupId, NodeId), (NodeId, Millis)>,
    /// Searches stopped by their requester; packets originated before the
    /// recorded time are ignored.
    pub(crate) stopped: BTreeMap<(GroupId, NodeId), Millis>,
    /// State transferred by a departing neighbor, committed on its alarm.
    pub(crate) adoption: BTreeMap<GroupId, (NodeId, Vec<NodeId>, Millis)>,
    /// Root-side election bookkeeping.
    pub(crate) elections: BTreeMap<GroupId, BackupElection>,
    /// Zone-announced backup designee per group.
    pub(crate) known_backup: BTreeMap<GroupId, NodeId>,
    /// Backup/root-side view of leaf uplink chains.
    pub(crate) tree_view: BTreeMap<(GroupId, NodeId), Vec<NodeId>>,
    /// Consecutive unicast failures per neighbor.
    pub(crate) fail_counts: BTreeMap<NodeId, u32>,
    /// Groups whose preventive power handoff already ran.
    pub(crate) power_handled: BTreeSet<GroupId>,
    pub(crate) seq: u32,
    pub(crate) rng: ChaCha8Rng,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        pos: Position,
        initial_battery_nj: u64,
        config: ProtocolConfig,
        features: Features,
        scenario_seed: u64,
    ) -> Self {
        Self {
            id,
            pos,
            last_advertised: None,
            speed: 0.0,
            battery_nj: initial_battery_nj,
            initial_battery_nj,
            znt: ZoneNeighborTable::new(ZNT_CAPACITY),
            mtt: MulticastTreeTable::default(),
            rt: RequestTable::default(),
            roles: BTreeMap::new(),
            config,
            features,
            member_of: BTreeSet::new(),
            root_paths: BTreeMap::new(),
            pending: BTreeMap::new(),
            pending_sends: BTreeMap::new(),
            seen: BTreeSet::new(),
            delivered: BTreeSet::new(),
            seen_down: BTreeSet::new(),
            fwd_seen: BTreeSet::new(),
            reverse: BTreeMap::new(),
            forward_routes: BTreeMap::new(),
            chain_cache: BTreeMap::new(),
            companion_routes: BTreeMap::new(),
            stopped: BTreeMap::new(),
            adoption: BTreeMap::new(),
            elections: BTreeMap::new(),
            known_backup: BTreeMap::new(),
            tree_view: BTreeMap::new(),
            fail_counts: BTreeMap::new(),
            power_handled: BTreeSet::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(scenario_seed ^ (0x5EE1 ^ u64::from(id.0) << 17)),
        }
    }

    pub fn role(&self, group: GroupId) -> Role {
        self.roles.get(&group).copied().unwrap_or(Role::NonMember)
    }

    pub fn is_member(&self, group: GroupId) -> bool {
        self.member_of.contains(&group)
    }

    pub fn root_path(&self, group: GroupId) -> &[NodeId] {
        self.root_paths.get(&group).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn alloc_seq(&mut self) -> u32 {
        self.seq += 1;
        self.seq
    }

    pub(crate) fn jitter(&mut self) -> Millis {
        use rand::Rng;
        self.rng.random_range(0..=500)
    }

    pub(crate) fn header(&mut self, ttl: u8, now: Millis) -> PacketHeader {
        PacketHeader {
            seq: self.alloc_seq(),
            src: self.id,
            origin: self.id,
            ttl,
            timestamp: now,
        }
    }

    pub(crate) fn set_role(&mut self, group: GroupId, role: Role, out: &mut Vec<Action>) {
        let prev = self.role(group);
        if prev != role {
            if role == Role::NonMember {
                self.roles.remove(&group);
            } else {
                self.roles.insert(group, role);
            }
            out.push(Action::RoleChange { group, role });
        }
    }

    /// Hops a packet has traveled, derived from its origination timestamp.
    /// Exact here because relays retransmit within the arrival millisecond
    /// and every hop costs the same fixed latency.
    pub(crate) fn traveled_hops(&self, hdr: &PacketHeader, now: Millis, latency: Millis) -> u8 {
        if latency == 0 {
            return 1;
        }
        let hops = now.saturating_sub(hdr.timestamp) / latency;
        hops.clamp(1, 255) as u8
    }

    /// Main entry point: apply one input, get the resulting actions.
    pub fn handle(&mut self, input: NodeInput, now: Millis, latency: Millis) -> Vec<Action> {
        match input {
            NodeInput::Arrival { link_to, packet } => {
                self.handle_arrival(link_to, &packet, now, latency)
            }
            NodeInput::Timer(kind) => self.handle_timer(kind, now, latency),
            NodeInput::TxFailed { to } => self.handle_tx_failed(to, now),
            NodeInput::PositionUpdate { pos, speed } => self.on_position_update(pos, speed, now),
            NodeInput::AppJoin { group } => self.on_app_join(group, now),
            NodeInput::AppLeave { group } => self.on_app_leave(group, now),
            NodeInput::AppSend { group, payload } => self.on_app_send(group, payload, now),
        }
    }

    /// Initial timer fan-out, invoked by the kernel when the node boots.
    /// Staggered by id so periodic work does not synchronize network-wide.
    pub fn boot_timers(&mut self) -> Vec<Action> {
        let stagger = |period: Millis, salt: u64| -> Millis {
            period + (u64::from(self.id.0) * 7 + salt) % period
        };
        vec![
            Action::SetTimer {
                kind: TimerKind::PowerCheck,
                delay: stagger(self.config.power_check_period, 1),
            },
            Action::SetTimer {
                kind: TimerKind::TableSweep,
                delay: stagger(self.config.znt_max_age / 3, 2),
            },
            Action::SetTimer {
                kind: TimerKind::TreeUpdate,
                delay: stagger(self.config.tree_update_period, 3),
            },
        ]
    }

    fn handle_timer(&mut self, kind: TimerKind, now: Millis, latency: Millis) -> Vec<Action> {
        match kind {
            TimerKind::SearchTimeout { group, token } => self.on_search_timeout(group, token, now),
            TimerKind::TreeUpdate => self.on_tree_update_timer(now),
            TimerKind::PowerCheck => self.on_power_check(now),
            TimerKind::TableSweep => self.on_table_sweep(now),
            TimerKind::BackupElect { group } => self.elect_backup(group, now),
            TimerKind::BackupConfirm { group, candidate } => {
                self.on_backup_confirm_timeout(group, candidate, now)
            }
            TimerKind::RootLiveness { group } => self.on_root_liveness(group, now, latency),
            TimerKind::MeshRefresh => Vec::new(),
        }
    }

    pub fn on_position_update(&mut self, pos: Position, speed: f64, now: Millis) -> Vec<Action> {
        self.pos = pos;
        self.speed = speed;
        let must_advertise = match self.last_advertised {
            None => true,
            Some(prev) => distance(prev, pos) > self.config.move_threshold,
        };
        if !must_advertise {
            return Vec::new();
        }
        self.last_advertised = Some(pos);
        let header = self.header(self.config.k, now);
        vec![Action::Broadcast {
            packet: Packet {
                header,
                body: PacketBody::Locn { pos },
            },
        }]
    }

    fn handle_arrival(
        &mut self,
        link_to: NodeId,
        pkt: &Packet,
        now: Millis,
        latency: Millis,
    ) -> Vec<Action> {
        let hdr = &pkt.header;
        if hdr.origin == self.id {
            return Vec::new();
        }
        let mut out = Vec::new();
        self.snoop(pkt, now, latency);
        let is_dest = link_to == self.id;
        let is_broadcast = link_to == NodeId::BROADCAST;
        let first_sight = self.seen.insert((hdr.origin, hdr.seq));
        if first_sight {
            self.reverse.insert(hdr.origin, hdr.src);
        }

        match &pkt.body {
            PacketBody::Locn { pos } => {
                if is_broadcast && first_sight {
                    self.on_locn(pkt, *pos, now, latency, &mut out);
                }
            }
            PacketBody::Lack { .. } => {
                if is_dest {
                    self.on_lack(pkt, now, &mut out);
                }
            }
            PacketBody::Mgreq { .. } => {
                if is_broadcast && first_sight {
                    self.on_mgreq_broadcast(pkt, now, latency, &mut out);
                } else if is_dest {
                    self.on_mgreq_directed(pkt, now, latency, &mut out);
                }
            }
            PacketBody::Mgrpl { .. } => {
                if is_dest {
                    self.on_mgrpl(pkt, now, latency, first_sight, &mut out);
                }
                // Broadcast replies (leader announcements) and overheard
                // unicasts are snoop value only.
            }
            PacketBody::Graft { .. } => {
                if is_dest && first_sight {
                    self.on_graft(pkt, now, &mut out);
                }
            }
            PacketBody::Alarm { .. } => {
                if is_broadcast && first_sight {
                    self.on_alarm(pkt, now, &mut out);
                }
            }
            PacketBody::Leave { .. } => {
                // Both the 1-hop departure broadcast and the targeted
                // link-detach notice a regrafting node sends its old parent.
                if (is_broadcast || is_dest) && first_sight {
                    self.on_leave_packet(pkt, &mut out);
                }
            }
            PacketBody::TreeUpdate { .. } => {
                if is_dest && first_sight {
                    self.on_tree_update_packet(pkt, now, &mut out);
                }
            }
            PacketBody::StopSearch { group, rq } => {
                if is_broadcast && first_sight {
                    self.stopped.insert((*group, *rq), hdr.timestamp);
                    if hdr.ttl > 1 {
                        let mut fwd = pkt.clone();
                        fwd.header.src = self.id;
                        fwd.header.ttl = hdr.ttl - 1;
                        out.push(Action::Broadcast { packet: fwd });
                    }
                }
            }
            PacketBody::Data { .. } => {
                if is_dest {
                    self.on_data(pkt, now, &mut out);
                }
            }
        }
        out
    }

    /// Promiscuous snooping: every overheard transmission refreshes the
    /// transmitter's zone entry, and packets carrying their originator's
    /// position install a full entry.
    fn snoop(&mut self, pkt: &Packet, now: Millis, latency: Millis) {
        let hdr = &pkt.header;
        self.znt.refresh(hdr.src, now);
        self.fail_counts.remove(&hdr.src);

        // Position of the packet's originator, when the body carries it.
        let origin_pos = match &pkt.body {
            PacketBody::Locn { pos } => Some(*pos),
            PacketBody::Lack { ack_pos, .. } => Some(*ack_pos),
            PacketBody::Mgreq { rq, rq_pos, .. } if *rq == hdr.origin => Some(*rq_pos),
            PacketBody::Mgrpl { tm, tm_pos, .. } if *tm == hdr.origin => Some(*tm_pos),
            _ => None,
        };
        if let Some(pos) = origin_pos {
            self.upsert_origin_entry(hdr, pos, now, latency);
        }

        // A reply names a live tree member: cache it for future searches.
        if let PacketBody::Mgrpl {
            group, tm, tm_pos, ..
        } = &pkt.body
        {
            if *tm != self.id {
                self.rt.upsert(RtEntry {
                    group: *group,
                    tree_member: *tm,
                    tm_pos: *tm_pos,
                    updated_at: hdr.timestamp,
                });
            }
        }
    }

    /// Installs or updates the zone entry for a packet's originator, with
    /// the hop count derived from the packet's age.
    pub(crate) fn upsert_origin_entry(
        &mut self,
        hdr: &PacketHeader,
        pos: Position,
        now: Millis,
        latency: Millis,
    ) {
        let hops = self.traveled_hops(hdr, now, latency);
        let next_hop = if hops == 1 { hdr.origin } else { hdr.src };
        let _ = self.znt.upsert(ZntEntry {
            neighbor: hdr.origin,
            pos,
            next_hop,
            hop_count: hops,
            updated_at: hdr.timestamp,
            non_zonal: hops > self.config.k,
            observed_speed: 0.0,
        });
    }

    fn on_locn(
        &mut self,
        pkt: &Packet,
        pos: Position,
        now: Millis,
        _latency: Millis,
        out: &mut Vec<Action>,
    ) {
        let hdr = &pkt.header;
        // Snoop already installed the entry; answer with an ack so the
        // originator learns us, then extend the flood while budget remains.
        let next_hop = match self.znt.get(hdr.origin) {
            Some(e) => e.next_hop,
            None => hdr.src,
        };
        let ack_header = self.header(self.config.k, now);
        out.push(Action::Send {
            to: next_hop,
            packet: Packet {
                header: ack_header,
                body: PacketBody::Lack {
                    ack_pos: self.pos,
                    src: hdr.origin,
                    src_pos: pos,
                },
            },
        });
        if hdr.ttl > 1 {
            let mut fwd = pkt.clone();
            fwd.header.src = self.id;
            fwd.header.ttl = hdr.ttl - 1;
            out.push(Action::Broadcast { packet: fwd });
        }
    }

    fn on_lack(&mut self, pkt: &Packet, now: Millis, out: &mut Vec<Action>) {
        let PacketBody::Lack { src, .. } = &pkt.body else {
            return;
        };
        if *src == self.id {
            // Terminal: the snoop step already recorded the acker.
            return;
        }
        // Relay toward the original advertiser.
        if pkt.header.ttl > 1 {
            if let Some(entry) = self.znt.get(*src) {
                let mut fwd = pkt.clone();
                fwd.header.src = self.id;
                fwd.header.ttl = pkt.header.ttl - 1;
                out.push(Action::Send {
                    to: entry.next_hop,
                    packet: fwd,
                });
            }
        }
        let _ = now;
    }

    fn on_app_join(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        self.member_of.insert(group);
        let mut out = Vec::new();
        if self.mtt.get(group).is_some() {
            // Already on the tree as infrastructure; start delivering.
            if self.role(group) == Role::Intermediate {
                self.set_role(group, Role::Member, &mut out);
            }
            return out;
        }
        match self.start_search(group, true, false, now) {
            Ok(actions) => actions,
            Err(_) => out,
        }
    }

    fn on_app_send(&mut self, group: GroupId, payload: Vec<u8>, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if self.mtt.get(group).is_some() {
            self.originate_data(group, payload, now, &mut out);
            return out;
        }
        self.pending_sends.entry(group).or_default().push(payload);
        if !self.pending.contains_key(&group) {
            if let Ok(actions) = self.start_search(group, false, false, now) {
                out.extend(actions);
            }
        }
        out
    }

    fn handle_tx_failed(&mut self, to: NodeId, now: Millis) -> Vec<Action> {
        let count = self.fail_counts.entry(to).or_insert(0);
        *count += 1;
        if *count < 3 {
            return Vec::new();
        }
        self.fail_counts.remove(&to);
        self.znt.remove(to);
        self.on_neighbor_lost(to, now)
    }

    fn on_table_sweep(&mut self, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let removed = self.znt.expire(now, self.config.znt_max_age);
        for id in removed {
            out.extend(self.on_neighbor_lost(id, now));
        }
        self.rt.expire(now, self.config.rt_max_age);
        let horizon = 60_000;
        self.forward_routes
            .retain(|_, r| now.saturating_sub(r.recorded_at) <= horizon);
        self.chain_cache
            .retain(|_, (_, at)| now.saturating_sub(*at) <= horizon);
        self.companion_routes
            .retain(|_, (_, at)| now.saturating_sub(*at) <= horizon);
        self.stopped
            .retain(|_, at| now.saturating_sub(*at) <= horizon);
        self.adoption
            .retain(|_, (_, _, at)| now.saturating_sub(*at) <= horizon);
        out.push(Action::SetTimer {
            kind: TimerKind::TableSweep,
            delay: self.config.znt_max_age / 3,
        });
        out
    }

    /// A neighbor is gone (repeated unicast failures or zone-table expiry):
    /// drop it from tree state and start repairs where it was our parent.
    fn on_neighbor_lost(&mut self, lost: NodeId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let groups = self.mtt.groups();
        for group in groups {
            let Some(entry) = self.mtt.get_mut(group) else {
                continue;
            };
            let was_upstream = entry
                .upstream()
                .map(|h| h.hop == lost && h.activated)
                .unwrap_or(false);
            if !entry.remove_hop(lost) {
                continue;
            }
            if was_upstream {
                let is_backup_losing_root = self.role(group) == Role::BackupRoot
                    && self.mtt.get(group).map(|e| e.leader) == Some(lost);
                if is_backup_losing_root && !self.pending.contains_key(&group) {
                    // Dead or drifted? Probe for the root's own voice.
                    out.extend(self.start_root_probe(group, lost, now));
                } else {
                    out.extend(self.repair_link(group, Some(lost), now));
                }
            } else {
                // A downstream break repairs from below; prune ourselves if
                // we are now a linkless relay.
                out.extend(self.prune_if_useless(group, now));
            }
        }
        if self.known_backup.values().any(|b| *b == lost) {
            let groups: Vec<GroupId> = self
                .known_backup
                .iter()
                .filter(|(_, b)| **b == lost)
                .map(|(g, _)| *g)
                .collect();
            for g in groups {
                self.known_backup.remove(&g);
                if self.role(g) == Role::PrimaryRoot {
                    if let Some(el) = self.elections.get_mut(&g) {
                        el.confirmed = None;
                        el.awaiting = None;
                    }
                    out.extend(self.elect_backup(g, now));
                }
            }
        }
        out
    }

    /// Drops a tree entry that no longer serves anyone.
    pub(crate) fn prune_if_useless(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(entry) = self.mtt.get(group) else {
            return out;
        };
        let has_links = entry.next_hops.iter().any(|h| h.activated);
        let role = self.role(group);
        if !has_links
            && !self.is_member(group)
            && role != Role::PrimaryRoot
            && role != Role::BackupRoot
        {
            self.mtt.remove(group);
            self.root_paths.remove(&group);
            let header = self.header(1, now);
            out.push(Action::Broadcast {
                packet: Packet {
                    header,
                    body: PacketBody::Leave { group },
                },
            });
            self.set_role(group, Role::NonMember, &mut out);
        }
        out
    }
}
