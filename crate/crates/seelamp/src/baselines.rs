//! Baseline protocols for the comparison experiments.
//!
//! The plain shared tree is the main protocol with every distinctive
//! mechanism switched off (see [`Features::shared_tree_plain`]); only this
//! flooding-mesh protocol is a separate engine. Both baselines abstract a
//! protocol family rather than reimplementing any specific published
//! protocol: the mesh here is the forwarding-group idea (members flood
//! periodic join queries, replies mark forwarding nodes, data floods through
//! the marked mesh), which is what its family shares.

use std::collections::{BTreeMap, BTreeSet};

use crate::protocol::{Action, Features, NodeInput, ProtocolConfig, TimerKind};
use crate::wire::{GroupId, NodeId, Packet, PacketBody, PacketHeader};
use crate::Millis;

/// Which protocol a scenario binds every node to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Seelamp,
    SharedTree,
    Mesh,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Seelamp => "seelamp",
            ProtocolKind::SharedTree => "shared_tree",
            ProtocolKind::Mesh => "mesh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seelamp" => Some(ProtocolKind::Seelamp),
            "shared_tree" => Some(ProtocolKind::SharedTree),
            "mesh" => Some(ProtocolKind::Mesh),
            _ => None,
        }
    }

    /// Feature set for the tree-based kinds.
    pub fn features(self) -> Features {
        match self {
            ProtocolKind::Seelamp => Features::seelamp(),
            ProtocolKind::SharedTree | ProtocolKind::Mesh => Features::shared_tree_plain(),
        }
    }
}

/// Forwarding-group flag lifetime, in flood periods.
const FG_LIFETIME_PERIODS: u64 = 3;

/// One node running the flooding-mesh baseline.
#[derive(Debug, Clone)]
pub struct MeshNode {
    pub id: NodeId,
    pub pos: crate::geometry::Position,
    memberships: BTreeSet<GroupId>,
    /// Forwarding-group flags with their expiry times.
    fg: BTreeMap<GroupId, Millis>,
    seen: BTreeSet<(NodeId, u32)>,
    delivered: BTreeSet<(NodeId, u32)>,
    reverse: BTreeMap<NodeId, NodeId>,
    refresh_armed: bool,
    seq: u32,
    net_diameter: u8,
    flood_period: Millis,
}

impl MeshNode {
    pub fn new(id: NodeId, pos: crate::geometry::Position, config: &ProtocolConfig) -> Self {
        Self {
            id,
            pos,
            memberships: BTreeSet::new(),
            fg: BTreeMap::new(),
            seen: BTreeSet::new(),
            delivered: BTreeSet::new(),
            reverse: BTreeMap::new(),
            refresh_armed: false,
            seq: 0,
            net_diameter: config.net_diameter,
            flood_period: config.tree_update_period,
        }
    }

    pub fn is_member(&self, group: GroupId) -> bool {
        self.memberships.contains(&group)
    }

    fn header(&mut self, ttl: u8, now: Millis) -> PacketHeader {
        self.seq += 1;
        PacketHeader {
            seq: self.seq,
            src: self.id,
            origin: self.id,
            ttl,
            timestamp: now,
        }
    }

    fn flood_join(&mut self, group: GroupId, now: Millis) -> Action {
        let header = self.header(self.net_diameter, now);
        Action::Broadcast {
            packet: Packet {
                header,
                body: PacketBody::Mgreq {
                    group,
                    rq: self.id,
                    rq_pos: self.pos,
                    join_flag: true,
                },
            },
        }
    }

    pub fn handle(&mut self, input: NodeInput, now: Millis, _latency: Millis) -> Vec<Action> {
        match input {
            NodeInput::Arrival { link_to, packet } => self.on_arrival(link_to, &packet, now),
            NodeInput::Timer(TimerKind::MeshRefresh) => {
                let mut out: Vec<Action> = self
                    .memberships
                    .clone()
                    .into_iter()
                    .map(|g| self.flood_join(g, now))
                    .collect();
                out.push(Action::SetTimer {
                    kind: TimerKind::MeshRefresh,
                    delay: self.flood_period,
                });
                out
            }
            NodeInput::Timer(_) | NodeInput::TxFailed { .. } => Vec::new(),
            NodeInput::PositionUpdate { pos, .. } => {
                self.pos = pos;
                Vec::new()
            }
            NodeInput::AppJoin { group } => {
                self.memberships.insert(group);
                let mut out = vec![self.flood_join(group, now)];
                if !self.refresh_armed {
                    self.refresh_armed = true;
                    out.push(Action::SetTimer {
                        kind: TimerKind::MeshRefresh,
                        delay: self.flood_period,
                    });
                }
                out
            }
            NodeInput::AppLeave { group } => {
                self.memberships.remove(&group);
                Vec::new()
            }
            NodeInput::AppSend { group, payload } => {
                let header = self.header(self.net_diameter, now);
                let packet = Packet {
                    header,
                    body: PacketBody::Data { group, payload },
                };
                self.seen.insert((packet.header.origin, packet.header.seq));
                vec![Action::Broadcast { packet }]
            }
        }
    }

    fn on_arrival(&mut self, link_to: NodeId, pkt: &Packet, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let hdr = &pkt.header;
        if hdr.origin == self.id {
            return out;
        }
        let first_sight = self.seen.insert((hdr.origin, hdr.seq));
        if first_sight {
            self.reverse.insert(hdr.origin, hdr.src);
        }
        match &pkt.body {
            PacketBody::Mgreq { group, rq, .. } => {
                if link_to != NodeId::BROADCAST || !first_sight {
                    return out;
                }
                if hdr.ttl > 1 {
                    let mut fwd = pkt.clone();
                    fwd.header.src = self.id;
                    fwd.header.ttl = hdr.ttl - 1;
                    out.push(Action::Broadcast { packet: fwd });
                }
                if self.memberships.contains(group) && *rq != self.id {
                    // Join reply travels the reverse path; every relay on it
                    // becomes a forwarding-group node.
                    let header = self.header(self.net_diameter, now);
                    out.push(Action::Send {
                        to: hdr.src,
                        packet: Packet {
                            header,
                            body: PacketBody::Mgrpl {
                                group: *group,
                                tm: self.id,
                                tm_pos: self.pos,
                                rq: *rq,
                                rq_pos: self.pos,
                            },
                        },
                    });
                }
            }
            PacketBody::Mgrpl { group, rq, .. } => {
                if link_to != self.id || !first_sight {
                    return out;
                }
                if *rq == self.id {
                    return out; // Query answered; the path is marked.
                }
                self.fg
                    .insert(*group, now + FG_LIFETIME_PERIODS * self.flood_period);
                if hdr.ttl > 1 {
                    if let Some(&pred) = self.reverse.get(rq) {
                        let mut fwd = pkt.clone();
                        fwd.header.src = self.id;
                        fwd.header.ttl = hdr.ttl - 1;
                        out.push(Action::Send {
                            to: pred,
                            packet: fwd,
                        });
                    }
                }
            }
            PacketBody::Data { group, payload } => {
                if link_to != NodeId::BROADCAST || !first_sight {
                    return out;
                }
                let member = self.memberships.contains(group);
                if member && self.delivered.insert((hdr.origin, hdr.seq)) {
                    out.push(Action::Deliver {
                        group: *group,
                        origin: hdr.origin,
                        seq: hdr.seq,
                        payload_len: payload.len() as u16,
                    });
                }
                let forwarding = member
                    || self
                        .fg
                        .get(group)
                        .map(|&expiry| expiry > now)
                        .unwrap_or(false);
                if forwarding && hdr.ttl > 1 {
                    let mut fwd = pkt.clone();
                    fwd.header.src = self.id;
                    fwd.header.ttl = hdr.ttl - 1;
                    out.push(Action::Broadcast { packet: fwd });
                }
            }
            _ => {}
        }
        out
    }
}
