//! Tree construction and use: grafting along reply paths, bi-directional
//! data forwarding (or root-transit in the plain baseline), periodic leaf
//! refresh toward the backup root, and link repair.

use super::{Action, NodeState, Role, TimerKind};
use crate::tables::{LinkDirection, MttEntry, TreeHop};
use crate::wire::{GroupId, NodeId, Packet, PacketBody};
use crate::Millis;

impl NodeState {
    /// Installs or refreshes our own tree entry after a validated chain,
    /// keeping any downstream links we already serve.
    pub(crate) fn install_tree_entry(
        &mut self,
        group: GroupId,
        leader: NodeId,
        chain: &[NodeId],
        upstream: NodeId,
        now: Millis,
    ) {
        let mut entry = self.mtt.remove(group).unwrap_or(MttEntry {
            group,
            leader,
            hop_count_to_leader: chain.len() as u32,
            next_hops: Vec::new(),
            updated_at: now,
        });
        entry.leader = leader;
        entry.hop_count_to_leader = chain.len() as u32;
        entry.updated_at = now;
        entry
            .next_hops
            .retain(|h| h.direction != LinkDirection::Upstream);
        entry.next_hops.push(TreeHop {
            hop: upstream,
            direction: LinkDirection::Upstream,
            activated: true,
        });
        let _ = self.mtt.insert(entry);
        self.root_paths.insert(group, chain.to_vec());
    }

    /// Pushes this node's uplink chain to one child (or all of them) so
    /// descendants track re-homing; receivers propagate further only when
    /// their chain actually changed.
    pub(crate) fn push_chain_down(
        &mut self,
        group: GroupId,
        only: Option<NodeId>,
        now: Millis,
        out: &mut Vec<Action>,
    ) {
        let mut path = vec![self.id];
        path.extend_from_slice(self.root_path(group));
        let children: Vec<NodeId> = match self.mtt.get(group) {
            Some(entry) => entry
                .activated_hops()
                .filter(|h| h.direction == LinkDirection::Downstream)
                .filter(|h| only.is_none() || only == Some(h.hop))
                .map(|h| h.hop)
                .collect(),
            None => return,
        };
        for child in children {
            if path.contains(&child) {
                continue;
            }
            let header = self.header(2, now);
            out.push(Action::Send {
                to: child,
                packet: Packet {
                    header,
                    body: PacketBody::TreeUpdate {
                        group,
                        path: path.clone(),
                    },
                },
            });
        }
    }

    /// A graft addressed to us: either we are the graft target (install the
    /// new downstream link) or we relay it toward the target, committing
    /// ourselves as an intermediate tree node on the way.
    pub(crate) fn on_graft(&mut self, pkt: &Packet, now: Millis, out: &mut Vec<Action>) {
        let PacketBody::Graft { group, from, to } = pkt.body else {
            return;
        };
        if to == self.id {
            if self.mtt.get(group).is_some() {
                if let Some(entry) = self.mtt.get_mut(group) {
                    entry.set_hop(pkt.header.src, LinkDirection::Downstream, true);
                    entry.updated_at = now;
                }
                self.push_chain_down(group, Some(pkt.header.src), now, out);
            }
            // A confirming graft from our appointed backup candidate.
            if let Some(el) = self.elections.get_mut(&group) {
                if el.awaiting == Some(from) {
                    el.awaiting = None;
                    el.confirmed = Some(from);
                    self.known_backup.insert(group, from);
                }
            }
            return;
        }
        if self.mtt.get(group).is_some() {
            // Already on the tree: the new branch splices here.
            if let Some(entry) = self.mtt.get_mut(group) {
                entry.set_hop(pkt.header.src, LinkDirection::Downstream, true);
                entry.updated_at = now;
            }
            self.push_chain_down(group, Some(pkt.header.src), now, out);
            return;
        }
        // A relay joins the tree as it passes the graft along, using the
        // uplink chain it cached while relaying the reply. Without a usable
        // chain the branch cannot be built here: unwind so the previous hop
        // repairs instead of leaving a half-installed link behind.
        let committed = match (
            self.forward_routes.get(&(group, to)).cloned(),
            self.chain_cache.get(&(group, to)).cloned(),
        ) {
            (Some(route), Some((chain, _)))
                if !chain.is_empty() && !chain.contains(&self.id) =>
            {
                let leader = *chain.last().unwrap();
                self.install_tree_entry(group, leader, &chain, chain[0], now);
                if let Some(entry) = self.mtt.get_mut(group) {
                    entry.set_hop(pkt.header.src, LinkDirection::Downstream, true);
                }
                let role = if self.is_member(group) {
                    Role::Member
                } else {
                    Role::Intermediate
                };
                self.set_role(group, role, out);
                Some(route)
            }
            _ => None,
        };
        match committed {
            Some(route) if pkt.header.ttl > 1 => {
                let mut fwd = pkt.clone();
                fwd.header.src = self.id;
                fwd.header.ttl = pkt.header.ttl - 1;
                out.push(Action::Send {
                    to: route.next_hop,
                    packet: fwd,
                });
            }
            _ => {
                let header = self.header(1, now);
                out.push(Action::Send {
                    to: pkt.header.src,
                    packet: Packet {
                        header,
                        body: PacketBody::Leave { group },
                    },
                });
            }
        }
    }

    /// Sends one application payload into the tree (or toward a known member
    /// when we are not on the tree ourselves).
    pub(crate) fn originate_data(
        &mut self,
        group: GroupId,
        payload: Vec<u8>,
        now: Millis,
        out: &mut Vec<Action>,
    ) {
        let header = self.header(self.config.net_diameter, now);
        let packet = Packet {
            header,
            body: PacketBody::Data { group, payload },
        };
        self.seen.insert((packet.header.origin, packet.header.seq));
        if self.mtt.get(group).is_some() {
            self.forward_tree_data(group, &packet, None, now, out);
        } else if let Some(route) = self.freshest_route(group) {
            out.push(Action::Send {
                to: route,
                packet,
            });
        }
    }

    fn freshest_route(&self, group: GroupId) -> Option<NodeId> {
        self.forward_routes
            .iter()
            .filter(|((g, _), _)| *g == group)
            .max_by_key(|((_, tm), r)| (r.recorded_at, std::cmp::Reverse(*tm)))
            .map(|(_, r)| r.next_hop)
    }

    /// Payload arrival. Members deliver; tree nodes forward along activated
    /// links. With bi-directional forwarding the packet fans out on every
    /// link except the arrival one; in root-transit mode it first climbs to
    /// the leader, then fans down.
    pub(crate) fn on_data(&mut self, pkt: &Packet, now: Millis, out: &mut Vec<Action>) {
        let PacketBody::Data { group, .. } = pkt.body else {
            return;
        };
        let key = (pkt.header.origin, pkt.header.seq);
        if self.mtt.get(group).is_none() {
            // Not on the tree: relay toward a known member if we hold a
            // forward route (the data-search path), otherwise drop.
            if pkt.header.ttl > 1 {
                if let Some(route) = self.freshest_route(group) {
                    let mut fwd = pkt.clone();
                    fwd.header.src = self.id;
                    fwd.header.ttl = pkt.header.ttl - 1;
                    out.push(Action::Send {
                        to: route,
                        packet: fwd,
                    });
                }
            }
            return;
        }
        // With bi-directional forwarding every tree point delivers on
        // sight. In root-transit mode the climb toward the leader is a
        // tunnel; members deliver on the downward fan (the root itself is
        // where the two passes meet).
        let deliverable = if self.features.bidirectional_forwarding {
            true
        } else {
            let entry = self.mtt.get(group);
            let is_root = entry.map(|e| e.hop_count_to_leader == 0).unwrap_or(false);
            let from_upstream = entry
                .and_then(|e| e.upstream())
                .map(|h| h.hop == pkt.header.src && h.activated)
                .unwrap_or(false);
            is_root || from_upstream
        };
        if deliverable && self.is_member(group) && self.delivered.insert(key) {
            if let PacketBody::Data { payload, .. } = &pkt.body {
                out.push(Action::Deliver {
                    group,
                    origin: pkt.header.origin,
                    seq: pkt.header.seq,
                    payload_len: payload.len() as u16,
                });
            }
        }
        self.forward_tree_data(group, pkt, Some(pkt.header.src), now, out);
    }

    fn forward_tree_data(
        &mut self,
        group: GroupId,
        pkt: &Packet,
        arrival: Option<NodeId>,
        _now: Millis,
        out: &mut Vec<Action>,
    ) {
        if pkt.header.ttl <= 1 {
            return;
        }
        let Some(entry) = self.mtt.get(group) else {
            return;
        };
        let is_root = entry.hop_count_to_leader == 0;
        let from_upstream = match arrival {
            Some(src) => entry
                .upstream()
                .map(|h| h.hop == src && h.activated)
                .unwrap_or(false),
            None => false,
        };
        let key = (pkt.header.origin, pkt.header.seq);
        let targets: Vec<NodeId> = if self.features.bidirectional_forwarding {
            entry
                .activated_hops()
                .filter(|h| Some(h.hop) != arrival)
                .map(|h| h.hop)
                .collect()
        } else {
            // Root transit: climb until the leader, then fan downward. The
            // root's fan covers every downstream branch, including the one
            // the packet climbed, so side twigs of the sender's own branch
            // are reached on the way back down.
            let downward_pass = is_root || from_upstream;
            if downward_pass {
                if !self.seen_down.insert(key) {
                    return;
                }
                entry
                    .activated_hops()
                    .filter(|h| h.direction == LinkDirection::Downstream)
                    .filter(|h| is_root || Some(h.hop) != arrival)
                    .map(|h| h.hop)
                    .collect()
            } else {
                entry
                    .activated_hops()
                    .filter(|h| h.direction == LinkDirection::Upstream)
                    .map(|h| h.hop)
                    .collect()
            }
        };
        for hop in targets {
            let mut fwd = pkt.clone();
            fwd.header.src = self.id;
            fwd.header.ttl = pkt.header.ttl - 1;
            out.push(Action::Send {
                to: hop,
                packet: fwd,
            });
        }
    }

    /// Periodic tree refresh. Leaves push their uplink chains toward the
    /// backup root so topology drift shows up in its tree view, and every
    /// tree node re-asserts its parent link with a graft, which heals any
    /// downstream installation the parent lost.
    pub(crate) fn on_tree_update_timer(&mut self, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        for group in self.mtt.groups() {
            let Some(entry) = self.mtt.get(group) else {
                continue;
            };
            if entry.hop_count_to_leader == 0 {
                continue;
            }
            let Some(up) = entry.upstream().filter(|h| h.activated).map(|h| h.hop) else {
                continue;
            };
            let is_leaf = !entry
                .activated_hops()
                .any(|h| h.direction == LinkDirection::Downstream);
            let graft_header = self.header(2, now);
            out.push(Action::Send {
                to: up,
                packet: Packet {
                    header: graft_header,
                    body: PacketBody::Graft {
                        group,
                        from: self.id,
                        to: up,
                    },
                },
            });
            if !is_leaf {
                continue;
            }
            let header = self.header(self.config.net_diameter, now);
            out.push(Action::Send {
                to: self.update_sink_hop(group, up),
                packet: Packet {
                    header,
                    body: PacketBody::TreeUpdate {
                        group,
                        path: vec![self.id],
                    },
                },
            });
        }
        out.push(Action::SetTimer {
            kind: TimerKind::TreeUpdate,
            delay: self.config.tree_update_period,
        });
        out
    }

    /// Where to push a tree update: normally our parent, but a node sitting
    /// directly under the leader diverts to the designated backup root when
    /// the backup is a direct neighbor, keeping the leader out of the
    /// refresh path.
    fn update_sink_hop(&self, group: GroupId, upstream: NodeId) -> NodeId {
        if self.root_path(group).len() == 1 {
            if let Some(&backup) = self.known_backup.get(&group) {
                if backup != self.id {
                    if let Some(e) = self.znt.get(backup) {
                        if e.hop_count == 1 {
                            return backup;
                        }
                    }
                }
            }
        }
        upstream
    }

    /// Tree-update packets addressed to us: a reply chain we are waiting
    /// for, a state transfer, a relay duty, or terminal ingestion at the
    /// backup or primary root.
    pub(crate) fn on_tree_update_packet(
        &mut self,
        pkt: &Packet,
        now: Millis,
        out: &mut Vec<Action>,
    ) {
        if self.try_commit_chain(pkt, now, out) {
            return;
        }
        let PacketBody::TreeUpdate { group, path } = &pkt.body else {
            return;
        };
        let group = *group;

        // Chain companion of a reply we relayed: cache it (we commit if the
        // graft comes back through us) and pass it along the same route,
        // becoming the head of the chain. A relay that is already on the
        // tree substitutes its own uplink chain: the graft will splice here,
        // so downstream nodes hang under us, not under the replier.
        //
        // The route is consumed on use and goes stale within a second: the
        // companion tails its reply by one hop, and anything later from the
        // same origin is ordinary tree traffic, not a reply chain.
        let companion = match self.companion_routes.get(&(group, pkt.header.origin)).copied() {
            Some((next, at)) if now.saturating_sub(at) <= 1_000 => {
                self.companion_routes.remove(&(group, pkt.header.origin));
                Some(next)
            }
            Some(_) => {
                self.companion_routes.remove(&(group, pkt.header.origin));
                None
            }
            None => None,
        };
        if let Some(next) = companion {
            let new_path = if self.mtt.get(group).is_some() {
                let mut own = vec![self.id];
                own.extend_from_slice(self.root_path(group));
                own
            } else if path.contains(&self.id) {
                return; // Would loop the chain through us; let the search retry.
            } else {
                self.chain_cache
                    .insert((group, pkt.header.origin), (path.clone(), now));
                let mut extended = vec![self.id];
                extended.extend_from_slice(path);
                extended
            };
            if pkt.header.ttl > 1 {
                let mut fwd = pkt.clone();
                fwd.header.src = self.id;
                fwd.header.ttl = pkt.header.ttl - 1;
                if let PacketBody::TreeUpdate { path: p, .. } = &mut fwd.body {
                    *p = new_path;
                }
                out.push(Action::Send {
                    to: next,
                    packet: fwd,
                });
            }
            return;
        }

        // State transfer from a departing neighbor; committed when its alarm
        // names us successor.
        if self.mtt.get(group).is_none() && !path.contains(&self.id) {
            self.adoption
                .insert(group, (pkt.header.origin, path.clone(), now));
            return;
        }

        // Chain refresh from our parent: ancestors re-homed. Adopt the new
        // uplink chain and pass it on when it changed. A chain that loops
        // through us means the tree folded onto itself somewhere above;
        // break the link and repair.
        let from_parent = self
            .mtt
            .get(group)
            .and_then(|e| e.upstream())
            .map(|h| h.activated && h.hop == pkt.header.src)
            .unwrap_or(false);
        if from_parent && path.first() == Some(&pkt.header.src) {
            if path.contains(&self.id) {
                let parent = pkt.header.src;
                if let Some(entry) = self.mtt.get_mut(group) {
                    entry.remove_hop(parent);
                }
                let header = self.header(1, now);
                out.push(Action::Send {
                    to: parent,
                    packet: Packet {
                        header,
                        body: PacketBody::Leave { group },
                    },
                });
                out.extend(self.repair_link(group, Some(parent), now));
                return;
            }
            let changed = self.root_path(group) != path.as_slice();
            if changed {
                let leader = *path.last().unwrap();
                self.root_paths.insert(group, path.clone());
                if let Some(entry) = self.mtt.get_mut(group) {
                    entry.leader = leader;
                    entry.hop_count_to_leader = path.len() as u32;
                    entry.updated_at = now;
                }
                self.push_chain_down(group, None, now, out);
            }
            return;
        }

        let role = self.role(group);
        let Some(entry) = self.mtt.get(group) else {
            return;
        };
        // Root-ward refresh traffic is only accepted from actual children;
        // the backup and primary additionally ingest diverted updates from
        // the root's other children.
        let from_child = entry
            .next_hops
            .iter()
            .any(|h| h.hop == pkt.header.src && h.direction == LinkDirection::Downstream);

        match role {
            Role::BackupRoot => {
                let leaf = pkt.header.origin;
                let changed = self
                    .tree_view
                    .insert((group, leaf), path.clone())
                    .map(|prev| prev != *path)
                    .unwrap_or(true);
                if changed {
                    // Tell the primary root its tree moved.
                    if let Some(leader) = self.mtt.get(group).map(|e| e.leader) {
                        if leader != self.id && !path.contains(&leader) {
                            let mut fwd_path = path.clone();
                            if !fwd_path.contains(&self.id) {
                                fwd_path.push(self.id);
                            }
                            let header = self.header(self.config.net_diameter, now);
                            out.push(Action::Send {
                                to: leader,
                                packet: Packet {
                                    header,
                                    body: PacketBody::TreeUpdate {
                                        group,
                                        path: fwd_path,
                                    },
                                },
                            });
                        }
                    }
                }
            }
            Role::PrimaryRoot => {
                // Terminal unless a backup exists to take the load.
                let leaf = pkt.header.origin;
                if let Some(&backup) = self.known_backup.get(&group) {
                    if backup != self.id && backup != pkt.header.origin && pkt.header.ttl > 1 {
                        let mut fwd = pkt.clone();
                        fwd.header.src = self.id;
                        fwd.header.ttl = pkt.header.ttl - 1;
                        out.push(Action::Send {
                            to: backup,
                            packet: fwd,
                        });
                        return;
                    }
                }
                self.tree_view.insert((group, leaf), path.clone());
            }
            Role::NonMember => {}
            _ => {
                // Relay upward, appending ourselves to the chain. Only real
                // children feed us refresh traffic.
                if from_child && pkt.header.ttl > 1 && !path.contains(&self.id) {
                    let up = self
                        .mtt
                        .get(group)
                        .and_then(|e| e.upstream().filter(|h| h.activated).map(|h| h.hop));
                    if let Some(up) = up {
                        let mut new_path = path.clone();
                        new_path.push(self.id);
                        let mut fwd = pkt.clone();
                        fwd.header.src = self.id;
                        fwd.header.ttl = pkt.header.ttl - 1;
                        if let PacketBody::TreeUpdate { path: p, .. } = &mut fwd.body {
                            *p = new_path;
                        }
                        out.push(Action::Send {
                            to: self.update_sink_hop(group, up),
                            packet: fwd,
                        });
                    }
                }
            }
        }
    }

    /// Our upstream link is gone: search the zone for a tree node strictly
    /// nearer the leader and graft there. Without local repair the search
    /// goes straight to a network-wide flood. `old_parent` is the hop that
    /// failed; the regraft tells it to drop us if it is still around.
    pub(crate) fn repair_link(
        &mut self,
        group: GroupId,
        old_parent: Option<NodeId>,
        now: Millis,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        if self.pending.contains_key(&group) {
            return out;
        }
        if self.mtt.get(group).is_none() {
            return out;
        }
        if self.role(group) == Role::PrimaryRoot {
            return out;
        }
        out.push(Action::NoteRepair { group });
        if let Ok(actions) = self.start_search(group, true, true, now) {
            out.extend(actions);
        }
        if let Some(s) = self.pending.get_mut(&group) {
            s.old_parent = old_parent;
        }
        out
    }
}
