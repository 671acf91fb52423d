//! Group search: zone-bounded request floods, replies from tree and request
//! tables, requester-side escalation, and directional diffused forwarding
//! toward a tree member whose position is known.

use std::collections::BTreeSet;

use super::{
    Action, ForwardRoute, NodeState, ProtocolError, Role, SearchPhase, SearchState, TimerKind,
};
use crate::geometry::{within_cone, Position};
use crate::tables::RtEntry;
use crate::wire::{GroupId, NodeId, Packet, PacketBody, PacketHeader};
use crate::Millis;

impl NodeState {
    /// Starts a search for `group`, join-flagged or data-routing.
    ///
    /// Join searches that exhaust the network end in self-declared
    /// leadership; data searches end in a routing failure signal. A repair
    /// is a join-flagged search issued by a node already on the tree.
    pub fn start_search(
        &mut self,
        group: GroupId,
        join: bool,
        repair: bool,
        now: Millis,
    ) -> Result<Vec<Action>, ProtocolError> {
        if self.mtt.get(group).is_some() && !repair {
            return Err(ProtocolError::AlreadyMember);
        }
        let full_flood = repair && !self.features.local_repair;
        let (budget, phase) = if full_flood {
            (self.config.net_diameter, SearchPhase::Network)
        } else {
            (self.config.k, SearchPhase::InZone)
        };
        let header = self.header(budget, now);
        let body = PacketBody::Mgreq {
            group,
            rq: self.id,
            rq_pos: self.pos,
            join_flag: join || repair,
        };
        let token = self.alloc_seq();
        self.pending.insert(
            group,
            SearchState {
                join: join || repair,
                repair,
                issued_at: now,
                phase,
                coverage: budget,
                target: None,
                await_chain: None,
                cached_body: body.clone(),
                cached_seq: header.seq,
                cached_timestamp: now,
                token,
                old_parent: None,
                probe_root: None,
                grace_used: false,
            },
        );
        Ok(vec![
            Action::Broadcast {
                packet: Packet { header, body },
            },
            Action::SetTimer {
                kind: TimerKind::SearchTimeout { group, token },
                delay: self.config.timeout_for_budget(budget),
            },
        ])
    }

    fn fresh_rt_match(&self, group: GroupId, rq: NodeId) -> Option<&RtEntry> {
        self.rt
            .entries_for_group(group)
            .filter(|e| e.tree_member != rq && e.tree_member != self.id)
            .max_by_key(|e| (e.updated_at, std::cmp::Reverse(e.tree_member)))
    }

    /// Whether this node can act as a graft target right now.
    fn can_serve(&self, group: GroupId) -> bool {
        if self.pending.get(&group).map(|s| s.repair).unwrap_or(false) {
            return false;
        }
        match self.mtt.get(group) {
            Some(e) => {
                e.hop_count_to_leader == 0 || e.upstream().map(|h| h.activated).unwrap_or(false)
            }
            None => false,
        }
    }

    /// Table lookup and reply for one search request. Returns true when the
    /// request was answered (or answering was this node's duty but routing
    /// state was missing), false when the search should continue past us.
    ///
    /// Request-cache replies only exist to seed the geographic chase, so
    /// they are emitted only while directional forwarding is on and never
    /// for an already-directed search (which only the member terminates).
    fn mgreq_reply(
        &mut self,
        group: GroupId,
        rq: NodeId,
        rq_pos: Position,
        join_flag: bool,
        allow_rt_reply: bool,
        now: Millis,
        out: &mut Vec<Action>,
    ) -> bool {
        if self.mtt.get(group).is_some() {
            if !self.can_serve(group) {
                // On the tree but cut off; let the flood pass.
                return false;
            }
            let Some(&pred) = self.reverse.get(&rq) else {
                return true;
            };
            let reply_header = self.header(self.config.net_diameter, now);
            out.push(Action::Send {
                to: pred,
                packet: Packet {
                    header: reply_header,
                    body: PacketBody::Mgrpl {
                        group,
                        tm: self.id,
                        tm_pos: self.pos,
                        rq,
                        rq_pos,
                    },
                },
            });
            if join_flag {
                // Companion uplink chain: the requester derives its leader,
                // hop count and full root-ward path from it before grafting.
                let mut path = vec![self.id];
                path.extend_from_slice(self.root_path(group));
                let chain_header = self.header(self.config.net_diameter, now);
                out.push(Action::Send {
                    to: pred,
                    packet: Packet {
                        header: chain_header,
                        body: PacketBody::TreeUpdate { group, path },
                    },
                });
            }
            return true;
        }
        if !allow_rt_reply || !self.features.directional_forwarding {
            return false;
        }
        if let Some(entry) = self.fresh_rt_match(group, rq) {
            let (tm, tm_pos) = (entry.tree_member, entry.tm_pos);
            let Some(&pred) = self.reverse.get(&rq) else {
                return true;
            };
            let header = self.header(self.config.net_diameter, now);
            out.push(Action::Send {
                to: pred,
                packet: Packet {
                    header,
                    body: PacketBody::Mgrpl {
                        group,
                        tm,
                        tm_pos,
                        rq,
                        rq_pos,
                    },
                },
            });
            return true;
        }
        false
    }

    /// Zone-flooded search request.
    pub(crate) fn on_mgreq_broadcast(
        &mut self,
        pkt: &Packet,
        now: Millis,
        _latency: Millis,
        out: &mut Vec<Action>,
    ) {
        let PacketBody::Mgreq {
            group,
            rq,
            rq_pos,
            join_flag,
        } = pkt.body
        else {
            return;
        };
        if self.search_stopped(group, rq, &pkt.header) {
            return;
        }
        if join_flag {
            self.rt.upsert(RtEntry {
                group,
                tree_member: rq,
                tm_pos: rq_pos,
                updated_at: pkt.header.timestamp,
            });
        }
        if self.mgreq_reply(group, rq, rq_pos, join_flag, true, now, out) {
            return;
        }
        if pkt.header.ttl > 1 {
            let mut fwd = pkt.clone();
            fwd.header.src = self.id;
            fwd.header.ttl = pkt.header.ttl - 1;
            out.push(Action::Broadcast { packet: fwd });
        }
    }

    /// A search request addressed specifically to us: an instruction to keep
    /// chasing the target from our own zone.
    pub(crate) fn on_mgreq_directed(
        &mut self,
        pkt: &Packet,
        now: Millis,
        _latency: Millis,
        out: &mut Vec<Action>,
    ) {
        let PacketBody::Mgreq {
            group,
            rq,
            rq_pos,
            join_flag,
        } = pkt.body
        else {
            return;
        };
        if self.search_stopped(group, rq, &pkt.header) {
            return;
        }
        if join_flag {
            self.rt.upsert(RtEntry {
                group,
                tree_member: rq,
                tm_pos: rq_pos,
                updated_at: pkt.header.timestamp,
            });
        }
        if self.mgreq_reply(group, rq, rq_pos, join_flag, false, now, out) {
            return;
        }
        if !self.fwd_seen.insert((pkt.header.origin, pkt.header.seq)) {
            return;
        }
        if pkt.header.ttl <= 1 {
            return;
        }
        let remaining = pkt.header.ttl - 1;
        match self.fresh_rt_match(group, rq).map(|e| (e.tree_member, e.tm_pos)) {
            Some(target) => {
                self.directional_forward(group, rq, rq_pos, pkt, target, remaining, now, out);
            }
            None => {
                // Companion knowledge went missing; degrade to a bounded
                // zone flood from here.
                let mut fwd = pkt.clone();
                fwd.header.src = self.id;
                fwd.header.ttl = remaining.min(self.config.k);
                out.push(Action::Broadcast { packet: fwd });
            }
        }
    }

    fn search_stopped(&self, group: GroupId, rq: NodeId, hdr: &PacketHeader) -> bool {
        match self.stopped.get(&(group, rq)) {
            Some(&stopped_at) => hdr.timestamp <= stopped_at,
            None => false,
        }
    }

    /// Picks the forwarders for one directional hop: the most distant zone
    /// ring with anyone inside the target cone, or every zone neighbor when
    /// the cone is empty (the degraded case).
    pub fn select_directional(&self, target_pos: Position) -> (Vec<NodeId>, Vec<NodeId>, bool) {
        let k = self.config.k;
        let zonal: Vec<_> = self
            .znt
            .iter()
            .filter(|e| !e.non_zonal && e.hop_count <= k)
            .collect();
        if zonal.is_empty() {
            return (Vec::new(), Vec::new(), false);
        }
        for ring in (1..=k).rev() {
            let in_cone: Vec<_> = zonal
                .iter()
                .filter(|e| e.hop_count == ring)
                .filter(|e| {
                    within_cone(self.pos, target_pos, e.pos, self.config.theta_t)
                        .unwrap_or(true)
                })
                .collect();
            if !in_cone.is_empty() {
                let targets = in_cone.iter().map(|e| e.neighbor).collect();
                let hops: BTreeSet<NodeId> = in_cone.iter().map(|e| e.next_hop).collect();
                return (targets, hops.into_iter().collect(), false);
            }
        }
        let targets = zonal.iter().map(|e| e.neighbor).collect();
        let hops: BTreeSet<NodeId> = zonal.iter().map(|e| e.next_hop).collect();
        (targets, hops.into_iter().collect(), true)
    }

    /// Forwards a cached search toward a known member position. Each
    /// selected next hop receives the member knowledge (an unsolicited
    /// reply) followed by the search itself, and repeats the selection in
    /// its own zone until a tree node is reached.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn directional_forward(
        &mut self,
        group: GroupId,
        rq: NodeId,
        rq_pos: Position,
        original: &Packet,
        target: (NodeId, Position),
        remaining_ttl: u8,
        now: Millis,
        out: &mut Vec<Action>,
    ) {
        if remaining_ttl == 0 {
            return;
        }
        let (_, hops, degraded) = self.select_directional(target.1);
        if degraded {
            out.push(Action::NoteDegraded { group });
        }
        for hop in hops {
            if hop == rq || hop == original.header.origin {
                continue;
            }
            let knowledge_header = self.header(remaining_ttl, now);
            out.push(Action::Send {
                to: hop,
                packet: Packet {
                    header: knowledge_header,
                    body: PacketBody::Mgrpl {
                        group,
                        tm: target.0,
                        tm_pos: target.1,
                        rq,
                        rq_pos,
                    },
                },
            });
            out.push(Action::Send {
                to: hop,
                packet: Packet {
                    header: PacketHeader {
                        seq: original.header.seq,
                        src: self.id,
                        origin: original.header.origin,
                        ttl: remaining_ttl,
                        timestamp: original.header.timestamp,
                    },
                    body: original.body.clone(),
                },
            });
        }
    }

    /// Reply handling at the requester and relays.
    pub(crate) fn on_mgrpl(
        &mut self,
        pkt: &Packet,
        now: Millis,
        _latency: Millis,
        first_sight: bool,
        out: &mut Vec<Action>,
    ) {
        let PacketBody::Mgrpl {
            group,
            tm,
            tm_pos,
            rq,
            rq_pos,
        } = pkt.body
        else {
            return;
        };
        if rq != self.id {
            // Relay duty: pass the reply along the recorded reverse path and
            // remember the forward route it creates.
            if !first_sight || pkt.header.ttl <= 1 {
                return;
            }
            let Some(&pred) = self.reverse.get(&rq) else {
                return;
            };
            self.forward_routes.insert(
                (group, tm),
                ForwardRoute {
                    next_hop: pkt.header.src,
                    recorded_at: now,
                },
            );
            self.companion_routes
                .insert((group, pkt.header.origin), (pred, now));
            let mut fwd = pkt.clone();
            fwd.header.src = self.id;
            fwd.header.ttl = pkt.header.ttl - 1;
            out.push(Action::Send {
                to: pred,
                packet: fwd,
            });
            return;
        }

        let Some(state) = self.pending.get(&group) else {
            return; // Unsolicited: snoop value only.
        };
        if tm == self.id {
            return; // Stale cache echoing ourselves back.
        }
        if let Some(root) = state.probe_root {
            if tm == root && pkt.header.origin == root {
                // The root answered in person: alive, we just drifted out of
                // its neighborhood. Re-home through a normal repair; the
                // root replaces us once our entry fades from its tables.
                self.pending.remove(&group);
                out.extend(self.stop_search_actions(group, now));
                out.extend(self.repair_link(group, Some(root), now));
                return;
            }
            if tm == pkt.header.origin {
                return; // Another tree node's word is not proof of life.
            }
            // Cached knowledge falls through to the geographic chase: it may
            // lead to the root itself.
        }
        if tm == pkt.header.origin {
            // Direct reply from a tree node.
            if state.join {
                // Wait for the uplink chain before grafting.
                if let Some(s) = self.pending.get_mut(&group) {
                    s.await_chain = Some(tm);
                }
            } else {
                // Data search: the reverse path of this reply is the forward
                // route for the payload.
                self.forward_routes.insert(
                    (group, tm),
                    ForwardRoute {
                        next_hop: pkt.header.src,
                        recorded_at: now,
                    },
                );
                let payloads = self.pending_sends.remove(&group).unwrap_or_default();
                for payload in payloads {
                    let header = self.header(self.config.net_diameter, now);
                    out.push(Action::Send {
                        to: pkt.header.src,
                        packet: Packet {
                            header,
                            body: PacketBody::Data { group, payload },
                        },
                    });
                }
                self.pending.remove(&group);
                out.extend(self.stop_search_actions(group, now));
            }
        } else {
            // Someone's request cache knows a member elsewhere; chase it
            // geographically when the feature is on, otherwise let the
            // escalation ladder find the member itself.
            if !self.features.directional_forwarding {
                return;
            }
            let already_chasing = state.target.is_some();
            if already_chasing {
                return;
            }
            let cached = Packet {
                header: PacketHeader {
                    seq: state.cached_seq,
                    src: self.id,
                    origin: self.id,
                    ttl: self.config.net_diameter,
                    timestamp: state.cached_timestamp,
                },
                body: state.cached_body.clone(),
            };
            if let Some(s) = self.pending.get_mut(&group) {
                s.target = Some((tm, tm_pos));
            }
            self.fwd_seen.insert((cached.header.origin, cached.header.seq));
            self.directional_forward(
                group,
                self.id,
                rq_pos,
                &cached,
                (tm, tm_pos),
                self.config.net_diameter,
                now,
                out,
            );
        }
    }

    pub(crate) fn stop_search_actions(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let header = self.header(self.config.k, now);
        self.stopped.insert((group, self.id), now);
        vec![Action::Broadcast {
            packet: Packet {
                header,
                body: PacketBody::StopSearch { group, rq: self.id },
            },
        }]
    }

    /// Unanswered search: escalate through successively wider floods until
    /// the budget covers the network, then conclude.
    pub(crate) fn on_search_timeout(
        &mut self,
        group: GroupId,
        token: u32,
        now: Millis,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(state) = self.pending.get(&group) else {
            return out;
        };
        if state.token != token {
            return out; // Timer from an earlier search for this group.
        }
        let net = self.config.net_diameter;
        if state.coverage >= net {
            // A probe that never heard the root: the tree is headless (or
            // we are partitioned from it, where a partition root is the
            // right outcome either way).
            if state.probe_root.is_some() {
                self.pending.remove(&group);
                if self.role(group) == Role::BackupRoot {
                    out.extend(self.promote_backup(group, now));
                }
                return out;
            }
            // A repair that lost the leader itself pauses once: the backup
            // root holds the succession claim, and the next search round
            // will find its tree.
            let lost_leader = state.old_parent.is_some()
                && state.old_parent == self.mtt.get(group).map(|e| e.leader);
            if state.repair && lost_leader && !state.grace_used {
                let grace = 3 * self.config.power_check_period + self.jitter();
                let token = self.alloc_seq();
                if let Some(s) = self.pending.get_mut(&group) {
                    s.grace_used = true;
                    s.coverage = self.config.k;
                    s.token = token;
                }
                out.push(Action::SetTimer {
                    kind: TimerKind::SearchTimeout { group, token },
                    delay: grace,
                });
                return out;
            }
            let join = state.join;
            self.pending.remove(&group);
            if join {
                out.extend(self.declare_leader(group, now));
            } else {
                self.pending_sends.remove(&group);
                out.push(Action::GroupUnreachable { group });
            }
            return out;
        }
        let new_budget = (state.coverage.saturating_mul(2)).clamp(state.coverage + 1, net);
        let body = state.cached_body.clone();
        let header = self.header(new_budget, now);
        let token = self.alloc_seq();
        if let Some(s) = self.pending.get_mut(&group) {
            s.coverage = new_budget;
            s.phase = SearchPhase::Network;
            s.await_chain = None;
            s.target = None;
            s.cached_seq = header.seq;
            s.cached_timestamp = now;
            s.token = token;
        }
        out.push(Action::Broadcast {
            packet: Packet { header, body },
        });
        out.push(Action::SetTimer {
            kind: TimerKind::SearchTimeout { group, token },
            delay: self.config.timeout_for_budget(new_budget),
        });
        out
    }

    /// Commits a join or repair when the awaited uplink chain arrives.
    /// Returns true when the packet was consumed as a chain.
    pub(crate) fn try_commit_chain(
        &mut self,
        pkt: &Packet,
        now: Millis,
        out: &mut Vec<Action>,
    ) -> bool {
        let PacketBody::TreeUpdate { group, path } = &pkt.body else {
            return false;
        };
        let group = *group;
        let Some(state) = self.pending.get(&group) else {
            return false;
        };
        let Some(expected) = state.await_chain else {
            return false;
        };
        if pkt.header.origin != expected {
            return false;
        }
        let repair = state.repair;
        let old_parent = state.old_parent;
        let chain = path.clone();
        if chain.is_empty() || chain.contains(&self.id) {
            // Grafting here would loop the tree through ourselves.
            if let Some(s) = self.pending.get_mut(&group) {
                s.await_chain = None;
            }
            return true;
        }
        if repair {
            // Only a node strictly nearer the leader may adopt us; this
            // keeps every graft hop-decreasing and the tree acyclic. The one
            // exception is losing the leader itself: nothing sits above hop
            // one, so a direct child may re-home deeper (the chain check
            // still rejects its own descendants).
            let lost_leader = old_parent == self.mtt.get(group).map(|e| e.leader);
            let current = self
                .mtt
                .get(group)
                .map(|e| e.hop_count_to_leader)
                .unwrap_or(u32::MAX);
            if !lost_leader && chain.len() as u32 >= current {
                if let Some(s) = self.pending.get_mut(&group) {
                    s.await_chain = None;
                }
                return true;
            }
        }
        let upstream = chain[0];
        let leader = *chain.last().unwrap();
        // Tell a still-reachable old parent to drop us before the new link
        // goes live, so no node ever has two parents on the books.
        if let Some(old) = old_parent {
            if old != upstream {
                let header = self.header(1, now);
                out.push(Action::Send {
                    to: old,
                    packet: Packet {
                        header,
                        body: PacketBody::Leave { group },
                    },
                });
            }
        }
        self.install_tree_entry(group, leader, &chain, upstream, now);
        self.push_chain_down(group, None, now, out);
        let role = if self.is_member(group) {
            Role::Member
        } else {
            Role::Intermediate
        };
        self.set_role(group, role, out);
        let graft_header = self.header(self.config.net_diameter, now);
        out.push(Action::Send {
            to: upstream,
            packet: Packet {
                header: graft_header,
                body: PacketBody::Graft {
                    group,
                    from: self.id,
                    to: expected,
                },
            },
        });
        out.extend(self.stop_search_actions(group, now));
        let payloads = self.pending_sends.remove(&group).unwrap_or_default();
        for payload in payloads {
            self.originate_data(group, payload, now, out);
        }
        self.pending.remove(&group);
        true
    }
}
