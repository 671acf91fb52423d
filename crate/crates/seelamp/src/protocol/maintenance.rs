//! Preventive maintenance: announced departures with state handoff, battery
//! handoff before power death, backup-root election, liveness monitoring and
//! failover.

use rand::Rng;

use super::{Action, BackupElection, NodeState, Role, TimerKind};
use crate::geometry::distance;
use crate::tables::{LinkDirection, MttEntry};
use crate::wire::{AlarmKind, GroupId, NodeId, Packet, PacketBody};
use crate::Millis;

impl NodeState {
    /// A join search exhausted the whole network: the group does not exist
    /// yet, so this node founds it.
    pub(crate) fn declare_leader(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let entry = MttEntry {
            group,
            leader: self.id,
            hop_count_to_leader: 0,
            next_hops: self
                .mtt
                .remove(group)
                .map(|e| {
                    e.next_hops
                        .into_iter()
                        .filter(|h| h.direction == LinkDirection::Downstream)
                        .collect()
                })
                .unwrap_or_default(),
            updated_at: now,
        };
        let _ = self.mtt.insert(entry);
        self.root_paths.insert(group, Vec::new());
        self.set_role(group, Role::PrimaryRoot, &mut out);
        self.push_chain_down(group, None, now, &mut out);
        out.extend(self.announce_presence(group, now));
        if self.features.backup_root {
            let jitter: u64 = self.rng.random_range(0..=500);
            out.push(Action::SetTimer {
                kind: TimerKind::BackupElect { group },
                delay: 1 + jitter,
            });
        }
        let payloads = self.pending_sends.remove(&group).unwrap_or_default();
        for payload in payloads {
            self.originate_data(group, payload, now, &mut out);
        }
        out
    }

    /// Zone-wide announcement that this node anchors the group: an
    /// unsolicited reply naming itself, absorbed into request caches.
    fn announce_presence(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let header = self.header(self.config.k, now);
        vec![Action::Broadcast {
            packet: Packet {
                header,
                body: PacketBody::Mgrpl {
                    group,
                    tm: self.id,
                    tm_pos: self.pos,
                    rq: self.id,
                    rq_pos: self.pos,
                },
            },
        }]
    }

    /// Backup-root election, run by a primary root. Candidates are screened
    /// by observed speed here and qualify themselves on battery when
    /// appointed; the nearest neighbor wins, ties to the lowest id.
    pub(crate) fn elect_backup(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.features.backup_root || self.role(group) != Role::PrimaryRoot {
            return out;
        }
        let election = self.elections.entry(group).or_default();
        if election.confirmed.is_some() || election.awaiting.is_some() {
            return out;
        }
        let declined = election.declined.clone();
        let mut candidates: Vec<(u64, NodeId)> = self
            .znt
            .iter()
            .filter(|e| e.hop_count == 1)
            .filter(|e| e.observed_speed <= self.config.backup_speed_max)
            .filter(|e| !declined.contains(&e.neighbor))
            .map(|e| {
                let d = distance(self.pos, e.pos);
                ((d * 1000.0) as u64, e.neighbor)
            })
            .collect();
        candidates.sort();
        match candidates.first() {
            Some(&(_, candidate)) => {
                self.elections.get_mut(&group).unwrap().awaiting = Some(candidate);
                let header = self.header(1, now);
                out.push(Action::Broadcast {
                    packet: Packet {
                        header,
                        body: PacketBody::Alarm {
                            group,
                            kind: AlarmKind::RootHandoff,
                            successor: Some(candidate),
                        },
                    },
                });
                out.push(Action::SetTimer {
                    kind: TimerKind::BackupConfirm { group, candidate },
                    delay: self.config.search_timeout_ms,
                });
            }
            None => {
                // Nobody qualifies right now; retry after a randomized delay.
                self.elections.get_mut(&group).unwrap().declined.clear();
                let jitter: u64 = self.rng.random_range(0..=500);
                out.push(Action::SetTimer {
                    kind: TimerKind::BackupElect { group },
                    delay: self.config.search_retry_delay + jitter,
                });
            }
        }
        out
    }

    pub(crate) fn on_backup_confirm_timeout(
        &mut self,
        group: GroupId,
        candidate: NodeId,
        now: Millis,
    ) -> Vec<Action> {
        let Some(election) = self.elections.get_mut(&group) else {
            return Vec::new();
        };
        if election.awaiting != Some(candidate) {
            return Vec::new();
        }
        election.awaiting = None;
        election.declined.insert(candidate);
        self.elect_backup(group, now)
    }

    /// Backup side: watch the primary. Silence past the liveness window is
    /// ambiguous (the root may be dead, or we may have drifted out of its
    /// zone), so the backup probes: only a reply originated by the root
    /// itself proves life; an exhausted probe promotes.
    pub(crate) fn on_root_liveness(
        &mut self,
        group: GroupId,
        now: Millis,
        _latency: Millis,
    ) -> Vec<Action> {
        if self.role(group) != Role::BackupRoot {
            return Vec::new();
        }
        let mut out = Vec::new();
        let leader = self.mtt.get(group).map(|e| e.leader);
        let window = 3 * self.config.power_check_period + 500;
        let fresh = leader
            .and_then(|l| self.znt.get(l))
            .map(|e| now.saturating_sub(e.updated_at) <= window)
            .unwrap_or(false);
        if !fresh && !self.pending.contains_key(&group) {
            if let Some(leader) = leader {
                out.extend(self.start_root_probe(group, leader, now));
                return out;
            }
        }
        out.push(Action::SetTimer {
            kind: TimerKind::RootLiveness { group },
            delay: self.config.power_check_period,
        });
        out
    }

    /// Searches for the root's own voice: a data-style search whose only
    /// accepted answer is a reply the root originated.
    pub(crate) fn start_root_probe(
        &mut self,
        group: GroupId,
        root: NodeId,
        now: Millis,
    ) -> Vec<Action> {
        let budget = self.config.k;
        let header = self.header(budget, now);
        let body = crate::wire::PacketBody::Mgreq {
            group,
            rq: self.id,
            rq_pos: self.pos,
            join_flag: false,
        };
        let token = self.alloc_seq();
        self.pending.insert(
            group,
            crate::protocol::SearchState {
                join: false,
                repair: false,
                issued_at: now,
                phase: crate::protocol::SearchPhase::InZone,
                coverage: budget,
                target: None,
                await_chain: None,
                cached_body: body.clone(),
                cached_seq: header.seq,
                cached_timestamp: now,
                token,
                old_parent: None,
                probe_root: Some(root),
                grace_used: false,
            },
        );
        vec![
            Action::Broadcast {
                packet: Packet { header, body },
            },
            Action::SetTimer {
                kind: TimerKind::SearchTimeout { group, token },
                delay: self.config.timeout_for_budget(budget),
            },
        ]
    }

    /// The backup becomes the primary root.
    pub(crate) fn promote_backup(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        out.push(Action::NoteFailover { group });
        let old_leader = self.mtt.get(group).map(|e| e.leader);
        if let Some(entry) = self.mtt.get_mut(group) {
            if let Some(leader) = old_leader {
                entry.remove_hop(leader);
            }
            entry.leader = self.id;
            entry.hop_count_to_leader = 0;
            entry.updated_at = now;
        } else {
            let _ = self.mtt.insert(MttEntry {
                group,
                leader: self.id,
                hop_count_to_leader: 0,
                next_hops: Vec::new(),
                updated_at: now,
            });
        }
        self.root_paths.insert(group, Vec::new());
        self.known_backup.remove(&group);
        self.elections.insert(group, BackupElection::default());
        self.set_role(group, Role::PrimaryRoot, &mut out);
        self.push_chain_down(group, None, now, &mut out);
        out.extend(self.announce_presence(group, now));
        out.extend(self.elect_backup(group, now));
        out
    }

    /// Alarm handling: backup appointments, and departure/power handoffs
    /// where the leaver's neighbors re-point their tree links at the named
    /// successor.
    pub(crate) fn on_alarm(&mut self, pkt: &Packet, now: Millis, out: &mut Vec<Action>) {
        let PacketBody::Alarm {
            group,
            kind,
            successor,
        } = pkt.body
        else {
            return;
        };
        let leaver = pkt.header.origin;
        match kind {
            AlarmKind::RootHandoff => {
                // Appointment of a backup root by the current root.
                let Some(candidate) = successor else { return };
                self.known_backup.insert(group, candidate);
                if candidate == self.id {
                    out.extend(self.accept_backup_appointment(group, leaver, now));
                }
            }
            AlarmKind::Leaving | AlarmKind::PowerLow => {
                let Some(successor) = successor else {
                    return; // Advisory only: low battery without handoff.
                };
                // The leaver exits: purge its soft state everywhere.
                self.znt.remove(leaver);
                self.rt.remove_member(leaver);
                if successor == self.id {
                    if self.role(group) == Role::BackupRoot
                        && self.mtt.get(group).map(|e| e.leader) == Some(leaver)
                    {
                        // The root hands the tree to us.
                        out.extend(self.promote_backup(group, now));
                    } else if let Some((from, chain, _)) = self.adoption.remove(&group) {
                        if from == leaver {
                            out.extend(self.commit_adoption(group, chain, now));
                        }
                    }
                    return;
                }
                // Re-point our tree link at the successor.
                let mut was_upstream = false;
                let mut had_link = false;
                if let Some(entry) = self.mtt.get_mut(group) {
                    if let Some(hop) = entry.next_hops.iter().find(|h| h.hop == leaver) {
                        had_link = true;
                        was_upstream = hop.direction == LinkDirection::Upstream;
                        let dir = hop.direction;
                        entry.remove_hop(leaver);
                        entry.set_hop(successor, dir, true);
                        entry.updated_at = now;
                    }
                }
                if had_link && was_upstream {
                    if let Some(path) = self.root_paths.get_mut(&group) {
                        if let Some(first) = path.first_mut() {
                            if *first == leaver {
                                *first = successor;
                            }
                        }
                    }
                    self.push_chain_down(group, None, now, out);
                    // Confirm the new uplink so the successor learns us.
                    let link = self
                        .znt
                        .get(successor)
                        .map(|e| e.next_hop)
                        .unwrap_or(successor);
                    let header = self.header(self.config.net_diameter, now);
                    out.push(Action::Send {
                        to: link,
                        packet: Packet {
                            header,
                            body: PacketBody::Graft {
                                group,
                                from: self.id,
                                to: successor,
                            },
                        },
                    });
                }
                if self.known_backup.get(&group) == Some(&leaver) {
                    self.known_backup.remove(&group);
                }
                if self.role(group) == Role::PrimaryRoot {
                    if let Some(el) = self.elections.get_mut(&group) {
                        if el.confirmed == Some(leaver) || el.awaiting == Some(leaver) {
                            el.confirmed = None;
                            el.awaiting = None;
                            out.extend(self.elect_backup(group, now));
                        }
                    }
                }
            }
        }
    }

    /// Appointed as backup: self-qualify on battery and speed, then graft
    /// directly under the root and start watching it.
    fn accept_backup_appointment(
        &mut self,
        group: GroupId,
        root: NodeId,
        now: Millis,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        let battery_ok = (self.battery_nj as f64)
            >= self.config.backup_battery_min_fraction * self.initial_battery_nj as f64;
        let speed_ok = self.speed <= self.config.backup_speed_max;
        if !battery_ok || !speed_ok {
            return out; // Decline silently; the root retries elsewhere.
        }
        if self.role(group) == Role::PrimaryRoot {
            return out;
        }
        self.install_tree_entry(group, root, &[root], root, now);
        self.set_role(group, Role::BackupRoot, &mut out);
        let header = self.header(self.config.net_diameter, now);
        out.push(Action::Send {
            to: root,
            packet: Packet {
                header,
                body: PacketBody::Graft {
                    group,
                    from: self.id,
                    to: root,
                },
            },
        });
        out.push(Action::SetTimer {
            kind: TimerKind::RootLiveness { group },
            delay: self.config.power_check_period,
        });
        out
    }

    /// Adopt a departing neighbor's place on the tree.
    fn commit_adoption(&mut self, group: GroupId, chain: Vec<NodeId>, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if chain.is_empty() || chain.contains(&self.id) {
            return out;
        }
        let upstream = chain[0];
        let leader = *chain.last().unwrap();
        self.install_tree_entry(group, leader, &chain, upstream, now);
        self.push_chain_down(group, None, now, &mut out);
        let role = if self.is_member(group) {
            Role::Member
        } else {
            Role::Intermediate
        };
        self.set_role(group, role, &mut out);
        let link = self
            .znt
            .get(upstream)
            .map(|e| e.next_hop)
            .unwrap_or(upstream);
        let header = self.header(self.config.net_diameter, now);
        out.push(Action::Send {
            to: link,
            packet: Packet {
                header,
                body: PacketBody::Graft {
                    group,
                    from: self.id,
                    to: upstream,
                },
            },
        });
        out
    }

    /// Leaf departure notice: prune the sender from the group's links.
    pub(crate) fn on_leave_packet(&mut self, pkt: &Packet, out: &mut Vec<Action>) {
        let PacketBody::Leave { group } = pkt.body else {
            return;
        };
        let leaver = pkt.header.origin;
        self.rt.remove_member(leaver);
        let mut lost_upstream = false;
        if let Some(entry) = self.mtt.get_mut(group) {
            let was_up = entry
                .upstream()
                .map(|h| h.hop == leaver)
                .unwrap_or(false);
            if entry.remove_hop(leaver) {
                lost_upstream = was_up;
            }
        }
        let now = pkt.header.timestamp;
        if lost_upstream {
            out.extend(self.repair_link(group, Some(leaver), now));
        } else {
            out.extend(self.prune_if_useless(group, now));
        }
        if self.known_backup.get(&group) == Some(&leaver) {
            self.known_backup.remove(&group);
            if self.role(group) == Role::PrimaryRoot {
                if let Some(el) = self.elections.get_mut(&group) {
                    el.confirmed = None;
                    el.awaiting = None;
                }
                out.extend(self.elect_backup(group, now));
            }
        }
    }

    /// Application-level departure from a group.
    pub(crate) fn on_app_leave(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        self.member_of.remove(&group);
        self.pending_sends.remove(&group);
        self.pending.remove(&group);
        let role = self.role(group);
        let Some(entry) = self.mtt.get(group) else {
            self.set_role(group, Role::NonMember, &mut out);
            return out;
        };
        match role {
            Role::BackupRoot => {
                // Keep serving the tree; just stop delivering.
            }
            Role::PrimaryRoot => {
                out.extend(self.root_departure(group, AlarmKind::Leaving, now));
            }
            _ => {
                let has_downstream = entry
                    .activated_hops()
                    .any(|h| h.direction == LinkDirection::Downstream);
                if has_downstream {
                    out.extend(self.interior_handoff(group, AlarmKind::Leaving, now));
                } else {
                    out.extend(self.leaf_departure(group, now));
                }
            }
        }
        out
    }

    fn leaf_departure(&mut self, group: GroupId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
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
        out
    }

    /// Hand an interior position to the nearest non-tree neighbor: transfer
    /// the uplink chain, then alarm the neighborhood so tree neighbors
    /// re-point their links at the successor.
    pub(crate) fn interior_handoff(
        &mut self,
        group: GroupId,
        kind: AlarmKind,
        now: Millis,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        let chain = self.root_path(group).to_vec();
        let successor = self.pick_successor(group, &chain);
        let Some(successor) = successor else {
            // No eligible neighbor: degrade to a plain departure and let the
            // downstream side repair itself.
            return self.leaf_departure(group, now);
        };
        let transfer_header = self.header(1, now);
        out.push(Action::Send {
            to: successor,
            packet: Packet {
                header: transfer_header,
                body: PacketBody::TreeUpdate {
                    group,
                    path: chain,
                },
            },
        });
        let alarm_header = self.header(1, now);
        out.push(Action::Broadcast {
            packet: Packet {
                header: alarm_header,
                body: PacketBody::Alarm {
                    group,
                    kind,
                    successor: Some(successor),
                },
            },
        });
        self.mtt.remove(group);
        self.root_paths.remove(&group);
        self.set_role(group, Role::NonMember, &mut out);
        if self.is_member(group) {
            // Still want the data: re-attach as a leaf once the dust settles.
            if let Ok(actions) = self.start_search(group, true, false, now) {
                out.extend(actions);
            }
        }
        out
    }

    /// Nearest 1-hop neighbor that is not, to our knowledge, already on the
    /// group's tree.
    fn pick_successor(&self, group: GroupId, chain: &[NodeId]) -> Option<NodeId> {
        let entry = self.mtt.get(group)?;
        let tree_hops: Vec<NodeId> = entry.next_hops.iter().map(|h| h.hop).collect();
        let known_members: Vec<NodeId> = self
            .rt
            .entries_for_group(group)
            .map(|e| e.tree_member)
            .collect();
        self.znt
            .iter()
            .filter(|e| e.hop_count == 1)
            .filter(|e| !tree_hops.contains(&e.neighbor))
            .filter(|e| !known_members.contains(&e.neighbor))
            .filter(|e| !chain.contains(&e.neighbor))
            .map(|e| {
                let d = distance(self.pos, e.pos);
                ((d * 1000.0) as u64, e.neighbor)
            })
            .min()
            .map(|(_, id)| id)
    }

    /// A root departs: hand the tree to the confirmed backup when there is
    /// one, otherwise leave the members to rediscover a leader.
    fn root_departure(&mut self, group: GroupId, kind: AlarmKind, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let backup = self
            .elections
            .get(&group)
            .and_then(|e| e.confirmed)
            .or_else(|| self.known_backup.get(&group).copied());
        match backup {
            Some(backup) => {
                let header = self.header(1, now);
                out.push(Action::Broadcast {
                    packet: Packet {
                        header,
                        body: PacketBody::Alarm {
                            group,
                            kind,
                            successor: Some(backup),
                        },
                    },
                });
            }
            None => {
                let header = self.header(1, now);
                out.push(Action::Broadcast {
                    packet: Packet {
                        header,
                        body: PacketBody::Leave { group },
                    },
                });
            }
        }
        self.mtt.remove(group);
        self.root_paths.remove(&group);
        self.elections.remove(&group);
        self.known_backup.remove(&group);
        self.set_role(group, Role::NonMember, &mut out);
        out
    }

    /// Periodic battery examination. A tree node below threshold hands its
    /// duties off while it still has the energy to do so.
    pub(crate) fn on_power_check(&mut self, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let is_root = self.roles.values().any(|r| *r == Role::PrimaryRoot);
        let threshold =
            (self.config.power_threshold_fraction * self.initial_battery_nj as f64) as u64;
        let below = self.battery_nj < threshold;
        if below && self.features.preventive_maintenance {
            let groups = self.mtt.groups();
            let mut in_any_tree = false;
            for group in groups {
                if self.power_handled.contains(&group) {
                    continue;
                }
                let Some(entry) = self.mtt.get(group) else {
                    continue;
                };
                in_any_tree = true;
                let has_downstream = entry
                    .activated_hops()
                    .any(|h| h.direction == LinkDirection::Downstream);
                let role = self.role(group);
                self.power_handled.insert(group);
                match role {
                    Role::PrimaryRoot => {
                        out.extend(self.root_departure(group, AlarmKind::PowerLow, now));
                    }
                    _ if has_downstream => {
                        out.extend(self.interior_handoff(group, AlarmKind::PowerLow, now));
                    }
                    _ => {
                        // A leaf's death breaks nothing else; no handoff.
                    }
                }
            }
            if !in_any_tree && self.power_handled.insert(GroupId(u32::MAX)) {
                // Not serving any tree: a bare advisory to the neighborhood.
                let header = self.header(1, now);
                out.push(Action::Broadcast {
                    packet: Packet {
                        header,
                        body: PacketBody::Alarm {
                            group: GroupId(u32::MAX),
                            kind: AlarmKind::PowerLow,
                            successor: None,
                        },
                    },
                });
            }
        }
        // A root beacons so its backup and children can tell silence from
        // death.
        if is_root {
            let k = self.config.k;
            let header = self.header(k, now);
            out.push(Action::Broadcast {
                packet: Packet {
                    header,
                    body: PacketBody::Locn { pos: self.pos },
                },
            });
            self.last_advertised = Some(self.pos);
        }
        let period = if is_root {
            self.config.power_check_period / 2
        } else {
            self.config.power_check_period
        };
        out.push(Action::SetTimer {
            kind: TimerKind::PowerCheck,
            delay: period.max(1),
        });
        out
    }
}
