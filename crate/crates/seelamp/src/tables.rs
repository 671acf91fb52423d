//! The three per-node soft-state tables: zone neighbors, multicast tree
//! membership, and cached search requests. Entries carry timestamps and are
//! expired by age; lookups use frozen tie-breaking (freshest entry first,
//! then lowest id) so every run is deterministic.

use std::collections::BTreeMap;

use crate::geometry::Position;
use crate::wire::{GroupId, NodeId};
use crate::Millis;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    /// The table is full and the candidate entry does not rate eviction.
    #[error("table capacity exceeded")]
    CapacityExceeded,
    #[error("invalid entry: {0}")]
    InvalidEntry(&'static str),
}

/// Outcome of an upsert against a keyed, timestamped table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    /// The incoming entry was older (or no better) than what is stored.
    RejectedStale,
}

/// One zone-neighbor routing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ZntEntry {
    pub neighbor: NodeId,
    pub pos: Position,
    pub next_hop: NodeId,
    pub hop_count: u8,
    pub updated_at: Millis,
    /// Overheard beyond the zone radius; first in line for eviction.
    pub non_zonal: bool,
    /// Speed estimate from successive position reports, used when
    /// screening backup-root candidates.
    pub observed_speed: f64,
}

/// Zone neighbor table: at most one entry per neighbor, capacity-bounded.
#[derive(Debug, Clone, Default)]
pub struct ZoneNeighborTable {
    entries: BTreeMap<NodeId, ZntEntry>,
    capacity: usize,
}

pub const ZNT_CAPACITY: usize = 256;
pub const MTT_CAPACITY: usize = 64;
pub const RT_CAPACITY: usize = 256;

impl ZoneNeighborTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&ZntEntry> {
        self.entries.get(&neighbor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ZntEntry> {
        self.entries.values()
    }

    pub fn remove(&mut self, neighbor: NodeId) -> Option<ZntEntry> {
        self.entries.remove(&neighbor)
    }

    /// Bumps the freshness of an existing entry without any position claim.
    /// Hearing a node transmit proves it is still around.
    pub fn refresh(&mut self, neighbor: NodeId, now: Millis) {
        if let Some(e) = self.entries.get_mut(&neighbor) {
            if e.updated_at < now {
                e.updated_at = now;
            }
        }
    }

    /// Inserts or updates a neighbor entry.
    ///
    /// An existing entry for the same neighbor is replaced iff the incoming
    /// one is strictly newer, or carries an equal timestamp with a strictly
    /// smaller hop count (a shorter route learned from another copy of the
    /// same flood). Older entries are rejected as stale.
    ///
    /// When the table is full, a zonal entry evicts the most evictable
    /// occupant (non-zonal first, then oldest, then highest id); a non-zonal
    /// entry never evicts and fails with [`TableError::CapacityExceeded`].
    pub fn upsert(&mut self, mut entry: ZntEntry) -> Result<UpsertOutcome, TableError> {
        if entry.hop_count == 0 {
            return Err(TableError::InvalidEntry("hop count must be positive"));
        }
        if entry.hop_count == 1 && entry.next_hop != entry.neighbor {
            return Err(TableError::InvalidEntry("1-hop entry must be direct"));
        }
        if let Some(existing) = self.entries.get(&entry.neighbor) {
            let newer = entry.updated_at > existing.updated_at;
            let shorter_tie =
                entry.updated_at == existing.updated_at && entry.hop_count < existing.hop_count;
            if newer || shorter_tie {
                if entry.updated_at > existing.updated_at {
                    let dt = (entry.updated_at - existing.updated_at) as f64 / 1000.0;
                    let moved = crate::geometry::distance(existing.pos, entry.pos);
                    entry.observed_speed = moved / dt;
                }
                self.entries.insert(entry.neighbor, entry);
                return Ok(UpsertOutcome::Updated);
            }
            return Ok(UpsertOutcome::RejectedStale);
        }
        if self.entries.len() >= self.capacity {
            if entry.non_zonal {
                return Err(TableError::CapacityExceeded);
            }
            let victim = self
                .entries
                .values()
                .max_by_key(|e| (e.non_zonal, std::cmp::Reverse(e.updated_at), e.neighbor))
                .map(|e| e.neighbor);
            if let Some(v) = victim {
                self.entries.remove(&v);
            }
        }
        self.entries.insert(entry.neighbor, entry);
        Ok(UpsertOutcome::Inserted)
    }

    /// Removes every entry older than `max_age` and returns the removed ids.
    pub fn expire(&mut self, now: Millis, max_age: Millis) -> Vec<NodeId> {
        let stale: Vec<NodeId> = self
            .entries
            .values()
            .filter(|e| now.saturating_sub(e.updated_at) > max_age)
            .map(|e| e.neighbor)
            .collect();
        for id in &stale {
            self.entries.remove(id);
        }
        stale
    }

    /// All neighbors within the zone radius.
    pub fn zone_members(&self, k: u8) -> Vec<NodeId> {
        self.entries
            .values()
            .filter(|e| e.hop_count <= k)
            .map(|e| e.neighbor)
            .collect()
    }

    /// Entries exactly `k` hops away. When none exist, falls back to the
    /// entries at the largest hop count present within the zone.
    pub fn border_nodes(&self, k: u8) -> Vec<&ZntEntry> {
        let at_k: Vec<&ZntEntry> = self
            .entries
            .values()
            .filter(|e| e.hop_count == k)
            .collect();
        if !at_k.is_empty() {
            return at_k;
        }
        let max_present = self
            .entries
            .values()
            .filter(|e| e.hop_count <= k)
            .map(|e| e.hop_count)
            .max();
        match max_present {
            Some(m) => self
                .entries
                .values()
                .filter(|e| e.hop_count == m)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Direction of a tree link relative to the group leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    Upstream,
    Downstream,
}

/// One next hop on the shared tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeHop {
    pub hop: NodeId,
    pub direction: LinkDirection,
    pub activated: bool,
}

/// One multicast tree table entry: this node's view of its place in the
/// shared tree of `group`.
#[derive(Debug, Clone, PartialEq)]
pub struct MttEntry {
    pub group: GroupId,
    pub leader: NodeId,
    pub hop_count_to_leader: u32,
    pub next_hops: Vec<TreeHop>,
    pub updated_at: Millis,
}

impl MttEntry {
    pub fn upstream(&self) -> Option<&TreeHop> {
        self.next_hops
            .iter()
            .find(|h| h.direction == LinkDirection::Upstream)
    }

    pub fn activated_hops(&self) -> impl Iterator<Item = &TreeHop> {
        self.next_hops.iter().filter(|h| h.activated)
    }

    /// Replaces or inserts the hop, keeping at most one entry per hop id and
    /// at most one upstream hop.
    pub fn set_hop(&mut self, hop: NodeId, direction: LinkDirection, activated: bool) {
        if direction == LinkDirection::Upstream {
            self.next_hops
                .retain(|h| h.direction != LinkDirection::Upstream || h.hop == hop);
        }
        if let Some(existing) = self.next_hops.iter_mut().find(|h| h.hop == hop) {
            existing.direction = direction;
            existing.activated = activated;
        } else {
            self.next_hops.push(TreeHop {
                hop,
                direction,
                activated,
            });
        }
    }

    pub fn remove_hop(&mut self, hop: NodeId) -> bool {
        let before = self.next_hops.len();
        self.next_hops.retain(|h| h.hop != hop);
        self.next_hops.len() != before
    }

    fn validate(&self) -> Result<(), TableError> {
        let upstream_count = self
            .next_hops
            .iter()
            .filter(|h| h.direction == LinkDirection::Upstream)
            .count();
        if upstream_count > 1 {
            return Err(TableError::InvalidEntry("multiple upstream hops"));
        }
        if self.hop_count_to_leader == 0 && upstream_count != 0 {
            return Err(TableError::InvalidEntry("leader entry with upstream hop"));
        }
        let mut ids: Vec<NodeId> = self.next_hops.iter().map(|h| h.hop).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.next_hops.len() {
            return Err(TableError::InvalidEntry("duplicate next hop"));
        }
        Ok(())
    }
}

/// Multicast tree table: one entry per group the node serves.
#[derive(Debug, Clone, Default)]
pub struct MulticastTreeTable {
    entries: BTreeMap<GroupId, MttEntry>,
}

impl MulticastTreeTable {
    pub fn get(&self, group: GroupId) -> Option<&MttEntry> {
        self.entries.get(&group)
    }

    pub fn get_mut(&mut self, group: GroupId) -> Option<&mut MttEntry> {
        self.entries.get_mut(&group)
    }

    pub fn insert(&mut self, entry: MttEntry) -> Result<(), TableError> {
        entry.validate()?;
        if self.entries.len() >= MTT_CAPACITY && !self.entries.contains_key(&entry.group) {
            return Err(TableError::CapacityExceeded);
        }
        self.entries.insert(entry.group, entry);
        Ok(())
    }

    pub fn remove(&mut self, group: GroupId) -> Option<MttEntry> {
        self.entries.remove(&group)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MttEntry> {
        self.entries.values()
    }

    pub fn groups(&self) -> Vec<GroupId> {
        self.entries.keys().copied().collect()
    }
}

/// One cached request: a tree member known for a group, with its last
/// advertised position.
#[derive(Debug, Clone, PartialEq)]
pub struct RtEntry {
    pub group: GroupId,
    pub tree_member: NodeId,
    pub tm_pos: Position,
    pub updated_at: Millis,
}

/// Request table: one entry per (group, member) pair, newest timestamp wins.
#[derive(Debug, Clone, Default)]
pub struct RequestTable {
    entries: BTreeMap<(GroupId, NodeId), RtEntry>,
}

impl RequestTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn upsert(&mut self, entry: RtEntry) -> UpsertOutcome {
        let key = (entry.group, entry.tree_member);
        if let Some(existing) = self.entries.get(&key) {
            if entry.updated_at >= existing.updated_at {
                self.entries.insert(key, entry);
                return UpsertOutcome::Updated;
            }
            return UpsertOutcome::RejectedStale;
        }
        if self.entries.len() >= RT_CAPACITY {
            let victim = self
                .entries
                .values()
                .min_by_key(|e| (e.updated_at, e.tree_member, e.group))
                .map(|e| (e.group, e.tree_member));
            if let Some(v) = victim {
                self.entries.remove(&v);
            }
        }
        self.entries.insert(key, entry);
        UpsertOutcome::Inserted
    }

    /// Freshest entry for the group; ties broken by lowest member id.
    pub fn best_for_group(&self, group: GroupId) -> Option<&RtEntry> {
        self.entries
            .values()
            .filter(|e| e.group == group)
            .max_by_key(|e| (e.updated_at, std::cmp::Reverse(e.tree_member)))
    }

    pub fn entries_for_group(&self, group: GroupId) -> impl Iterator<Item = &RtEntry> {
        self.entries.values().filter(move |e| e.group == group)
    }

    pub fn remove_member(&mut self, member: NodeId) {
        self.entries.retain(|(_, m), _| *m != member);
    }

    pub fn expire(&mut self, now: Millis, max_age: Millis) {
        self.entries
            .retain(|_, e| now.saturating_sub(e.updated_at) <= max_age);
    }
}

/// Result of searching for a group across the tree and request tables.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupLookup<'a> {
    /// This node is on the tree; its own entry answers the search.
    InTree(&'a MttEntry),
    /// A remote tree member is known from the request cache.
    Known(&'a RtEntry),
    Unknown,
}

/// Searches the tree table first, then the request table, mirroring the
/// join procedure's lookup order.
pub fn lookup_group_member<'a>(
    mtt: &'a MulticastTreeTable,
    rt: &'a RequestTable,
    group: GroupId,
) -> GroupLookup<'a> {
    if let Some(entry) = mtt.get(group) {
        return GroupLookup::InTree(entry);
    }
    if let Some(entry) = rt.best_for_group(group) {
        return GroupLookup::Known(entry);
    }
    GroupLookup::Unknown
}
