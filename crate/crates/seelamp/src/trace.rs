//! Line-oriented trace logs: one record per line, key=value fields in a
//! documented order, a header carrying the format version, scenario hash and
//! seed. Byte-identical traces are the determinism contract, so rendering is
//! canonical and consumers hard-fail on version mismatches.

use crate::wire::{GroupId, NodeId};
use crate::Millis;
use thiserror::Error;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace line {0}: {1}")]
    Malformed(usize, &'static str),
    #[error("trace format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("missing trace header")]
    MissingHeader,
}

/// One logged simulation event.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Tx {
        t: Millis,
        node: NodeId,
        kind: String,
        to: NodeId,
        origin: NodeId,
        seq: u32,
        ttl: u8,
        bytes: u32,
    },
    Rx {
        t: Millis,
        node: NodeId,
        kind: String,
        from: NodeId,
        origin: NodeId,
        seq: u32,
        bytes: u32,
        dest: bool,
    },
    Deliver {
        t: Millis,
        node: NodeId,
        group: GroupId,
        origin: NodeId,
        seq: u32,
        bytes: u32,
    },
    /// Application-level send intent with the god's-eye receiver set.
    AppSend {
        t: Millis,
        node: NodeId,
        group: GroupId,
        members: Vec<NodeId>,
    },
    GodJoin {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    GodLeave {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    Role {
        t: Millis,
        node: NodeId,
        group: GroupId,
        role: String,
    },
    Dead {
        t: Millis,
        node: NodeId,
        reason: String,
    },
    Repair {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    Failover {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    Degraded {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    Unreachable {
        t: Millis,
        node: NodeId,
        group: GroupId,
    },
    Move {
        t: Millis,
        node: NodeId,
        x: f64,
        y: f64,
    },
    /// Per-node energy ledger, emitted once at the end of a run.
    Energy {
        t: Millis,
        node: NodeId,
        consumed_nj: u64,
        battery_nj: u64,
        tx_bytes: u64,
        rx_bytes: u64,
        idle_ms: u64,
    },
    /// One zone-table entry, dumped on request for oracle comparison.
    Znt {
        t: Millis,
        node: NodeId,
        neighbor: NodeId,
        next_hop: NodeId,
        hops: u8,
        x: f64,
        y: f64,
    },
}

impl TraceRecord {
    pub fn t(&self) -> Millis {
        match self {
            TraceRecord::Tx { t, .. }
            | TraceRecord::Rx { t, .. }
            | TraceRecord::Deliver { t, .. }
            | TraceRecord::AppSend { t, .. }
            | TraceRecord::GodJoin { t, .. }
            | TraceRecord::GodLeave { t, .. }
            | TraceRecord::Role { t, .. }
            | TraceRecord::Dead { t, .. }
            | TraceRecord::Repair { t, .. }
            | TraceRecord::Failover { t, .. }
            | TraceRecord::Degraded { t, .. }
            | TraceRecord::Unreachable { t, .. }
            | TraceRecord::Move { t, .. }
            | TraceRecord::Energy { t, .. }
            | TraceRecord::Znt { t, .. } => *t,
        }
    }

    fn render(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            TraceRecord::Tx {
                t,
                node,
                kind,
                to,
                origin,
                seq,
                ttl,
                bytes,
            } => {
                let _ = write!(
                    out,
                    "t={t} node={node} ev=TX kind={kind} to={to} origin={origin} seq={seq} ttl={ttl} bytes={bytes}"
                );
            }
            TraceRecord::Rx {
                t,
                node,
                kind,
                from,
                origin,
                seq,
                bytes,
                dest,
            } => {
                let _ = write!(
                    out,
                    "t={t} node={node} ev=RX kind={kind} from={from} origin={origin} seq={seq} bytes={bytes} dest={}",
                    u8::from(*dest)
                );
            }
            TraceRecord::Deliver {
                t,
                node,
                group,
                origin,
                seq,
                bytes,
            } => {
                let _ = write!(
                    out,
                    "t={t} node={node} ev=DELIVER group={group} origin={origin} seq={seq} bytes={bytes}"
                );
            }
            TraceRecord::AppSend {
                t,
                node,
                group,
                members,
            } => {
                let ids: Vec<String> = members.iter().map(|m| m.0.to_string()).collect();
                let _ = write!(
                    out,
                    "t={t} node={node} ev=APPSEND group={group} members={}",
                    ids.join(",")
                );
            }
            TraceRecord::GodJoin { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=GJOIN group={group}");
            }
            TraceRecord::GodLeave { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=GLEAVE group={group}");
            }
            TraceRecord::Role {
                t,
                node,
                group,
                role,
            } => {
                let _ = write!(out, "t={t} node={node} ev=ROLE group={group} role={role}");
            }
            TraceRecord::Dead { t, node, reason } => {
                let _ = write!(out, "t={t} node={node} ev=DEAD reason={reason}");
            }
            TraceRecord::Repair { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=REPAIR group={group}");
            }
            TraceRecord::Failover { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=FAILOVER group={group}");
            }
            TraceRecord::Degraded { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=DEGRADED group={group}");
            }
            TraceRecord::Unreachable { t, node, group } => {
                let _ = write!(out, "t={t} node={node} ev=UNREACHABLE group={group}");
            }
            TraceRecord::Move { t, node, x, y } => {
                let _ = write!(out, "t={t} node={node} ev=MOVE x={x} y={y}");
            }
            TraceRecord::Energy {
                t,
                node,
                consumed_nj,
                battery_nj,
                tx_bytes,
                rx_bytes,
                idle_ms,
            } => {
                let _ = write!(
                    out,
                    "t={t} node={node} ev=ENERGY consumed_nj={consumed_nj} battery_nj={battery_nj} tx_bytes={tx_bytes} rx_bytes={rx_bytes} idle_ms={idle_ms}"
                );
            }
            TraceRecord::Znt {
                t,
                node,
                neighbor,
                next_hop,
                hops,
                x,
                y,
            } => {
                let _ = write!(
                    out,
                    "t={t} node={node} ev=ZNT neighbor={neighbor} next_hop={next_hop} hops={hops} x={x} y={y}"
                );
            }
        }
        out.push('\n');
    }
}

/// A complete run log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub version: u32,
    pub scenario_hash: u64,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn new(scenario_hash: u64, seed: u64) -> Self {
        Self {
            version: TRACE_FORMAT_VERSION,
            scenario_hash,
            seed,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    /// Canonical text form; byte-identical for identical runs.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(64 + self.records.len() * 48);
        use std::fmt::Write;
        let _ = writeln!(
            out,
            "#seelamp-trace v{} hash={:016x} seed={}",
            self.version, self.scenario_hash, self.seed
        );
        for r in &self.records {
            r.render(&mut out);
        }
        out
    }

    /// Parses a rendered trace, checking the format version first.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TraceError::MissingHeader)?;
        let rest = header
            .strip_prefix("#seelamp-trace v")
            .ok_or(TraceError::MissingHeader)?;
        let mut parts = rest.split(' ');
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or(TraceError::Malformed(1, "bad version"))?;
        if version != TRACE_FORMAT_VERSION {
            return Err(TraceError::VersionMismatch {
                found: version,
                expected: TRACE_FORMAT_VERSION,
            });
        }
        let hash = parts
            .next()
            .and_then(|v| v.strip_prefix("hash="))
            .and_then(|v| u64::from_str_radix(v, 16).ok())
            .ok_or(TraceError::Malformed(1, "bad hash"))?;
        let seed = parts
            .next()
            .and_then(|v| v.strip_prefix("seed="))
            .and_then(|v| v.parse().ok())
            .ok_or(TraceError::Malformed(1, "bad seed"))?;
        let mut log = TraceLog {
            version,
            scenario_hash: hash,
            seed,
            records: Vec::new(),
        };
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            log.records.push(parse_record(idx + 1, line)?);
        }
        Ok(log)
    }
}

fn parse_record(lineno: usize, line: &str) -> Result<TraceRecord, TraceError> {
    let mut fields = std::collections::BTreeMap::new();
    for part in line.split(' ') {
        let (k, v) = part
            .split_once('=')
            .ok_or(TraceError::Malformed(lineno, "field without '='"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str, TraceError> {
        fields
            .get(k)
            .copied()
            .ok_or(TraceError::Malformed(lineno, "missing field"))
    };
    let t: Millis = get("t")?
        .parse()
        .map_err(|_| TraceError::Malformed(lineno, "bad t"))?;
    let node = parse_node(get("node")?).ok_or(TraceError::Malformed(lineno, "bad node"))?;
    let num = |k: &str| -> Result<u64, TraceError> {
        get(k)?
            .parse()
            .map_err(|_| TraceError::Malformed(lineno, "bad number"))
    };
    let group = |k: &str| -> Result<GroupId, TraceError> {
        Ok(GroupId(num(k)? as u32))
    };
    match get("ev")? {
        "TX" => Ok(TraceRecord::Tx {
            t,
            node,
            kind: get("kind")?.to_string(),
            to: parse_node(get("to")?).ok_or(TraceError::Malformed(lineno, "bad to"))?,
            origin: parse_node(get("origin")?).ok_or(TraceError::Malformed(lineno, "bad origin"))?,
            seq: num("seq")? as u32,
            ttl: num("ttl")? as u8,
            bytes: num("bytes")? as u32,
        }),
        "RX" => Ok(TraceRecord::Rx {
            t,
            node,
            kind: get("kind")?.to_string(),
            from: parse_node(get("from")?).ok_or(TraceError::Malformed(lineno, "bad from"))?,
            origin: parse_node(get("origin")?).ok_or(TraceError::Malformed(lineno, "bad origin"))?,
            seq: num("seq")? as u32,
            bytes: num("bytes")? as u32,
            dest: get("dest")? == "1",
        }),
        "DELIVER" => Ok(TraceRecord::Deliver {
            t,
            node,
            group: group("group")?,
            origin: parse_node(get("origin")?).ok_or(TraceError::Malformed(lineno, "bad origin"))?,
            seq: num("seq")? as u32,
            bytes: num("bytes")? as u32,
        }),
        "APPSEND" => {
            let members = get("members")?;
            let members: Vec<NodeId> = if members.is_empty() {
                Vec::new()
            } else {
                members
                    .split(',')
                    .map(|m| m.parse::<u32>().map(NodeId))
                    .collect::<Result<_, _>>()
                    .map_err(|_| TraceError::Malformed(lineno, "bad members"))?
            };
            Ok(TraceRecord::AppSend {
                t,
                node,
                group: group("group")?,
                members,
            })
        }
        "GJOIN" => Ok(TraceRecord::GodJoin {
            t,
            node,
            group: group("group")?,
        }),
        "GLEAVE" => Ok(TraceRecord::GodLeave {
            t,
            node,
            group: group("group")?,
        }),
        "ROLE" => Ok(TraceRecord::Role {
            t,
            node,
            group: group("group")?,
            role: get("role")?.to_string(),
        }),
        "DEAD" => Ok(TraceRecord::Dead {
            t,
            node,
            reason: get("reason")?.to_string(),
        }),
        "REPAIR" => Ok(TraceRecord::Repair {
            t,
            node,
            group: group("group")?,
        }),
        "FAILOVER" => Ok(TraceRecord::Failover {
            t,
            node,
            group: group("group")?,
        }),
        "DEGRADED" => Ok(TraceRecord::Degraded {
            t,
            node,
            group: group("group")?,
        }),
        "UNREACHABLE" => Ok(TraceRecord::Unreachable {
            t,
            node,
            group: group("group")?,
        }),
        "MOVE" => Ok(TraceRecord::Move {
            t,
            node,
            x: get("x")?
                .parse()
                .map_err(|_| TraceError::Malformed(lineno, "bad x"))?,
            y: get("y")?
                .parse()
                .map_err(|_| TraceError::Malformed(lineno, "bad y"))?,
        }),
        "ENERGY" => Ok(TraceRecord::Energy {
            t,
            node,
            consumed_nj: num("consumed_nj")?,
            battery_nj: num("battery_nj")?,
            tx_bytes: num("tx_bytes")?,
            rx_bytes: num("rx_bytes")?,
            idle_ms: num("idle_ms")?,
        }),
        "ZNT" => Ok(TraceRecord::Znt {
            t,
            node,
            neighbor: parse_node(get("neighbor")?)
                .ok_or(TraceError::Malformed(lineno, "bad neighbor"))?,
            next_hop: parse_node(get("next_hop")?)
                .ok_or(TraceError::Malformed(lineno, "bad next_hop"))?,
            hops: num("hops")? as u8,
            x: get("x")?
                .parse()
                .map_err(|_| TraceError::Malformed(lineno, "bad x"))?,
            y: get("y")?
                .parse()
                .map_err(|_| TraceError::Malformed(lineno, "bad y"))?,
        }),
        _ => Err(TraceError::Malformed(lineno, "unknown event")),
    }
}

fn parse_node(s: &str) -> Option<NodeId> {
    if s == "*" {
        return Some(NodeId::BROADCAST);
    }
    s.parse::<u32>().ok().map(NodeId)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut log = TraceLog::new(0xdeadbeef, 42);
        log.push(TraceRecord::Tx {
            t: 5,
            node: NodeId(1),
            kind: "LOCN".into(),
            to: NodeId::BROADCAST,
            origin: NodeId(1),
            seq: 1,
            ttl: 2,
            bytes: 38,
        });
        log.push(TraceRecord::AppSend {
            t: 10,
            node: NodeId(2),
            group: GroupId(1),
            members: vec![NodeId(1), NodeId(3)],
        });
        log.push(TraceRecord::Move {
            t: 100,
            node: NodeId(1),
            x: 12.25,
            y: 830.1243567,
        });
        log.push(TraceRecord::Energy {
            t: 1000,
            node: NodeId(1),
            consumed_nj: 123456,
            battery_nj: 999,
            tx_bytes: 38,
            rx_bytes: 0,
            idle_ms: 1000,
        });
        let text = log.render();
        let back = TraceLog::parse(&text).unwrap();
        assert_eq!(log, back);
    }

    #[test]
    fn version_mismatch_is_hard_error() {
        let text = "#seelamp-trace v999 hash=0000000000000000 seed=0\n";
        assert!(matches!(
            TraceLog::parse(text),
            Err(TraceError::VersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn missing_header_rejected() {
        assert!(TraceLog::parse("t=0 node=1 ev=DEAD reason=battery\n").is_err());
    }
}
