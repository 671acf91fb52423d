//! Control and data packets with a bit-exact binary codec.
//!
//! The canonical layout is little-endian: header fields in declared order
//! (type, seq, src, origin, ttl, timestamp), then body fields in declared
//! order. Positions are two IEEE-754 doubles, booleans one byte, lists are
//! length-prefixed with a 16-bit count. Traces record packets re-encoded
//! through this codec so byte counts are reproducible.

use crate::geometry::Position;
use crate::Millis;
use thiserror::Error;

/// Node identity. `0xFFFF_FFFF` is reserved for broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const BROADCAST: NodeId = NodeId(u32::MAX);
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if *self == NodeId::BROADCAST {
            write!(f, "*")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Multicast group identity. A distinct namespace from [`NodeId`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(pub u32);

impl std::fmt::Display for GroupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Message type tags. Frozen so traces stay stable.
pub const TYPE_LOCN: u8 = 1;
pub const TYPE_LACK: u8 = 2;
pub const TYPE_MGREQ: u8 = 3;
pub const TYPE_MGRPL: u8 = 4;
pub const TYPE_GRAFT: u8 = 5;
pub const TYPE_ALARM: u8 = 6;
pub const TYPE_LEAVE: u8 = 7;
pub const TYPE_TREE_UPDATE: u8 = 8;
pub const TYPE_STOP_SEARCH: u8 = 9;
pub const TYPE_DATA: u8 = 10;

/// Why an alarm was raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmKind {
    /// The sender is about to leave the tree; `successor` inherits its links.
    Leaving,
    /// The sender's battery fell below threshold; links are handed off early.
    PowerLow,
    /// The sender (a primary root) designates `successor` as its backup root.
    RootHandoff,
}

impl AlarmKind {
    fn to_byte(self) -> u8 {
        match self {
            AlarmKind::Leaving => 1,
            AlarmKind::PowerLow => 2,
            AlarmKind::RootHandoff => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(AlarmKind::Leaving),
            2 => Some(AlarmKind::PowerLow),
            3 => Some(AlarmKind::RootHandoff),
            _ => None,
        }
    }
}

/// Fixed per-packet header.
///
/// `src` is the transmitting hop and changes on every retransmission;
/// `origin` is the node that created the packet and never changes, so
/// `(origin, seq)` identifies a packet for duplicate suppression. `ttl` is
/// decremented on each retransmission; a packet at ttl 0 is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketHeader {
    pub seq: u32,
    pub src: NodeId,
    pub origin: NodeId,
    pub ttl: u8,
    pub timestamp: Millis,
}

/// Packet payloads, one variant per message type.
#[derive(Debug, Clone, PartialEq)]
pub enum PacketBody {
    /// Position advertisement, zone-broadcast on entry or significant moves.
    Locn { pos: Position },
    /// Acknowledgement of a LOCN, unicast back to its originator.
    Lack {
        ack_pos: Position,
        src: NodeId,
        src_pos: Position,
    },
    /// Group search. `join_flag` distinguishes a join request from a
    /// data-routing search.
    Mgreq {
        group: GroupId,
        rq: NodeId,
        rq_pos: Position,
        join_flag: bool,
    },
    /// Search reply carrying a tree member and its position.
    Mgrpl {
        group: GroupId,
        tm: NodeId,
        tm_pos: Position,
        rq: NodeId,
        rq_pos: Position,
    },
    /// Activates the tree link between `from` and `to`.
    Graft {
        group: GroupId,
        from: NodeId,
        to: NodeId,
    },
    /// Preventive-maintenance announcement.
    Alarm {
        group: GroupId,
        kind: AlarmKind,
        successor: Option<NodeId>,
    },
    /// Tree departure of a leaf or plain node.
    Leave { group: GroupId },
    /// Root-ward uplink chain, appended to at each relay.
    TreeUpdate { group: GroupId, path: Vec<NodeId> },
    /// Tells zone nodes to drop cached search state for (group, rq).
    StopSearch { group: GroupId, rq: NodeId },
    /// Application payload.
    Data { group: GroupId, payload: Vec<u8> },
}

impl PacketBody {
    pub fn msg_type(&self) -> u8 {
        match self {
            PacketBody::Locn { .. } => TYPE_LOCN,
            PacketBody::Lack { .. } => TYPE_LACK,
            PacketBody::Mgreq { .. } => TYPE_MGREQ,
            PacketBody::Mgrpl { .. } => TYPE_MGRPL,
            PacketBody::Graft { .. } => TYPE_GRAFT,
            PacketBody::Alarm { .. } => TYPE_ALARM,
            PacketBody::Leave { .. } => TYPE_LEAVE,
            PacketBody::TreeUpdate { .. } => TYPE_TREE_UPDATE,
            PacketBody::StopSearch { .. } => TYPE_STOP_SEARCH,
            PacketBody::Data { .. } => TYPE_DATA,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            PacketBody::Locn { .. } => "LOCN",
            PacketBody::Lack { .. } => "LACK",
            PacketBody::Mgreq { .. } => "MGREQ",
            PacketBody::Mgrpl { .. } => "MGRPL",
            PacketBody::Graft { .. } => "GRAFT",
            PacketBody::Alarm { .. } => "ALARM",
            PacketBody::Leave { .. } => "LEAVE",
            PacketBody::TreeUpdate { .. } => "TREE_UPDATE",
            PacketBody::StopSearch { .. } => "STOP_SEARCH",
            PacketBody::Data { .. } => "DATA",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub header: PacketHeader,
    pub body: PacketBody,
}

impl Packet {
    /// Structural invariants that must hold before a packet goes on the air.
    pub fn validate(&self) -> Result<(), WireError> {
        match &self.body {
            PacketBody::TreeUpdate { path, .. } => {
                if path.is_empty() {
                    return Err(WireError::InvalidPacket("empty tree-update path"));
                }
                let mut sorted = path.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != path.len() {
                    return Err(WireError::InvalidPacket("duplicate id in tree-update path"));
                }
            }
            PacketBody::Data { payload, .. } => {
                if payload.len() > u16::MAX as usize {
                    return Err(WireError::InvalidPacket("payload exceeds 16-bit length"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("invalid packet: {0}")]
    InvalidPacket(&'static str),
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_pos(out: &mut Vec<u8>, p: Position) {
    out.extend_from_slice(&p.x.to_le_bytes());
    out.extend_from_slice(&p.y.to_le_bytes());
}

/// Encodes a packet into its canonical byte layout.
pub fn encode(p: &Packet) -> Result<Vec<u8>, WireError> {
    p.validate()?;
    let mut out = Vec::with_capacity(64);
    out.push(p.body.msg_type());
    put_u32(&mut out, p.header.seq);
    put_u32(&mut out, p.header.src.0);
    put_u32(&mut out, p.header.origin.0);
    out.push(p.header.ttl);
    put_u64(&mut out, p.header.timestamp);
    match &p.body {
        PacketBody::Locn { pos } => put_pos(&mut out, *pos),
        PacketBody::Lack {
            ack_pos,
            src,
            src_pos,
        } => {
            put_pos(&mut out, *ack_pos);
            put_u32(&mut out, src.0);
            put_pos(&mut out, *src_pos);
        }
        PacketBody::Mgreq {
            group,
            rq,
            rq_pos,
            join_flag,
        } => {
            put_u32(&mut out, group.0);
            put_u32(&mut out, rq.0);
            put_pos(&mut out, *rq_pos);
            out.push(u8::from(*join_flag));
        }
        PacketBody::Mgrpl {
            group,
            tm,
            tm_pos,
            rq,
            rq_pos,
        } => {
            put_u32(&mut out, group.0);
            put_u32(&mut out, tm.0);
            put_pos(&mut out, *tm_pos);
            put_u32(&mut out, rq.0);
            put_pos(&mut out, *rq_pos);
        }
        PacketBody::Graft { group, from, to } => {
            put_u32(&mut out, group.0);
            put_u32(&mut out, from.0);
            put_u32(&mut out, to.0);
        }
        PacketBody::Alarm {
            group,
            kind,
            successor,
        } => {
            put_u32(&mut out, group.0);
            out.push(kind.to_byte());
            match successor {
                Some(s) => {
                    out.push(1);
                    put_u32(&mut out, s.0);
                }
                None => out.push(0),
            }
        }
        PacketBody::Leave { group } => put_u32(&mut out, group.0),
        PacketBody::TreeUpdate { group, path } => {
            put_u32(&mut out, group.0);
            put_u16(&mut out, path.len() as u16);
            for id in path {
                put_u32(&mut out, id.0);
            }
        }
        PacketBody::StopSearch { group, rq } => {
            put_u32(&mut out, group.0);
            put_u32(&mut out, rq.0);
        }
        PacketBody::Data { group, payload } => {
            put_u32(&mut out, group.0);
            put_u16(&mut out, payload.len() as u16);
            out.extend_from_slice(payload);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.at + n > self.buf.len() {
            return Err(WireError::MalformedPacket("truncated"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn pos(&mut self) -> Result<Position, WireError> {
        let x = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        let y = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        Position::new(x, y).ok_or(WireError::MalformedPacket("non-finite position"))
    }

    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

/// Decodes a canonical byte sequence back into a packet.
///
/// Framing is strict: truncated input, unknown message types and trailing
/// bytes are all rejected.
pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut r = Reader::new(bytes);
    let msg_type = r.u8()?;
    let header = PacketHeader {
        seq: r.u32()?,
        src: NodeId(r.u32()?),
        origin: NodeId(r.u32()?),
        ttl: r.u8()?,
        timestamp: r.u64()?,
    };
    let body = match msg_type {
        TYPE_LOCN => PacketBody::Locn { pos: r.pos()? },
        TYPE_LACK => PacketBody::Lack {
            ack_pos: r.pos()?,
            src: NodeId(r.u32()?),
            src_pos: r.pos()?,
        },
        TYPE_MGREQ => PacketBody::Mgreq {
            group: GroupId(r.u32()?),
            rq: NodeId(r.u32()?),
            rq_pos: r.pos()?,
            join_flag: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(WireError::MalformedPacket("bad join flag")),
            },
        },
        TYPE_MGRPL => PacketBody::Mgrpl {
            group: GroupId(r.u32()?),
            tm: NodeId(r.u32()?),
            tm_pos: r.pos()?,
            rq: NodeId(r.u32()?),
            rq_pos: r.pos()?,
        },
        TYPE_GRAFT => PacketBody::Graft {
            group: GroupId(r.u32()?),
            from: NodeId(r.u32()?),
            to: NodeId(r.u32()?),
        },
        TYPE_ALARM => PacketBody::Alarm {
            group: GroupId(r.u32()?),
            kind: AlarmKind::from_byte(r.u8()?)
                .ok_or(WireError::MalformedPacket("unknown alarm kind"))?,
            successor: match r.u8()? {
                0 => None,
                1 => Some(NodeId(r.u32()?)),
                _ => return Err(WireError::MalformedPacket("bad successor flag")),
            },
        },
        TYPE_LEAVE => PacketBody::Leave {
            group: GroupId(r.u32()?),
        },
        TYPE_TREE_UPDATE => {
            let group = GroupId(r.u32()?);
            let n = r.u16()? as usize;
            let mut path = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                path.push(NodeId(r.u32()?));
            }
            PacketBody::TreeUpdate { group, path }
        }
        TYPE_STOP_SEARCH => PacketBody::StopSearch {
            group: GroupId(r.u32()?),
            rq: NodeId(r.u32()?),
        },
        TYPE_DATA => {
            let group = GroupId(r.u32()?);
            let n = r.u16()? as usize;
            let payload = r.take(n)?.to_vec();
            PacketBody::Data { group, payload }
        }
        _ => return Err(WireError::MalformedPacket("unknown message type")),
    };
    if !r.done() {
        return Err(WireError::MalformedPacket("trailing bytes"));
    }
    let pkt = Packet { header, body };
    pkt.validate()
        .map_err(|_| WireError::MalformedPacket("invariant violation"))?;
    Ok(pkt)
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn locn_packet() -> Packet {
        Packet {
            header: PacketHeader {
                seq: 1,
                src: NodeId(1),
                origin: NodeId(1),
                ttl: 2,
                timestamp: 0,
            },
            body: PacketBody::Locn {
                pos: Position::new(0.0, 0.0).unwrap(),
            },
        }
    }

    #[test]
    fn locn_layout() {
        let bytes = encode(&locn_packet()).unwrap();
        // type(1) seq(4) src(4) origin(4) ttl(1) timestamp(8) = 22-byte header
        // followed by a 16-byte position body.
        assert_eq!(bytes.len(), 22 + 16);
        assert_eq!(bytes[0], TYPE_LOCN);
        assert_eq!(&bytes[1..5], &1u32.to_le_bytes());
        assert_eq!(bytes[13], 2); // ttl sits after type+seq+src+origin
    }

    #[test]
    fn empty_tree_update_rejected_before_encoding() {
        let pkt = Packet {
            header: locn_packet().header,
            body: PacketBody::TreeUpdate {
                group: GroupId(9),
                path: vec![],
            },
        };
        assert_eq!(
            encode(&pkt),
            Err(WireError::InvalidPacket("empty tree-update path"))
        );
    }

    #[test]
    fn duplicate_path_rejected() {
        let pkt = Packet {
            header: locn_packet().header,
            body: PacketBody::TreeUpdate {
                group: GroupId(9),
                path: vec![NodeId(3), NodeId(3)],
            },
        };
        assert!(encode(&pkt).is_err());
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(decode(&[]), Err(WireError::MalformedPacket(_))));
    }

    #[test]
    fn unknown_type_is_malformed() {
        let mut bytes = encode(&locn_packet()).unwrap();
        bytes[0] = 99;
        assert!(matches!(decode(&bytes), Err(WireError::MalformedPacket(_))));
    }

    #[test]
    fn trailing_byte_is_malformed() {
        let mut bytes = encode(&locn_packet()).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(WireError::MalformedPacket(_))));
    }

    #[test]
    fn every_truncation_is_malformed() {
        let bytes = encode(&locn_packet()).unwrap();
        for n in 0..bytes.len() {
            assert!(
                matches!(decode(&bytes[..n]), Err(WireError::MalformedPacket(_))),
                "prefix of length {} decoded",
                n
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn round_trip(pkt in testgen::arb_packet()) {
            let bytes = encode(&pkt).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(pkt, back);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode(&bytes);
        }

        #[test]
        fn fixed_shape_size_constant(a in testgen::arb_packet(), b in testgen::arb_packet()) {
            // Two packets of the same variant and equal list lengths encode to
            // the same number of bytes.
            let same_shape = match (&a.body, &b.body) {
                (PacketBody::TreeUpdate { path: p1, .. }, PacketBody::TreeUpdate { path: p2, .. }) =>
                    p1.len() == p2.len(),
                (PacketBody::Data { payload: d1, .. }, PacketBody::Data { payload: d2, .. }) =>
                    d1.len() == d2.len(),
                (PacketBody::Alarm { successor: s1, .. }, PacketBody::Alarm { successor: s2, .. }) =>
                    s1.is_some() == s2.is_some(),
                (x, y) => x.msg_type() == y.msg_type(),
            };
            if same_shape && a.body.msg_type() == b.body.msg_type() {
                prop_assert_eq!(encode(&a).unwrap().len(), encode(&b).unwrap().len());
            }
        }
    }
}
