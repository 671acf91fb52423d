//! End-to-end protocol flows through the simulation kernel: group founding,
//! zone joins across relays, data delivery both ways, departures with
//! handoff, and root failover.

use seelamp::baselines::ProtocolKind;
use seelamp::geometry::Position;
use seelamp::protocol::{ProtocolConfig, Role};
use seelamp::simkernel::{
    AppEvent, AppEventKind, EnergyModel, MobilityConfig, RadioModel, Sim, SimParams,
};
use seelamp::trace::TraceRecord;
use seelamp::wire::{GroupId, NodeId};

fn p(x: f64, y: f64) -> Position {
    Position::new(x, y).unwrap()
}

fn params(positions: Vec<Position>, end: u64, app: Vec<AppEvent>) -> SimParams {
    SimParams {
        seed: 11,
        area: (1000.0, 1000.0),
        positions,
        radio: RadioModel::default(),
        energy: EnergyModel::default(),
        mobility: MobilityConfig::default(),
        protocol: ProtocolKind::Seelamp,
        protocol_config: ProtocolConfig::default(),
        end_time_ms: end,
        app_events: app,
        check_invariants: true,
        dump_tables: false,
        scenario_hash: 0,
    }
}

fn join(at: u64, node: u32, group: u32) -> AppEvent {
    AppEvent {
        at,
        kind: AppEventKind::Join {
            node: NodeId(node),
            group: GroupId(group),
        },
    }
}

fn send(at: u64, node: u32, group: u32) -> AppEvent {
    AppEvent {
        at,
        kind: AppEventKind::Send {
            node: NodeId(node),
            group: GroupId(group),
            payload_len: 32,
        },
    }
}

fn deliveries(records: &[TraceRecord]) -> Vec<(u64, u32, u32, u32)> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Deliver {
                t, node, origin, seq, ..
            } => Some((*t, node.0, origin.0, *seq)),
            _ => None,
        })
        .collect()
}

fn roles(records: &[TraceRecord]) -> Vec<(u64, u32, String)> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Role { t, node, role, .. } => Some((*t, node.0, role.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn first_joiner_becomes_leader() {
    let result = Sim::new(params(
        vec![p(0.0, 0.0), p(150.0, 0.0)],
        5_000,
        vec![join(500, 0, 1)],
    ))
    .unwrap()
    .run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let roles = roles(&result.trace.records);
    assert!(
        roles
            .iter()
            .any(|(_, node, role)| *node == 0 && role == Role::PrimaryRoot.name()),
        "roles seen: {roles:?}"
    );
}

#[test]
fn isolated_node_still_founds_group() {
    let result = Sim::new(params(vec![p(0.0, 0.0)], 5_000, vec![join(500, 0, 7)]))
        .unwrap()
        .run();
    let roles = roles(&result.trace.records);
    assert!(roles
        .iter()
        .any(|(_, node, role)| *node == 0 && role == "PRIMARY_ROOT"));
}

#[test]
fn two_hop_join_and_bidirectional_delivery() {
    // 0 --- 1 --- 2 in a line; the ends cannot hear each other.
    let result = Sim::new(params(
        vec![p(0.0, 0.0), p(200.0, 0.0), p(400.0, 0.0)],
        20_000,
        vec![
            join(500, 0, 1),
            join(5_000, 2, 1),
            send(10_000, 0, 1),
            send(12_000, 2, 1),
        ],
    ))
    .unwrap()
    .run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let d = deliveries(&result.trace.records);
    assert!(
        d.iter().any(|(_, node, origin, _)| *node == 2 && *origin == 0),
        "leader's payload must reach the far member; deliveries: {d:?}"
    );
    assert!(
        d.iter().any(|(_, node, origin, _)| *node == 0 && *origin == 2),
        "member's payload must reach the leader; deliveries: {d:?}"
    );
    // The relay delivered nothing (not a member), it only forwards.
    assert!(d.iter().all(|(_, node, _, _)| *node != 1));
}

#[test]
fn five_node_group_full_mesh_of_payloads() {
    // A 5-node chain; all five join, everyone sends once after convergence.
    let positions = vec![
        p(0.0, 0.0),
        p(200.0, 0.0),
        p(400.0, 0.0),
        p(600.0, 0.0),
        p(800.0, 0.0),
    ];
    let mut app = vec![
        join(200, 0, 1),
        join(2_000, 1, 1),
        join(3_000, 2, 1),
        join(4_000, 3, 1),
        join(5_000, 4, 1),
    ];
    for (i, node) in (0..5).enumerate() {
        app.push(send(20_000 + (i as u64) * 1_000, node, 1));
    }
    let result = Sim::new(params(positions, 40_000, app)).unwrap().run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let d = deliveries(&result.trace.records);
    for sender in 0..5u32 {
        for receiver in 0..5u32 {
            if sender == receiver {
                continue;
            }
            let copies = d
                .iter()
                .filter(|(_, node, origin, _)| *node == receiver && *origin == sender)
                .count();
            assert_eq!(
                copies, 1,
                "payload from {sender} must reach {receiver} exactly once; got {copies}; all: {d:?}"
            );
        }
    }
}

#[test]
fn leaf_leave_prunes_cleanly() {
    let result = Sim::new(params(
        vec![p(0.0, 0.0), p(200.0, 0.0), p(400.0, 0.0)],
        20_000,
        vec![
            join(500, 0, 1),
            join(3_000, 2, 1),
            AppEvent {
                at: 8_000,
                kind: AppEventKind::Leave {
                    node: NodeId(2),
                    group: GroupId(1),
                },
            },
            send(12_000, 0, 1),
        ],
    ))
    .unwrap()
    .run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let d = deliveries(&result.trace.records);
    // After leaving, node 2 hears nothing more.
    assert!(
        d.iter().all(|(t, node, _, _)| !(*node == 2 && *t > 8_000)),
        "deliveries: {d:?}"
    );
}

#[test]
fn backup_takes_over_after_root_kill() {
    // Root 0 with members 1 (adjacent) and 3 (via relay 2). Node 1 is the
    // natural backup (nearest neighbor of the root). Killing 0 must
    // eventually restore delivery to both surviving members.
    let positions = vec![p(0.0, 0.0), p(150.0, 0.0), p(300.0, 0.0), p(450.0, 0.0)];
    let result = Sim::new(params(
        positions,
        90_000,
        vec![
            join(500, 0, 1),
            join(3_000, 1, 1),
            join(6_000, 3, 1),
            AppEvent {
                at: 30_000,
                kind: AppEventKind::Kill { node: NodeId(0) },
            },
            send(60_000, 1, 1),
            send(70_000, 3, 1),
        ],
    ))
    .unwrap()
    .run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let failovers: Vec<_> = result
        .trace
        .records
        .iter()
        .filter(|r| matches!(r, TraceRecord::Failover { .. }))
        .collect();
    assert!(
        !failovers.is_empty(),
        "the backup must notice the dead root and promote itself"
    );
    let d = deliveries(&result.trace.records);
    assert!(
        d.iter()
            .any(|(t, node, origin, _)| *t > 60_000 && *node == 3 && *origin == 1),
        "delivery must resume after failover; deliveries: {d:?}"
    );
    assert!(
        d.iter()
            .any(|(t, node, origin, _)| *t > 70_000 && *node == 1 && *origin == 3),
        "delivery must resume in both directions; deliveries: {d:?}"
    );
}

#[test]
fn shared_tree_plain_delivers_on_static_network() {
    let mut params = params(
        vec![p(0.0, 0.0), p(200.0, 0.0), p(400.0, 0.0)],
        20_000,
        vec![
            join(500, 0, 1),
            join(5_000, 2, 1),
            send(10_000, 0, 1),
            send(12_000, 2, 1),
        ],
    );
    params.protocol = ProtocolKind::SharedTree;
    let result = Sim::new(params).unwrap().run();
    assert!(result.violations.is_empty(), "{:?}", result.violations);
    let d = deliveries(&result.trace.records);
    assert!(d.iter().any(|(_, node, origin, _)| *node == 2 && *origin == 0));
    assert!(d.iter().any(|(_, node, origin, _)| *node == 0 && *origin == 2));
}

#[test]
fn mesh_delivers_on_static_network() {
    let mut params = params(
        vec![p(0.0, 0.0), p(200.0, 0.0), p(400.0, 0.0)],
        20_000,
        vec![
            join(500, 0, 1),
            join(2_000, 2, 1),
            send(10_000, 0, 1),
            send(12_000, 2, 1),
        ],
    );
    params.protocol = ProtocolKind::Mesh;
    let result = Sim::new(params).unwrap().run();
    let d = deliveries(&result.trace.records);
    assert!(d.iter().any(|(_, node, origin, _)| *node == 2 && *origin == 0));
    assert!(d.iter().any(|(_, node, origin, _)| *node == 0 && *origin == 2));
}
