use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seelamp::baselines::ProtocolKind;
use seelamp::geometry::Position;
use seelamp::protocol::{ProtocolConfig, Role};
use seelamp::simkernel::*;
use seelamp::trace::TraceRecord;
use seelamp::wire::{GroupId, NodeId};

fn p(x: f64, y: f64) -> Position { Position::new(x, y).unwrap() }

fn connected_layout(rng: &mut ChaCha8Rng, n: usize, range: f64) -> (Vec<Position>, (f64, f64)) {
    let side = 150.0 * (n as f64).sqrt() * (range / 250.0);
    loop {
        let positions: Vec<Position> = (0..n)
            .map(|_| p(rng.random_range(0.0..side), rng.random_range(0.0..side)))
            .collect();
        if is_connected(&positions, range) {
            return (positions, (side, side));
        }
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let (positions, area) = connected_layout(&mut rng, 30, 250.0);
    let mut app: Vec<AppEvent> = (0..8)
        .map(|i| AppEvent { at: 500 * (i as u64 + 1), kind: AppEventKind::Join { node: NodeId(i), group: GroupId(1) } })
        .collect();
    for i in 0..50u64 {
        app.push(AppEvent { at: 8_000 + 200 * i, kind: AppEventKind::Send { node: NodeId((i % 8) as u32), group: GroupId(1), payload_len: 64 } });
    }
    let params = SimParams {
        seed: 1, area, positions,
        radio: RadioModel::default(), energy: EnergyModel::default(),
        mobility: MobilityConfig::default(),
        protocol: ProtocolKind::Seelamp,
        protocol_config: ProtocolConfig::default(),
        end_time_ms: 25_000, app_events: app,
        check_invariants: true, dump_tables: false, scenario_hash: 0,
    };
    let result = Sim::new(params).unwrap().run();
    println!("violations: {:?}", &result.violations[..result.violations.len().min(3)]);
    // Per-receiver delivery counts
    for m in 0..8u32 {
        let n = result.trace.records.iter().filter(|r| matches!(r, TraceRecord::Deliver { node, .. } if node.0 == m)).count();
        println!("member {m}: {n} deliveries (expect ~44)");
    }
    // Final tree state
    for (i, e) in result.engines.iter().enumerate() {
        if let Some(t) = e.tree() {
            if let Some(entry) = t.mtt.get(GroupId(1)) {
                let hops: Vec<String> = entry.next_hops.iter().map(|h| format!("{}{}{}", h.hop.0, if h.direction == seelamp::tables::LinkDirection::Upstream {"U"} else {"D"}, if h.activated {"+"} else {"-"})).collect();
                println!("node {i}: role={:?} leader={} hc={} hops={:?} member={}", t.role(GroupId(1)), entry.leader.0, entry.hop_count_to_leader, hops, t.is_member(GroupId(1)));
            }
        }
    }
}
