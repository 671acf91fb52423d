use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seelamp::baselines::ProtocolKind;
use seelamp::geometry::Position;
use seelamp::protocol::ProtocolConfig;
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
        if is_connected(&positions, range) { return (positions, (side, side)); }
    }
}
fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let (positions, area) = connected_layout(&mut rng, 50, 250.0);
    let mut app: Vec<AppEvent> = (0..12)
        .map(|i| AppEvent { at: 500 + 400 * u64::from(i), kind: AppEventKind::Join { node: NodeId(i), group: GroupId(1) } })
        .collect();
    for i in 0..13u64 {
        app.push(AppEvent { at: 8_000 + 1_000 * i, kind: AppEventKind::Send { node: NodeId(6 + (i % 6) as u32), group: GroupId(1), payload_len: 64 } });
    }
    
    
    
    
    let params = SimParams {
        seed: 0, area, positions,
        radio: RadioModel::default(), energy: EnergyModel::default(),
        mobility: MobilityConfig { kind: MobilityKind::RandomWaypoint { speed_min: 1.0, speed_max: 10.0, pause_ms: 2_000 }, tick_ms: 100 },
        protocol: ProtocolKind::Seelamp,
        protocol_config: ProtocolConfig::default(),
        end_time_ms: 21_130, app_events: app,
        check_invariants: true, dump_tables: false, scenario_hash: 0,
    };
    let result = Sim::new(params).unwrap().run();
    // all tx involving 43/45 or addressed to them in window
    for r in &result.trace.records {
        if let TraceRecord::Tx { t, node, kind, to, origin, seq, .. } = r {
            if (20_800..=21_200).contains(t) && (node.0 == 43 || node.0 == 45 || to.0 == 43 || to.0 == 45) {
                println!("t={t} {node} TX {kind} to={to} origin={origin} seq={seq}");
            }
        }
    }
    for (i, e) in result.engines.iter().enumerate() {
        if e.tree().and_then(|t| t.mtt.get(GroupId(1))).is_none() { continue; }
        if let Some(t) = e.tree() {
            if let Some(entry) = t.mtt.get(GroupId(1)) {
                let hops: Vec<String> = entry.next_hops.iter().map(|h| format!("{}{}{}", h.hop.0, if h.direction == seelamp::tables::LinkDirection::Upstream {"U"} else {"D"}, if h.activated {"+"} else {"-"})).collect();
                println!("node {i}: role={:?} leader={} hc={} hops={:?} path={:?}", t.role(GroupId(1)), entry.leader.0, entry.hop_count_to_leader, hops, t.root_path(GroupId(1)).iter().map(|n| n.0).collect::<Vec<_>>());
            }
        }
    }
}
