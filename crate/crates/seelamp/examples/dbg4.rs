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
    for i in 0..40u64 {
        app.push(AppEvent { at: 8_000 + 1_000 * i, kind: AppEventKind::Send { node: NodeId(6 + (i % 6) as u32), group: GroupId(1), payload_len: 64 } });
    }
    app.push(AppEvent { at: 30_000, kind: AppEventKind::Leave { node: NodeId(3), group: GroupId(1) } });
    app.push(AppEvent { at: 40_000, kind: AppEventKind::Leave { node: NodeId(5), group: GroupId(1) } });
    app.push(AppEvent { at: 25_000, kind: AppEventKind::Kill { node: NodeId(1) } });
    app.push(AppEvent { at: 35_000, kind: AppEventKind::Kill { node: NodeId(20) } });
    let params = SimParams {
        seed: 0, area, positions,
        radio: RadioModel::default(), energy: EnergyModel::default(),
        mobility: MobilityConfig { kind: MobilityKind::RandomWaypoint { speed_min: 1.0, speed_max: 10.0, pause_ms: 2_000 }, tick_ms: 100 },
        protocol: ProtocolKind::Seelamp,
        protocol_config: ProtocolConfig::default(),
        end_time_ms: 60_000, app_events: app,
        check_invariants: true, dump_tables: false, scenario_hash: 0,
    };
    let result = Sim::new(params).unwrap().run();
    println!("first violations: {:?}", &result.violations[..result.violations.len().min(2)]);
    for r in &result.trace.records {
        match r {
            TraceRecord::Role { t, node, role, .. } if (20_000..=21_300).contains(t) => println!("t={t} node={node} ROLE {role}"),
            TraceRecord::Repair { t, node, .. } if (20_000..=21_300).contains(t) => println!("t={t} node={node} REPAIR"),
            TraceRecord::Failover { t, node, .. } if (20_000..=21_300).contains(t) => println!("t={t} node={node} FAILOVER"),
            TraceRecord::Tx { t, node, kind, to, .. } if (20_000..=21_300).contains(t) && kind == "ALARM" => println!("t={t} node={node} ALARM to={to}"),
            _ => {}
        }
    }
}
// marker
