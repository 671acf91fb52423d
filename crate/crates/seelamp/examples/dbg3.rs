use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seelamp::baselines::ProtocolKind;
use seelamp::geometry::Position;
use seelamp::protocol::ProtocolConfig;
use seelamp::simkernel::*;
use seelamp::trace::TraceRecord;
use seelamp::wire::{GroupId, NodeId};
use std::collections::BTreeSet;

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
    // Find missing (origin, seq, member) triples.
    let mut data_seqs: Vec<(u64, u32, u32)> = Vec::new(); // (t, origin, seq)
    let mut delivered: BTreeSet<(u32, u32, u32)> = BTreeSet::new();
    for r in &result.trace.records {
        match r {
            TraceRecord::Tx { t, node, kind, origin, seq, .. } if kind == "DATA" && node == origin => {
                data_seqs.push((*t, origin.0, *seq));
            }
            TraceRecord::Deliver { node, origin, seq, .. } => {
                delivered.insert((origin.0, *seq, node.0));
            }
            _ => {}
        }
    }
    for (t, origin, seq) in &data_seqs {
        for m in 0..8u32 {
            if m == *origin { continue; }
            if !delivered.contains(&(*origin, *seq, m)) {
                println!("MISSING: payload (o={origin} seq={seq}) sent t={t} never delivered to member {m}");
            }
        }
    }
    // Show control-plane events between 6s and end
    for r in &result.trace.records {
        if let TraceRecord::Tx { t, node, kind, to, origin, seq, .. } = r {
            if *t >= 6_000 && kind != "DATA" && kind != "LOCN" && kind != "LACK" {
                println!("t={t} node={node} TX {kind} to={to} origin={origin} seq={seq}");
            }
        }
        if let TraceRecord::Repair { t, node, .. } = r { println!("t={t} node={node} REPAIR"); }
    }
}
