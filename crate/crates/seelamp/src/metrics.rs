//! Trace post-processing: packet delivery ratio, control overhead, latency,
//! energy, load distribution and tree-health counters, plus matched-seed
//! comparison across protocols with sign tests.

use std::collections::{BTreeMap, BTreeSet};

use crate::trace::{TraceLog, TraceRecord};
use crate::wire::{GroupId, NodeId};
use crate::Millis;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(&'static str),
    #[error("summaries come from different scenarios")]
    MismatchedScenarios,
}

/// Mean and 95th percentile of a latency population, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub p95: f64,
    pub count: usize,
}

impl LatencyStats {
    fn from_samples(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        let count = samples.len();
        let mean = samples.iter().sum::<u64>() as f64 / count as f64;
        let idx = ((count as f64) * 0.95).ceil() as usize;
        let p95 = samples[idx.clamp(1, count) - 1] as f64;
        Some(Self { mean, p95, count })
    }
}

/// One run's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub scenario_hash: u64,
    pub seed: u64,
    /// Delivered (payload, receiver) pairs over intended pairs.
    pub pdr: f64,
    /// Control transmissions per delivered payload; None when nothing was
    /// delivered (reported as "undefined").
    pub control_overhead: Option<f64>,
    pub data_latency: Option<LatencyStats>,
    pub join_latency: Option<LatencyStats>,
    pub energy_total_j: f64,
    pub energy_per_delivery_j: Option<f64>,
    /// Time of the first battery death, or the end of the run.
    pub network_lifetime_ms: Millis,
    /// Gini coefficient over per-node forwarded-packet counts.
    pub load_gini: f64,
    pub repair_count: u64,
    pub failover_count: u64,
    pub leader_count_max: u64,
    /// Late duplicate data receptions at members (diagnostic).
    pub dup_count: u64,
    pub deliveries: u64,
    pub intended: u64,
    pub control_tx: u64,
    pub data_tx: u64,
    pub end_time_ms: Millis,
}

/// Gini coefficient of a non-negative population; 0 for uniform loads.
pub fn gini(values: &[u64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let total: u64 = values.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut sorted: Vec<u64> = values.to_vec();
    sorted.sort_unstable();
    let mut weighted = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        weighted += (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * *v as f64;
    }
    weighted / (n as f64 * total as f64)
}

/// Computes a run summary from its trace. Pure: identical traces produce
/// identical summaries.
pub fn compute(trace: &TraceLog) -> Result<MetricsSummary, MetricsError> {
    let mut intended: u64 = 0;
    let mut deliveries: u64 = 0;
    let mut control_tx: u64 = 0;
    let mut data_tx: u64 = 0;
    let mut forwards: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut all_nodes: BTreeSet<NodeId> = BTreeSet::new();
    let mut consumed_nj_total: u64 = 0;
    let mut first_death: Option<Millis> = None;
    let mut end_time: Millis = 0;
    let mut repair_count = 0u64;
    let mut failover_count = 0u64;
    let mut dup_count = 0u64;

    // Payload identity: engines transmit queued payloads in order, so the
    // k-th application send of a node pairs with the k-th DATA packet that
    // node originates. Collect both sequences, then join on the ordinal.
    let mut send_times: BTreeMap<NodeId, Vec<(Millis, GroupId, Vec<NodeId>)>> = BTreeMap::new();
    let mut origin_data_seqs: BTreeMap<NodeId, Vec<u32>> = BTreeMap::new();
    let mut delivered: Vec<(Millis, NodeId, NodeId, u32)> = Vec::new();
    let mut delivered_pairs: BTreeSet<(NodeId, u32, NodeId)> = BTreeSet::new();

    // Join latency: god-view join intent to the first tree role.
    let mut join_intents: BTreeMap<(NodeId, GroupId), Millis> = BTreeMap::new();
    let mut join_latencies: Vec<u64> = Vec::new();

    // Concurrent leader tracking per group.
    let mut leaders: BTreeMap<GroupId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut leader_count_max: u64 = 0;
    let mut dead: BTreeSet<NodeId> = BTreeSet::new();

    for record in &trace.records {
        end_time = end_time.max(record.t());
        match record {
            TraceRecord::AppSend {
                t,
                node,
                group,
                members,
            } => {
                intended += members.len() as u64;
                send_times
                    .entry(*node)
                    .or_default()
                    .push((*t, *group, members.clone()));
            }
            TraceRecord::Deliver {
                t,
                node,
                origin,
                seq,
                ..
            } => {
                if !delivered_pairs.insert((*origin, *seq, *node)) {
                    dup_count += 1;
                    continue;
                }
                deliveries += 1;
                delivered.push((*t, *node, *origin, *seq));
            }
            TraceRecord::Tx {
                node,
                kind,
                origin,
                seq,
                ..
            } => {
                all_nodes.insert(*node);
                if kind == "DATA" {
                    data_tx += 1;
                    if node == origin {
                        origin_data_seqs.entry(*origin).or_default().push(*seq);
                    }
                } else {
                    control_tx += 1;
                }
                *forwards.entry(*node).or_insert(0) += 1;
            }
            TraceRecord::Rx { .. } => {}
            TraceRecord::GodJoin { t, node, group } => {
                join_intents.insert((*node, *group), *t);
            }
            TraceRecord::GodLeave { node, group, .. } => {
                join_intents.remove(&(*node, *group));
            }
            TraceRecord::Role {
                t,
                node,
                group,
                role,
            } => {
                if role == "PRIMARY_ROOT" {
                    let set = leaders.entry(*group).or_default();
                    set.insert(*node);
                    leader_count_max = leader_count_max.max(set.len() as u64);
                } else if let Some(set) = leaders.get_mut(group) {
                    set.remove(node);
                }
                if role != "NON_MEMBER" {
                    if let Some(joined_at) = join_intents.remove(&(*node, *group)) {
                        join_latencies.push(t.saturating_sub(joined_at));
                    }
                }
            }
            TraceRecord::Dead { t, node, .. } => {
                if first_death.is_none() {
                    first_death = Some(*t);
                }
                dead.insert(*node);
                for set in leaders.values_mut() {
                    set.remove(node);
                }
            }
            TraceRecord::Repair { .. } => repair_count += 1,
            TraceRecord::Failover { .. } => failover_count += 1,
            TraceRecord::Energy {
                node, consumed_nj, ..
            } => {
                all_nodes.insert(*node);
                consumed_nj_total += consumed_nj;
            }
            TraceRecord::Degraded { .. }
            | TraceRecord::Unreachable { .. }
            | TraceRecord::Move { .. }
            | TraceRecord::Znt { .. } => {}
        }
    }

    // Join sends to deliveries on the ordinal and count each send's hits
    // among its intended receivers.
    let mut matched_deliveries: u64 = 0;
    let mut send_at_of: BTreeMap<(NodeId, u32), Millis> = BTreeMap::new();
    for (origin, sends) in &send_times {
        let seqs = origin_data_seqs.get(origin);
        for (ordinal, (sent_at, _, members)) in sends.iter().enumerate() {
            let Some(seq) = seqs.and_then(|s| s.get(ordinal)) else {
                continue; // Never transmitted (dropped during a failed search).
            };
            send_at_of.insert((*origin, *seq), *sent_at);
            for member in members {
                if delivered_pairs.contains(&(*origin, *seq, *member)) {
                    matched_deliveries += 1;
                }
            }
        }
    }
    let mut data_latencies: Vec<u64> = Vec::new();
    for (t, _, origin, seq) in &delivered {
        if let Some(sent_at) = send_at_of.get(&(*origin, *seq)) {
            data_latencies.push(t.saturating_sub(*sent_at));
        }
    }

    let pdr = if intended == 0 {
        1.0
    } else {
        matched_deliveries as f64 / intended as f64
    };
    let control_overhead = if deliveries == 0 {
        None
    } else {
        Some(control_tx as f64 / deliveries as f64)
    };
    let energy_total_j = consumed_nj_total as f64 / 1e9;
    let energy_per_delivery_j = if deliveries == 0 {
        None
    } else {
        Some(energy_total_j / deliveries as f64)
    };
    let load: Vec<u64> = all_nodes
        .iter()
        .map(|n| forwards.get(n).copied().unwrap_or(0))
        .collect();

    Ok(MetricsSummary {
        scenario_hash: trace.scenario_hash,
        seed: trace.seed,
        pdr,
        control_overhead,
        data_latency: LatencyStats::from_samples(data_latencies),
        join_latency: LatencyStats::from_samples(join_latencies),
        energy_total_j,
        energy_per_delivery_j,
        network_lifetime_ms: first_death.unwrap_or(end_time),
        load_gini: gini(&load),
        repair_count,
        failover_count,
        leader_count_max,
        dup_count,
        deliveries,
        intended,
        control_tx,
        data_tx,
        end_time_ms: end_time,
    })
}

impl MetricsSummary {
    /// Key=value lines, one per metric.
    pub fn render(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "undefined".to_string(),
        };
        let fmt_lat = |v: Option<LatencyStats>| match v {
            Some(l) => format!("{:.3}/{:.3}", l.mean, l.p95),
            None => "undefined".to_string(),
        };
        format!(
            "scenario_hash={:016x}\nseed={}\npdr={:.6}\ncontrol_overhead={}\ndata_latency_ms={}\njoin_latency_ms={}\nenergy_total_j={:.9}\nenergy_per_delivery_j={}\nnetwork_lifetime_ms={}\nload_gini={:.6}\nrepair_count={}\nfailover_count={}\nleader_count_max={}\ndup_count={}\ndeliveries={}\nintended={}\ncontrol_tx={}\ndata_tx={}\n",
            self.scenario_hash,
            self.seed,
            self.pdr,
            fmt_opt(self.control_overhead),
            fmt_lat(self.data_latency),
            fmt_lat(self.join_latency),
            self.energy_total_j,
            fmt_opt(self.energy_per_delivery_j),
            self.network_lifetime_ms,
            self.load_gini,
            self.repair_count,
            self.failover_count,
            self.leader_count_max,
            self.dup_count,
            self.deliveries,
            self.intended,
            self.control_tx,
            self.data_tx,
        )
    }
}

/// Two-sided sign test: probability of an imbalance at least this extreme
/// among `wins + losses` fair coin flips (ties dropped).
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    // P(X <= k) for X ~ Binomial(n, 1/2), doubled and clamped.
    let mut tail = 0.0f64;
    for i in 0..=k {
        tail += binomial(n, i);
    }
    let p = tail / 2f64.powi(n as i32) * 2.0;
    p.min(1.0)
}

fn binomial(n: u64, k: u64) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// One metric's comparison between two protocols over matched seeds.
#[derive(Debug, Clone)]
pub struct MetricComparison {
    pub metric: &'static str,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub a_greater: u64,
    pub b_greater: u64,
    pub ties: u64,
    pub sign_test_p: f64,
}

/// Matched-seed comparison of two runs-per-seed series.
///
/// Fails when the summaries disagree on scenario hash (the series must come
/// from scenarios differing only in protocol) or seed pairing.
pub fn compare(
    a: &[MetricsSummary],
    b: &[MetricsSummary],
) -> Result<Vec<MetricComparison>, MetricsError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::MalformedTrace("series length mismatch"));
    }
    for (x, y) in a.iter().zip(b.iter()) {
        if x.scenario_hash != y.scenario_hash {
            return Err(MetricsError::MismatchedScenarios);
        }
        if x.seed != y.seed {
            return Err(MetricsError::MismatchedScenarios);
        }
    }
    let metrics: Vec<(&'static str, fn(&MetricsSummary) -> f64)> = vec![
        ("pdr", |s| s.pdr),
        ("control_overhead", |s| s.control_overhead.unwrap_or(f64::INFINITY)),
        ("energy_total_j", |s| s.energy_total_j),
        ("load_gini", |s| s.load_gini),
        ("data_latency_mean_ms", |s| {
            s.data_latency.map(|l| l.mean).unwrap_or(f64::INFINITY)
        }),
        ("network_lifetime_ms", |s| s.network_lifetime_ms as f64),
        ("repair_count", |s| s.repair_count as f64),
    ];
    let mut out = Vec::new();
    for (name, f) in metrics {
        let mut a_greater = 0;
        let mut b_greater = 0;
        let mut ties = 0;
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            let (va, vb) = (f(x), f(y));
            sum_a += va;
            sum_b += vb;
            if va > vb {
                a_greater += 1;
            } else if vb > va {
                b_greater += 1;
            } else {
                ties += 1;
            }
        }
        let n = a.len() as f64;
        out.push(MetricComparison {
            metric: name,
            mean_a: sum_a / n,
            mean_b: sum_b / n,
            mean_diff: (sum_a - sum_b) / n,
            a_greater,
            b_greater,
            ties,
            sign_test_p: sign_test_p(a_greater, b_greater),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;

    fn log(records: Vec<TraceRecord>) -> TraceLog {
        let mut l = TraceLog::new(7, 1);
        for r in records {
            l.push(r);
        }
        l
    }

    fn send(t: u64, node: u32, members: &[u32]) -> TraceRecord {
        TraceRecord::AppSend {
            t,
            node: NodeId(node),
            group: GroupId(1),
            members: members.iter().map(|&m| NodeId(m)).collect(),
        }
    }

    fn deliver(t: u64, node: u32, origin: u32, seq: u32) -> TraceRecord {
        TraceRecord::Deliver {
            t,
            node: NodeId(node),
            group: GroupId(1),
            origin: NodeId(origin),
            seq,
            bytes: 32,
        }
    }

    fn data_tx(t: u64, node: u32, origin: u32, seq: u32) -> TraceRecord {
        TraceRecord::Tx {
            t,
            node: NodeId(node),
            kind: "DATA".into(),
            to: NodeId(9),
            origin: NodeId(origin),
            seq,
            ttl: 8,
            bytes: 60,
        }
    }

    #[test]
    fn full_delivery_is_pdr_one() {
        // One send to a 4-member group (3 receivers), 3 deliveries.
        let trace = log(vec![
            send(100, 0, &[1, 2, 3]),
            data_tx(100, 0, 0, 5),
            deliver(110, 1, 0, 5),
            deliver(112, 2, 0, 5),
            deliver(115, 3, 0, 5),
        ]);
        let m = compute(&trace).unwrap();
        assert_eq!(m.pdr, 1.0);
        assert_eq!(m.deliveries, 3);
        assert_eq!(m.intended, 3);
        let lat = m.data_latency.unwrap();
        assert_eq!(lat.count, 3);
        assert!((lat.mean - (10.0 + 12.0 + 15.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn overhead_counts_control_per_delivery() {
        let mut records = vec![send(100, 0, &[1]), data_tx(100, 0, 0, 99)];
        for i in 0..10 {
            records.push(TraceRecord::Tx {
                t: i,
                node: NodeId(0),
                kind: "LOCN".into(),
                to: NodeId::BROADCAST,
                origin: NodeId(0),
                seq: i as u32,
                ttl: 2,
                bytes: 38,
            });
        }
        records.push(deliver(110, 1, 0, 99));
        // 5 deliveries total across separate payloads would give 2.0; here
        // one delivery against ten control packets gives 10.0.
        let m = compute(&log(records)).unwrap();
        assert_eq!(m.control_overhead, Some(10.0));
    }

    #[test]
    fn overhead_undefined_without_deliveries() {
        let trace = log(vec![TraceRecord::Tx {
            t: 0,
            node: NodeId(0),
            kind: "LOCN".into(),
            to: NodeId::BROADCAST,
            origin: NodeId(0),
            seq: 1,
            ttl: 2,
            bytes: 38,
        }]);
        let m = compute(&trace).unwrap();
        assert_eq!(m.control_overhead, None);
    }

    #[test]
    fn uniform_loads_have_zero_gini() {
        assert_eq!(gini(&[5, 5, 5, 5]), 0.0);
        assert_eq!(gini(&[]), 0.0);
    }

    #[test]
    fn concentrated_load_raises_gini() {
        let uniform = gini(&[10, 10, 10, 10]);
        let skewed = gini(&[40, 0, 0, 0]);
        assert!(skewed > uniform);
        assert!(skewed <= 1.0 && skewed >= 0.0);
    }

    #[test]
    fn duplicate_deliveries_count_separately() {
        let trace = log(vec![
            send(100, 0, &[1]),
            data_tx(100, 0, 0, 5),
            deliver(110, 1, 0, 5),
            deliver(112, 1, 0, 5),
        ]);
        let m = compute(&trace).unwrap();
        assert_eq!(m.deliveries, 1);
        assert_eq!(m.dup_count, 1);
        assert_eq!(m.pdr, 1.0);
    }

    #[test]
    fn identical_series_compare_to_zero_diff() {
        let trace = log(vec![
            send(100, 0, &[1]),
            data_tx(100, 0, 0, 5),
            deliver(110, 1, 0, 5),
        ]);
        let m = compute(&trace).unwrap();
        let cmp = compare(&[m.clone()], &[m]).unwrap();
        for c in cmp {
            assert_eq!(c.mean_diff, 0.0, "{}", c.metric);
            assert_eq!(c.sign_test_p, 1.0);
        }
    }

    #[test]
    fn mismatched_hashes_rejected() {
        let a = compute(&log(vec![send(1, 0, &[1])])).unwrap();
        let mut l = TraceLog::new(8, 1);
        l.push(send(1, 0, &[1]));
        let b = compute(&l).unwrap();
        assert!(matches!(
            compare(&[a], &[b]),
            Err(MetricsError::MismatchedScenarios)
        ));
    }

    #[test]
    fn sign_test_extremes() {
        assert!(sign_test_p(10, 0) < 0.05);
        assert!(sign_test_p(9, 1) < 0.05);
        assert!(sign_test_p(8, 2) > 0.05);
        assert_eq!(sign_test_p(0, 0), 1.0);
    }

    #[test]
    fn pdr_against_matrix_oracle() {
        // Independent oracle: build the send × member matrix by hand and
        // count hits; the summary must agree exactly.
        let records = vec![
            send(100, 0, &[1, 2]),
            data_tx(100, 0, 0, 7),
            send(200, 1, &[0, 2]),
            data_tx(200, 1, 1, 3),
            deliver(110, 1, 0, 7),
            deliver(120, 2, 0, 7),
            deliver(210, 0, 1, 3),
            // node 2 never gets node 1's payload
        ];
        let m = compute(&log(records)).unwrap();
        let oracle_hits = 3.0;
        let oracle_intended = 4.0;
        assert_eq!(m.pdr, oracle_hits / oracle_intended);
    }
}
