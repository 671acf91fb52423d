//! Matched-seed batch runs: the same scenario and seeds across protocols,
//! so metric differences are attributable to the protocol alone. Runs are
//! fully isolated, which makes the batch embarrassingly parallel; with the
//! `parallel` feature (default) the batch fans out over a rayon pool, and a
//! sequential path is always available for comparison and for minimal
//! builds.

use crate::baselines::ProtocolKind;
use crate::metrics::{compare, compute, MetricsSummary};
use crate::scenario::ScenarioConfig;
use crate::simkernel::{Sim, SimError};
use crate::trace::TraceLog;

/// One completed run of the batch.
#[derive(Debug)]
pub struct SweepRun {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub summary: MetricsSummary,
    pub violations: Vec<String>,
}

/// Runs one (scenario, seed, protocol) cell and reduces it to its summary.
pub fn run_cell(
    cfg: &ScenarioConfig,
    seed: u64,
    protocol: ProtocolKind,
    check_invariants: bool,
) -> Result<SweepRun, SimError> {
    let params = cfg.to_sim_params(Some(seed), Some(protocol), check_invariants);
    let result = Sim::new(params)?.run();
    let summary = compute(&result.trace)
        .map_err(|e| SimError::ConfigInvalid(format!("trace reduction failed: {e}")))?;
    Ok(SweepRun {
        protocol,
        seed,
        summary,
        violations: result.violations,
    })
}

/// Runs one cell and keeps the full trace (used by `run` and the oracle).
pub fn run_cell_with_trace(
    cfg: &ScenarioConfig,
    seed: u64,
    protocol: ProtocolKind,
    check_invariants: bool,
) -> Result<(TraceLog, MetricsSummary, Vec<String>), SimError> {
    let params = cfg.to_sim_params(Some(seed), Some(protocol), check_invariants);
    let result = Sim::new(params)?.run();
    let summary = compute(&result.trace)
        .map_err(|e| SimError::ConfigInvalid(format!("trace reduction failed: {e}")))?;
    Ok((result.trace, summary, result.violations))
}

fn jobs(seeds: &[u64], protocols: &[ProtocolKind]) -> Vec<(ProtocolKind, u64)> {
    let mut out = Vec::with_capacity(seeds.len() * protocols.len());
    for &p in protocols {
        for &s in seeds {
            out.push((p, s));
        }
    }
    out
}

/// Sequential batch execution.
pub fn run_matrix_sequential(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    protocols: &[ProtocolKind],
    check_invariants: bool,
) -> Result<Vec<SweepRun>, SimError> {
    jobs(seeds, protocols)
        .into_iter()
        .map(|(p, s)| run_cell(cfg, s, p, check_invariants))
        .collect()
}

/// Parallel batch execution over a rayon pool. Results are ordered like the
/// sequential path, so both produce identical output.
#[cfg(feature = "parallel")]
pub fn run_matrix_parallel(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    protocols: &[ProtocolKind],
    check_invariants: bool,
) -> Result<Vec<SweepRun>, SimError> {
    use rayon::prelude::*;
    jobs(seeds, protocols)
        .into_par_iter()
        .map(|(p, s)| run_cell(cfg, s, p, check_invariants))
        .collect()
}

/// Batch execution with the best strategy the build supports.
pub fn run_matrix(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    protocols: &[ProtocolKind],
    check_invariants: bool,
) -> Result<Vec<SweepRun>, SimError> {
    #[cfg(feature = "parallel")]
    {
        run_matrix_parallel(cfg, seeds, protocols, check_invariants)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_matrix_sequential(cfg, seeds, protocols, check_invariants)
    }
}

fn metric_rows(s: &MetricsSummary) -> Vec<(&'static str, f64)> {
    vec![
        ("pdr", s.pdr),
        ("control_overhead", s.control_overhead.unwrap_or(f64::NAN)),
        (
            "data_latency_mean_ms",
            s.data_latency.map(|l| l.mean).unwrap_or(f64::NAN),
        ),
        (
            "data_latency_p95_ms",
            s.data_latency.map(|l| l.p95).unwrap_or(f64::NAN),
        ),
        (
            "join_latency_mean_ms",
            s.join_latency.map(|l| l.mean).unwrap_or(f64::NAN),
        ),
        ("energy_total_j", s.energy_total_j),
        (
            "energy_per_delivery_j",
            s.energy_per_delivery_j.unwrap_or(f64::NAN),
        ),
        ("network_lifetime_ms", s.network_lifetime_ms as f64),
        ("load_gini", s.load_gini),
        ("repair_count", s.repair_count as f64),
        ("failover_count", s.failover_count as f64),
        ("leader_count_max", s.leader_count_max as f64),
    ]
}

/// Aligned per-metric, per-protocol means over the seeds.
pub fn comparison_table(runs: &[SweepRun], protocols: &[ProtocolKind]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<12} {:>12} {:>12} {:>12} {:>6}",
        "metric", "protocol", "mean", "min", "max", "seeds"
    );
    let metric_names: Vec<&'static str> = runs
        .first()
        .map(|r| metric_rows(&r.summary).iter().map(|(n, _)| *n).collect())
        .unwrap_or_default();
    for name in metric_names {
        for &p in protocols {
            let values: Vec<f64> = runs
                .iter()
                .filter(|r| r.protocol == p)
                .flat_map(|r| {
                    metric_rows(&r.summary)
                        .into_iter()
                        .filter(|(n, _)| *n == name)
                        .map(|(_, v)| v)
                })
                .filter(|v| v.is_finite())
                .collect();
            if values.is_empty() {
                let _ = writeln!(
                    out,
                    "{:<24} {:<12} {:>12} {:>12} {:>12} {:>6}",
                    name,
                    p.name(),
                    "undefined",
                    "-",
                    "-",
                    0
                );
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                out,
                "{:<24} {:<12} {:>12.6} {:>12.6} {:>12.6} {:>6}",
                name,
                p.name(),
                mean,
                min,
                max,
                values.len()
            );
        }
    }
    // Pairwise sign tests between consecutive protocol pairs.
    for pair in protocols.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let series_a: Vec<MetricsSummary> = runs
            .iter()
            .filter(|r| r.protocol == a)
            .map(|r| r.summary.clone())
            .collect();
        let series_b: Vec<MetricsSummary> = runs
            .iter()
            .filter(|r| r.protocol == b)
            .map(|r| r.summary.clone())
            .collect();
        if let Ok(cmp) = compare(&series_a, &series_b) {
            let _ = writeln!(out, "\n# {} vs {}", a.name(), b.name());
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>12} {:>10} {:>8} {:>8} {:>8}",
                "metric", "mean_a", "mean_b", "diff", "a>b", "b>a", "p"
            );
            for c in cmp {
                let _ = writeln!(
                    out,
                    "{:<24} {:>12.6} {:>12.6} {:>10.4} {:>8} {:>8} {:>8.4}",
                    c.metric, c.mean_a, c.mean_b, c.mean_diff, c.a_greater, c.b_greater,
                    c.sign_test_p
                );
            }
        }
    }
    out
}

/// Structured records: one tab-separated line per (metric, protocol, seed).
pub fn structured_records(runs: &[SweepRun]) -> String {
    use std::fmt::Write;
    let mut out = String::from("metric\tprotocol\tseed\tvalue\n");
    for run in runs {
        for (name, value) in metric_rows(&run.summary) {
            let rendered = if value.is_finite() {
                format!("{value}")
            } else {
                "undefined".to_string()
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                name,
                run.protocol.name(),
                run.seed,
                rendered
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig::parse(
            "[general]\nname = tiny\nseed = 5\nnode_count = 3\nend_time_ms = 3000\narea_width = 400\narea_height = 50\n[app]\njoin t=100 node=0 group=1\njoin t=1000 node=1 group=1\nsend t=2000 node=0 group=1 bytes=16\n",
        )
        .unwrap()
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = tiny_scenario();
        let seeds = [1, 2];
        let protocols = [ProtocolKind::Seelamp, ProtocolKind::Mesh];
        let seq = run_matrix_sequential(&cfg, &seeds, &protocols, false).unwrap();
        #[cfg(feature = "parallel")]
        {
            let par = run_matrix_parallel(&cfg, &seeds, &protocols, false).unwrap();
            assert_eq!(seq.len(), par.len());
            for (a, b) in seq.iter().zip(par.iter()) {
                assert_eq!(a.protocol, b.protocol);
                assert_eq!(a.seed, b.seed);
                assert_eq!(a.summary, b.summary);
            }
        }
        assert_eq!(seq.len(), 4);
    }

    #[test]
    fn table_has_one_row_per_protocol_per_metric() {
        let cfg = tiny_scenario();
        let protocols = [
            ProtocolKind::Seelamp,
            ProtocolKind::SharedTree,
            ProtocolKind::Mesh,
        ];
        let runs = run_matrix_sequential(&cfg, &[1], &protocols, false).unwrap();
        let table = comparison_table(&runs, &protocols);
        let main_table: String = table.lines().take_while(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        let pdr_rows = main_table.lines().filter(|l| l.starts_with("pdr ")).count();
        assert_eq!(pdr_rows, 3);
    }
}
