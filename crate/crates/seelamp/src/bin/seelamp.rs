//! Batch front end: run scenarios, sweep protocols over matched seeds,
//! validate configs, and cross-check converged zone tables against the
//! breadth-first-search oracle.
//!
//! Exit codes: 0 success, 1 configuration error, 2 invariant violation
//! detected during a run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seelamp::baselines::ProtocolKind;
use seelamp::scenario::{ScenarioConfig, SCENARIO_FORMAT_VERSION};
use seelamp::simkernel::{bfs_k_hops, connectivity_oracle, MobilityKind, Sim};
use seelamp::sweep;
use seelamp::trace::TRACE_FORMAT_VERSION;
use seelamp::wire::NodeId;

#[derive(Parser)]
#[command(name = "seelamp", disable_version_flag = true)]
struct Cli {
    /// Print binary and file-format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and summary.
    Run(RunArgs),
    /// Run a matched-seed comparison across protocols.
    Sweep(SweepArgs),
    /// Check a scenario file and exit.
    Validate { scenario: PathBuf },
    /// Run a static scenario to convergence and compare every node's zone
    /// table against the k-hop breadth-first-search oracle.
    Oracle { scenario: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Override the file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the file's protocol (seelamp | shared_tree | mesh).
    #[arg(long)]
    protocol: Option<String>,
    /// Where to write the trace log.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Where to write the metrics summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Skip the per-event structural checks (faster).
    #[arg(long)]
    no_invariants: bool,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Number of seeds (seed, seed+1, ...), starting at the file's seed.
    #[arg(long)]
    seeds: u64,
    /// Comma-separated protocol list.
    #[arg(long, default_value = "seelamp,shared_tree,mesh")]
    protocols: String,
    /// Output directory for the comparison table and per-run summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enable the per-event structural checks during every run.
    #[arg(long)]
    check_invariants: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!(
            "seelamp {} (trace format v{}, scenario format v{})",
            env!("CARGO_PKG_VERSION"),
            TRACE_FORMAT_VERSION,
            SCENARIO_FORMAT_VERSION
        );
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand; see --help");
        return ExitCode::from(1);
    };
    match dispatch(command) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::Validate { scenario } => {
            load_scenario(&scenario)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
        Command::Oracle { scenario } => oracle_command(&scenario),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ScenarioConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Write-temp-then-rename so consumers never see a partial file.
fn write_atomic(path: &Path, content: &str) -> Result<(), String> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| format!("cannot move {} into place: {e}", tmp.display()))
}

fn parse_protocols(list: &str) -> Result<Vec<ProtocolKind>, String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| ProtocolKind::parse(s).ok_or_else(|| format!("unknown protocol {s}")))
        .collect()
}

fn run_command(args: RunArgs) -> Result<ExitCode, String> {
    let cfg = load_scenario(&args.scenario)?;
    let protocol = match &args.protocol {
        Some(p) => Some(ProtocolKind::parse(p).ok_or_else(|| format!("unknown protocol {p}"))?),
        None => None,
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let (trace, summary, violations) = sweep::run_cell_with_trace(
        &cfg,
        seed,
        protocol.unwrap_or(cfg.protocol),
        !args.no_invariants,
    )
    .map_err(|e| e.to_string())?;
    if let Some(path) = &args.trace {
        write_atomic(path, &trace.render())?;
    }
    if let Some(path) = &args.summary {
        write_atomic(path, &summary.render())?;
    }
    print!("{}", summary.render());
    if !violations.is_empty() {
        eprintln!("invariant violations detected:");
        for v in violations.iter().take(20) {
            eprintln!("  {v}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_command(args: SweepArgs) -> Result<ExitCode, String> {
    if args.seeds == 0 {
        return Err("need at least one seed".into());
    }
    let cfg = load_scenario(&args.scenario)?;
    let protocols = parse_protocols(&args.protocols)?;
    if protocols.is_empty() {
        return Err("need at least one protocol".into());
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.seed + i).collect();
    let runs = sweep::run_matrix(&cfg, &seeds, &protocols, args.check_invariants)
        .map_err(|e| e.to_string())?;
    let table = sweep::comparison_table(&runs, &protocols);
    print!("{table}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        write_atomic(&dir.join("comparison.txt"), &table)?;
        write_atomic(&dir.join("comparison.tsv"), &sweep::structured_records(&runs))?;
        for run in &runs {
            let name = format!("{}_seed{}.summary", run.protocol.name(), run.seed);
            write_atomic(&dir.join(name), &run.summary.render())?;
        }
    }
    let total_violations: usize = runs.iter().map(|r| r.violations.len()).sum();
    if total_violations > 0 {
        eprintln!("{total_violations} invariant violations across the sweep");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle_command(path: &Path) -> Result<ExitCode, String> {
    let cfg = load_scenario(path)?;
    if cfg.mobility.kind != MobilityKind::Static {
        return Err("the oracle check needs a static scenario".into());
    }
    let mut params = cfg.to_sim_params(None, None, false);
    params.dump_tables = true;
    let positions = params.positions.clone();
    let k = cfg.protocol_config.k as usize;
    let result = Sim::new(params).map_err(|e| e.to_string())?.run();
    let adj = connectivity_oracle(&positions, cfg.radio.range_m);
    let mut mismatches = 0usize;
    for (i, engine) in result.engines.iter().enumerate() {
        let Some(tree) = engine.tree() else { continue };
        let expected = bfs_k_hops(&adj, i, k);
        let got: std::collections::BTreeSet<usize> = tree
            .znt
            .zone_members(cfg.protocol_config.k)
            .into_iter()
            .map(|n: NodeId| n.0 as usize)
            .collect();
        if got != expected {
            mismatches += 1;
            let missing: Vec<usize> = expected.difference(&got).copied().collect();
            let extra: Vec<usize> = got.difference(&expected).copied().collect();
            println!("node {i}: zone mismatch; missing {missing:?}, extra {extra:?}");
        }
    }
    if mismatches == 0 {
        println!(
            "zone tables of {} nodes match the {k}-hop oracle exactly",
            result.engines.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{mismatches} nodes disagree with the oracle");
        Ok(ExitCode::from(2))
    }
}
