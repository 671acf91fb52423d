//! Scenario files: a strict, line-oriented `key = value` format with
//! `[section]` headers. Unknown keys are errors; omitted keys take the
//! documented defaults. `parse(render(config)) == config` holds for every
//! valid config, and the scenario hash (seed- and protocol-independent)
//! ties traces to the setup that produced them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::ProtocolKind;
use crate::geometry::Position;
use crate::protocol::ProtocolConfig;
use crate::simkernel::{
    AppEvent, AppEventKind, EnergyModel, MobilityConfig, MobilityKind, RadioModel, SimParams,
};
use crate::wire::{GroupId, NodeId};
use crate::Millis;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{0}")]
    Global(String),
}

fn invalid(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        line,
        message: message.into(),
    }
}

/// A full scenario: what to simulate and how.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub node_count: u32,
    pub area: (f64, f64),
    pub end_time_ms: Millis,
    pub radio: RadioModel,
    pub energy: EnergyModel,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolKind,
    pub protocol_config: ProtocolConfig,
    pub app: Vec<AppEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            seed: 0,
            node_count: 1,
            area: (1000.0, 1000.0),
            end_time_ms: 10_000,
            radio: RadioModel::default(),
            energy: EnergyModel::default(),
            mobility: MobilityConfig::default(),
            protocol: ProtocolKind::Seelamp,
            protocol_config: ProtocolConfig::default(),
            app: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// Applies the derived defaults the file format leaves optional: the
    /// network diameter from the area diagonal, and the in-zone search
    /// timeout from the per-hop latency.
    pub fn derive_defaults(&mut self, net_dia_given: bool, timeout_given: bool) {
        if !net_dia_given {
            let diag = (self.area.0 * self.area.0 + self.area.1 * self.area.1).sqrt();
            let hops = (diag / self.radio.range_m).ceil() as u32 + 2;
            self.protocol_config.net_diameter = hops.clamp(1, 255) as u8;
        }
        if !timeout_given {
            self.protocol_config.search_timeout_ms =
                3 * u64::from(self.protocol_config.k) * self.radio.per_hop_latency_ms.max(1);
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.node_count == 0 {
            return Err(ScenarioError::Global("node_count must be at least 1".into()));
        }
        if self.area.0 <= 0.0 || self.area.1 <= 0.0 {
            return Err(ScenarioError::Global("area must be positive".into()));
        }
        self.protocol_config
            .validate()
            .map_err(|e| ScenarioError::Global(e.to_string()))?;
        if let MobilityKind::RandomWaypoint {
            speed_min,
            speed_max,
            ..
        } = self.mobility.kind
        {
            if speed_min < 0.0 || speed_min > speed_max {
                return Err(ScenarioError::Global(
                    "need 0 <= speed_min <= speed_max".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.radio.loss_probability) {
            return Err(ScenarioError::Global(
                "loss_probability must be in [0, 1)".into(),
            ));
        }
        for ev in &self.app {
            if ev.at > self.end_time_ms {
                return Err(ScenarioError::Global(format!(
                    "app directive at t={} is after end_time_ms={}",
                    ev.at, self.end_time_ms
                )));
            }
            let node = match ev.kind {
                AppEventKind::Join { node, .. }
                | AppEventKind::Leave { node, .. }
                | AppEventKind::Send { node, .. }
                | AppEventKind::Kill { node } => node,
            };
            if node.0 >= self.node_count {
                return Err(ScenarioError::Global(format!(
                    "app directive references node {} but node_count is {}",
                    node.0, self.node_count
                )));
            }
        }
        Ok(())
    }

    /// Canonical text form. `parse` inverts this exactly.
    pub fn render(&self) -> String {
        self.render_inner(true)
    }

    fn render_inner(&self, include_identity: bool) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "[general]");
        let _ = writeln!(s, "name = {}", self.name);
        if include_identity {
            let _ = writeln!(s, "seed = {}", self.seed);
        }
        let _ = writeln!(s, "node_count = {}", self.node_count);
        let _ = writeln!(s, "area_width = {}", self.area.0);
        let _ = writeln!(s, "area_height = {}", self.area.1);
        let _ = writeln!(s, "end_time_ms = {}", self.end_time_ms);
        let _ = writeln!(s, "\n[radio]");
        let _ = writeln!(s, "range_m = {}", self.radio.range_m);
        let _ = writeln!(s, "per_hop_latency_ms = {}", self.radio.per_hop_latency_ms);
        let _ = writeln!(s, "loss_probability = {}", self.radio.loss_probability);
        let _ = writeln!(s, "\n[energy]");
        let _ = writeln!(s, "tx_j_per_byte = {}", self.energy.tx_j_per_byte);
        let _ = writeln!(s, "rx_j_per_byte = {}", self.energy.rx_j_per_byte);
        let _ = writeln!(s, "idle_j_per_s = {}", self.energy.idle_j_per_s);
        let _ = writeln!(s, "initial_battery_j = {}", self.energy.initial_battery_j);
        let _ = writeln!(s, "\n[mobility]");
        match self.mobility.kind {
            MobilityKind::Static => {
                let _ = writeln!(s, "model = static");
            }
            MobilityKind::RandomWaypoint {
                speed_min,
                speed_max,
                pause_ms,
            } => {
                let _ = writeln!(s, "model = random_waypoint");
                let _ = writeln!(s, "speed_min = {speed_min}");
                let _ = writeln!(s, "speed_max = {speed_max}");
                let _ = writeln!(s, "pause_ms = {pause_ms}");
            }
        }
        let _ = writeln!(s, "tick_ms = {}", self.mobility.tick_ms);
        let _ = writeln!(s, "\n[protocol]");
        if include_identity {
            let _ = writeln!(s, "protocol = {}", self.protocol.name());
        }
        let p = &self.protocol_config;
        let _ = writeln!(s, "k = {}", p.k);
        let _ = writeln!(s, "theta_t = {}", p.theta_t);
        let _ = writeln!(s, "move_threshold_m = {}", p.move_threshold);
        let _ = writeln!(s, "tree_update_period_ms = {}", p.tree_update_period);
        let _ = writeln!(s, "power_check_period_ms = {}", p.power_check_period);
        let _ = writeln!(s, "power_threshold_fraction = {}", p.power_threshold_fraction);
        let _ = writeln!(s, "znt_max_age_ms = {}", p.znt_max_age);
        let _ = writeln!(s, "rt_max_age_ms = {}", p.rt_max_age);
        let _ = writeln!(s, "search_retry_delay_ms = {}", p.search_retry_delay);
        let _ = writeln!(s, "backup_speed_max = {}", p.backup_speed_max);
        let _ = writeln!(
            s,
            "backup_battery_min_fraction = {}",
            p.backup_battery_min_fraction
        );
        let _ = writeln!(s, "net_diameter = {}", p.net_diameter);
        let _ = writeln!(s, "search_timeout_ms = {}", p.search_timeout_ms);
        let _ = writeln!(s, "\n[app]");
        for ev in &self.app {
            match ev.kind {
                AppEventKind::Join { node, group } => {
                    let _ = writeln!(s, "join t={} node={} group={}", ev.at, node.0, group.0);
                }
                AppEventKind::Leave { node, group } => {
                    let _ = writeln!(s, "leave t={} node={} group={}", ev.at, node.0, group.0);
                }
                AppEventKind::Send {
                    node,
                    group,
                    payload_len,
                } => {
                    let _ = writeln!(
                        s,
                        "send t={} node={} group={} bytes={}",
                        ev.at, node.0, group.0, payload_len
                    );
                }
                AppEventKind::Kill { node } => {
                    let _ = writeln!(s, "kill t={} node={}", ev.at, node.0);
                }
            }
        }
        s
    }

    /// FNV-1a over the canonical rendering minus seed and protocol choice,
    /// so matched-seed sweeps across protocols share one hash.
    pub fn hash(&self) -> u64 {
        let text = self.render_inner(false);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Strict parser: unknown sections or keys fail with their line number.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::new();
        let mut net_dia_given = false;
        let mut timeout_given = false;
        let mut seen_name = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(invalid(lineno, "unterminated section header"));
                };
                match name {
                    "general" | "radio" | "energy" | "mobility" | "protocol" | "app" => {
                        section = name.to_string();
                    }
                    other => return Err(invalid(lineno, format!("unknown section [{other}]"))),
                }
                continue;
            }
            if section == "app" {
                cfg.app.push(parse_app_line(lineno, line)?);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(invalid(lineno, "expected key = value"));
            };
            let key = key.trim();
            let value = value.trim();
            let parse_f64 = |v: &str| -> Result<f64, ScenarioError> {
                v.parse()
                    .map_err(|_| invalid(lineno, format!("bad number for {key}")))
            };
            let parse_u64 = |v: &str| -> Result<u64, ScenarioError> {
                v.parse()
                    .map_err(|_| invalid(lineno, format!("bad integer for {key}")))
            };
            match (section.as_str(), key) {
                ("general", "name") => {
                    cfg.name = value.to_string();
                    seen_name = true;
                }
                ("general", "seed") => cfg.seed = parse_u64(value)?,
                ("general", "node_count") => {
                    cfg.node_count = parse_u64(value)? as u32;
                    if cfg.node_count == 0 {
                        return Err(invalid(lineno, "node_count must be at least 1"));
                    }
                }
                ("general", "area_width") => cfg.area.0 = parse_f64(value)?,
                ("general", "area_height") => cfg.area.1 = parse_f64(value)?,
                ("general", "end_time_ms") => cfg.end_time_ms = parse_u64(value)?,
                ("radio", "range_m") => cfg.radio.range_m = parse_f64(value)?,
                ("radio", "per_hop_latency_ms") => {
                    cfg.radio.per_hop_latency_ms = parse_u64(value)?
                }
                ("radio", "loss_probability") => cfg.radio.loss_probability = parse_f64(value)?,
                ("energy", "tx_j_per_byte") => cfg.energy.tx_j_per_byte = parse_f64(value)?,
                ("energy", "rx_j_per_byte") => cfg.energy.rx_j_per_byte = parse_f64(value)?,
                ("energy", "idle_j_per_s") => cfg.energy.idle_j_per_s = parse_f64(value)?,
                ("energy", "initial_battery_j") => {
                    cfg.energy.initial_battery_j = parse_f64(value)?
                }
                ("mobility", "model") => match value {
                    "static" => cfg.mobility.kind = MobilityKind::Static,
                    "random_waypoint" => {
                        cfg.mobility.kind = MobilityKind::RandomWaypoint {
                            speed_min: 1.0,
                            speed_max: 10.0,
                            pause_ms: 2_000,
                        }
                    }
                    other => {
                        return Err(invalid(lineno, format!("unknown mobility model {other}")))
                    }
                },
                ("mobility", "speed_min") => {
                    let v = parse_f64(value)?;
                    match &mut cfg.mobility.kind {
                        MobilityKind::RandomWaypoint { speed_min, .. } => *speed_min = v,
                        _ => return Err(invalid(lineno, "speed_min needs random_waypoint")),
                    }
                }
                ("mobility", "speed_max") => {
                    let v = parse_f64(value)?;
                    match &mut cfg.mobility.kind {
                        MobilityKind::RandomWaypoint { speed_max, .. } => *speed_max = v,
                        _ => return Err(invalid(lineno, "speed_max needs random_waypoint")),
                    }
                }
                ("mobility", "pause_ms") => {
                    let v = parse_u64(value)?;
                    match &mut cfg.mobility.kind {
                        MobilityKind::RandomWaypoint { pause_ms, .. } => *pause_ms = v,
                        _ => return Err(invalid(lineno, "pause_ms needs random_waypoint")),
                    }
                }
                ("mobility", "tick_ms") => {
                    cfg.mobility.tick_ms = parse_u64(value)?;
                    if cfg.mobility.tick_ms == 0 {
                        return Err(invalid(lineno, "tick_ms must be positive"));
                    }
                }
                ("protocol", "protocol") => {
                    cfg.protocol = ProtocolKind::parse(value)
                        .ok_or_else(|| invalid(lineno, format!("unknown protocol {value}")))?
                }
                ("protocol", "k") => {
                    cfg.protocol_config.k = parse_u64(value)? as u8;
                    if cfg.protocol_config.k == 0 {
                        return Err(invalid(lineno, "k must be positive"));
                    }
                }
                ("protocol", "theta_t") => cfg.protocol_config.theta_t = parse_f64(value)?,
                ("protocol", "move_threshold_m") => {
                    cfg.protocol_config.move_threshold = parse_f64(value)?
                }
                ("protocol", "tree_update_period_ms") => {
                    cfg.protocol_config.tree_update_period = parse_u64(value)?
                }
                ("protocol", "power_check_period_ms") => {
                    cfg.protocol_config.power_check_period = parse_u64(value)?
                }
                ("protocol", "power_threshold_fraction") => {
                    cfg.protocol_config.power_threshold_fraction = parse_f64(value)?
                }
                ("protocol", "znt_max_age_ms") => {
                    cfg.protocol_config.znt_max_age = parse_u64(value)?
                }
                ("protocol", "rt_max_age_ms") => {
                    cfg.protocol_config.rt_max_age = parse_u64(value)?
                }
                ("protocol", "search_retry_delay_ms") => {
                    cfg.protocol_config.search_retry_delay = parse_u64(value)?
                }
                ("protocol", "backup_speed_max") => {
                    cfg.protocol_config.backup_speed_max = parse_f64(value)?
                }
                ("protocol", "backup_battery_min_fraction") => {
                    cfg.protocol_config.backup_battery_min_fraction = parse_f64(value)?
                }
                ("protocol", "net_diameter") => {
                    cfg.protocol_config.net_diameter = parse_u64(value)? as u8;
                    net_dia_given = true;
                }
                ("protocol", "search_timeout_ms") => {
                    cfg.protocol_config.search_timeout_ms = parse_u64(value)?;
                    timeout_given = true;
                }
                ("", _) => return Err(invalid(lineno, "key before any [section]")),
                (_, other) => {
                    return Err(invalid(
                        lineno,
                        format!("unknown key {other} in [{section}]"),
                    ))
                }
            }
        }
        if !seen_name {
            return Err(ScenarioError::Global("missing name in [general]".into()));
        }
        cfg.derive_defaults(net_dia_given, timeout_given);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initial node placements, drawn uniformly from the scenario seed.
    pub fn draw_positions(&self, seed: u64) -> Vec<Position> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_7369_7469_6f6e);
        (0..self.node_count)
            .map(|_| {
                Position::new(
                    rng.random_range(0.0..=self.area.0),
                    rng.random_range(0.0..=self.area.1),
                )
                .unwrap()
            })
            .collect()
    }

    /// Assembles kernel parameters. `seed` overrides the file's seed;
    /// `protocol` overrides the file's protocol (for matched-seed sweeps).
    pub fn to_sim_params(
        &self,
        seed: Option<u64>,
        protocol: Option<ProtocolKind>,
        check_invariants: bool,
    ) -> SimParams {
        let seed = seed.unwrap_or(self.seed);
        SimParams {
            seed,
            area: self.area,
            positions: self.draw_positions(seed),
            radio: self.radio,
            energy: self.energy,
            mobility: self.mobility,
            protocol: protocol.unwrap_or(self.protocol),
            protocol_config: self.protocol_config.clone(),
            end_time_ms: self.end_time_ms,
            app_events: self.app.clone(),
            check_invariants,
            dump_tables: false,
            scenario_hash: self.hash(),
        }
    }
}

fn parse_app_line(lineno: usize, line: &str) -> Result<AppEvent, ScenarioError> {
    let mut parts = line.split_whitespace();
    let verb = parts.next().unwrap_or_default();
    let mut t: Option<u64> = None;
    let mut node: Option<u32> = None;
    let mut group: Option<u32> = None;
    let mut bytes: Option<u16> = None;
    for part in parts {
        let Some((k, v)) = part.split_once('=') else {
            return Err(invalid(lineno, "app fields are key=value"));
        };
        let n: u64 = v
            .parse()
            .map_err(|_| invalid(lineno, format!("bad value for {k}")))?;
        match k {
            "t" => t = Some(n),
            "node" => node = Some(n as u32),
            "group" => group = Some(n as u32),
            "bytes" => bytes = Some(n as u16),
            other => return Err(invalid(lineno, format!("unknown app field {other}"))),
        }
    }
    let t = t.ok_or_else(|| invalid(lineno, "app directive needs t="))?;
    let need_node = || node.map(NodeId).ok_or_else(|| invalid(lineno, "needs node="));
    let need_group = || {
        group
            .map(GroupId)
            .ok_or_else(|| invalid(lineno, "needs group="))
    };
    let kind = match verb {
        "join" => AppEventKind::Join {
            node: need_node()?,
            group: need_group()?,
        },
        "leave" => AppEventKind::Leave {
            node: need_node()?,
            group: need_group()?,
        },
        "send" => AppEventKind::Send {
            node: need_node()?,
            group: need_group()?,
            payload_len: bytes.unwrap_or(64),
        },
        "kill" => AppEventKind::Kill { node: need_node()? },
        other => return Err(invalid(lineno, format!("unknown app directive {other}"))),
    };
    Ok(AppEvent { at: t, kind })
}
