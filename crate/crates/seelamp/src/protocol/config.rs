//! Protocol tuning knobs and the feature flags that turn the full protocol
//! into its plain shared-tree baseline.

use crate::Millis;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid protocol config: {0}")]
    Invalid(&'static str),
}

/// Per-node protocol parameters. One instance is shared by every node in a
/// scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Zone radius in hops.
    pub k: u8,
    /// Cone half-angle for directional forwarding, radians.
    pub theta_t: f64,
    /// Movement that triggers a fresh position advertisement, meters.
    pub move_threshold: f64,
    /// Period of leaf-originated tree refresh messages, ms.
    pub tree_update_period: Millis,
    /// Battery examination period, ms. Halved for a primary root.
    pub power_check_period: Millis,
    /// Battery fraction below which preventive handoff runs.
    pub power_threshold_fraction: f64,
    /// Zone-neighbor soft-state lifetime, ms.
    pub znt_max_age: Millis,
    /// Request-cache soft-state lifetime, ms.
    pub rt_max_age: Millis,
    /// Backup-election retry delay, ms (plus uniform jitter).
    pub search_retry_delay: Millis,
    /// Maximum observed speed for a backup-root candidate, m/s.
    pub backup_speed_max: f64,
    /// Minimum battery fraction for a backup-root candidate.
    pub backup_battery_min_fraction: f64,
    /// Network diameter in hops; bounds search escalation.
    pub net_diameter: u8,
    /// Timeout for the initial in-zone search phase, ms. Wider phases scale
    /// this linearly with their hop budget.
    pub search_timeout_ms: Millis,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            k: 2,
            theta_t: std::f64::consts::FRAC_PI_4,
            move_threshold: 10.0,
            tree_update_period: 5_000,
            power_check_period: 2_000,
            power_threshold_fraction: 0.15,
            znt_max_age: 15_000,
            rt_max_age: 30_000,
            search_retry_delay: 1_000,
            backup_speed_max: 5.0,
            backup_battery_min_fraction: 0.5,
            net_diameter: 8,
            search_timeout_ms: 30,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be positive"));
        }
        if !(self.theta_t > 0.0 && self.theta_t <= std::f64::consts::PI) {
            return Err(ConfigError::Invalid("theta_t must be in (0, pi]"));
        }
        if self.move_threshold < 0.0 {
            return Err(ConfigError::Invalid("move_threshold must be non-negative"));
        }
        for (v, name) in [
            (self.tree_update_period, "tree_update_period"),
            (self.power_check_period, "power_check_period"),
            (self.znt_max_age, "znt_max_age"),
            (self.rt_max_age, "rt_max_age"),
            (self.search_retry_delay, "search_retry_delay"),
            (self.search_timeout_ms, "search_timeout_ms"),
        ] {
            if v == 0 {
                let _ = name;
                return Err(ConfigError::Invalid("periods must be positive"));
            }
        }
        if !(self.power_threshold_fraction > 0.0 && self.power_threshold_fraction < 1.0) {
            return Err(ConfigError::Invalid(
                "power_threshold_fraction must be in (0, 1)",
            ));
        }
        if !(self.backup_battery_min_fraction > 0.0 && self.backup_battery_min_fraction < 1.0) {
            return Err(ConfigError::Invalid(
                "backup_battery_min_fraction must be in (0, 1)",
            ));
        }
        if self.power_threshold_fraction >= self.backup_battery_min_fraction {
            return Err(ConfigError::Invalid(
                "power threshold must be below backup battery minimum",
            ));
        }
        if self.backup_speed_max < 0.0 {
            return Err(ConfigError::Invalid("backup_speed_max must be non-negative"));
        }
        if self.net_diameter == 0 {
            return Err(ConfigError::Invalid("net_diameter must be positive"));
        }
        Ok(())
    }

    /// Search timeout for a phase with the given hop budget.
    pub fn timeout_for_budget(&self, budget: u8) -> Millis {
        let per_hop = self.search_timeout_ms / self.k as u64;
        (per_hop.max(1)) * budget as u64
    }
}

/// Which of the protocol's mechanisms are active. Turning everything off
/// yields the plain shared-tree baseline; the code paths are otherwise
/// identical, so measured differences are attributable to these mechanisms
/// alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Features {
    /// Elect a standby root and fail over to it.
    pub backup_root: bool,
    /// Hand off tree duties before announced departures and battery death.
    pub preventive_maintenance: bool,
    /// Chase request-cache hits geographically instead of flooding.
    pub directional_forwarding: bool,
    /// Repair broken links with zone-local searches; when off, repairs go
    /// straight to a network-wide re-join flood.
    pub local_repair: bool,
    /// Splice data at any tree point. When off, data transits the root,
    /// the classic shared-tree behavior.
    pub bidirectional_forwarding: bool,
}

impl Features {
    pub fn seelamp() -> Self {
        Self {
            backup_root: true,
            preventive_maintenance: true,
            directional_forwarding: true,
            local_repair: true,
            bidirectional_forwarding: true,
        }
    }

    pub fn shared_tree_plain() -> Self {
        Self {
            backup_root: false,
            preventive_maintenance: false,
            directional_forwarding: false,
            local_repair: false,
            bidirectional_forwarding: false,
        }
    }
}
