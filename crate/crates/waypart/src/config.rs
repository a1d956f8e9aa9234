use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// Platform and policy knobs. Defaults model a two-socket machine with an
/// 11-way, 19 MB LLC per socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub sockets: u32,
    pub cores_per_socket: u32,
    pub clos_per_socket: u32,
    pub ways_per_socket: u32,
    pub line_size: u32,
    pub cache_bytes: u64,
    /// Maximum processes sharing one CLOS.
    pub gfactor: u32,
    /// Footprint multiplier for stream phases.
    pub scaling_factor_stream: f64,
    /// A fresh CLOS is handed out only while more than this share is free.
    pub clos_occupancy_threshold: f64,
    /// Re-apportion only when the rounded demand moves by at least this much.
    pub hysteresis_ways: u32,
    /// Slowdown of a 1-way grant relative to 2 ways.
    pub directly_mapped_penalty: f64,
    /// SRD threshold separating stream from reuse loops.
    pub srd_delta: u64,
    /// Relative improvement under which extra ways count as saturated.
    pub saturation_epsilon: f64,
    pub sla_limit: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            sockets: 2,
            cores_per_socket: 14,
            clos_per_socket: 16,
            ways_per_socket: 11,
            line_size: 64,
            cache_bytes: 19 * 1024 * 1024,
            gfactor: 4,
            scaling_factor_stream: 0.1,
            clos_occupancy_threshold: 0.75,
            hysteresis_ways: 1,
            directly_mapped_penalty: 1.25,
            srd_delta: 1000,
            saturation_epsilon: 0.05,
            sla_limit: 0.15,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.sockets == 0 || self.cores_per_socket == 0 || self.clos_per_socket == 0 {
            return fail("sockets, cores_per_socket and clos_per_socket must be positive");
        }
        if !(2..=64).contains(&self.ways_per_socket) {
            return fail("ways_per_socket must be within 2..=64");
        }
        if self.line_size == 0 {
            return fail("line_size must be positive");
        }
        if self.gfactor == 0 {
            return fail("gfactor must be at least 1");
        }
        if !(self.scaling_factor_stream > 0.0 && self.scaling_factor_stream < 1.0) {
            return fail("scaling_factor_stream must lie in (0, 1)");
        }
        if !(self.clos_occupancy_threshold > 0.0 && self.clos_occupancy_threshold < 1.0) {
            return fail("clos_occupancy_threshold must lie in (0, 1)");
        }
        if !(self.directly_mapped_penalty >= 1.0) {
            return fail("directly_mapped_penalty must be at least 1");
        }
        if self.srd_delta == 0 {
            return fail("srd_delta must be positive");
        }
        if !(self.saturation_epsilon > 0.0) || !(self.sla_limit >= 0.0) {
            return fail("saturation_epsilon must be positive and sla_limit non-negative");
        }
        Ok(())
    }

    pub fn total_cores(&self) -> u32 {
        self.sockets * self.cores_per_socket
    }

    /// Copy with the keys of `table` replacing the matching fields.
    /// A `format_version` key is ignored.
    pub fn with_overrides(&self, table: &toml::Table) -> Result<Self, ConfigError> {
        let mut merged = toml::Table::try_from(self).map_err(|e| ConfigError(e.to_string()))?;
        for (k, v) in table {
            if k != "format_version" {
                merged.insert(k.clone(), v.clone());
            }
        }
        let config: SystemConfig =
            merged.try_into().map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }
}
