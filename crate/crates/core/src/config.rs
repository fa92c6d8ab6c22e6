//! Simulation configuration: structured key-value file (TOML sections
//! mirroring the config structs), exhaustive validation, and a stable
//! fingerprint for reproducibility bookkeeping.

use crate::aoi_rri::AoiRriConfig;
use crate::channel::ChannelConfig;
use crate::ch_rri::ChRriConfig;
use crate::mobility::HighwayConfig;
use crate::sps::SpsConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Scheduler choice for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Conventional SPS at a fixed RRI.
    Static { rri_ms: u16 },
    ChRri(ChRriConfig),
    AoiRri(AoiRriConfig),
}

impl SchedulerKind {
    /// Stable label used in result paths and report columns.
    pub fn label(&self) -> String {
        match self {
            SchedulerKind::Static { rri_ms } => format!("static{rri_ms}"),
            SchedulerKind::ChRri(_) => "ch_rri".to_string(),
            SchedulerKind::AoiRri(_) => "aoi_rri".to_string(),
        }
    }

    /// Parse a CLI-style label: `static<N>`, `ch_rri`, or `aoi_rri`
    /// (adaptive schedulers get default parameters).
    pub fn parse_label(label: &str) -> Option<SchedulerKind> {
        match label {
            "ch_rri" => Some(SchedulerKind::ChRri(ChRriConfig::default())),
            "aoi_rri" => Some(SchedulerKind::AoiRri(AoiRriConfig::default())),
            other => other
                .strip_prefix("static")
                .and_then(|n| n.parse::<u16>().ok())
                .filter(|&n| n >= 1)
                .map(|rri_ms| SchedulerKind::Static { rri_ms }),
        }
    }
}

/// Timing, traffic, and run-control parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim_time_s: f64,
    /// Adaptive schedulers hold a 50 ms RRI until this much time elapsed.
    pub warmup_s: f64,
    pub trials: u32,
    pub master_seed: u64,
    pub packet_size_bytes: u32,
    pub mcs_index: u8,
    /// Subchannel count J. BSMs span the full grid.
    pub subchannels: u8,
    /// Sensing window length, slots.
    pub n_sensing_slots: u32,
    /// Adaptive schedulers' fixed RRI during warmup, ms.
    pub warmup_rri_ms: u16,
    /// Virtual pre-run information age added to unreceived pairs in the
    /// startup-convention AoI series, ms.
    pub startup_age_offset_ms: u32,
    /// Record per-pair reception logs and cycle peaks (small runs only).
    pub record_pair_detail: bool,
    /// Keep per-epoch controller decisions for trace export.
    pub record_controller_trace: bool,
    /// Export vehicle kinematics at 100 ms cadence (debugging).
    pub record_vehicle_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim_time_s: 25.0,
            warmup_s: 5.0,
            trials: 10,
            master_seed: 1,
            packet_size_bytes: 190,
            mcs_index: 7,
            subchannels: 2,
            n_sensing_slots: 100,
            warmup_rri_ms: 50,
            startup_age_offset_ms: 20,
            record_pair_detail: false,
            record_controller_trace: false,
            record_vehicle_trace: false,
        }
    }
}

/// Complete configuration of one simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub highway: HighwayConfig,
    pub channel: ChannelConfig,
    pub sps: SpsConfig,
    pub scheduler: SchedulerKind,
    pub run: RunConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            highway: HighwayConfig::default(),
            channel: ChannelConfig::default(),
            sps: SpsConfig::default(),
            scheduler: SchedulerKind::AoiRri(AoiRriConfig::default()),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

impl SimConfig {
    /// Load from a TOML file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: SimConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validate every field, collecting all problems rather than stopping at
    /// the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if let Err(e) = self.highway.validate() {
            errors.push(format!("highway: {e}"));
        }
        if let Err(e) = self.channel.validate() {
            errors.push(format!("channel: {e}"));
        }
        if let Err(e) = self.sps.validate() {
            errors.push(format!("sps: {e}"));
        }
        match &self.scheduler {
            SchedulerKind::Static { rri_ms } => {
                if *rri_ms == 0 || *rri_ms > 1000 {
                    errors.push("scheduler: static rri_ms must be in [1, 1000]".into());
                }
            }
            SchedulerKind::ChRri(c) => {
                if let Err(e) = c.validate() {
                    errors.push(format!("scheduler: {e}"));
                }
            }
            SchedulerKind::AoiRri(c) => {
                if let Err(e) = c.validate() {
                    errors.push(format!("scheduler: {e}"));
                }
            }
        }
        let run = &self.run;
        if run.sim_time_s <= 0.0 {
            errors.push("run: sim_time_s must be > 0".into());
        }
        if run.warmup_s < 0.0 || run.warmup_s >= run.sim_time_s {
            errors.push("run: need sim_time_s > warmup_s >= 0".into());
        }
        if run.trials == 0 {
            errors.push("run: trials must be >= 1".into());
        }
        if run.packet_size_bytes == 0 {
            errors.push("run: packet_size_bytes must be > 0".into());
        }
        if run.subchannels == 0 || run.subchannels > 32 {
            errors.push("run: subchannels must be in [1, 32]".into());
        }
        if !(1..=1000).contains(&run.n_sensing_slots) {
            errors.push("run: n_sensing_slots must be in [1, 1000]".into());
        }
        if run.warmup_rri_ms == 0 || run.warmup_rri_ms as u32 > run.n_sensing_slots {
            errors.push("run: warmup_rri_ms must be in [1, n_sensing_slots]".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// FNV-1a hash of the canonical serialized form; stable across runs of
    /// the same build and configuration.
    pub fn fingerprint(&self) -> u64 {
        let text = self.to_toml();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    pub fn sim_slots(&self) -> u64 {
        (self.run.sim_time_s * 1000.0).round() as u64
    }

    pub fn warmup_slots(&self) -> u64 {
        (self.run.warmup_s * 1000.0).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn fingerprint_stable_and_sensitive() {
        let a = SimConfig::default();
        let b = SimConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = SimConfig::default();
        c.highway.density_veh_per_km = 40.0;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn validation_collects_all_errors() {
        let mut cfg = SimConfig::default();
        cfg.highway.density_veh_per_km = 0.0;
        cfg.run.trials = 0;
        cfg.run.warmup_s = 30.0;
        let err = cfg.validate().unwrap_err();
        match err {
            ConfigError::Invalid(list) => {
                assert!(list.len() >= 3, "got {list:?}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn scheduler_labels_round_trip() {
        for label in ["static20", "static50", "static100", "ch_rri", "aoi_rri"] {
            let k = SchedulerKind::parse_label(label).unwrap();
            assert_eq!(k.label(), label);
        }
        assert!(SchedulerKind::parse_label("bogus").is_none());
        assert!(SchedulerKind::parse_label("static0").is_none());
    }
}
