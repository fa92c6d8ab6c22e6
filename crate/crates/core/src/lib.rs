//! System-level simulator of decentralized NR-V2X Mode-2 sidelink broadcast.
//!
//! The crate models the sensing-based semi-persistent scheduling (SPS)
//! procedure used for Basic Safety Message (BSM) broadcast on the sidelink,
//! plus two adaptive Resource Reservation Interval (RRI) selection
//! algorithms:
//!
//! - **Ch-RRI**: channel-aware RRI selection — grow the candidate RRI from
//!   `RRI_min` until at least 20% of the selection window is free.
//! - **AoI-RRI**: Age-of-Information feedback control — INCR/DECR/SAME
//!   actions on the locally measured average AoI, with a congestion
//!   override driven by periodic RSRP averaging.
//!
//! Trials are slot-stepped (1 ms slots, 15 kHz numerology), fully
//! deterministic for a given `(config, seed)`, and report cooperative
//! awareness metrics: tracking error, Age of Information, packet delivery
//! ratio, and RRI distributions.

pub mod aoi_rri;
pub mod channel;
pub mod ch_rri;
pub mod config;
pub mod engine;
pub mod grid;
pub mod metrics;
pub mod mobility;
pub mod output;
pub mod sps;

pub use config::{SchedulerKind, SimConfig};
pub use engine::{run_experiment, run_trial, TrialResult};
pub use metrics::TrialMetrics;
