//! Propagation and reception: log-distance RSRP, half-duplex loss, and
//! per-receiver packet success under either a protocol (disc + collision)
//! model or an SINR threshold model.

use crate::grid::SlotIndex;
use crate::mobility::{wrap_distance, Vehicle};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reception model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// Disc model: delivery succeeds within `sensing_range_m` unless another
    /// transmission overlaps the same slot/subchannels in range of the
    /// receiver.
    Protocol,
    /// Success iff RSRP / (noise + sum of interferer RSRP) clears
    /// `sinr_threshold_db`, evaluated in the linear domain.
    Sinr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub tx_power_dbm: f64,
    pub sensing_range_m: f64,
    pub model: ChannelModel,
    pub pathloss_exponent: f64,
    /// Reference pathloss at 1 m, in dB.
    pub pathloss_ref_db: f64,
    pub sinr_threshold_db: f64,
    pub noise_floor_dbm: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        // Exponent/reference calibrated so the 300 m range edge sits near the
        // -90 dBm initial RSRP threshold: rsrp(300) ≈ -92.1 dBm.
        Self {
            tx_power_dbm: 23.0,
            sensing_range_m: 300.0,
            model: ChannelModel::Protocol,
            pathloss_exponent: 2.75,
            pathloss_ref_db: 47.0,
            sinr_threshold_db: 5.0,
            noise_floor_dbm: -95.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.sensing_range_m <= 0.0 {
            return Err(ChannelError::BadConfig("sensing_range_m must be > 0"));
        }
        if self.model == ChannelModel::Sinr && !self.sinr_threshold_db.is_finite() {
            return Err(ChannelError::BadConfig(
                "sinr_threshold_db must be finite for the sinr model",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    BadConfig(&'static str),
    #[error("resolve_slot given transmissions from mixed slots")]
    MixedSlots,
}

/// One queued broadcast: a BSM occupying `subchannel_mask` of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionEvent {
    pub tx_id: u32,
    pub slot: SlotIndex,
    /// Bit `j` set = subchannel `j` occupied. BSMs span all subchannels by
    /// default; the mask keeps the collision check per-subchannel for wider
    /// grids.
    pub subchannel_mask: u32,
    /// Generation time of the carried state snapshot, ms.
    pub generation_time_ms: u64,
    /// Transmitter position snapshot at generation time.
    pub payload_pos: (f64, f64),
    pub size_bytes: u32,
    /// RRI announced in the sidelink control information, ms.
    pub rri_ms: u16,
    /// Reservation epoch counter, bumped at each reselection; lets receivers
    /// distinguish periodic recurrences from fresh reservations.
    pub reservation_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    HalfDuplex,
    Collision,
    OutOfRange,
    BelowSinr,
}

/// Outcome of one (transmitter, receiver) pair in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionOutcome {
    pub rx_id: u32,
    pub tx_id: u32,
    pub success: bool,
    pub failure_cause: Option<FailureCause>,
    pub rsrp_at_rx_dbm: f64,
}

/// Received power at `distance` meters under the log-distance law.
/// Distances below 1 m clamp to the reference distance.
pub fn rsrp_at(distance_m: f64, cfg: &ChannelConfig) -> f64 {
    debug_assert!(distance_m >= 0.0);
    let d = distance_m.max(1.0);
    cfg.tx_power_dbm - (cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * d.log10())
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Outcome for a single (tx, rx) pair given every transmission in the slot.
/// `vehicles` must be indexable by vehicle id.
pub fn pair_outcome(
    tx: &TransmissionEvent,
    rx: &Vehicle,
    all: &[TransmissionEvent],
    vehicles: &[Vehicle],
    road_length: f64,
    cfg: &ChannelConfig,
) -> ReceptionOutcome {
    let tx_veh = &vehicles[tx.tx_id as usize];
    let dist = wrap_distance(tx_veh, rx, road_length);
    let rsrp = rsrp_at(dist, cfg);

    let fail = |cause| ReceptionOutcome {
        rx_id: rx.id,
        tx_id: tx.tx_id,
        success: false,
        failure_cause: Some(cause),
        rsrp_at_rx_dbm: rsrp,
    };

    if dist > cfg.sensing_range_m {
        return fail(FailureCause::OutOfRange);
    }
    // Half-duplex first: a transmitting vehicle hears nothing this slot.
    if all.iter().any(|t| t.tx_id == rx.id) {
        return fail(FailureCause::HalfDuplex);
    }

    let interferers = all
        .iter()
        .filter(|t| t.tx_id != tx.tx_id && t.subchannel_mask & tx.subchannel_mask != 0);

    match cfg.model {
        ChannelModel::Protocol => {
            let collided = interferers
                .map(|t| &vehicles[t.tx_id as usize])
                .any(|v| wrap_distance(v, rx, road_length) <= cfg.sensing_range_m);
            if collided {
                fail(FailureCause::Collision)
            } else {
                ReceptionOutcome {
                    rx_id: rx.id,
                    tx_id: tx.tx_id,
                    success: true,
                    failure_cause: None,
                    rsrp_at_rx_dbm: rsrp,
                }
            }
        }
        ChannelModel::Sinr => {
            let interference_mw: f64 = interferers
                .map(|t| {
                    let v = &vehicles[t.tx_id as usize];
                    dbm_to_mw(rsrp_at(wrap_distance(v, rx, road_length), cfg))
                })
                .sum();
            let sinr =
                dbm_to_mw(rsrp) / (dbm_to_mw(cfg.noise_floor_dbm) + interference_mw);
            if 10.0 * sinr.log10() >= cfg.sinr_threshold_db {
                ReceptionOutcome {
                    rx_id: rx.id,
                    tx_id: tx.tx_id,
                    success: true,
                    failure_cause: None,
                    rsrp_at_rx_dbm: rsrp,
                }
            } else {
                fail(FailureCause::BelowSinr)
            }
        }
    }
}

/// Resolve every transmission of one slot against every in-range receiver.
///
/// Outcomes are emitted for pairs within `sensing_range_m` only (including
/// half-duplex failures); out-of-range pairs carry no information and are
/// omitted. Ordered by (tx index, rx id) for deterministic merging.
pub fn resolve_slot(
    transmissions: &[TransmissionEvent],
    vehicles: &[Vehicle],
    road_length: f64,
    cfg: &ChannelConfig,
) -> Result<Vec<ReceptionOutcome>, ChannelError> {
    if transmissions.is_empty() {
        return Ok(Vec::new());
    }
    let slot = transmissions[0].slot;
    if transmissions.iter().any(|t| t.slot != slot) {
        return Err(ChannelError::MixedSlots);
    }

    let mut outcomes = Vec::new();
    for tx in transmissions {
        let tx_veh = &vehicles[tx.tx_id as usize];
        for rx in vehicles {
            if rx.id == tx.tx_id {
                continue;
            }
            if wrap_distance(tx_veh, rx, road_length) > cfg.sensing_range_m {
                continue;
            }
            outcomes.push(pair_outcome(tx, rx, transmissions, vehicles, road_length, cfg));
        }
    }
    Ok(outcomes)
}
