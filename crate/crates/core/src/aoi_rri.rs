//! AoI-aware RRI selection: a periodic-RSRP congestion detector plus an
//! INCR/DECR/SAME feedback controller on the locally measured average Age
//! of Information. Slot choice at the adapted RRI is delegated to the SPS
//! procedure.

use crate::grid::{Observation, SensingWindow};
use serde::{Deserialize, Serialize};

/// Controller action on the RRI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Incr,
    Decr,
    Same,
}

impl Action {
    /// Inverse action when the previous step made the AoI significantly
    /// worse. SAME inverts to DECR: worsening while holding steady points
    /// at staleness rather than congestion (congestion is caught by the
    /// override), so the optimistic probe is to shorten the interval.
    pub fn inverse(self) -> Action {
        match self {
            Action::Incr => Action::Decr,
            Action::Decr => Action::Incr,
            Action::Same => Action::Decr,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Incr => "INCR",
            Action::Decr => "DECR",
            Action::Same => "SAME",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AoiRriConfig {
    /// Multiplicative RRI step, > 1.
    pub beta: f64,
    /// Significance band: AoI changes within ±sigma_t ms are treated as
    /// noise and hold the RRI.
    pub sigma_t_ms: f64,
    pub rri_min_ms: u16,
    pub rri_max_ms: u16,
    /// Availability fraction below which the channel counts as congested.
    pub congestion_fraction: f64,
}

impl Default for AoiRriConfig {
    fn default() -> Self {
        Self {
            beta: 1.1,
            sigma_t_ms: 2.0,
            rri_min_ms: 20,
            rri_max_ms: 100,
            congestion_fraction: 0.2,
        }
    }
}

impl AoiRriConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.beta <= 1.0 {
            return Err("beta must be > 1");
        }
        if self.sigma_t_ms < 0.0 {
            return Err("sigma_t_ms must be >= 0");
        }
        if self.rri_min_ms == 0 || self.rri_min_ms > self.rri_max_ms {
            return Err("need 1 <= rri_min_ms <= rri_max_ms");
        }
        if !(0.0..=1.0).contains(&self.congestion_fraction) {
            return Err("congestion_fraction must be in [0, 1]");
        }
        Ok(())
    }
}

/// Controller memory carried across adaptation epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiRriState {
    pub prev_rri_ms: u16,
    /// Average AoI measured at the previous epoch; None until the first
    /// post-warmup measurement.
    pub prev_aoi_ms: Option<f64>,
    pub prev_action: Action,
    /// RSRP threshold stored from the previous slot selection.
    pub prev_p_th_dbm: f64,
}

impl AoiRriState {
    pub fn new(initial_rri_ms: u16, initial_p_th_dbm: f64) -> Self {
        Self {
            prev_rri_ms: initial_rri_ms,
            prev_aoi_ms: None,
            prev_action: Action::Same,
            prev_p_th_dbm: initial_p_th_dbm,
        }
    }
}

/// Congestion detector: average the sensing window's RSRP over the periodic
/// recurrences of each slot offset at the previous RRI (linear domain), and
/// report congestion when fewer than `congestion_fraction` of the offsets
/// stay below the previous threshold.
///
/// Offsets whose recurrences were all self-transmissions count as occupied.
/// An RRI longer than the window cannot be assessed and reports
/// not-congested.
pub fn channel_congested(
    window: &SensingWindow,
    p_th_prev_dbm: f64,
    rri_prev_ms: u16,
    congestion_fraction: f64,
) -> bool {
    debug_assert!(rri_prev_ms >= 1);
    let n_sensing = window.len();
    let rri = rri_prev_ms as usize;
    if rri > n_sensing {
        log::warn!(
            "congestion check skipped: RRI {rri_prev_ms} ms exceeds {n_sensing}-slot window"
        );
        return false;
    }
    let Some(oldest) = window.oldest_slot() else {
        return false;
    };
    // floor(N_sensing / RRI - 1) extra recurrences beyond the first.
    let n_rri = n_sensing / rri - 1;
    let p_th_mw = 10f64.powf(p_th_prev_dbm / 10.0);

    let j = window.subchannels();
    let total = rri * j as usize;
    let mut available = 0usize;
    for offset in 0..rri {
        for sub in 0..j {
            let mut sum_mw = 0.0;
            let mut sensed = 0usize;
            for k in 0..=n_rri {
                let slot = oldest + (offset + k * rri) as u64;
                match window.get(slot, sub) {
                    Some(Observation::Sensed { rsrp_dbm, .. }) => {
                        sum_mw += 10f64.powf(rsrp_dbm / 10.0);
                        sensed += 1;
                    }
                    Some(Observation::Unsensed) | None => {}
                }
            }
            if sensed > 0 && sum_mw / (sensed as f64) < p_th_mw {
                available += 1;
            }
        }
    }
    (available as f64) < congestion_fraction * total as f64
}

/// One controller step: congestion forces INCR; otherwise a significant AoI
/// worsening inverts the previous action, a significant improvement repeats
/// it, and anything inside the ±sigma_t band holds. The RRI moves by the
/// factor beta (never by less than 1 ms away from a boundary) and clamps to
/// `[rri_min, rri_max]`.
pub fn aoi_rri_update(
    state: &AoiRriState,
    aoi_now_ms: f64,
    congested: bool,
    cfg: &AoiRriConfig,
) -> (u16, Action) {
    debug_assert!(aoi_now_ms >= 0.0);
    let prev_aoi = state.prev_aoi_ms.unwrap_or(aoi_now_ms);
    let action = if congested {
        Action::Incr
    } else if aoi_now_ms > prev_aoi + cfg.sigma_t_ms {
        state.prev_action.inverse()
    } else if aoi_now_ms < prev_aoi - cfg.sigma_t_ms {
        state.prev_action
    } else {
        Action::Same
    };

    let prev = state.prev_rri_ms;
    let rri_new = match action {
        Action::Incr => {
            if prev >= cfg.rri_max_ms {
                prev
            } else {
                let scaled = (prev as f64 * cfg.beta).round() as u16;
                scaled.max(prev + 1).min(cfg.rri_max_ms)
            }
        }
        Action::Decr => {
            if prev <= cfg.rri_min_ms {
                prev
            } else {
                let scaled = (prev as f64 / cfg.beta).round() as u16;
                scaled.min(prev - 1).max(cfg.rri_min_ms)
            }
        }
        Action::Same => prev,
    };
    (rri_new.clamp(cfg.rri_min_ms, cfg.rri_max_ms), action)
}

/// Local average AoI: mean age of the last received packet over the given
/// neighbors. With no neighbors heard yet, fall back to `cold_start_ms`
/// (the current RRI by default).
pub fn measure_local_aoi<I>(last_gen_times_ms: I, now_ms: u64, cold_start_ms: f64) -> f64
where
    I: IntoIterator<Item = u64>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for t_gen in last_gen_times_ms {
        debug_assert!(t_gen <= now_ms, "clock inconsistency: t_gen after now");
        sum += (now_ms - t_gen) as f64;
        n += 1;
    }
    if n == 0 {
        cold_start_ms
    } else {
        sum / n as f64
    }
}
