//! Cooperative-awareness metrics: tracking error, Age of Information
//! (instantaneous, pairwise time-averaged, per-vehicle, system), packet
//! delivery ratio, and RRI histograms.
//!
//! Ages are kept in whole milliseconds so the sawtooth recursion
//! (reset on reception, `+RRI` otherwise) can be verified exactly.

use crate::mobility::wrap_distance_1d;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("clock inconsistency: now {now_ms} ms precedes generation {t_gen_ms} ms")]
    ClockInconsistency { now_ms: u64, t_gen_ms: u64 },
}

/// Euclidean distance between a vehicle's true position and its last
/// received position, wrap-aware along the road axis.
pub fn tracking_error(
    true_pos: (f64, f64),
    est_pos: (f64, f64),
    road_length_m: f64,
) -> f64 {
    let dx = wrap_distance_1d(true_pos.0, est_pos.0, road_length_m);
    let dy = true_pos.1 - est_pos.1;
    (dx * dx + dy * dy).sqrt()
}

/// Instantaneous age of a packet generated at `t_gen_ms`.
pub fn aoi_instant(now_ms: u64, t_gen_ms: u64) -> Result<u64, MetricsError> {
    if now_ms < t_gen_ms {
        return Err(MetricsError::ClockInconsistency { now_ms, t_gen_ms });
    }
    Ok(now_ms - t_gen_ms)
}

/// Packet delivery ratio of one vehicle: receptions credited to it over its
/// transmissions weighted by in-range neighbor exposure. Undefined without
/// exposure.
pub fn pdr(receptions: u64, exposure: u64) -> Option<f64> {
    (exposure > 0).then(|| receptions as f64 / exposure as f64)
}

const NEVER: u64 = u64::MAX;

/// Per ordered (receiver, transmitter) pair accumulator.
#[derive(Debug, Clone)]
struct PairCell {
    last_gen_ms: u64,
    last_rx_ms: u64,
    last_pos: (f64, f64),
    last_rri_ms: u16,
    last_resv_id: u32,
    /// Area under the age sawtooth while in range, ms².
    aoi_integral: f64,
    /// In-range observed time after the first reception, ms.
    observed_ms: u64,
    te_sum_m: f64,
    te_samples: u64,
}

impl PairCell {
    fn new() -> Self {
        Self {
            last_gen_ms: NEVER,
            last_rx_ms: 0,
            last_pos: (0.0, 0.0),
            last_rri_ms: 0,
            last_resv_id: 0,
            aoi_integral: 0.0,
            observed_ms: 0,
            te_sum_m: 0.0,
            te_samples: 0,
        }
    }

    #[inline]
    fn received(&self) -> bool {
        self.last_gen_ms != NEVER
    }
}

/// Per-slot sample returned to the caller for series accumulation.
#[derive(Debug, Clone, Copy)]
pub struct SlotPairSample {
    /// Age at the sample instant, ms; None before the first reception.
    pub age_ms: Option<u64>,
    pub te_m: Option<f64>,
}

/// One reception event, for recursion replay on detail-enabled runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionRecord {
    pub t_r_ms: u64,
    pub t_gen_ms: u64,
    pub rri_ms: u16,
    pub reservation_id: u32,
    /// Tracker-sampled age immediately before this reception reset;
    /// None for the pair's first reception.
    pub age_before_ms: Option<u64>,
}

/// Detailed per-pair logs, recorded only when requested (small runs).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairDetail {
    pub receptions: BTreeMap<(u32, u32), Vec<ReceptionRecord>>,
    /// Max tracking error seen within each inter-reception cycle.
    pub te_cycle_peaks: BTreeMap<(u32, u32), Vec<f64>>,
    current_peak: BTreeMap<(u32, u32), f64>,
}

/// Dense matrix of pair accumulators plus the streaming Eq.-8-style
/// consistency counters.
#[derive(Debug, Clone)]
pub struct PairMatrix {
    n: usize,
    road_length_m: f64,
    cells: Vec<PairCell>,
    pub replay_checked: u64,
    pub replay_mismatches: u64,
    detail: Option<PairDetail>,
}

impl PairMatrix {
    pub fn new(n: usize, road_length_m: f64, record_detail: bool) -> Self {
        Self {
            n,
            road_length_m,
            cells: vec![PairCell::new(); n * n],
            replay_checked: 0,
            replay_mismatches: 0,
            detail: record_detail.then(PairDetail::default),
        }
    }

    #[inline]
    fn idx(&self, rx: u32, tx: u32) -> usize {
        rx as usize * self.n + tx as usize
    }

    /// Advance one in-range pair by one slot ending at `now_ms`: integrate
    /// the age ramp over `[now-1, now]`, take a tracking-error sample
    /// against the transmitter's true position, and report the
    /// instantaneous age.
    ///
    /// Must be called before receptions with `t_r == now_ms` are applied;
    /// the ramp belongs to the old state.
    #[inline]
    pub fn integrate_slot(
        &mut self,
        rx: u32,
        tx: u32,
        now_ms: u64,
        tx_true_pos: (f64, f64),
    ) -> SlotPairSample {
        let road = self.road_length_m;
        let i = self.idx(rx, tx);
        let cell = &mut self.cells[i];
        if !cell.received() {
            return SlotPairSample {
                age_ms: None,
                te_m: None,
            };
        }
        let age_end = now_ms - cell.last_gen_ms;
        // Exact trapezoid of a unit-slope ramp over one 1 ms slot.
        cell.aoi_integral += age_end as f64 - 0.5;
        cell.observed_ms += 1;
        let te = tracking_error(tx_true_pos, cell.last_pos, road);
        cell.te_sum_m += te;
        cell.te_samples += 1;
        if let Some(detail) = self.detail.as_mut() {
            let peak = detail.current_peak.entry((rx, tx)).or_insert(0.0);
            *peak = peak.max(te);
        }
        SlotPairSample {
            age_ms: Some(age_end),
            te_m: Some(te),
        }
    }

    /// Startup-convention age of a pair at `now_ms`: the real age once a
    /// packet has been received, otherwise `now + offset` (information as
    /// old as the run itself plus the configured virtual offset).
    #[inline]
    pub fn startup_age(&self, rx: u32, tx: u32, now_ms: u64, offset_ms: u64) -> u64 {
        let cell = &self.cells[self.idx(rx, tx)];
        if cell.received() {
            now_ms - cell.last_gen_ms
        } else {
            now_ms + offset_ms
        }
    }

    /// Record a successful reception at `t_r_ms` of a packet generated at
    /// `t_gen_ms`, and run the streaming sawtooth-lattice check: within one
    /// unchanged reservation, reception gaps must be exact multiples of the
    /// RRI and the pre-reset age must equal the reset age plus the gap.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_reception(
        &mut self,
        rx: u32,
        tx: u32,
        t_r_ms: u64,
        t_gen_ms: u64,
        payload_pos: (f64, f64),
        rri_ms: u16,
        reservation_id: u32,
    ) {
        let i = self.idx(rx, tx);
        let cell = &mut self.cells[i];
        let age_before = cell.received().then(|| t_r_ms - cell.last_gen_ms);
        if cell.received() && cell.last_resv_id == reservation_id && cell.last_rri_ms == rri_ms
        {
            let gap = t_r_ms - cell.last_rx_ms;
            let reset_age = cell.last_rx_ms - cell.last_gen_ms;
            self.replay_checked += 1;
            let on_lattice = gap % rri_ms as u64 == 0;
            let age_matches = age_before == Some(reset_age + gap);
            if !(on_lattice && age_matches) {
                self.replay_mismatches += 1;
            }
        }
        let cell = &mut self.cells[i];
        cell.last_gen_ms = t_gen_ms;
        cell.last_rx_ms = t_r_ms;
        cell.last_pos = payload_pos;
        cell.last_rri_ms = rri_ms;
        cell.last_resv_id = reservation_id;
        if let Some(detail) = self.detail.as_mut() {
            detail
                .receptions
                .entry((rx, tx))
                .or_default()
                .push(ReceptionRecord {
                    t_r_ms,
                    t_gen_ms,
                    rri_ms,
                    reservation_id,
                    age_before_ms: age_before,
                });
            if age_before.is_some() {
                let peak = detail.current_peak.remove(&(rx, tx)).unwrap_or(0.0);
                detail.te_cycle_peaks.entry((rx, tx)).or_default().push(peak);
            }
        }
    }

    /// Correct the tracking-error sample taken earlier in this slot, after a
    /// reception replaced the estimated position. `sampled_this_slot` tells
    /// whether `integrate_slot` ran for the pair this slot.
    #[inline]
    pub fn correct_te_sample(
        &mut self,
        rx: u32,
        tx: u32,
        tx_true_pos: (f64, f64),
        old_pos: (f64, f64),
        sampled_this_slot: bool,
    ) {
        let road = self.road_length_m;
        let i = self.idx(rx, tx);
        let new_te = tracking_error(tx_true_pos, self.cells[i].last_pos, road);
        let cell = &mut self.cells[i];
        if sampled_this_slot {
            let old_te = tracking_error(tx_true_pos, old_pos, road);
            cell.te_sum_m += new_te - old_te;
        } else {
            cell.te_sum_m += new_te;
            cell.te_samples += 1;
        }
    }

    /// Position last received for a pair, if any (needed for TE correction).
    pub fn last_pos(&self, rx: u32, tx: u32) -> Option<(f64, f64)> {
        let cell = &self.cells[self.idx(rx, tx)];
        cell.received().then_some(cell.last_pos)
    }

    pub fn last_gen(&self, rx: u32, tx: u32) -> Option<u64> {
        let cell = &self.cells[self.idx(rx, tx)];
        cell.received().then_some(cell.last_gen_ms)
    }

    /// Eq.-5-style pairwise average: integral over observed in-range time.
    pub fn pairwise_avg_aoi(&self, rx: u32, tx: u32) -> Option<f64> {
        let cell = &self.cells[self.idx(rx, tx)];
        (cell.observed_ms > 0).then(|| cell.aoi_integral / cell.observed_ms as f64)
    }

    /// Per-vehicle average AoI over its contributing neighbors.
    pub fn per_vehicle_aoi(&self, rx: u32) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for tx in 0..self.n as u32 {
            if tx != rx {
                if let Some(a) = self.pairwise_avg_aoi(rx, tx) {
                    sum += a;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// System AoI: mean of the pairwise averages over all ordered pairs that
    /// contributed observation time. None when no pair ever contributed.
    pub fn system_aoi(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for cell in &self.cells {
            if cell.observed_ms > 0 {
                sum += cell.aoi_integral / cell.observed_ms as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Pooled mean tracking error over every pair-slot sample.
    pub fn mean_tracking_error(&self) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0u64);
        for cell in &self.cells {
            sum += cell.te_sum_m;
            n += cell.te_samples;
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn into_detail(mut self) -> Option<PairDetail> {
        if let Some(detail) = self.detail.as_mut() {
            // Flush trailing cycle peaks.
            let open: Vec<_> = detail.current_peak.keys().copied().collect();
            for key in open {
                let peak = detail.current_peak.remove(&key).unwrap();
                detail.te_cycle_peaks.entry(key).or_default().push(peak);
            }
        }
        self.detail
    }
}

/// Replay a pair's reception log through the age recursion and compare with
/// the tracker-sampled ages, exactly. Within one unchanged reservation the
/// age just before a reception must equal the previous reset age plus a
/// whole number of RRI steps.
pub fn verify_aoi_recursion(records: &[ReceptionRecord]) -> Result<u64, String> {
    let mut checked = 0u64;
    for pair in records.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if prev.reservation_id != cur.reservation_id || prev.rri_ms != cur.rri_ms {
            continue;
        }
        let rri = cur.rri_ms as u64;
        let gap = cur.t_r_ms - prev.t_r_ms;
        if gap % rri != 0 {
            return Err(format!(
                "reception gap {gap} ms not on the {rri} ms lattice at t={}",
                cur.t_r_ms
            ));
        }
        let reset_age = prev.t_r_ms - prev.t_gen_ms;
        let mut age = reset_age;
        let mut t = prev.t_r_ms;
        while t + rri < cur.t_r_ms {
            age += rri; // no reception in this period
            t += rri;
        }
        let predicted_before = age + rri;
        match cur.age_before_ms {
            Some(sampled) if sampled == predicted_before => checked += 1,
            Some(sampled) => {
                return Err(format!(
                    "age mismatch at t={}: sampled {sampled}, recursion {predicted_before}",
                    cur.t_r_ms
                ))
            }
            None => return Err(format!("missing sampled age at t={}", cur.t_r_ms)),
        }
    }
    Ok(checked)
}

/// Histogram of chosen RRIs in 1 ms bins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RriHistogram {
    counts: BTreeMap<u16, u32>,
}

impl RriHistogram {
    pub fn record(&mut self, rri_ms: u16) {
        *self.counts.entry(rri_ms).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    pub fn fraction_at(&self, rri_ms: u16) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        *self.counts.get(&rri_ms).unwrap_or(&0) as f64 / total as f64
    }

    /// Probability mass at or above the given RRI.
    pub fn fraction_at_or_above(&self, rri_ms: u16) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let above: u64 = self
            .counts
            .range(rri_ms..)
            .map(|(_, &c)| c as u64)
            .sum();
        above as f64 / total as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, u32)> + '_ {
        self.counts.iter().map(|(&r, &c)| (r, c))
    }

    pub fn merge(&mut self, other: &RriHistogram) {
        for (r, c) in other.iter() {
            *self.counts.entry(r).or_insert(0) += c;
        }
    }
}

/// One point of the AoI-vs-time series (100 ms cadence).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiSample {
    pub time_ms: u64,
    /// Mean age over in-range pairs that have received at least once.
    pub aoi_ms: Option<f64>,
    /// Mean age over all in-range pairs under the startup convention.
    pub aoi_startup_ms: Option<f64>,
}

/// One row of the debug vehicle trace (100 ms cadence, opt-in).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTraceSample {
    pub time_ms: u64,
    pub id: u32,
    pub lane: u8,
    pub x_m: f64,
    pub y_m: f64,
    pub v_mps: f64,
}

/// Everything measured in one seeded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub vehicle_count: usize,
    pub mean_tracking_error_m: Option<f64>,
    pub mean_aoi_ms: Option<f64>,
    pub mean_pdr: Option<f64>,
    pub tx_count: u64,
    pub reception_count: u64,
    pub replay_checked: u64,
    pub replay_mismatches: u64,
    pub first_tx_ms: Option<u64>,
    /// Mean startup-convention AoI over the (100 ms, 200 ms] window.
    pub startup_avg_aoi_ms: Option<f64>,
    pub aoi_series: Vec<AoiSample>,
    pub rri_histogram: RriHistogram,
    pub controller_trace: Vec<ControllerSample>,
    pub vehicle_trace: Vec<VehicleTraceSample>,
    pub pair_detail: Option<PairDetail>,
}

/// One adaptive-controller decision, for trace export.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSample {
    pub time_ms: u64,
    pub vehicle_id: u32,
    pub aoi_ms: f64,
    pub action: &'static str,
    pub rri_ms: u16,
    pub congested: bool,
}
