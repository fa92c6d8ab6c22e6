//! Time-frequency resource grid and per-vehicle sensing window.
//!
//! Time is divided into 1 ms slots (15 kHz subcarrier spacing), frequency
//! into `J` subchannels. Each vehicle keeps a sliding window of RSRP
//! observations over the last `N_sensing` slots and identifies candidate
//! single-slot resources in a future selection window by projecting sensed
//! reservations forward.

use thiserror::Error;

/// Absolute slot counter since simulation start. One slot is 1 ms.
pub type SlotIndex = u64;

/// A single-slot resource: one slot on one subchannel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SingleSlotResource {
    pub slot: SlotIndex,
    pub subchannel: u8,
}

/// One sensing-window cell: either unsensed (the vehicle itself transmitted
/// in that slot, half-duplex) or a sensed RSRP level.
///
/// `UNSENSED` is a distinguished state rather than a numeric RSRP so it can
/// never be compared against a threshold by accident. Idle sensed slots
/// carry `f64::NEG_INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Unsensed,
    Sensed {
        rsrp_dbm: f64,
        /// RRI advertised by the strongest transmitter heard in this cell,
        /// if one was decodable (the sidelink control information carries
        /// the reservation period). Used to project the reservation onto
        /// future slots.
        reserving_rri_ms: Option<u16>,
    },
}

impl Observation {
    /// A sensed-idle cell: nothing received, power floor.
    pub const fn idle() -> Self {
        Observation::Sensed {
            rsrp_dbm: f64::NEG_INFINITY,
            reserving_rri_ms: None,
        }
    }

    pub fn is_unsensed(&self) -> bool {
        matches!(self, Observation::Unsensed)
    }
}

/// Selection window `[s_n + T1, s_n + T2]` relative to the first slot after
/// the sensing window. `T1` is in `[1, 4]`; `T2` must not exceed the RRI in
/// use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionWindow {
    t1: u16,
    t2: u16,
}

impl SelectionWindow {
    pub fn new(t1: u16, t2: u16) -> Result<Self, GridError> {
        if !(1..=4).contains(&t1) {
            return Err(GridError::InvalidSelectionWindow { t1, t2 });
        }
        if t2 < t1 {
            return Err(GridError::InvalidSelectionWindow { t1, t2 });
        }
        Ok(Self { t1, t2 })
    }

    pub fn t1(&self) -> u16 {
        self.t1
    }

    pub fn t2(&self) -> u16 {
        self.t2
    }

    /// Number of slots spanned by the window.
    pub fn len_slots(&self) -> u16 {
        self.t2 - self.t1 + 1
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("observation for past slot {slot} (window already at {current})")]
    PastSlot { slot: SlotIndex, current: SlotIndex },
    #[error("observation for future slot {slot} (window expects {expected})")]
    FutureSlot { slot: SlotIndex, expected: SlotIndex },
    #[error("invalid selection window T1={t1} T2={t2} (need 1 <= T1 <= 4 and T1 <= T2)")]
    InvalidSelectionWindow { t1: u16, t2: u16 },
    #[error("subchannel {subchannel} out of range (J = {total})")]
    SubchannelOutOfRange { subchannel: u8, total: u8 },
}

/// Per-slot row of the sensing window: one observation per subchannel.
#[derive(Debug, Clone)]
struct SlotRow {
    cells: Vec<Observation>,
}

impl SlotRow {
    fn idle(subchannels: u8) -> Self {
        Self {
            cells: vec![Observation::idle(); subchannels as usize],
        }
    }

    fn unsensed(&self) -> bool {
        // Half-duplex marks the whole slot, so checking one cell suffices;
        // keep the any() form in case of partial marking through the raw API.
        self.cells.iter().any(Observation::is_unsensed)
    }
}

/// Sliding sensing window over the last `N_sensing` slots.
///
/// Rows are appended strictly in slot order; recording slot `t` twice
/// updates the existing row, recording anything other than the current or
/// next slot is an engine sequencing bug and is rejected.
#[derive(Debug, Clone)]
pub struct SensingWindow {
    capacity: usize,
    subchannels: u8,
    rows: std::collections::VecDeque<SlotRow>,
    /// Absolute slot of the oldest row, meaningful when `rows` is non-empty.
    oldest_slot: SlotIndex,
}

impl SensingWindow {
    pub fn new(capacity: usize, subchannels: u8) -> Self {
        assert!(capacity >= 1, "sensing window needs at least one slot");
        assert!(subchannels >= 1, "need at least one subchannel");
        Self {
            capacity,
            subchannels,
            rows: std::collections::VecDeque::with_capacity(capacity),
            oldest_slot: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn subchannels(&self) -> u8 {
        self.subchannels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    /// Absolute slot of the oldest record, if any.
    pub fn oldest_slot(&self) -> Option<SlotIndex> {
        (!self.rows.is_empty()).then_some(self.oldest_slot)
    }

    /// Absolute slot of the newest record, if any.
    pub fn newest_slot(&self) -> Option<SlotIndex> {
        (!self.rows.is_empty()).then(|| self.oldest_slot + self.rows.len() as u64 - 1)
    }

    /// First slot after the sensing window (`s_n`). Zero for an empty window.
    pub fn next_slot(&self) -> SlotIndex {
        self.newest_slot().map_or(0, |s| s + 1)
    }

    fn ensure_row(&mut self, slot: SlotIndex) -> Result<usize, GridError> {
        match self.newest_slot() {
            None => {
                self.rows.push_back(SlotRow::idle(self.subchannels));
                self.oldest_slot = slot;
                Ok(0)
            }
            Some(newest) if slot == newest => Ok(self.rows.len() - 1),
            Some(newest) if slot == newest + 1 => {
                if self.rows.len() == self.capacity {
                    self.rows.pop_front();
                    self.oldest_slot += 1;
                }
                self.rows.push_back(SlotRow::idle(self.subchannels));
                Ok(self.rows.len() - 1)
            }
            Some(newest) if slot < newest => Err(GridError::PastSlot {
                slot,
                current: newest,
            }),
            Some(newest) => Err(GridError::FutureSlot {
                slot,
                expected: newest + 1,
            }),
        }
    }

    /// Record one observation for the current slot.
    ///
    /// Recording `Observation::Unsensed` marks the whole slot unsensed on
    /// all subchannels: half-duplex loss is a per-slot property of the
    /// transmitting vehicle.
    pub fn record_observation(
        &mut self,
        slot: SlotIndex,
        subchannel: u8,
        obs: Observation,
    ) -> Result<(), GridError> {
        if subchannel >= self.subchannels {
            return Err(GridError::SubchannelOutOfRange {
                subchannel,
                total: self.subchannels,
            });
        }
        let idx = self.ensure_row(slot)?;
        if obs.is_unsensed() {
            for cell in &mut self.rows[idx].cells {
                *cell = Observation::Unsensed;
            }
        } else {
            self.rows[idx].cells[subchannel as usize] = obs;
        }
        Ok(())
    }

    /// Mark the current slot as a self-transmission: unsensed on all
    /// subchannels.
    pub fn record_transmission(&mut self, slot: SlotIndex) -> Result<(), GridError> {
        let idx = self.ensure_row(slot)?;
        for cell in &mut self.rows[idx].cells {
            *cell = Observation::Unsensed;
        }
        Ok(())
    }

    /// Append an idle row for `slot` (nothing sensed above the floor).
    pub fn record_idle_slot(&mut self, slot: SlotIndex) -> Result<(), GridError> {
        self.ensure_row(slot)?;
        Ok(())
    }

    /// Observation at an absolute slot/subchannel, if it is inside the window.
    pub fn get(&self, slot: SlotIndex, subchannel: u8) -> Option<Observation> {
        let oldest = self.oldest_slot()?;
        if slot < oldest || slot > self.newest_slot()? {
            return None;
        }
        let row = &self.rows[(slot - oldest) as usize];
        row.cells.get(subchannel as usize).copied()
    }

    /// Candidate single-slot resources in `[s_n + T1, s_n + T2]` that
    /// survive the exclusion rules, in (slot, subchannel) order.
    ///
    /// A candidate is excluded when any window slot congruent to it
    /// (modulo the projecting period) either was not monitored (half-duplex)
    /// or carries RSRP at or above `p_th_dbm`. Unsensed slots project with
    /// the caller's own `rri_ms` (no control information was decoded there);
    /// sensed reservations project with the RRI announced by the
    /// transmitter, falling back to `rri_ms` when unknown.
    pub fn candidate_slots(
        &self,
        sel: &SelectionWindow,
        rri_ms: u16,
        p_th_dbm: f64,
    ) -> Vec<SingleSlotResource> {
        assert!(rri_ms >= 1, "RRI must be at least 1 ms");
        let s_n = self.next_slot();
        let first = s_n + sel.t1() as u64;
        let n_slots = sel.len_slots() as usize;
        let j = self.subchannels as usize;

        // available[slot_offset * J + subchannel]
        let mut available = vec![true; n_slots * j];

        let mut exclude_stride = |w_abs: SlotIndex, modulus: u16, sub: Option<u8>| {
            let m = modulus.max(1) as u64;
            // First candidate >= first with candidate ≡ w_abs (mod m).
            let delta = first - w_abs; // first > w_abs always (w is in the past)
            let k = delta.div_ceil(m);
            let mut c = w_abs + k * m;
            while c < first + n_slots as u64 {
                let off = (c - first) as usize;
                match sub {
                    Some(s) => available[off * j + s as usize] = false,
                    None => available[off * j..(off + 1) * j].fill(false),
                }
                c += m;
            }
        };

        for (i, row) in self.rows.iter().enumerate() {
            let w_abs = self.oldest_slot + i as u64;
            if row.unsensed() {
                exclude_stride(w_abs, rri_ms, None);
                continue;
            }
            for (s, cell) in row.cells.iter().enumerate() {
                if let Observation::Sensed {
                    rsrp_dbm,
                    reserving_rri_ms,
                } = cell
                {
                    if *rsrp_dbm >= p_th_dbm {
                        let modulus = reserving_rri_ms.unwrap_or(rri_ms);
                        exclude_stride(w_abs, modulus, Some(s as u8));
                    }
                }
            }
        }

        let mut out = Vec::new();
        for off in 0..n_slots {
            for s in 0..j {
                if available[off * j + s] {
                    out.push(SingleSlotResource {
                        slot: first + off as u64,
                        subchannel: s as u8,
                    });
                }
            }
        }
        out
    }
}
