//! Deterministic slot-stepped orchestration of one trial and multi-cell
//! experiment sweeps.
//!
//! Event ordering within a slot is fixed: mobility advance, metric
//! integration and delivery of the previous slot's receptions, BSM
//! transmission, channel resolution, sensing-window update, reselection,
//! histogram capture. Reordering any of these is a breaking change.
//!
//! RNG discipline: every stochastic draw comes from a named per-entity
//! stream. The mobility stream is derived from (master seed, density,
//! trial) only, so initial positions and velocities are identical across
//! schedulers for a given cell; per-vehicle scheduler streams additionally
//! mix in the scheduler label and vehicle id.

use crate::aoi_rri::{self, AoiRriState};
use crate::channel::{self, ChannelError, TransmissionEvent};
use crate::ch_rri::{self, ChRriError};
use crate::config::{ConfigError, SchedulerKind, SimConfig};
use crate::grid::SensingWindow;
use crate::metrics::{
    AoiSample, ControllerSample, PairMatrix, RriHistogram, TrialMetrics, VehicleTraceSample,
};
use crate::mobility::{self, MobilityError, Vehicle};
use crate::sps::{self, SpsConfig, SpsError, SpsState, TransmitOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Neighbor candidate lists are rebuilt at this cadence with a position
/// margin covering the worst-case relative drift in between.
const NEIGHBOR_REFRESH_SLOTS: u64 = 50;
const NEIGHBOR_MARGIN_M: f64 = 10.0;

/// AoI-vs-time sampling cadence.
const AOI_SERIES_CADENCE_MS: u64 = 100;

/// RRI histograms cover the final part of the run.
const RRI_HIST_WINDOW_MS: u64 = 5000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mobility: {0}")]
    Mobility(#[from] MobilityError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("scheduling: {0}")]
    Sps(#[from] SpsError),
    #[error("ch-rri: {0}")]
    ChRri(#[from] ChRriError),
    #[error("injected vehicles must have ids 0..n in order")]
    BadInjectedVehicles,
}

/// Result of one seeded trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub config_fingerprint: u64,
    pub trial: u32,
    pub density_veh_per_km: f64,
    pub scheduler_label: String,
    pub metrics: TrialMetrics,
    /// Wall-clock runtime; informational only, never written to result
    /// files (they must be byte-identical across reruns).
    pub runtime_s: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn seed_chain(values: &[u64]) -> u64 {
    values
        .iter()
        .fold(0x5851_f42d_4c95_7f2d, |h, &v| splitmix64(h ^ v))
}

fn label_hash(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Per-vehicle scheduler context.
struct Node {
    window: SensingWindow,
    reservation: Option<SpsState>,
    rng: ChaCha12Rng,
    /// AoI-RRI controller memory (AoI-RRI scheduler only).
    controller: Option<AoiRriState>,
    next_reservation_id: u32,
    /// PDR denominator: in-range neighbors summed over own transmissions.
    exposure: u64,
    /// PDR numerator: successful receptions of this vehicle's packets.
    credited: u64,
}

struct Pending {
    rx: u32,
    tx: u32,
    gen_ms: u64,
    pos: (f64, f64),
    rri_ms: u16,
    reservation_id: u32,
}

pub fn run_trial(cfg: &SimConfig, trial: u32) -> Result<TrialResult, EngineError> {
    run_trial_with_initial(cfg, trial, None)
}

/// Run one trial, optionally with injected initial vehicles (ids must be
/// 0..n in order); used for analytic two-vehicle scenarios.
pub fn run_trial_with_initial(
    cfg: &SimConfig,
    trial: u32,
    initial: Option<Vec<Vehicle>>,
) -> Result<TrialResult, EngineError> {
    cfg.validate()?;
    let started = std::time::Instant::now();

    let density_bits = cfg.highway.density_veh_per_km.to_bits();
    let label = cfg.scheduler.label();
    let mobility_seed = seed_chain(&[cfg.run.master_seed, density_bits, trial as u64]);

    let mut vehicles = match initial {
        Some(v) => {
            if v.iter().enumerate().any(|(i, veh)| veh.id != i as u32) {
                return Err(EngineError::BadInjectedVehicles);
            }
            v
        }
        None => {
            let mut rng = ChaCha12Rng::seed_from_u64(mobility_seed);
            mobility::spawn_vehicles(&cfg.highway, &mut rng)?
        }
    };
    let n = vehicles.len();
    let road = cfg.highway.road_length_m;
    let range = cfg.channel.sensing_range_m;
    let range2 = range * range;
    let j = cfg.run.subchannels;
    let n_sensing = cfg.run.n_sensing_slots as usize;
    let sim_slots = cfg.sim_slots();
    let warmup_slots = cfg.warmup_slots();
    let hist_start = sim_slots.saturating_sub(RRI_HIST_WINDOW_MS);
    let startup_offset = cfg.run.startup_age_offset_ms as u64;

    // Adaptive schedulers never re-reserve: reselection is their adaptation
    // point.
    let effective_sps = |base: &SpsConfig| -> SpsConfig {
        match cfg.scheduler {
            SchedulerKind::Static { .. } => base.clone(),
            _ => SpsConfig {
                p_keep: 0.0,
                ..base.clone()
            },
        }
    };
    let sps_cfg = effective_sps(&cfg.sps);

    let mut nodes: Vec<Node> = (0..n)
        .map(|id| Node {
            window: SensingWindow::new(n_sensing, j),
            reservation: None,
            rng: ChaCha12Rng::seed_from_u64(seed_chain(&[
                cfg.run.master_seed,
                density_bits,
                trial as u64,
                label_hash(&label),
                id as u64,
            ])),
            controller: match &cfg.scheduler {
                SchedulerKind::AoiRri(_) => Some(AoiRriState::new(
                    cfg.run.warmup_rri_ms,
                    cfg.sps.p_min_dbm,
                )),
                _ => None,
            },
            next_reservation_id: 0,
            exposure: 0,
            credited: 0,
        })
        .collect();

    let mut pm = PairMatrix::new(n, road, cfg.run.record_pair_detail);
    let mut hist = RriHistogram::default();
    let mut series: Vec<AoiSample> = Vec::new();
    let mut controller_trace: Vec<ControllerSample> = Vec::new();
    let mut vehicle_trace: Vec<VehicleTraceSample> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut transmissions: Vec<TransmissionEvent> = Vec::new();
    let mut neighbor_lists: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut tx_count = 0u64;
    let mut reception_count = 0u64;
    let mut first_tx_ms: Option<u64> = None;
    let mut startup_sum = 0.0f64;
    let mut startup_slots = 0u64;

    let full_mask = if j >= 32 { u32::MAX } else { (1u32 << j) - 1 };

    for t in 0..=sim_slots {
        let now = t;

        // 1. Mobility: positions represent time `t` from here on.
        if t > 0 {
            mobility::step(&mut vehicles, 1e-3, road);
        }

        // 2a. Refresh neighbor candidate lists (margin covers drift).
        if t % NEIGHBOR_REFRESH_SLOTS == 0 {
            let reach = range + NEIGHBOR_MARGIN_M;
            for list in &mut neighbor_lists {
                list.clear();
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    let dx = mobility::wrap_distance_1d(vehicles[a].x, vehicles[b].x, road);
                    if dx > reach {
                        continue;
                    }
                    let dy = vehicles[a].y - vehicles[b].y;
                    if dx * dx + dy * dy <= reach * reach {
                        neighbor_lists[a].push(b as u32);
                        neighbor_lists[b].push(a as u32);
                    }
                }
            }
        }

        // 2b. Integrate metrics over [t-1, t] and sample at time t, before
        // this slot's receptions are applied.
        let series_sample = now % AOI_SERIES_CADENCE_MS == 0;
        let startup_window = now > 100 && now <= 200;
        let mut sum_aoi = 0.0f64;
        let mut cnt_aoi = 0u64;
        let mut sum_startup = 0.0f64;
        let mut cnt_startup = 0u64;
        let track_startup = series_sample || startup_window;
        for rx in 0..n {
            let (rx_x, rx_y) = (vehicles[rx].x, vehicles[rx].y);
            for &txu in &neighbor_lists[rx] {
                let tx = txu as usize;
                let dx = mobility::wrap_distance_1d(rx_x, vehicles[tx].x, road);
                let dy = rx_y - vehicles[tx].y;
                if dx * dx + dy * dy > range2 {
                    continue;
                }
                let sample =
                    pm.integrate_slot(rx as u32, txu, now, (vehicles[tx].x, vehicles[tx].y));
                if track_startup {
                    if let Some(age) = sample.age_ms {
                        sum_aoi += age as f64;
                        cnt_aoi += 1;
                        sum_startup += age as f64;
                    } else {
                        sum_startup += (now + startup_offset) as f64;
                    }
                    cnt_startup += 1;
                }
            }
        }
        if startup_window && cnt_startup > 0 {
            startup_sum += sum_startup / cnt_startup as f64;
            startup_slots += 1;
        }
        if series_sample {
            series.push(AoiSample {
                time_ms: now,
                aoi_ms: (cnt_aoi > 0).then(|| sum_aoi / cnt_aoi as f64),
                aoi_startup_ms: (cnt_startup > 0).then(|| sum_startup / cnt_startup as f64),
            });
            if cfg.run.record_vehicle_trace {
                for v in &vehicles {
                    vehicle_trace.push(VehicleTraceSample {
                        time_ms: now,
                        id: v.id,
                        lane: v.lane,
                        x_m: v.x,
                        y_m: v.y,
                        v_mps: v.velocity,
                    });
                }
            }
        }

        // 2c. Deliver the previous slot's successful receptions (t_r = t).
        for p in pending.drain(..) {
            let rx = p.rx as usize;
            let tx = p.tx as usize;
            let old_pos = pm.last_pos(p.rx, p.tx);
            pm.apply_reception(
                p.rx,
                p.tx,
                now,
                p.gen_ms,
                p.pos,
                p.rri_ms,
                p.reservation_id,
            );
            let dx = mobility::wrap_distance_1d(vehicles[rx].x, vehicles[tx].x, road);
            let dy = vehicles[rx].y - vehicles[tx].y;
            if dx * dx + dy * dy <= range2 {
                let tx_true = (vehicles[tx].x, vehicles[tx].y);
                pm.correct_te_sample(
                    p.rx,
                    p.tx,
                    tx_true,
                    old_pos.unwrap_or((0.0, 0.0)),
                    old_pos.is_some(),
                );
            }
        }

        if t == sim_slots {
            break; // final flush pass ends here
        }

        // 3. Transmissions scheduled for this slot; the payload snapshot is
        // taken at generation time = slot start.
        transmissions.clear();
        for (id, node) in nodes.iter().enumerate() {
            if let Some(res) = &node.reservation {
                if res.next_tx_slot == t {
                    transmissions.push(TransmissionEvent {
                        tx_id: id as u32,
                        slot: t,
                        subchannel_mask: res.subchannel_mask & full_mask,
                        generation_time_ms: now,
                        payload_pos: (vehicles[id].x, vehicles[id].y),
                        size_bytes: cfg.run.packet_size_bytes,
                        rri_ms: res.rri_ms,
                        reservation_id: res.reservation_id,
                    });
                }
            }
        }
        if !transmissions.is_empty() {
            tx_count += transmissions.len() as u64;
            first_tx_ms.get_or_insert(now);
        }

        // 4. Channel resolution; successes buffered for delivery at t+1.
        if !transmissions.is_empty() {
            let outcomes = channel::resolve_slot(&transmissions, &vehicles, road, &cfg.channel)?;
            let mut successes = 0u64;
            for o in &outcomes {
                nodes[o.tx_id as usize].exposure += 1;
                if o.success {
                    successes += 1;
                    nodes[o.tx_id as usize].credited += 1;
                    let tx_ev = transmissions
                        .iter()
                        .find(|e| e.tx_id == o.tx_id)
                        .expect("outcome refers to a transmission");
                    pending.push(Pending {
                        rx: o.rx_id,
                        tx: o.tx_id,
                        gen_ms: tx_ev.generation_time_ms,
                        pos: tx_ev.payload_pos,
                        rri_ms: tx_ev.rri_ms,
                        reservation_id: tx_ev.reservation_id,
                    });
                }
            }
            reception_count += successes;
            debug_assert!(successes <= outcomes.len() as u64);
        }

        // 5. Sensing: transmitters store an unsensed row (half-duplex);
        // everyone else records the strongest in-range transmission per
        // subchannel together with its announced RRI.
        for (id, node) in nodes.iter_mut().enumerate() {
            if transmissions.iter().any(|e| e.tx_id == id as u32) {
                node.window.record_transmission(t).expect("slot sequence");
                continue;
            }
            if transmissions.is_empty() {
                node.window.record_idle_slot(t).expect("slot sequence");
                continue;
            }
            let mut wrote = false;
            for sub in 0..j {
                let mut best: Option<(f64, u16)> = None;
                for e in &transmissions {
                    if e.subchannel_mask & (1 << sub) == 0 {
                        continue;
                    }
                    let d = mobility::wrap_distance(
                        &vehicles[e.tx_id as usize],
                        &vehicles[id],
                        road,
                    );
                    if d > range {
                        continue;
                    }
                    let rsrp = channel::rsrp_at(d, &cfg.channel);
                    if best.map_or(true, |(b, _)| rsrp > b) {
                        best = Some((rsrp, e.rri_ms));
                    }
                }
                if let Some((rsrp, rri)) = best {
                    node.window
                        .record_observation(
                            t,
                            sub,
                            crate::grid::Observation::Sensed {
                                rsrp_dbm: rsrp,
                                reserving_rri_ms: Some(rri),
                            },
                        )
                        .expect("slot sequence");
                    wrote = true;
                }
            }
            if !wrote {
                node.window.record_idle_slot(t).expect("slot sequence");
            }
        }

        // 7a. Reservations active at the histogram window start count once.
        if t == hist_start {
            for node in &nodes {
                if let Some(res) = &node.reservation {
                    hist.record(res.rri_ms);
                }
            }
        }

        // 6. Reselection: counter bookkeeping for this slot's transmitters,
        // then initial selection for vehicles whose window just filled.
        for id in 0..n {
            let transmitted = transmissions.iter().any(|e| e.tx_id == id as u32);
            let needs_select = if transmitted {
                let node = &mut nodes[id];
                let res = node.reservation.as_mut().expect("transmitter is reserved");
                match sps::on_transmit(res, &sps_cfg, &mut node.rng)? {
                    TransmitOutcome::Keep => false,
                    TransmitOutcome::Reselect => true,
                }
            } else {
                nodes[id].reservation.is_none() && nodes[id].window.is_full()
            };
            if !needs_select {
                continue;
            }
            let new_rri = select_for(
                cfg,
                &sps_cfg,
                &mut nodes,
                id,
                now,
                t < warmup_slots,
                &neighbor_lists,
                &vehicles,
                &pm,
                range2,
                road,
                cfg.run.record_controller_trace,
                &mut controller_trace,
            )?;
            if t >= hist_start {
                hist.record(new_rri);
            }
        }
    }

    let mean_pdr = {
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for node in &nodes {
            if let Some(p) = crate::metrics::pdr(node.credited, node.exposure) {
                sum += p;
                cnt += 1;
            }
        }
        (cnt > 0).then(|| sum / cnt as f64)
    };

    let replay_checked = pm.replay_checked;
    let replay_mismatches = pm.replay_mismatches;
    let metrics = TrialMetrics {
        vehicle_count: n,
        mean_tracking_error_m: pm.mean_tracking_error(),
        mean_aoi_ms: pm.system_aoi(),
        mean_pdr,
        tx_count,
        reception_count,
        replay_checked,
        replay_mismatches,
        first_tx_ms,
        startup_avg_aoi_ms: (startup_slots > 0).then(|| startup_sum / startup_slots as f64),
        aoi_series: series,
        rri_histogram: hist,
        controller_trace,
        vehicle_trace,
        pair_detail: pm.into_detail(),
    };

    Ok(TrialResult {
        config_fingerprint: cfg.fingerprint(),
        trial,
        density_veh_per_km: cfg.highway.density_veh_per_km,
        scheduler_label: label,
        metrics,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Scheduler-specific reselection for one vehicle at the end of slot `now`.
/// Returns the RRI of the new reservation.
#[allow(clippy::too_many_arguments)]
fn select_for(
    cfg: &SimConfig,
    sps_cfg: &SpsConfig,
    nodes: &mut [Node],
    id: usize,
    now: u64,
    in_warmup: bool,
    neighbor_lists: &[Vec<u32>],
    vehicles: &[Vehicle],
    pm: &PairMatrix,
    range2: f64,
    road: f64,
    trace: bool,
    controller_trace: &mut Vec<ControllerSample>,
) -> Result<u16, EngineError> {
    let resv_id = nodes[id].next_reservation_id;
    nodes[id].next_reservation_id += 1;

    let new_state: SpsState = match &cfg.scheduler {
        SchedulerKind::Static { rri_ms } => {
            let node = &mut nodes[id];
            sps::select_resource(&node.window, sps_cfg, *rri_ms, resv_id, &mut node.rng)?
        }
        SchedulerKind::ChRri(ch_cfg) => {
            if in_warmup {
                let node = &mut nodes[id];
                sps::select_resource(
                    &node.window,
                    sps_cfg,
                    cfg.run.warmup_rri_ms,
                    resv_id,
                    &mut node.rng,
                )?
            } else {
                let node = &mut nodes[id];
                let (_, state) =
                    ch_rri::ch_rri_select(&node.window, ch_cfg, sps_cfg, resv_id, &mut node.rng)?;
                state
            }
        }
        SchedulerKind::AoiRri(aoi_cfg) => {
            if in_warmup {
                let node = &mut nodes[id];
                let state = sps::select_resource(
                    &node.window,
                    sps_cfg,
                    cfg.run.warmup_rri_ms,
                    resv_id,
                    &mut node.rng,
                )?;
                let ctrl = node.controller.as_mut().expect("aoi controller");
                ctrl.prev_rri_ms = state.rri_ms;
                ctrl.prev_p_th_dbm = state.p_th_dbm;
                state
            } else {
                // Congestion first (it only needs the sensing window), then
                // the local AoI measurement over in-range heard neighbors.
                let ctrl = *nodes[id].controller.as_ref().expect("aoi controller");
                let congested = aoi_rri::channel_congested(
                    &nodes[id].window,
                    ctrl.prev_p_th_dbm,
                    ctrl.prev_rri_ms,
                    aoi_cfg.congestion_fraction,
                );
                let mut gen_times = Vec::new();
                let (vx, vy) = (vehicles[id].x, vehicles[id].y);
                for &u in &neighbor_lists[id] {
                    let dx = mobility::wrap_distance_1d(vx, vehicles[u as usize].x, road);
                    let dy = vy - vehicles[u as usize].y;
                    if dx * dx + dy * dy > range2 {
                        continue;
                    }
                    if let Some(g) = pm.last_gen(id as u32, u) {
                        gen_times.push(g);
                    }
                }
                let aoi_now = aoi_rri::measure_local_aoi(
                    gen_times,
                    now,
                    ctrl.prev_rri_ms as f64,
                );
                let (rri_new, action) = aoi_rri::aoi_rri_update(&ctrl, aoi_now, congested, aoi_cfg);
                let node = &mut nodes[id];
                let state =
                    sps::select_resource(&node.window, sps_cfg, rri_new, resv_id, &mut node.rng)?;
                *node.controller.as_mut().expect("aoi controller") = AoiRriState {
                    prev_rri_ms: rri_new,
                    prev_aoi_ms: Some(aoi_now),
                    prev_action: action,
                    prev_p_th_dbm: state.p_th_dbm,
                };
                if trace {
                    controller_trace.push(ControllerSample {
                        time_ms: now,
                        vehicle_id: id as u32,
                        aoi_ms: aoi_now,
                        action: action.as_str(),
                        rri_ms: rri_new,
                        congested,
                    });
                }
                state
            }
        }
    };
    let rri = new_state.rri_ms;
    nodes[id].reservation = Some(new_state);
    Ok(rri)
}

/// One (density, scheduler) cell of an experiment, aggregated over trials.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub density_veh_per_km: f64,
    pub scheduler: SchedulerKind,
    pub label: String,
    pub trials: Vec<TrialResult>,
    pub mean_tracking_error_m: Option<f64>,
    pub mean_aoi_ms: Option<f64>,
    pub mean_pdr: Option<f64>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    /// One entry per grid cell; failed cells carry the error text so one
    /// bad cell cannot abort the sweep.
    pub cells: Vec<Result<CellResult, String>>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Run the full densities × schedulers grid, `trials` seeded runs per cell,
/// trials in parallel. Mobility for a given (density, trial) is identical
/// across schedulers by seed construction.
pub fn run_experiment(
    base: &SimConfig,
    densities: &[f64],
    schedulers: &[SchedulerKind],
    trials: u32,
) -> Result<ExperimentResult, EngineError> {
    if densities.is_empty() || schedulers.is_empty() || trials == 0 {
        return Err(EngineError::Config(ConfigError::Invalid(vec![
            "sweep needs at least one density, one scheduler, and one trial".into(),
        ])));
    }
    let grid: Vec<(f64, SchedulerKind)> = densities
        .iter()
        .flat_map(|&d| schedulers.iter().map(move |s| (d, s.clone())))
        .collect();

    let cells: Vec<Result<CellResult, String>> = grid
        .par_iter()
        .map(|(density, scheduler)| {
            let mut cfg = base.clone();
            cfg.highway.density_veh_per_km = *density;
            cfg.scheduler = scheduler.clone();
            cfg.run.trials = trials;
            cfg.validate().map_err(|e| e.to_string())?;
            let results: Vec<TrialResult> = (0..trials)
                .into_par_iter()
                .map(|k| run_trial(&cfg, k).map_err(|e| e.to_string()))
                .collect::<Result<_, String>>()?;
            Ok(CellResult {
                density_veh_per_km: *density,
                scheduler: scheduler.clone(),
                label: scheduler.label(),
                mean_tracking_error_m: mean_of(
                    results.iter().map(|r| r.metrics.mean_tracking_error_m),
                ),
                mean_aoi_ms: mean_of(results.iter().map(|r| r.metrics.mean_aoi_ms)),
                mean_pdr: mean_of(results.iter().map(|r| r.metrics.mean_pdr)),
                trials: results,
            })
        })
        .collect();

    Ok(ExperimentResult { cells })
}
