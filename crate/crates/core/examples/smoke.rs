use nrv2x_sim::config::{SchedulerKind, SimConfig};
use nrv2x_sim::engine::run_trial;

fn main() {
    for label in ["ch_rri", "aoi_rri"] {
        for trial in 0..3 {
            let mut cfg = SimConfig::default();
            cfg.highway.density_veh_per_km = 20.0;
            cfg.scheduler = SchedulerKind::parse_label(label).unwrap();
            cfg.run.sim_time_s = 3.0;
            cfg.run.warmup_s = 2.0;
            let r = run_trial(&cfg, trial).unwrap();
            let m = &r.metrics;
            let pts: Vec<String> = m.aoi_series.iter().take(15).map(|s| format!(
                "{}:{}/{}", s.time_ms,
                s.aoi_ms.map(|v| format!("{v:.0}")).unwrap_or("-".into()),
                s.aoi_startup_ms.map(|v| format!("{v:.0}")).unwrap_or("-".into())
            )).collect();
            println!("{label} t{trial}: startup_avg={:?}", m.startup_avg_aoi_ms);
            println!("  series(A/startup) {}", pts.join(" "));
        }
    }
}
