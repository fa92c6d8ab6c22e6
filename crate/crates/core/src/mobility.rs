//! Six-lane highway mobility: Poisson initial placement, truncated-Gaussian
//! constant speeds, fixed lanes, toroidal wrap at the highway ends.
//!
//! Lanes 0-2 travel in the positive direction, lanes 3-5 in the negative
//! direction. The wrap emulates an infinite highway, so distances between
//! vehicles are measured wrap-aware.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highway geometry and traffic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighwayConfig {
    pub road_length_m: f64,
    pub lanes: u8,
    pub lane_width_m: f64,
    pub density_veh_per_km: f64,
    pub v_mean_mps: f64,
    pub v_std_mps: f64,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        Self {
            road_length_m: 2000.0,
            lanes: 6,
            lane_width_m: 4.0,
            density_veh_per_km: 20.0,
            v_mean_mps: 19.44,
            v_std_mps: 3.0,
        }
    }
}

impl HighwayConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        if self.road_length_m <= 0.0 {
            return Err(MobilityError::BadConfig("road_length_m must be > 0"));
        }
        if self.lanes == 0 {
            return Err(MobilityError::BadConfig("lanes must be >= 1"));
        }
        if self.lane_width_m <= 0.0 {
            return Err(MobilityError::BadConfig("lane_width_m must be > 0"));
        }
        if self.density_veh_per_km <= 0.0 {
            return Err(MobilityError::ZeroDensity);
        }
        if self.v_mean_mps <= 0.0 {
            return Err(MobilityError::BadConfig("v_mean_mps must be > 0"));
        }
        if self.v_std_mps < 0.0 {
            return Err(MobilityError::BadConfig("v_std_mps must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("vehicle density must be > 0")]
    ZeroDensity,
    #[error("invalid highway config: {0}")]
    BadConfig(&'static str),
}

/// A vehicle: kinematic state only. Scheduler state lives with the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub lane: u8,
    /// Longitudinal position in [0, road_length).
    pub x: f64,
    /// Lateral position (lane center), fixed for the whole run.
    pub y: f64,
    /// Signed speed: positive in lanes 0..lanes/2, negative otherwise.
    pub velocity: f64,
}

/// Wrap-aware longitudinal separation between two positions on the ring.
pub fn wrap_distance_1d(x1: f64, x2: f64, road_length: f64) -> f64 {
    let d = (x1 - x2).abs();
    d.min(road_length - d)
}

/// Wrap-aware Euclidean distance between two vehicles.
pub fn wrap_distance(a: &Vehicle, b: &Vehicle, road_length: f64) -> f64 {
    let dx = wrap_distance_1d(a.x, b.x, road_length);
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Draw from a Gaussian truncated at mean ± 3σ by rejection sampling.
fn truncated_gaussian<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, std).expect("finite mean/std");
    loop {
        let v = normal.sample(rng);
        if (v - mean).abs() <= 3.0 * std {
            return v;
        }
    }
}

/// Place vehicles along the highway as a Poisson process and draw their
/// speeds. Total count is Poisson with mean `density × road_length_km`;
/// positions are uniform on `[0, road_length)`; lanes are assigned
/// uniformly at random and decide the direction of travel.
pub fn spawn_vehicles<R: Rng>(
    cfg: &HighwayConfig,
    rng: &mut R,
) -> Result<Vec<Vehicle>, MobilityError> {
    cfg.validate()?;
    let mean = cfg.density_veh_per_km * cfg.road_length_m / 1000.0;
    let poisson = Poisson::new(mean).expect("positive mean");
    let count = poisson.sample(rng).round() as u64;

    let half = cfg.lanes.div_ceil(2);
    let mut vehicles = Vec::with_capacity(count as usize);
    for id in 0..count {
        let x = rng.random_range(0.0..cfg.road_length_m);
        let lane = rng.random_range(0..cfg.lanes);
        let speed = truncated_gaussian(rng, cfg.v_mean_mps, cfg.v_std_mps);
        let velocity = if lane < half { speed } else { -speed };
        vehicles.push(Vehicle {
            id: id as u32,
            lane,
            x,
            y: lane as f64 * cfg.lane_width_m + cfg.lane_width_m / 2.0,
            velocity,
        });
    }
    Ok(vehicles)
}

/// Advance all vehicles by `dt` seconds with toroidal wrap.
pub fn step(vehicles: &mut [Vehicle], dt: f64, road_length: f64) {
    debug_assert!(dt > 0.0);
    for v in vehicles {
        v.x = (v.x + v.velocity * dt).rem_euclid(road_length);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn wrap_forward() {
        let mut v = [Vehicle {
            id: 0,
            lane: 0,
            x: 1999.0,
            y: 2.0,
            velocity: 20.0,
        }];
        step(&mut v, 0.1, 2000.0);
        assert!((v[0].x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_backward() {
        let mut v = [Vehicle {
            id: 0,
            lane: 3,
            x: 5.0,
            y: 14.0,
            velocity: -20.0,
        }];
        step(&mut v, 0.5, 2000.0);
        assert!((v[0].x - 1995.0).abs() < 1e-9);
    }

    #[test]
    fn linear_motion() {
        let mut v = [Vehicle {
            id: 0,
            lane: 0,
            x: 100.0,
            y: 2.0,
            velocity: 19.44,
        }];
        step(&mut v, 0.001, 2000.0);
        assert!((v[0].x - 100.01944).abs() < 1e-9);
    }

    #[test]
    fn degenerate_gaussian_gives_exact_speed() {
        let cfg = HighwayConfig {
            v_std_mps: 0.0,
            ..HighwayConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let vehicles = spawn_vehicles(&cfg, &mut rng).unwrap();
        for v in vehicles.iter().filter(|v| v.lane < 3) {
            assert_eq!(v.velocity, 19.44);
        }
        for v in vehicles.iter().filter(|v| v.lane >= 3) {
            assert_eq!(v.velocity, -19.44);
        }
    }

    #[test]
    fn zero_density_rejected() {
        let cfg = HighwayConfig {
            density_veh_per_km: 0.0,
            ..HighwayConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert_eq!(
            spawn_vehicles(&cfg, &mut rng).unwrap_err(),
            MobilityError::ZeroDensity
        );
    }

    #[test]
    fn same_seed_same_spawn() {
        let cfg = HighwayConfig::default();
        let a = spawn_vehicles(&cfg, &mut ChaCha12Rng::seed_from_u64(42)).unwrap();
        let b = spawn_vehicles(&cfg, &mut ChaCha12Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    /// Monte-Carlo check of the Poisson spawn mean, at both the default and
    /// the top-of-range density.
    #[test]
    fn poisson_spawn_mean_within_5_percent() {
        for (density, expected) in [(20.0, 40.0), (160.0, 320.0)] {
            let cfg = HighwayConfig {
                density_veh_per_km: density,
                ..HighwayConfig::default()
            };
            let mut total = 0usize;
            let n = 1000;
            for seed in 0..n {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                total += spawn_vehicles(&cfg, &mut rng).unwrap().len();
            }
            let mean = total as f64 / n as f64;
            assert!(
                (mean - expected).abs() / expected < 0.05,
                "density {density}: sample mean {mean} vs expected {expected}"
            );
        }
    }

    #[test]
    fn positions_stay_in_range_and_displacement_is_exact() {
        let cfg = HighwayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut vehicles = spawn_vehicles(&cfg, &mut rng).unwrap();
        let before = vehicles.clone();
        let dt = 0.001;
        for _ in 0..5000 {
            step(&mut vehicles, dt, cfg.road_length_m);
        }
        for (b, a) in before.iter().zip(&vehicles) {
            assert!(a.x >= 0.0 && a.x < cfg.road_length_m);
            let expect = (b.x + b.velocity * dt * 5000.0).rem_euclid(cfg.road_length_m);
            assert!(
                wrap_distance_1d(a.x, expect, cfg.road_length_m) < 1e-6,
                "displacement mismatch: {} vs {}",
                a.x,
                expect
            );
            assert_eq!(a.lane, b.lane);
            assert_eq!(a.velocity, b.velocity);
        }
    }

    #[test]
    fn speeds_bounded_by_three_sigma() {
        let cfg = HighwayConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let vehicles = spawn_vehicles(&cfg, &mut rng).unwrap();
            for v in vehicles {
                let speed = v.velocity.abs();
                assert!(speed >= cfg.v_mean_mps - 3.0 * cfg.v_std_mps - 1e-9);
                assert!(speed <= cfg.v_mean_mps + 3.0 * cfg.v_std_mps + 1e-9);
            }
        }
    }
}
