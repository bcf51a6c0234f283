//! Analytic Walker constellation propagation and the 4-neighbor ISL grid.
//!
//! Orbits are circular Keplerian; the Earth is a sphere rotating at a uniform
//! rate. Positions are reported in an Earth-fixed (ECEF) frame in km.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sidereal rotation rate of the Earth, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_9e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    pub planes: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// In-plane anomaly shift applied per plane index, degrees.
    #[serde(default)]
    pub phasing_offset_deg: f64,
    /// Earth rotation angle at `t = 0` is `EARTH_ROTATION_RATE * epoch_s`.
    #[serde(default)]
    pub epoch_s: f64,
    #[serde(default = "default_earth_radius")]
    pub earth_radius_km: f64,
    #[serde(default = "default_mu")]
    pub mu_km3_s2: f64,
}

fn default_earth_radius() -> f64 {
    6371.0
}

fn default_mu() -> f64 {
    398_600.441_8
}

impl ConstellationConfig {
    pub fn walker(planes: usize, sats_per_plane: usize, altitude_km: f64, inclination_deg: f64) -> Self {
        Self {
            planes,
            sats_per_plane,
            altitude_km,
            inclination_deg,
            phasing_offset_deg: 0.0,
            epoch_s: 0.0,
            earth_radius_km: default_earth_radius(),
            mu_km3_s2: default_mu(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.planes < 1 {
            return Err(Error::validation("constellation.planes", "must be >= 1"));
        }
        if self.sats_per_plane < 3 {
            return Err(Error::validation("constellation.sats_per_plane", "must be >= 3"));
        }
        if !(self.altitude_km > 0.0 && self.altitude_km.is_finite()) {
            return Err(Error::validation("constellation.altitude_km", "must be > 0"));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(Error::validation(
                "constellation.inclination_deg",
                "must lie in [0, 180]",
            ));
        }
        if !(self.earth_radius_km > 0.0 && self.earth_radius_km.is_finite()) {
            return Err(Error::validation("constellation.earth_radius_km", "must be > 0"));
        }
        if !(self.mu_km3_s2 > 0.0 && self.mu_km3_s2.is_finite()) {
            return Err(Error::validation("constellation.mu_km3_s2", "must be > 0"));
        }
        if !self.phasing_offset_deg.is_finite() || !self.epoch_s.is_finite() {
            return Err(Error::validation("constellation", "phasing and epoch must be finite"));
        }
        Ok(())
    }

    pub fn num_satellites(&self) -> usize {
        self.planes * self.sats_per_plane
    }

    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Mean motion of the circular orbit, rad/s.
    pub fn angular_rate(&self) -> f64 {
        (self.mu_km3_s2 / self.orbit_radius_km().powi(3)).sqrt()
    }

    pub fn orbital_period_s(&self) -> f64 {
        2.0 * PI / self.angular_rate()
    }

    pub fn sat_id(&self, plane: usize, slot: usize) -> usize {
        plane * self.sats_per_plane + slot
    }

    pub fn plane_slot(&self, sat_id: usize) -> (usize, usize) {
        (sat_id / self.sats_per_plane, sat_id % self.sats_per_plane)
    }

    /// Right ascension of the ascending node and argument of latitude of a
    /// satellite at time `t`, both in radians.
    pub fn orbital_angles(&self, sat_id: usize, t: f64) -> (f64, f64) {
        let (p, q) = self.plane_slot(sat_id);
        let raan = (p as f64 * 360.0 / self.planes as f64).to_radians();
        let u0 = q as f64 * 360.0 / self.sats_per_plane as f64 + p as f64 * self.phasing_offset_deg;
        (raan, u0.to_radians() + self.angular_rate() * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteState {
    pub sat_id: usize,
    /// ECEF position, km.
    pub position: [f64; 3],
    pub geodetic: Geodetic,
}

fn inertial_from_angles(radius: f64, raan: f64, arg_lat: f64, incl: f64) -> [f64; 3] {
    let (su, cu) = arg_lat.sin_cos();
    let (so, co) = raan.sin_cos();
    let (si, ci) = incl.sin_cos();
    [
        radius * (cu * co - su * ci * so),
        radius * (cu * so + su * ci * co),
        radius * (su * si),
    ]
}

/// Positions in the Earth-centred inertial frame, km.
pub fn inertial_positions(cfg: &ConstellationConfig, t: f64) -> Vec<[f64; 3]> {
    let incl = cfg.inclination_deg.to_radians();
    let radius = cfg.orbit_radius_km();
    (0..cfg.num_satellites())
        .map(|id| {
            let (raan, u) = cfg.orbital_angles(id, t);
            inertial_from_angles(radius, raan, u, incl)
        })
        .collect()
}

/// Satellite states at `t` seconds after the epoch.
pub fn propagate(cfg: &ConstellationConfig, t: f64) -> Result<Vec<SatelliteState>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    let theta = EARTH_ROTATION_RATE * (cfg.epoch_s + t);
    let (st, ct) = theta.sin_cos();
    let states = inertial_positions(cfg, t)
        .into_iter()
        .enumerate()
        .map(|(sat_id, [x, y, z])| {
            let position = [ct * x + st * y, -st * x + ct * y, z];
            SatelliteState {
                sat_id,
                position,
                geodetic: geodetic_of(position, cfg.earth_radius_km),
            }
        })
        .collect();
    Ok(states)
}

/// Spherical-Earth latitude, longitude and altitude of an ECEF point.
pub fn geodetic_of(position: [f64; 3], earth_radius_km: f64) -> Geodetic {
    let [x, y, z] = position;
    let r = (x * x + y * y + z * z).sqrt();
    Geodetic {
        lat_deg: (z / r).clamp(-1.0, 1.0).asin().to_degrees(),
        lon_deg: y.atan2(x).to_degrees(),
        alt_km: r - earth_radius_km,
    }
}

/// ISL grid neighbors: the two in-plane ring neighbors and the same slot in
/// the adjacent planes. With fewer than three planes the inter-plane
/// neighbors collapse, so the set can hold fewer than four satellites.
pub fn isl_neighbors(cfg: &ConstellationConfig, sat_id: usize) -> BTreeSet<usize> {
    let (p, q) = cfg.plane_slot(sat_id);
    let (np, nq) = (cfg.planes, cfg.sats_per_plane);
    let candidates = [
        cfg.sat_id(p, (q + 1) % nq),
        cfg.sat_id(p, (q + nq - 1) % nq),
        cfg.sat_id((p + 1) % np, q),
        cfg.sat_id((p + np - 1) % np, q),
    ];
    candidates.into_iter().filter(|&m| m != sat_id).collect()
}

/// Euclidean distance between two satellites, km.
pub fn distance(a: &SatelliteState, b: &SatelliteState) -> f64 {
    distance_km(&a.position, &b.position)
}

pub(crate) fn distance_km(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
