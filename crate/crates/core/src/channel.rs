//! ISL and downlink rate models with Weibull rain fading.
//!
//! Parameters are configured in engineering units (dB, dBK) through
//! [`LinkBudgetConfig`] and converted to linear values exactly once by
//! [`LinkBudgetConfig::to_budget`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const LIGHT_SPEED: f64 = 2.998e8;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkBudgetConfig {
    pub tx_power_w: f64,
    pub isl_gain_tx_db: f64,
    pub isl_gain_rx_db: f64,
    /// Satellite antenna gain on the user downlink.
    pub downlink_gain_tx_db: f64,
    /// Ground user terminal gain.
    pub ground_gain_rx_db: f64,
    pub system_noise_temp_dbk: f64,
    pub ebn0_req_db: f64,
    pub link_margin_db: f64,
    pub isl_carrier_hz: f64,
    pub downlink_wavelength_m: f64,
    pub bandwidth_hz: f64,
    /// Noise power per Hz of bandwidth; defaults to `k * T_sys`.
    #[serde(default)]
    pub noise_density_w_hz: Option<f64>,
    /// Elevation of the representative ground user, degrees.
    #[serde(default = "default_elevation")]
    pub user_elevation_deg: f64,
}

fn default_elevation() -> f64 {
    90.0
}

impl Default for LinkBudgetConfig {
    fn default() -> Self {
        Self {
            tx_power_w: 5.0,
            isl_gain_tx_db: 20.0,
            isl_gain_rx_db: 20.0,
            downlink_gain_tx_db: 40.0,
            ground_gain_rx_db: 40.0,
            system_noise_temp_dbk: 25.0,
            ebn0_req_db: 9.6,
            link_margin_db: 3.0,
            isl_carrier_hz: 60.0e6,
            downlink_wavelength_m: 0.015,
            bandwidth_hz: 500.0e6,
            noise_density_w_hz: None,
            user_elevation_deg: 90.0,
        }
    }
}

impl LinkBudgetConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("link.isl_gain_tx_db", self.isl_gain_tx_db),
            ("link.isl_gain_rx_db", self.isl_gain_rx_db),
            ("link.downlink_gain_tx_db", self.downlink_gain_tx_db),
            ("link.ground_gain_rx_db", self.ground_gain_rx_db),
            ("link.system_noise_temp_dbk", self.system_noise_temp_dbk),
            ("link.ebn0_req_db", self.ebn0_req_db),
            ("link.link_margin_db", self.link_margin_db),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        let positive = [
            ("link.tx_power_w", self.tx_power_w, true),
            ("link.isl_carrier_hz", self.isl_carrier_hz, false),
            ("link.downlink_wavelength_m", self.downlink_wavelength_m, false),
            ("link.bandwidth_hz", self.bandwidth_hz, false),
        ];
        for (field, v, allow_zero) in positive {
            let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
            if !ok {
                return Err(Error::validation(field, "must be > 0"));
            }
        }
        if let Some(n0) = self.noise_density_w_hz {
            if !(n0 > 0.0 && n0.is_finite()) {
                return Err(Error::validation("link.noise_density_w_hz", "must be > 0"));
            }
        }
        if !(self.user_elevation_deg > 0.0 && self.user_elevation_deg <= 90.0) {
            return Err(Error::validation("link.user_elevation_deg", "must lie in (0, 90]"));
        }
        Ok(())
    }

    pub fn to_budget(&self) -> LinkBudget {
        let system_noise_temp_k = db_to_linear(self.system_noise_temp_dbk);
        LinkBudget {
            tx_power_w: self.tx_power_w,
            isl_gain_tx: db_to_linear(self.isl_gain_tx_db),
            isl_gain_rx: db_to_linear(self.isl_gain_rx_db),
            downlink_gain_tx: db_to_linear(self.downlink_gain_tx_db),
            ground_gain_rx: db_to_linear(self.ground_gain_rx_db),
            boltzmann: BOLTZMANN,
            system_noise_temp_k,
            ebn0_req: db_to_linear(self.ebn0_req_db),
            link_margin: db_to_linear(self.link_margin_db),
            isl_carrier_hz: self.isl_carrier_hz,
            wavelength_m: self.downlink_wavelength_m,
            bandwidth_hz: self.bandwidth_hz,
            noise_density: self
                .noise_density_w_hz
                .unwrap_or(BOLTZMANN * system_noise_temp_k),
            light_speed: LIGHT_SPEED,
        }
    }
}

/// Link budget with every quantity already in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_w: f64,
    pub isl_gain_tx: f64,
    pub isl_gain_rx: f64,
    pub downlink_gain_tx: f64,
    pub ground_gain_rx: f64,
    pub boltzmann: f64,
    pub system_noise_temp_k: f64,
    pub ebn0_req: f64,
    pub link_margin: f64,
    pub isl_carrier_hz: f64,
    pub wavelength_m: f64,
    pub bandwidth_hz: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
    pub light_speed: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        LinkBudgetConfig::default().to_budget()
    }
}

/// Free-space path gain `(c / (4 pi H f))^2`.
pub fn fspl(distance_m: f64, freq_hz: f64) -> Result<f64> {
    path_gain(LIGHT_SPEED, distance_m, freq_hz)
}

fn path_gain(light_speed: f64, distance_m: f64, freq_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("path length must be > 0, got {distance_m}")));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::Domain(format!("frequency must be > 0, got {freq_hz}")));
    }
    Ok((light_speed / (4.0 * std::f64::consts::PI * distance_m * freq_hz)).powi(2))
}

/// Achievable ISL bit rate at range `distance_m`.
pub fn isl_rate(b: &LinkBudget, distance_m: f64) -> Result<f64> {
    let loss = path_gain(b.light_speed, distance_m, b.isl_carrier_hz)?;
    let received = b.tx_power_w * b.isl_gain_tx * b.isl_gain_rx * loss;
    Ok(received / (b.boltzmann * b.system_noise_temp_k * b.ebn0_req * b.link_margin))
}

/// Downlink channel power gain including rain attenuation in dB.
pub fn downlink_gain(b: &LinkBudget, distance_m: f64, rain_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("path length must be > 0, got {distance_m}")));
    }
    if !(rain_db >= 0.0) {
        return Err(Error::Domain(format!("rain attenuation must be >= 0, got {rain_db}")));
    }
    let geometric = b.downlink_gain_tx * b.ground_gain_rx * b.wavelength_m.powi(2)
        / (4.0 * std::f64::consts::PI * distance_m).powi(2);
    Ok(geometric * 10f64.powf(-rain_db / 10.0))
}

/// Shannon rate over the full bandwidth.
pub fn downlink_rate(b: &LinkBudget, gain: f64) -> f64 {
    shannon_rate(b.tx_power_w, gain, b.bandwidth_hz, b.noise_density)
}

/// Rate of one request when the satellite splits its bandwidth into
/// `concurrent` orthogonal subchannels.
pub fn downlink_rate_shared(b: &LinkBudget, gain: f64, concurrent: usize) -> f64 {
    let w = b.bandwidth_hz / concurrent.max(1) as f64;
    shannon_rate(b.tx_power_w, gain, w, b.noise_density)
}

fn shannon_rate(power: f64, gain: f64, bandwidth: f64, noise_density: f64) -> f64 {
    bandwidth * (1.0 + power * gain / (bandwidth * noise_density)).log2()
}

/// Slant range from a ground user to a satellite seen at `elevation_deg`.
pub fn slant_range_km(altitude_km: f64, earth_radius_km: f64, elevation_deg: f64) -> f64 {
    let r = earth_radius_km + altitude_km;
    let e = elevation_deg.to_radians();
    let re_cos = earth_radius_km * e.cos();
    (r * r - re_cos * re_cos).sqrt() - earth_radius_km * e.sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainModel {
    pub shape: f64,
    pub scale_db: f64,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

fn default_enabled() -> bool {
    true
}

impl Default for RainModel {
    fn default() -> Self {
        Self {
            shape: 0.8,
            scale_db: 2.0,
            enabled: true,
        }
    }
}

impl RainModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::validation("rain.shape", "must be > 0"));
        }
        if !(self.scale_db >= 0.0 && self.scale_db.is_finite()) {
            return Err(Error::validation("rain.scale_db", "must be >= 0"));
        }
        Ok(())
    }

    /// Weibull CDF of the attenuation in dB.
    pub fn cdf(&self, x_db: f64) -> f64 {
        if x_db <= 0.0 {
            return 0.0;
        }
        1.0 - (-(x_db / self.scale_db).powf(self.shape)).exp()
    }

    pub fn median_db(&self) -> f64 {
        self.scale_db * std::f64::consts::LN_2.powf(1.0 / self.shape)
    }
}

/// Rain attenuation in dB drawn by inverse-CDF sampling.
pub fn sample_rain<R: Rng + ?Sized>(m: &RainModel, rng: &mut R) -> f64 {
    if !m.enabled || m.scale_db == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.gen();
    m.scale_db * (-(1.0 - u).ln()).powf(1.0 / m.shape)
}
