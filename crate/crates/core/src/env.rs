//! Environmental disturbance torques and a circular-orbit position provider.
//!
//! All torques are body-frame quantities; orbit vectors are rotated into the body frame
//! with the current attitude before evaluation.

use crate::error::{AttError, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const EARTH_MU: f64 = 3.986_004_418e14;
pub const EARTH_RADIUS: f64 = 6.378_137e6;

/// Which disturbance torques are active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorqueSwitches {
    pub gravity_gradient: bool,
    pub magnetic: bool,
    pub solar: bool,
    pub aero: bool,
}

impl Default for TorqueSwitches {
    fn default() -> Self {
        Self {
            gravity_gradient: true,
            magnetic: true,
            solar: true,
            aero: true,
        }
    }
}

impl TorqueSwitches {
    pub fn none() -> Self {
        Self {
            gravity_gradient: false,
            magnetic: false,
            solar: false,
            aero: false,
        }
    }
}

/// Environment constants; defaults describe a 500 km orbit and a small spacecraft.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub mu: f64,
    /// Dipole strength `a^3 H0` in T m^3.
    pub dipole_strength: f64,
    /// Unit dipole direction, body frame.
    pub dipole_axis: [f64; 3],
    /// Residual spacecraft dipole in A m^2.
    pub residual_dipole: [f64; 3],
    pub solar_flux: f64,
    pub light_speed: f64,
    pub solar_area: f64,
    pub reflectance: f64,
    /// Sun direction, body frame.
    pub sun_direction: [f64; 3],
    pub air_density: f64,
    pub drag_coefficient: f64,
    pub aero_area: f64,
    pub solar_cp_offset: [f64; 3],
    pub aero_cp_offset: [f64; 3],
    pub switches: TorqueSwitches,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            mu: EARTH_MU,
            dipole_strength: 7.96e15,
            dipole_axis: [0.0, 0.0, 1.0],
            residual_dipole: [0.5, 0.5, 1.0],
            solar_flux: 1367.0,
            light_speed: 299_792_458.0,
            solar_area: 10.0,
            reflectance: 0.6,
            sun_direction: [1.0, 0.0, 0.0],
            air_density: 1e-12,
            drag_coefficient: 2.2,
            aero_area: 10.0,
            solar_cp_offset: [0.0, 0.3, 0.2],
            aero_cp_offset: [0.0, 0.3, 0.2],
            switches: TorqueSwitches::default(),
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reflectance) {
            return Err(AttError::InvalidInput(format!("reflectance {} outside [0, 1]", self.reflectance)));
        }
        for (name, v) in [
            ("air density", self.air_density),
            ("solar area", self.solar_area),
            ("aero area", self.aero_area),
            ("solar flux", self.solar_flux),
        ] {
            if !(v >= 0.0) {
                return Err(AttError::InvalidInput(format!("{name} must be nonnegative")));
            }
        }
        if !(self.mu > 0.0 && self.light_speed > 0.0) {
            return Err(AttError::InvalidInput("mu and light speed must be positive".into()));
        }
        Ok(())
    }
}

/// Orbit position and velocity resolved in some frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitState {
    pub r_c: Vector3<f64>,
    pub v_t: Vector3<f64>,
}

impl OrbitState {
    pub fn radius(&self) -> f64 {
        self.r_c.norm()
    }

    /// Resolves the vectors in the frame reached by the passive rotation `r`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self {
            r_c: r * self.r_c,
            v_t: r * self.v_t,
        }
    }

    fn unit(&self) -> Result<(Vector3<f64>, f64)> {
        let r = self.radius();
        if !(r > 0.0) || !r.is_finite() {
            return Err(AttError::InvalidInput("orbit radius must be positive".into()));
        }
        Ok((self.r_c / r, r))
    }
}

/// `tau = 3 mu / r^3 r_hat x (I_t r_hat)`.
pub fn gravity_gradient(cfg: &EnvironmentConfig, orbit: &OrbitState, inertia: &Matrix3<f64>) -> Result<Vector3<f64>> {
    if !cfg.switches.gravity_gradient {
        return Ok(Vector3::zeros());
    }
    let (u, r) = orbit.unit()?;
    Ok(u.cross(&(inertia * u)) * (3.0 * cfg.mu / r.powi(3)))
}

/// Dipole field at the spacecraft, `b = a^3 H0 / r^3 (3 (m . r_hat) r_hat - m)`.
pub fn dipole_field(cfg: &EnvironmentConfig, orbit: &OrbitState) -> Result<Vector3<f64>> {
    let (u, r) = orbit.unit()?;
    let m = Vector3::from(cfg.dipole_axis);
    Ok((u * (3.0 * m.dot(&u)) - m) * (cfg.dipole_strength / r.powi(3)))
}

/// `tau = m_c x b`.
pub fn magnetic(cfg: &EnvironmentConfig, orbit: &OrbitState) -> Result<Vector3<f64>> {
    if !cfg.switches.magnetic {
        return Ok(Vector3::zeros());
    }
    Ok(Vector3::from(cfg.residual_dipole).cross(&dipole_field(cfg, orbit)?))
}

/// Solar radiation pressure force `F_s / c A_s (1 + q) u_s`.
pub fn solar_force(cfg: &EnvironmentConfig) -> Vector3<f64> {
    Vector3::from(cfg.sun_direction) * (cfg.solar_flux / cfg.light_speed * cfg.solar_area * (1.0 + cfg.reflectance))
}

pub fn solar(cfg: &EnvironmentConfig) -> Vector3<f64> {
    if !cfg.switches.solar {
        return Vector3::zeros();
    }
    Vector3::from(cfg.solar_cp_offset).cross(&solar_force(cfg))
}

/// Drag force `1/2 rho c_d A |v| v`.
pub fn aero_force(cfg: &EnvironmentConfig, orbit: &OrbitState) -> Vector3<f64> {
    orbit.v_t * (0.5 * cfg.air_density * cfg.drag_coefficient * cfg.aero_area * orbit.v_t.norm())
}

pub fn aero(cfg: &EnvironmentConfig, orbit: &OrbitState) -> Vector3<f64> {
    if !cfg.switches.aero {
        return Vector3::zeros();
    }
    Vector3::from(cfg.aero_cp_offset).cross(&aero_force(cfg, orbit))
}

/// Sum of the enabled torques for a body-frame orbit state.
pub fn total_disturbance(cfg: &EnvironmentConfig, orbit: &OrbitState, inertia: &Matrix3<f64>) -> Result<Vector3<f64>> {
    Ok(gravity_gradient(cfg, orbit, inertia)? + magnetic(cfg, orbit)? + solar(cfg) + aero(cfg, orbit))
}

/// Circular orbit of given altitude (m) and inclination (rad) in the inertial frame,
/// starting at the ascending node on the x axis.
pub fn circular_orbit(altitude: f64, inclination: f64, t: f64) -> Result<OrbitState> {
    circular_orbit_mu(EARTH_MU, altitude, inclination, t)
}

pub fn circular_orbit_mu(mu: f64, altitude: f64, inclination: f64, t: f64) -> Result<OrbitState> {
    let r = EARTH_RADIUS + altitude;
    if !(altitude > 0.0) {
        return Err(AttError::InvalidInput(format!(
            "altitude {altitude} m puts the orbit inside the Earth"
        )));
    }
    let n = (mu / r.powi(3)).sqrt();
    let (s, c) = (n * t).sin_cos();
    let (si, ci) = inclination.sin_cos();
    let v = n * r;
    Ok(OrbitState {
        r_c: Vector3::new(c, s * ci, s * si) * r,
        v_t: Vector3::new(-s, c * ci, c * si) * v,
    })
}

pub fn orbital_period(mu: f64, radius: f64) -> f64 {
    2.0 * PI * (radius.powi(3) / mu).sqrt()
}
