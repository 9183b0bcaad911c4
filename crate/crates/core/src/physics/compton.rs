//! Compton scattering kinematics and angular sampling.
//!
//! Free-electron kinematics: a photon of energy `E` scattering through angle
//! `theta` transfers `T = E (1 - cos t) / (m_e c^2 / E + 1 - cos t)` to the
//! electron. Angles are sampled from the Klein-Nishina differential cross
//! section by rejection against an isotropic-in-`cos` proposal.

use rand::Rng;

use crate::constants::PhysicsConstants;

/// Domain violation in a kinematics call.
#[derive(Debug, Clone, PartialEq)]
pub enum ComptonError {
    /// Photon energy must be strictly positive (keV).
    NonPositiveEnergy(f64),
    /// Scattering angle must lie in [0, pi].
    AngleOutOfRange(f64),
}

impl core::fmt::Display for ComptonError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ComptonError::NonPositiveEnergy(e) => {
                write!(f, "photon energy must be positive, got {e} keV")
            }
            ComptonError::AngleOutOfRange(t) => {
                write!(f, "scattering angle must be in [0, pi], got {t} rad")
            }
        }
    }
}

impl core::error::Error for ComptonError {}

fn check_domain(e_incident_kev: f64, theta_rad: f64) -> Result<(), ComptonError> {
    if !(e_incident_kev > 0.0) {
        return Err(ComptonError::NonPositiveEnergy(e_incident_kev));
    }
    if !(0.0..=core::f64::consts::PI).contains(&theta_rad) {
        return Err(ComptonError::AngleOutOfRange(theta_rad));
    }
    Ok(())
}

/// Energy transferred to the electron for a scattering angle `theta_rad`,
/// in keV. Monotone nondecreasing in the angle.
pub fn electron_energy(
    e_incident_kev: f64,
    theta_rad: f64,
    constants: &PhysicsConstants,
) -> Result<f64, ComptonError> {
    check_domain(e_incident_kev, theta_rad)?;
    let one_minus_cos = 1.0 - libm::cos(theta_rad);
    Ok(e_incident_kev * one_minus_cos
        / (constants.electron_rest_energy_kev / e_incident_kev + one_minus_cos))
}

/// Maximum energy transferable to the electron (backscatter, theta = pi):
/// `2 E^2 / (m_e c^2 + 2 E)`, in keV.
pub fn compton_edge(
    e_incident_kev: f64,
    constants: &PhysicsConstants,
) -> Result<f64, ComptonError> {
    if !(e_incident_kev > 0.0) {
        return Err(ComptonError::NonPositiveEnergy(e_incident_kev));
    }
    Ok(2.0 * e_incident_kev * e_incident_kev
        / (constants.electron_rest_energy_kev + 2.0 * e_incident_kev))
}

/// Unnormalized Klein-Nishina angular shape `r^2 (r + 1/r - sin^2 t)` with
/// `r = 1 / (1 + (E / m_e c^2)(1 - cos t))`. Equals 2 at `t = 0` for any
/// energy and tends to the Thomson shape `1 + cos^2 t` as `E -> 0`.
pub fn klein_nishina_unnormalized(
    e_incident_kev: f64,
    theta_rad: f64,
    constants: &PhysicsConstants,
) -> Result<f64, ComptonError> {
    check_domain(e_incident_kev, theta_rad)?;
    let sin = libm::sin(theta_rad);
    let r = 1.0
        / (1.0
            + e_incident_kev / constants.electron_rest_energy_kev * (1.0 - libm::cos(theta_rad)));
    Ok(r * r * (r + 1.0 / r - sin * sin))
}

/// One sampled Compton interaction. Electron and scattered-photon energies
/// sum to the incident energy exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComptonSample {
    pub theta_rad: f64,
    pub electron_kev: f64,
    pub scattered_kev: f64,
}

/// Draw a scattering angle with density proportional to
/// `klein_nishina_unnormalized * sin(theta)` and split the photon energy
/// accordingly.
///
/// Rejection sampling against an isotropic proposal (`cos` uniform on
/// [-1, 1]); the shape is bounded by its forward value of 2, so the
/// acceptance probability is exactly `shape / 2`.
pub fn sample_compton<R: Rng + ?Sized>(
    e_incident_kev: f64,
    constants: &PhysicsConstants,
    rng: &mut R,
) -> Result<ComptonSample, ComptonError> {
    if !(e_incident_kev > 0.0) {
        return Err(ComptonError::NonPositiveEnergy(e_incident_kev));
    }
    let theta_rad = loop {
        let cos: f64 = rng.gen_range(-1.0..=1.0);
        let theta = libm::acos(cos);
        let shape = klein_nishina_unnormalized(e_incident_kev, theta, constants)?;
        if rng.gen::<f64>() * 2.0 < shape {
            break theta;
        }
    };
    let electron_kev = electron_energy(e_incident_kev, theta_rad, constants)?;
    Ok(ComptonSample {
        theta_rad,
        electron_kev,
        scattered_kev: e_incident_kev - electron_kev,
    })
}
