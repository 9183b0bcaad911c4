//! Energy-dependent Compton attenuation coefficients, loaded from tabulated
//! data and interpolated log-log between grid points. Lookups outside the
//! tabulated range are errors, never extrapolated.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub enum AttenuationError {
    TooFewRows(usize),
    NonIncreasingEnergy { index: usize },
    NegativeMu { index: usize },
    OutOfRange { energy_kev: f64, min_kev: f64, max_kev: f64 },
}

impl core::fmt::Display for AttenuationError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AttenuationError::TooFewRows(n) => {
                write!(f, "attenuation table needs at least 2 rows, got {n}")
            }
            AttenuationError::NonIncreasingEnergy { index } => {
                write!(f, "attenuation energies must be strictly increasing at row {index}")
            }
            AttenuationError::NegativeMu { index } => {
                write!(f, "attenuation coefficient must be nonnegative at row {index}")
            }
            AttenuationError::OutOfRange { energy_kev, min_kev, max_kev } => write!(
                f,
                "energy {energy_kev} keV outside tabulated range [{min_kev}, {max_kev}] keV"
            ),
        }
    }
}

impl core::error::Error for AttenuationError {}

/// Tabulated linear attenuation coefficient (1/cm) versus energy (keV).
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationTable {
    material: String,
    rows: Vec<(f64, f64)>,
}

impl AttenuationTable {
    pub fn new(material: String, rows: Vec<(f64, f64)>) -> Result<Self, AttenuationError> {
        if rows.len() < 2 {
            return Err(AttenuationError::TooFewRows(rows.len()));
        }
        for (i, &(e, mu)) in rows.iter().enumerate() {
            if !(e > 0.0) || (i > 0 && e <= rows[i - 1].0) {
                return Err(AttenuationError::NonIncreasingEnergy { index: i });
            }
            if !(mu >= 0.0) {
                return Err(AttenuationError::NegativeMu { index: i });
            }
        }
        Ok(Self { material, rows })
    }

    pub fn material(&self) -> &str {
        &self.material
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    /// Interpolated coefficient at `energy_kev`, log-log between grid points.
    /// Falls back to linear interpolation when a bracketing value is zero.
    pub fn mu_at(&self, energy_kev: f64) -> Result<f64, AttenuationError> {
        let (min_kev, max_kev) = (self.rows[0].0, self.rows[self.rows.len() - 1].0);
        if !(energy_kev >= min_kev && energy_kev <= max_kev) {
            return Err(AttenuationError::OutOfRange { energy_kev, min_kev, max_kev });
        }
        let hi = self.rows.partition_point(|&(e, _)| e < energy_kev);
        if hi == 0 {
            return Ok(self.rows[0].1);
        }
        let (e1, mu1) = self.rows[hi - 1];
        let (e2, mu2) = self.rows[hi.min(self.rows.len() - 1)];
        if energy_kev == e1 {
            return Ok(mu1);
        }
        if energy_kev == e2 || e2 == e1 {
            return Ok(mu2);
        }
        if mu1 > 0.0 && mu2 > 0.0 {
            let w = (libm::log(energy_kev) - libm::log(e1)) / (libm::log(e2) - libm::log(e1));
            Ok(libm::exp(libm::log(mu1) + w * (libm::log(mu2) - libm::log(mu1))))
        } else {
            let w = (energy_kev - e1) / (e2 - e1);
            Ok(mu1 + w * (mu2 - mu1))
        }
    }
}

/// Probability that a photon interacts over `path_length_cm` given a linear
/// attenuation coefficient `mu_per_cm`: `1 - exp(-mu * path)`.
pub fn interaction_probability(mu_per_cm: f64, path_length_cm: f64) -> Result<f64, AttenuationError> {
    if !(mu_per_cm >= 0.0) {
        return Err(AttenuationError::NegativeMu { index: 0 });
    }
    if !(path_length_cm >= 0.0) {
        return Err(AttenuationError::OutOfRange {
            energy_kev: path_length_cm,
            min_kev: 0.0,
            max_kev: f64::INFINITY,
        });
    }
    // expm1 keeps precision for the tiny optical depths of a 1.5 um slab.
    Ok(-libm::expm1(-mu_per_cm * path_length_cm))
}
