//! Radioisotope sources: emission lines, decay, and activity.

use alloc::string::String;
use alloc::vec::Vec;

use crate::constants::BQ_PER_MICROCURIE;

/// One gamma emission line. Yields are photons per decay and may sum over
/// lines to more or less than 1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EmissionLine {
    pub energy_kev: f64,
    #[cfg_attr(feature = "serde", serde(rename = "yield"))]
    pub yield_per_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Isotope {
    pub name: String,
    pub half_life_s: f64,
    pub lines: Vec<EmissionLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceError {
    InvalidHalfLife(f64),
    NoLines,
    InvalidLine { energy_kev: f64, yield_per_decay: f64 },
    NegativeActivity(f64),
    NegativeTime(f64),
}

impl core::fmt::Display for SourceError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SourceError::InvalidHalfLife(h) => write!(f, "half-life must be positive, got {h} s"),
            SourceError::NoLines => write!(f, "isotope needs at least one emission line"),
            SourceError::InvalidLine { energy_kev, yield_per_decay } => write!(
                f,
                "emission line needs positive energy and nonnegative yield, got {energy_kev} keV at {yield_per_decay}"
            ),
            SourceError::NegativeActivity(a) => write!(f, "activity must be nonnegative, got {a} Bq"),
            SourceError::NegativeTime(t) => write!(f, "time must be nonnegative, got {t} s"),
        }
    }
}

impl core::error::Error for SourceError {}

impl Isotope {
    pub fn validate(&self) -> Result<(), SourceError> {
        if !(self.half_life_s > 0.0) {
            return Err(SourceError::InvalidHalfLife(self.half_life_s));
        }
        if self.lines.is_empty() {
            return Err(SourceError::NoLines);
        }
        for line in &self.lines {
            if !(line.energy_kev > 0.0) || !(line.yield_per_decay >= 0.0) {
                return Err(SourceError::InvalidLine {
                    energy_kev: line.energy_kev,
                    yield_per_decay: line.yield_per_decay,
                });
            }
        }
        Ok(())
    }

    /// Total photons emitted per decay, summed over lines.
    pub fn total_yield(&self) -> f64 {
        self.lines.iter().map(|l| l.yield_per_decay).sum()
    }
}

/// A point source at a fixed position relative to the chip center
/// (millimetres, chip plane at z = 0, +z toward the source side).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PointSource {
    pub isotope: Isotope,
    pub activity_bq: f64,
    pub position_mm: [f64; 3],
}

impl PointSource {
    pub fn new(isotope: Isotope, activity_bq: f64, position_mm: [f64; 3]) -> Result<Self, SourceError> {
        isotope.validate()?;
        if !(activity_bq >= 0.0) {
            return Err(SourceError::NegativeActivity(activity_bq));
        }
        Ok(Self { isotope, activity_bq, position_mm })
    }

    pub fn from_microcurie(
        isotope: Isotope,
        activity_uci: f64,
        position_mm: [f64; 3],
    ) -> Result<Self, SourceError> {
        Self::new(isotope, activity_uci * BQ_PER_MICROCURIE, position_mm)
    }

    /// Activity at time `t_s` after the reference instant:
    /// `A(t) = A0 * 2^(-t / half_life)`.
    pub fn activity_at(&self, t_s: f64) -> Result<f64, SourceError> {
        if !(t_s >= 0.0) {
            return Err(SourceError::NegativeTime(t_s));
        }
        Ok(self.activity_bq * libm::exp2(-t_s / self.isotope.half_life_s))
    }

    /// Expected number of decays in `[t0_s, t1_s]`, integrating the decay
    /// curve in closed form.
    pub fn expected_decays(&self, t0_s: f64, t1_s: f64) -> Result<f64, SourceError> {
        if !(t0_s >= 0.0) {
            return Err(SourceError::NegativeTime(t0_s));
        }
        if t1_s < t0_s {
            return Err(SourceError::NegativeTime(t1_s - t0_s));
        }
        let t_half = self.isotope.half_life_s;
        let scale = t_half / core::f64::consts::LN_2;
        Ok(self.activity_bq * scale * (libm::exp2(-t0_s / t_half) - libm::exp2(-t1_s / t_half)))
    }

    /// Inverse CDF of the decay-weighted emission time over `[t0_s, t1_s]`
    /// for a uniform variate `u` in [0, 1).
    pub fn sample_decay_time(&self, t0_s: f64, t1_s: f64, u: f64) -> f64 {
        let t_half = self.isotope.half_life_s;
        let a = libm::exp2(-t0_s / t_half);
        let b = libm::exp2(-t1_s / t_half);
        let x = a - u * (a - b);
        -t_half * libm::log2(x)
    }
}
