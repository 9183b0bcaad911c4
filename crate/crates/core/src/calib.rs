//! On-chip calibration procedures: per-pixel sensitivity calibration
//! against dark noise, and the energy-calibrating clock-period selection.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::analog::{
    build_pulses, effective_threshold, pixel_noise_sigma, AnalogError, FrontendParams,
};
use crate::constants::PhysicsConstants;
use crate::geometry::{PixelArray, PixelKind};
use crate::physics::{EventGenerator, GenerateError};
use crate::readout::{quantize_dt, ClockConfig, ReadoutError};

#[derive(Debug, Clone, PartialEq)]
pub enum CalibError {
    Analog(AnalogError),
    Generate(GenerateError),
    Readout(ReadoutError),
    /// No energy-calibrating pixel recorded a count over the calibration
    /// scene.
    NoCalibrationCounts,
    InvalidDtCal(u16),
    InvalidArea(f64),
}

impl core::fmt::Display for CalibError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CalibError::Analog(e) => write!(f, "analog: {e}"),
            CalibError::Generate(e) => write!(f, "generate: {e}"),
            CalibError::Readout(e) => write!(f, "readout: {e}"),
            CalibError::NoCalibrationCounts => {
                write!(f, "no counts on any energy-calibrating row")
            }
            CalibError::InvalidDtCal(v) => write!(f, "DT_cal must be in 1..=1023, got {v}"),
            CalibError::InvalidArea(a) => write!(f, "diode area must be positive, got {a} um^2"),
        }
    }
}

impl core::error::Error for CalibError {}

impl From<AnalogError> for CalibError {
    fn from(e: AnalogError) -> Self {
        CalibError::Analog(e)
    }
}
impl From<GenerateError> for CalibError {
    fn from(e: GenerateError) -> Self {
        CalibError::Generate(e)
    }
}
impl From<ReadoutError> for CalibError {
    fn from(e: ReadoutError) -> Self {
        CalibError::Readout(e)
    }
}

/// Expected rate of noise-only threshold crossings at the diode node, in
/// Hz: a Rice rate `f0 exp(-v_th^2 / (2 sigma^2))` with the bandwidth set
/// by the node time constant, `f0 = 1 / (2 pi tau)`.
pub fn dark_trigger_rate(v_th_eff_v: f64, sigma_v: f64, tau_s: f64) -> Result<f64, AnalogError> {
    if !(sigma_v > 0.0) {
        return Err(AnalogError::NonPositive("noise sigma", sigma_v));
    }
    if !(tau_s > 0.0) {
        return Err(AnalogError::NonPositive("tau", tau_s));
    }
    let f0 = 1.0 / (2.0 * core::f64::consts::PI * tau_s);
    Ok(f0 * libm::exp(-v_th_eff_v * v_th_eff_v / (2.0 * sigma_v * sigma_v)))
}

/// Options of the sensitivity calibration walk.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SensitivityOptions {
    /// Dark monitoring window per gain step, seconds.
    pub window_s: f64,
    /// Ceiling on the modeled expected dark counts per window a retained
    /// code may have. The gain walk alone can strand a pixel on a code
    /// whose dark rate survived one window by luck; this bound enforces the
    /// calibration contract that every enabled pixel ends below the trigger
    /// criterion.
    pub max_expected_dark_counts: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self { window_s: 30.0, max_expected_dark_counts: 0.02 }
    }
}

/// Result of the per-pixel sensitivity calibration, row-major over all row
/// addresses (unpopulated addresses hold code 0 and rate 0).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationResult {
    pub rows: u16,
    pub cols: u16,
    pub window_s: f64,
    pub gain_codes: Vec<u8>,
    pub dark_rate_post_hz: Vec<f64>,
    /// Hardware time the serial per-pixel procedure would have spent.
    pub duration_modeled_s: f64,
}

impl CalibrationResult {
    pub fn code(&self, row: u16, col: u16) -> Option<u8> {
        if row < 1 || row > self.rows || col < 1 || col > self.cols {
            return None;
        }
        Some(self.gain_codes[(row as usize - 1) * self.cols as usize + col as usize - 1])
    }
}

fn expected_dark_counts(
    pixel: &crate::geometry::PixelConfig,
    code: u8,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    window_s: f64,
) -> f64 {
    let mut probe = pixel.clone();
    probe.gain_code = code;
    let sigma = pixel_noise_sigma(&probe, fe, constants);
    let v_th_eff = effective_threshold(&probe, fe);
    dark_trigger_rate(v_th_eff, sigma, probe.tau_s)
        .map(|r| r * window_s)
        .unwrap_or(0.0)
}

/// Per-pixel sensitivity calibration in a dark environment.
///
/// Each pixel independently walks its 3-bit gain code upward; every step
/// Poisson-samples the modeled dark counts of a monitoring window, and the
/// first noisy step settles the pixel one code below it. Pixels noisy at
/// code 1 end disabled; pixels quiet through code 7 keep 7. A final guard
/// lowers any code whose expected window counts still exceed
/// `max_expected_dark_counts`, so the result invariant (every enabled pixel
/// below the trigger criterion) holds even for lucky walks.
pub fn calibrate_sensitivity<R: Rng + ?Sized>(
    array: &PixelArray,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    opts: &SensitivityOptions,
    rng: &mut R,
) -> CalibrationResult {
    let geometry = array.geometry();
    let n = geometry.rows as usize * geometry.cols as usize;
    let mut gain_codes = vec![0u8; n];
    let mut dark_rate_post_hz = vec![0.0f64; n];
    let mut windows_monitored = 0u64;

    for (row, col, pixel) in array.iter() {
        let idx = (row as usize - 1) * geometry.cols as usize + col as usize - 1;
        let mut final_code = 0u8;
        for code in 1..=7u8 {
            windows_monitored += 1;
            let lambda = expected_dark_counts(pixel, code, fe, constants, opts.window_s);
            let counts = if lambda > 1e-12 {
                Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
            } else {
                0
            };
            if counts > 0 {
                final_code = code - 1;
                break;
            }
            final_code = code;
        }
        while final_code > 0
            && expected_dark_counts(pixel, final_code, fe, constants, opts.window_s)
                > opts.max_expected_dark_counts
        {
            final_code -= 1;
        }
        gain_codes[idx] = final_code;
        let enabled = final_code >= 1 || pixel.kind == PixelKind::EnergyCalibrating;
        dark_rate_post_hz[idx] = if enabled {
            expected_dark_counts(pixel, final_code, fe, constants, 1.0)
        } else {
            0.0
        };
    }

    CalibrationResult {
        rows: geometry.rows,
        cols: geometry.cols,
        window_s: opts.window_s,
        gain_codes,
        dark_rate_post_hz,
        duration_modeled_s: windows_monitored as f64 * opts.window_s,
    }
}

/// Load a calibration result onto an array, as the saved codes would be
/// loaded onto the chip at power-up.
pub fn apply_calibration(array: &mut PixelArray, result: &CalibrationResult) {
    for row in 1..=result.rows {
        for col in 1..=result.cols {
            if let Some(code) = result.code(row, col) {
                array.set_gain_code(row, col, code);
            }
        }
    }
}

/// Clock-period selection outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClockCalibration {
    /// Largest 10-bit DT count observed on the selected calibration row at
    /// the 128 us survey clock.
    pub dt_cal: u16,
    /// Diode area of that row, um^2.
    pub source_row_area_um2: f64,
    pub chosen: ClockConfig,
}

/// Map a maximum calibration DT count to the counting-clock period that
/// uses the 10-bit range fully: scale the count to the energy-resolving
/// capacitance (realized as the diode-area ratio), convert to time at the
/// 128 us survey period, divide by the counter range, and snap to the
/// nearest available period, ties toward the larger period.
pub fn select_clock_period(
    dt_cal: u16,
    area_cal_row_um2: f64,
    area_er_um2: f64,
) -> Result<ClockConfig, CalibError> {
    if dt_cal == 0 || dt_cal > 1023 {
        return Err(CalibError::InvalidDtCal(dt_cal));
    }
    if !(area_cal_row_um2 > 0.0) {
        return Err(CalibError::InvalidArea(area_cal_row_um2));
    }
    if !(area_er_um2 > 0.0) {
        return Err(CalibError::InvalidArea(area_er_um2));
    }
    let t_approx_us = dt_cal as f64 * (area_er_um2 / area_cal_row_um2) * 128.0 / 1023.0;
    let mut best_code = 0u8;
    let mut best_dist = f64::INFINITY;
    for code in 0..=7u8 {
        let period = (1u32 << code) as f64;
        let dist = (t_approx_us - period).abs();
        // Ties round toward the larger period to protect dynamic range.
        if dist < best_dist || (dist == best_dist && period > (1u32 << best_code) as f64) {
            best_dist = dist;
            best_code = code;
        }
    }
    Ok(ClockConfig::new(best_code).expect("code in range"))
}

/// Energy calibration: survey a scene at the largest counting period,
/// find the largest-area calibrating row that still detects photons, and
/// derive the runtime clock period from that row's maximum DT count.
pub fn run_energy_calibration<R: Rng + ?Sized>(
    generator: &EventGenerator<'_>,
    array: &PixelArray,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    duration_s: f64,
    rng: &mut R,
) -> Result<ClockCalibration, CalibError> {
    let events = generator.generate(0.0, duration_s, rng)?;
    let pulses = build_pulses(&events, array, fe, constants, rng);
    let survey = ClockConfig::new(7).expect("128 us");
    let geometry = array.geometry();

    // Per energy-calibrating row: (area, counts, max DT count).
    let ec = geometry.ec_rows;
    let mut per_row: Vec<(f64, u64, u16)> = (ec.start..=ec.end)
        .map(|row| (geometry.diode_area_um2(row).unwrap_or(0.0), 0u64, 0u16))
        .collect();
    for pulse in &pulses {
        if !pulse.detected || !ec.contains(pulse.pixel_row) {
            continue;
        }
        let slot = &mut per_row[(pulse.pixel_row - ec.start) as usize];
        slot.1 += 1;
        slot.2 = slot.2.max(quantize_dt(pulse.dt_true_s, &survey));
    }
    let best = per_row
        .iter()
        .filter(|(_, counts, dt)| *counts > 0 && *dt > 0)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(CalibError::NoCalibrationCounts)?;
    let chosen = select_clock_period(best.2, best.0, 4.0)?;
    Ok(ClockCalibration { dt_cal: best.2, source_row_area_um2: best.0, chosen })
}

/// Poisson-sample a fresh modeled dark window for every populated pixel of
/// a calibrated array and return the fraction that stays at zero counts.
/// This is the verification the sensitivity calibration is designed to
/// pass.
pub fn fresh_dark_window_zero_fraction<R: Rng + ?Sized>(
    array: &PixelArray,
    result: &CalibrationResult,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    window_s: f64,
    rng: &mut R,
) -> f64 {
    let mut zero = 0u64;
    let mut total = 0u64;
    for (row, col, pixel) in array.iter() {
        let code = result.code(row, col).unwrap_or(0);
        total += 1;
        if code == 0 && pixel.kind != PixelKind::EnergyCalibrating {
            zero += 1;
            continue;
        }
        let lambda = expected_dark_counts(pixel, code, fe, constants, window_s);
        let counts = if lambda > 1e-12 {
            Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        };
        if counts == 0 {
            zero += 1;
        }
    }
    zero as f64 / total as f64
}
