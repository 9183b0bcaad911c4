//! Analog pixel frontend: charge generation, diode voltage, noise, and the
//! threshold/decay-time response.
//!
//! An interaction drops the diode-sensing node by `Q_gen / C_diode`; the
//! node then relaxes back to DC with time constant `tau = r_ds * C_diode`.
//! The decay time `DT = tau * ln(V_d / V_th)` is the chip's energy proxy.
//! Noise is a single Gaussian amplitude perturbation per event (kTC plus
//! diode shot noise, band-limited by the same node), which reproduces the
//! delta-method DT jitter statistics.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::constants::PhysicsConstants;
use crate::geometry::{PixelArray, PixelConfig, PixelKind};
use crate::physics::InteractionEvent;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalogError {
    IncidenceOutOfRange(f64),
    NonPositive(&'static str, f64),
    /// Triode bias leaves no overdrive: `V_DDL - V_res - |V_th,p| <= 0`.
    NoOverdrive(f64),
}

impl core::fmt::Display for AnalogError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            AnalogError::IncidenceOutOfRange(t) => {
                write!(f, "incidence angle must be in [0, pi/2), got {t} rad")
            }
            AnalogError::NonPositive(name, v) => write!(f, "{name} must be positive, got {v}"),
            AnalogError::NoOverdrive(v) => {
                write!(f, "bias violates triode headroom, overdrive {v} V")
            }
        }
    }
}

impl core::error::Error for AnalogError {}

/// Noise parameters of the diode node and the low-flux summation node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NoiseParams {
    /// Diode reverse saturation current, ampere.
    pub i_s_a: f64,
    /// Technology white-noise factor of the summation amplifiers.
    pub gamma_noise: f64,
    /// Open-loop gain of the low-flux buffer OTAs.
    pub a_ol_buffer: f64,
    /// Output capacitance of the low-flux buffer, farad.
    pub c_out_buffer_f: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            i_s_a: 1e-15,
            gamma_noise: 2.0 / 3.0,
            a_ol_buffer: 100.0,
            c_out_buffer_f: 15e-15,
        }
    }
}

/// Chip-level frontend parameters shared by every pixel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FrontendParams {
    pub noise: NoiseParams,
    /// Minimum detectable signal at the diode-sensing node, volt.
    pub v_th_detect_v: f64,
    /// Supply clip on the diode-node excursion, volt.
    pub clip_v: f64,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self { noise: NoiseParams::default(), v_th_detect_v: 5e-3, clip_v: 1.2 }
    }
}

/// Triode-region PMOS bias device, for expressing DT as a function of the
/// reset gate voltage.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TransistorParams {
    /// mu_p * C_ox, A/V^2.
    pub mu_p_cox_a_per_v2: f64,
    pub w_over_l: f64,
    pub v_ddl_v: f64,
    pub v_th_p_v: f64,
}

impl Default for TransistorParams {
    fn default() -> Self {
        Self {
            mu_p_cox_a_per_v2: 4.0e-5,
            w_over_l: 220.0 / 180.0,
            v_ddl_v: 1.2,
            v_th_p_v: 0.45,
        }
    }
}

/// Digitizable pulse on a row count line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogPulse {
    pub pixel_row: u16,
    pub pixel_col: u16,
    pub start_time_s: f64,
    /// Peak diode-node excursion, post-clip, volt.
    pub v_d: f64,
    /// Time the node stays above the effective threshold, seconds; 0 when
    /// undetected.
    pub dt_true_s: f64,
    pub detected: bool,
}

/// Electron-hole pairs generated by a deposit of `e_dep_kev` arriving at
/// incidence angle `theta_i`: `round(E_dep * qf / (E_g * cos theta_i))`.
///
/// The `1 / cos` factor is the slant-path enhancement. Callers that already
/// deposited energy along the slant chord (the event generator does) must
/// pass `theta_i = 0` so the factor is not applied twice.
pub fn n_ehps(
    e_dep_kev: f64,
    theta_i_rad: f64,
    constants: &PhysicsConstants,
) -> Result<u64, AnalogError> {
    if !(0.0..core::f64::consts::FRAC_PI_2).contains(&theta_i_rad) {
        return Err(AnalogError::IncidenceOutOfRange(theta_i_rad));
    }
    if !(e_dep_kev >= 0.0) {
        return Err(AnalogError::NonPositive("deposited energy", e_dep_kev));
    }
    let n = e_dep_kev * 1e3 * constants.quenching_factor
        / (constants.bandgap_ev_per_ehp * libm::cos(theta_i_rad));
    Ok(libm::round(n) as u64)
}

/// Diode-node voltage drop for `n` EHPs on `c_diode_f`, clipped at the
/// supply.
pub fn diode_voltage(n: u64, c_diode_f: f64, clip_v: f64, constants: &PhysicsConstants) -> f64 {
    (n as f64 * constants.electron_charge_c / c_diode_f).min(clip_v)
}

/// RMS voltage noise at the diode-sensing node:
/// `sqrt(q I_S r_ds / (2 C) + k T / C)`.
pub fn voltage_noise_sigma(
    noise: &NoiseParams,
    c_diode_f: f64,
    r_ds_ohm: f64,
    constants: &PhysicsConstants,
) -> f64 {
    let shot = constants.electron_charge_c * noise.i_s_a * r_ds_ohm / (2.0 * c_diode_f);
    let ktc = constants.kt_j() / c_diode_f;
    libm::sqrt(shot + ktc)
}

/// RMS thermal noise at the low-flux summation node:
/// `sqrt(24 gamma k T / (C_out A_OL))`.
pub fn lowflux_summation_sigma(noise: &NoiseParams, constants: &PhysicsConstants) -> f64 {
    libm::sqrt(24.0 * noise.gamma_noise * constants.kt_j() / (noise.c_out_buffer_f * noise.a_ol_buffer))
}

pub fn snr_vd(v_d: f64, sigma_v: f64) -> Result<f64, AnalogError> {
    if !(sigma_v > 0.0) {
        return Err(AnalogError::NonPositive("voltage noise sigma", sigma_v));
    }
    Ok(v_d / sigma_v)
}

/// Decay time `tau * ln(v_d / v_th)`; `None` when the pulse never reaches
/// the threshold.
pub fn decay_time(v_d: f64, tau_s: f64, v_th_v: f64) -> Result<Option<f64>, AnalogError> {
    if !(tau_s > 0.0) {
        return Err(AnalogError::NonPositive("tau", tau_s));
    }
    if !(v_th_v > 0.0) {
        return Err(AnalogError::NonPositive("threshold", v_th_v));
    }
    if v_d < v_th_v {
        return Ok(None);
    }
    Ok(Some(tau_s * libm::log(v_d / v_th_v)))
}

/// Delta-method RMS decay-time noise: `tau * sqrt(k T C) / Q_gen`.
pub fn dt_noise_sigma(
    tau_s: f64,
    q_gen_c: f64,
    c_diode_f: f64,
    constants: &PhysicsConstants,
) -> Result<f64, AnalogError> {
    if !(q_gen_c > 0.0) {
        return Err(AnalogError::NonPositive("generated charge", q_gen_c));
    }
    Ok(tau_s * libm::sqrt(constants.kt_j() * c_diode_f) / q_gen_c)
}

pub fn snr_dt(dt_s: f64, sigma_dt_s: f64) -> Result<f64, AnalogError> {
    if !(sigma_dt_s > 0.0) {
        return Err(AnalogError::NonPositive("DT noise sigma", sigma_dt_s));
    }
    Ok(dt_s / sigma_dt_s)
}

/// Conservative +/-2 sigma deposited-energy width of one DT measurement:
/// `alpha v_th e^(dt/tau) (e^(2 sigma/tau) - e^(-2 sigma/tau))`, in keV.
pub fn resolution_bound(
    dt_s: f64,
    sigma_dt_s: f64,
    tau_s: f64,
    alpha_kev_per_v: f64,
    v_th_v: f64,
) -> f64 {
    let x = 2.0 * sigma_dt_s / tau_s;
    alpha_kev_per_v * v_th_v * libm::exp(dt_s / tau_s) * (libm::exp(x) - libm::exp(-x))
}

/// Decay time as a function of the reset gate bias:
/// `C / (mu_p C_ox (W/L) (V_DDL - V_res - |V_th,p|)) * ln(v_d / v_th)`.
/// Identical to `decay_time` with `tau = r_ds(V_res) * C`.
pub fn dt_from_vres(
    v_res_v: f64,
    tp: &TransistorParams,
    c_diode_f: f64,
    v_d: f64,
    v_th_v: f64,
) -> Result<f64, AnalogError> {
    let overdrive = tp.v_ddl_v - v_res_v - libm::fabs(tp.v_th_p_v);
    if !(overdrive > 0.0) {
        return Err(AnalogError::NoOverdrive(overdrive));
    }
    let r_ds = 1.0 / (tp.mu_p_cox_a_per_v2 * tp.w_over_l * overdrive);
    let tau = r_ds * c_diode_f;
    match decay_time(v_d, tau, v_th_v)? {
        Some(dt) => Ok(dt),
        None => Err(AnalogError::NonPositive("v_d below threshold", v_d)),
    }
}

/// Variable-gain-amplifier gain for a 3-bit code, unity at code 4 with a
/// 1.35x step (about an 8x span over the code range).
pub fn vga_gain(code: u8) -> f64 {
    libm::pow(1.35, code as f64 - 4.0)
}

/// Effective detection threshold referred to the diode node:
/// `v_th_detect * mismatch / gain(code)`.
pub fn effective_threshold(pixel: &PixelConfig, fe: &FrontendParams) -> f64 {
    fe.v_th_detect_v * pixel.mismatch_factor / vga_gain(pixel.gain_code)
}

/// Total amplitude-noise sigma seen by one pixel: the diode node's shot
/// and kTC terms, plus the summation-node thermal noise in quadrature for
/// low-flux pixels.
pub fn pixel_noise_sigma(
    pixel: &PixelConfig,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
) -> f64 {
    let r_ds = pixel.tau_s / pixel.c_diode_f;
    let sigma = voltage_noise_sigma(&fe.noise, pixel.c_diode_f, r_ds, constants);
    if pixel.kind == PixelKind::LowFlux {
        let sum = lowflux_summation_sigma(&fe.noise, constants);
        libm::sqrt(sigma * sigma + sum * sum)
    } else {
        sigma
    }
}

fn pixel_enabled(pixel: &PixelConfig) -> bool {
    pixel.gain_code >= 1 || pixel.kind == PixelKind::EnergyCalibrating
}

/// Response of one pixel to one interaction: charge, voltage drop with one
/// Gaussian noise draw, clip, threshold, decay time. Disabled pixels yield
/// no pulse. The incidence slant is already folded into the event's
/// deposited energy, so EHP generation here uses normal incidence.
pub fn respond<R: Rng + ?Sized>(
    event: &InteractionEvent,
    pixel: &PixelConfig,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    rng: &mut R,
) -> Option<AnalogPulse> {
    if !pixel_enabled(pixel) {
        return None;
    }
    let n = n_ehps(event.deposited_kev, 0.0, constants).ok()?;
    let v_clean = n as f64 * constants.electron_charge_c / pixel.c_diode_f;
    let sigma = pixel_noise_sigma(pixel, fe, constants);
    let noise = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    let v = (v_clean + noise).min(fe.clip_v);
    let v_th_eff = effective_threshold(pixel, fe);
    let dt = decay_time(v.max(0.0), pixel.tau_s, v_th_eff).ok().flatten();
    Some(AnalogPulse {
        pixel_row: event.pixel_row,
        pixel_col: event.pixel_col,
        start_time_s: event.time_s,
        v_d: v,
        dt_true_s: dt.unwrap_or(0.0),
        detected: dt.is_some(),
    })
}

/// One charge-injection measurement on a test pixel: a clean voltage pulse
/// of `v_pulse_v` plus one noise draw, returning the measured decay time if
/// the pulse crosses the threshold. This is the model of the
/// characterization test structure, which bypasses the photon physics.
pub fn measure_injected<R: Rng + ?Sized>(
    v_pulse_v: f64,
    pixel: &PixelConfig,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    rng: &mut R,
) -> Option<f64> {
    let sigma = pixel_noise_sigma(pixel, fe, constants);
    let noise = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    let v = (v_pulse_v + noise).min(fe.clip_v);
    if v <= 0.0 {
        return None;
    }
    decay_time(v, pixel.tau_s, effective_threshold(pixel, fe)).ok().flatten()
}

/// Per-pixel node state for the stream builder.
#[derive(Clone)]
struct NodeState {
    v_v: f64,
    t_s: f64,
    open_pulse: Option<usize>,
}

/// Convert a time-ordered event stream into the detected pulses on the
/// count lines. Deposits landing on a pixel whose node is still relaxing
/// are summed onto the residual voltage (this is what makes coincident
/// low-flux diode hits indistinguishable), and the summed node saturates at
/// the clip voltage.
pub fn build_pulses<R: Rng + ?Sized>(
    events: &[InteractionEvent],
    array: &PixelArray,
    fe: &FrontendParams,
    constants: &PhysicsConstants,
    rng: &mut R,
) -> Vec<AnalogPulse> {
    let cols = array.geometry().cols as usize;
    let slots = array.geometry().rows as usize * cols;
    let mut pulses: Vec<AnalogPulse> = Vec::new();
    let mut nodes: alloc::vec::Vec<Option<NodeState>> = alloc::vec![None; slots];
    for event in events {
        let Some(pixel) = array.pixel(event.pixel_row, event.pixel_col) else {
            continue;
        };
        if !pixel_enabled(pixel) {
            continue;
        }
        let Ok(n) = n_ehps(event.deposited_kev, 0.0, constants) else {
            continue;
        };
        let v_clean = n as f64 * constants.electron_charge_c / pixel.c_diode_f;
        let sigma = pixel_noise_sigma(pixel, fe, constants);
        let noise = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
        let v_th_eff = effective_threshold(pixel, fe);

        let key = (event.pixel_row as usize - 1) * cols + event.pixel_col as usize - 1;
        let state = nodes[key]
            .get_or_insert(NodeState { v_v: 0.0, t_s: event.time_s, open_pulse: None });
        let residual = state.v_v * libm::exp(-(event.time_s - state.t_s) / pixel.tau_s);
        let v = (residual + v_clean + noise).min(fe.clip_v).max(0.0);

        let open = state.open_pulse.and_then(|idx| {
            let p = &pulses[idx];
            (p.start_time_s + p.dt_true_s > event.time_s).then_some(idx)
        });
        match open {
            Some(idx) => {
                let pulse = &mut pulses[idx];
                if v >= v_th_eff {
                    pulse.dt_true_s = (event.time_s - pulse.start_time_s)
                        + pixel.tau_s * libm::log(v / v_th_eff);
                    pulse.v_d = pulse.v_d.max(v);
                } else {
                    // Noise knocked the node back below threshold.
                    pulse.dt_true_s = event.time_s - pulse.start_time_s;
                    state.open_pulse = None;
                }
            }
            None => {
                state.open_pulse = None;
                if v >= v_th_eff {
                    let dt = pixel.tau_s * libm::log(v / v_th_eff);
                    state.open_pulse = Some(pulses.len());
                    pulses.push(AnalogPulse {
                        pixel_row: event.pixel_row,
                        pixel_col: event.pixel_col,
                        start_time_s: event.time_s,
                        v_d: v,
                        dt_true_s: dt,
                        detected: true,
                    });
                }
            }
        }
        state.v_v = v;
        state.t_s = event.time_s;
    }
    pulses.sort_by(|a, b| {
        a.start_time_s
            .total_cmp(&b.start_time_s)
            .then(a.pixel_row.cmp(&b.pixel_row))
            .then(a.pixel_col.cmp(&b.pixel_col))
    });
    pulses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ArrayGeometry, ArrayParams, PixelArray};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> PhysicsConstants {
        PhysicsConstants::default()
    }

    /// Constants with thermal noise driven to zero, for noiseless chain
    /// checks. Pair with `quiet_fe` so the shot term vanishes too.
    fn cold() -> PhysicsConstants {
        PhysicsConstants { temperature_k: 1e-30, ..PhysicsConstants::default() }
    }

    fn quiet_fe() -> FrontendParams {
        FrontendParams {
            noise: NoiseParams { i_s_a: 0.0, ..NoiseParams::default() },
            ..FrontendParams::default()
        }
    }

    fn er_pixel() -> PixelConfig {
        PixelConfig {
            kind: PixelKind::EnergyResolving,
            diode_area_um2: 4.0,
            c_diode_f: 1.5e-15,
            tau_s: 200e-6,
            gain_code: 4,
            mismatch_factor: 1.0,
            n_diodes: 1,
        }
    }

    fn event(e_dep_kev: f64, t_s: f64) -> InteractionEvent {
        InteractionEvent {
            pixel_row: 1,
            pixel_col: 1,
            diode_index: 0,
            time_s: t_s,
            deposited_kev: e_dep_kev,
            scatter_angle_rad: 0.5,
            incidence_angle_rad: 0.0,
            electron_kev: e_dep_kev,
        }
    }

    #[test]
    fn ehp_reference_points() {
        assert_eq!(n_ehps(0.0, 0.0, &k()).unwrap(), 0);
        // 1 keV: 1000 * (1/3) / 1.12 = 297.6 -> 298.
        assert_eq!(n_ehps(1.0, 0.0, &k()).unwrap(), 298);
        // The 50-EHP detection floor corresponds to 168 eV.
        assert_eq!(n_ehps(0.168, 0.0, &k()).unwrap(), 50);
        assert!(n_ehps(1.0, core::f64::consts::FRAC_PI_2, &k()).is_err());
    }

    #[test]
    fn diode_voltage_reference_points() {
        assert_eq!(diode_voltage(0, 1.5e-15, 1.2, &k()), 0.0);
        let v50 = diode_voltage(50, 1.5e-15, 1.2, &k());
        assert!((v50 - 5.341e-3).abs() < 1e-6);
        let v298 = diode_voltage(298, 1.5e-15, 1.2, &k());
        assert!((v298 - 31.83e-3).abs() < 5e-6);
        // Clip.
        assert_eq!(diode_voltage(u64::MAX / 2, 1.5e-15, 1.2, &k()), 1.2);
    }

    #[test]
    fn voltage_noise_reference_points() {
        let noise = NoiseParams::default();
        // kT/C alone at 300 K on 1.5 fF.
        let ktc_only = voltage_noise_sigma(&NoiseParams { i_s_a: 0.0, ..noise.clone() }, 1.5e-15, 1.0, &k());
        assert!((ktc_only - 1.662e-3).abs() < 1e-6);
        // Default shot term is small next to kT/C; the stated defaults put
        // the total about 1.3e-3 relative above the kT/C-only value.
        let r_ds = 200e-6 / 1.5e-15;
        let total = voltage_noise_sigma(&noise, 1.5e-15, r_ds, &k());
        assert!(total > ktc_only);
        assert!((total - ktc_only) / ktc_only < 2e-3);
    }

    #[test]
    fn snr_vd_reference_points() {
        assert!((snr_vd(5.341e-3, 1.662e-3).unwrap() - 3.213).abs() < 2e-3);
        assert_eq!(snr_vd(0.0, 1.0).unwrap(), 0.0);
        assert!(snr_vd(1.0, 0.0).is_err());
    }

    #[test]
    fn snr_vd_scales_with_sqrt_capacitance_at_fixed_rds() {
        let noise = NoiseParams::default();
        let kc = k();
        let r_ds = 1.0e11;
        let q = 100.0 * kc.electron_charge_c;
        let (c1, c2) = (1.5e-15, 0.75e-15);
        let snr = |c: f64| {
            snr_vd(q / c, voltage_noise_sigma(&noise, c, r_ds, &kc)).unwrap()
        };
        let ratio = snr(c2) / snr(c1);
        assert!((ratio - libm::sqrt(c1 / c2)).abs() < 1e-12);
    }

    #[test]
    fn decay_time_reference_points() {
        assert_eq!(decay_time(5e-3, 200e-6, 5e-3).unwrap(), Some(0.0));
        let e = core::f64::consts::E;
        let dt = decay_time(e * 5e-3, 10e-6, 5e-3).unwrap().unwrap();
        assert!((dt - 10e-6).abs() < 1e-12);
        let dt = decay_time(31.83e-3, 200e-6, 5e-3).unwrap().unwrap();
        assert!((dt - 370.1e-6).abs() < 1e-7);
        assert_eq!(decay_time(4.9e-3, 200e-6, 5e-3).unwrap(), None);
        assert!(decay_time(1.0, 0.0, 5e-3).is_err());
        assert!(decay_time(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn dt_noise_reference_points() {
        let kc = k();
        let q50 = 50.0 * kc.electron_charge_c;
        let sigma = dt_noise_sigma(200e-6, q50, 1.5e-15, &kc).unwrap();
        assert!((sigma / 200e-6 - 0.3112).abs() < 1e-4);
        // Doubling the charge halves the jitter.
        let half = dt_noise_sigma(200e-6, 2.0 * q50, 1.5e-15, &kc).unwrap();
        assert!((half - sigma / 2.0).abs() < 1e-18);
        assert!(dt_noise_sigma(200e-6, 0.0, 1.5e-15, &kc).is_err());
    }

    #[test]
    fn dt_jitter_matches_monte_carlo() {
        // 1e4 noisy pulses at fixed charge: sample std of DT within 10% of
        // the delta-method formula.
        let kc = k();
        let fe = FrontendParams::default();
        let pixel = er_pixel();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 298u64;
        let v = diode_voltage(n, pixel.c_diode_f, fe.clip_v, &kc);
        let mut dts = Vec::new();
        for _ in 0..10_000 {
            if let Some(dt) = measure_injected(v, &pixel, &fe, &kc, &mut rng) {
                dts.push(dt);
            }
        }
        assert!(dts.len() > 9_900);
        let mean = dts.iter().sum::<f64>() / dts.len() as f64;
        let var = dts.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (dts.len() - 1) as f64;
        let sample_sigma = libm::sqrt(var);
        let q = n as f64 * kc.electron_charge_c;
        let theory = dt_noise_sigma(pixel.tau_s, q, pixel.c_diode_f, &kc).unwrap();
        assert!(
            (sample_sigma - theory).abs() / theory < 0.10,
            "sample {sample_sigma} vs theory {theory}"
        );
    }

    #[test]
    fn snr_dt_reference_points() {
        let kc = k();
        assert_eq!(snr_dt(0.0, 1.0).unwrap(), 0.0);
        let q298 = 298.0 * kc.electron_charge_c;
        let dt = decay_time(31.83e-3, 200e-6, 5e-3).unwrap().unwrap();
        let sigma = dt_noise_sigma(200e-6, q298, 1.5e-15, &kc).unwrap();
        assert!((snr_dt(dt, sigma).unwrap() - 35.44).abs() < 0.02);
        // SNR_DT strictly increases with V_d at fixed capacitance.
        let mut last = 0.0;
        for n in [60u64, 100, 200, 400, 800, 1600] {
            let v = diode_voltage(n, 1.5e-15, 1.2, &kc);
            let dt = decay_time(v, 200e-6, 5e-3).unwrap().unwrap();
            let s = dt_noise_sigma(200e-6, n as f64 * kc.electron_charge_c, 1.5e-15, &kc).unwrap();
            let snr = snr_dt(dt, s).unwrap();
            assert!(snr > last);
            last = snr;
        }
    }

    #[test]
    fn resolution_bound_reference_points() {
        // Zero jitter gives zero width.
        assert_eq!(resolution_bound(1e-4, 0.0, 200e-6, 31.457, 5e-3), 0.0);
        // First-order agreement with alpha vth e^(dt/tau) 4 sigma / tau for
        // small sigma.
        let (tau, alpha, vth, dt) = (200e-6, 31.457, 5e-3, 370.1e-6);
        let sigma = 0.01 * tau;
        let full = resolution_bound(dt, sigma, tau, alpha, vth);
        let linear = alpha * vth * libm::exp(dt / tau) * 4.0 * sigma / tau;
        assert!((full - linear).abs() / linear < 0.01);
        // At the chip's operating point a 1 keV deposit resolves to about
        // 0.2 keV, within a factor two of twice the 0.1 keV bin width.
        let kc = k();
        let q = 298.0 * kc.electron_charge_c;
        let sigma1 = dt_noise_sigma(tau, q, 1.5e-15, &kc).unwrap();
        let alpha1 = kc.kev_per_volt(1.5e-15);
        let bound = resolution_bound(dt, sigma1, tau, alpha1, vth);
        assert!(bound < 2.0 * 0.2 && bound > 0.2 / 2.0, "bound {bound}");
    }

    #[test]
    fn dt_from_vres_matches_decay_time() {
        let tp = TransistorParams::default();
        let kc = k();
        for (v_res, v_d) in [(0.3, 8e-3), (0.5, 20e-3), (0.7, 50e-3)] {
            let overdrive = tp.v_ddl_v - v_res - tp.v_th_p_v;
            let tau = 1.5e-15 / (tp.mu_p_cox_a_per_v2 * tp.w_over_l * overdrive);
            let want = decay_time(v_d, tau, 5e-3).unwrap().unwrap();
            let got = dt_from_vres(v_res, &tp, 1.5e-15, v_d, 5e-3).unwrap();
            assert!((got - want).abs() / want < 1e-12);
        }
        let _ = kc;
        // Raising v_res shrinks the overdrive and stretches tau.
        let dt_low = dt_from_vres(0.3, &tp, 1.5e-15, 20e-3, 5e-3).unwrap();
        let dt_high = dt_from_vres(0.7, &tp, 1.5e-15, 20e-3, 5e-3).unwrap();
        assert!(dt_high > dt_low);
        // No overdrive headroom is an error before any division.
        assert!(matches!(
            dt_from_vres(0.75, &tp, 1.5e-15, 20e-3, 5e-3),
            Err(AnalogError::NoOverdrive(_))
        ));
    }

    #[test]
    fn lowflux_sigma_reference_points() {
        let kc = k();
        let noise = NoiseParams::default();
        let sigma = lowflux_summation_sigma(&noise, &kc);
        assert!((sigma - 0.21019e-3).abs() < 1e-7);
        // Quadrupling the open-loop gain halves the noise.
        let big = NoiseParams { a_ol_buffer: 400.0, ..noise.clone() };
        assert!((lowflux_summation_sigma(&big, &kc) - sigma / 2.0).abs() < 1e-12);
        // The summed node is strictly noisier than a lone diode node, so the
        // low-flux SNR for an identical deposit is strictly lower.
        let r_ds = 200e-6 / 1.5e-15;
        let er_sigma = voltage_noise_sigma(&noise, 1.5e-15, r_ds, &kc);
        let lf_sigma = libm::sqrt(er_sigma * er_sigma + sigma * sigma);
        let v = diode_voltage(298, 1.5e-15, 1.2, &kc);
        assert!(snr_vd(v, lf_sigma).unwrap() < snr_vd(v, er_sigma).unwrap());
    }

    #[test]
    fn vga_gain_law() {
        assert!((vga_gain(4) - 1.0).abs() < 1e-15);
        assert!((vga_gain(5) / vga_gain(4) - 1.35).abs() < 1e-12);
        // About 8x span across the 3-bit range.
        assert!((vga_gain(7) / vga_gain(0) - libm::pow(1.35, 7.0)).abs() < 1e-9);
    }

    #[test]
    fn respond_threshold_cases() {
        let kc = cold();
        let fe = quiet_fe();
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        // Disabled pixel never answers.
        let mut off = er_pixel();
        off.gain_code = 0;
        assert!(respond(&event(1.0, 0.0), &off, &fe, &kc, &mut rng).is_none());

        // 50-EHP event at unity gain and no noise: 5.341 mV over 5 mV.
        let p = respond(&event(0.168, 0.0), &er_pixel(), &fe, &kc, &mut rng).unwrap();
        assert!(p.detected);
        assert!((p.v_d - 5.341e-3).abs() < 1e-6);

        // Same event on the 6.25 um^2 energy-calibrating diode: the drop
        // scales by 4/6.25 to 3.42 mV and stays under threshold.
        let ec = PixelConfig {
            kind: PixelKind::EnergyCalibrating,
            diode_area_um2: 6.25,
            c_diode_f: 1.5e-15 * 6.25 / 4.0,
            tau_s: 200e-6 * 6.25 / 4.0,
            gain_code: 4,
            mismatch_factor: 1.0,
            n_diodes: 1,
        };
        let p = respond(&event(0.168, 0.0), &ec, &fe, &kc, &mut rng).unwrap();
        assert!(!p.detected);
        assert!((p.v_d - 3.418e-3).abs() < 2e-6);

        // Energy-calibrating pixels respond even at code 0.
        let ec0 = PixelConfig { gain_code: 0, ..ec };
        assert!(respond(&event(2.0, 0.0), &ec0, &fe, &kc, &mut rng).is_some());
    }

    #[test]
    fn dt_monotone_in_deposit_and_clipped_above_supply() {
        let kc = cold();
        let fe = quiet_fe();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pixel = er_pixel();
        let mut last = -1.0;
        for i in 1..=200 {
            let p = respond(&event(0.2 + 0.01 * i as f64, 0.0), &pixel, &fe, &kc, &mut rng).unwrap();
            assert!(p.dt_true_s > last, "dt not strictly increasing at step {i}");
            last = p.dt_true_s;
        }
        // Saturation ceiling: clip_v / v_th_eff fixes the decay time.
        let ceiling = pixel.tau_s * libm::log(fe.clip_v / effective_threshold(&pixel, &fe));
        for e_dep in [400.0, 800.0, 4000.0] {
            let p = respond(&event(e_dep, 0.0), &pixel, &fe, &kc, &mut rng).unwrap();
            assert!((p.dt_true_s - ceiling).abs() < 1e-15);
        }
    }

    #[test]
    fn detection_probability_matches_gaussian_tail() {
        let kc = k();
        let fe = FrontendParams::default();
        let pixel = er_pixel();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // A deposit one noise-sigma under threshold.
        let sigma = pixel_noise_sigma(&pixel, &fe, &kc);
        let v_th = effective_threshold(&pixel, &fe);
        let n_target = ((v_th - sigma) * pixel.c_diode_f / kc.electron_charge_c) as u64;
        let e_dep = n_target as f64 * kc.kev_per_ehp();
        let trials = 10_000usize;
        let mut hits = 0usize;
        for _ in 0..trials {
            let p = respond(&event(e_dep, 0.0), &pixel, &fe, &kc, &mut rng).unwrap();
            if p.detected {
                hits += 1;
            }
        }
        let v = n_ehps(e_dep, 0.0, &kc).unwrap() as f64 * kc.electron_charge_c / pixel.c_diode_f;
        let z = (v - v_th) / sigma;
        let expect = 0.5 * (1.0 + libm::erf(z / core::f64::consts::SQRT_2));
        let got = hits as f64 / trials as f64;
        let binom_sigma = libm::sqrt(expect * (1.0 - expect) / trials as f64);
        assert!(
            (got - expect).abs() < 3.0 * binom_sigma,
            "got {got}, expect {expect} +/- {binom_sigma}"
        );
    }

    #[test]
    fn ec_threshold_gradient_is_strict() {
        // Detection threshold in deposited energy rises strictly with the
        // energy-calibrating diode area.
        let kc = cold();
        let fe = quiet_fe();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut last = 0.0;
        for area in [4.41, 4.84, 5.29, 5.76, 6.25] {
            let pixel = PixelConfig {
                kind: PixelKind::EnergyCalibrating,
                diode_area_um2: area,
                c_diode_f: 1.5e-15 * area / 4.0,
                tau_s: 200e-6 * area / 4.0,
                gain_code: 4,
                mismatch_factor: 1.0,
                n_diodes: 1,
            };
            // Bisection on deposited energy for the detection boundary.
            let (mut lo, mut hi) = (0.0f64, 2.0f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let det = respond(&event(mid, 0.0), &pixel, &fe, &kc, &mut rng)
                    .map(|p| p.detected)
                    .unwrap_or(false);
                if det {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!(hi > last, "threshold not increasing at {area} um^2");
            last = hi;
        }
    }

    #[test]
    fn stream_builder_merges_overlapping_deposits() {
        let kc = cold();
        let fe = quiet_fe();
        let geometry = ArrayGeometry::default();
        let params = ArrayParams { mismatch_sigma_ln: 0.0, ..ArrayParams::default() };
        let array = PixelArray::build(geometry, &params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);

        // Two deposits on the same pixel 100 us apart merge into one pulse;
        // the same two deposits 10 ms apart stay separate.
        let close = vec![event(1.0, 0.0), event(1.0, 100e-6)];
        let pulses = build_pulses(&close, &array, &fe, &kc, &mut rng);
        assert_eq!(pulses.len(), 1);
        let single = respond(&event(1.0, 0.0), array.pixel(1, 1).unwrap(), &fe, &kc, &mut rng).unwrap();
        assert!(pulses[0].dt_true_s > single.dt_true_s);

        let apart = vec![event(1.0, 0.0), event(1.0, 10e-3)];
        let pulses = build_pulses(&apart, &array, &fe, &kc, &mut rng);
        assert_eq!(pulses.len(), 2);

        // The merged node saturates at the clip voltage.
        let big = vec![event(4000.0, 0.0), event(4000.0, 1e-6)];
        let pulses = build_pulses(&big, &array, &fe, &kc, &mut rng);
        assert_eq!(pulses.len(), 1);
        assert!(pulses[0].v_d <= fe.clip_v + 1e-15);
    }
}
