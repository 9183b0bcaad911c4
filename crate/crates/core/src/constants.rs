//! Physical constants and the silicon/device parameters shared across the
//! simulation.

/// Becquerel per microcurie.
pub const BQ_PER_MICROCURIE: f64 = 3.7e4;

/// Physical constants used by the photon-interaction and charge-generation
/// models. Defaults describe silicon at room temperature.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PhysicsConstants {
    /// Electron rest energy in keV.
    pub electron_rest_energy_kev: f64,
    /// Silicon bandgap energy per generated electron-hole pair, in eV.
    pub bandgap_ev_per_ehp: f64,
    /// Quenching factor: fraction of deposited energy converted to EHPs.
    pub quenching_factor: f64,
    /// Elementary charge in coulomb.
    pub electron_charge_c: f64,
    /// Boltzmann constant in J/K.
    pub boltzmann_j_per_k: f64,
    /// Operating temperature in kelvin.
    pub temperature_k: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            electron_rest_energy_kev: 511.0,
            bandgap_ev_per_ehp: 1.12,
            quenching_factor: 1.0 / 3.0,
            electron_charge_c: 1.602_176_634e-19,
            boltzmann_j_per_k: 1.380_649e-23,
            temperature_k: 300.0,
        }
    }
}

/// Invalid constant set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstantsError;

impl core::fmt::Display for ConstantsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "physics constants must be positive with quenching factor in (0, 1]")
    }
}

impl core::error::Error for ConstantsError {}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<(), ConstantsError> {
        let positive = self.electron_rest_energy_kev > 0.0
            && self.bandgap_ev_per_ehp > 0.0
            && self.electron_charge_c > 0.0
            && self.boltzmann_j_per_k > 0.0
            && self.temperature_k > 0.0;
        if positive && self.quenching_factor > 0.0 && self.quenching_factor <= 1.0 {
            Ok(())
        } else {
            Err(ConstantsError)
        }
    }

    /// Thermal energy kT in joule.
    pub fn kt_j(&self) -> f64 {
        self.boltzmann_j_per_k * self.temperature_k
    }

    /// Deposited energy represented by one electron-hole pair, in keV.
    pub fn kev_per_ehp(&self) -> f64 {
        self.bandgap_ev_per_ehp / self.quenching_factor * 1e-3
    }

    /// Conversion from diode voltage to deposited energy, in keV per volt,
    /// for a node of capacitance `c_diode_f`. This closes the forward model:
    /// a deposit of `alpha * v_d` keV produces a drop of `v_d` volts.
    pub fn kev_per_volt(&self, c_diode_f: f64) -> f64 {
        c_diode_f / self.electron_charge_c * self.kev_per_ehp()
    }
}
