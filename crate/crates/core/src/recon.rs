//! Spectral reconstruction: DT records to deposited-energy histograms,
//! lookup-table matching, and incident-energy assignment.
//!
//! The chip never inverts anything. A family of simulated deposited-energy
//! distributions, each labeled with the incident energies that produced
//! every bin, is matched against the measured histogram by sum of squared
//! differences after a one-parameter scale fit; the winning table's per-bin
//! fractions then split the measured counts across incident energies.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::physics::{EventGenerator, GenerateError};
use crate::readout::{ClockConfig, ConflictFlag, EventRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum ReconError {
    NoCandidates,
    GridMismatch { measured_kev: f64, table_kev: f64 },
    AllZeroMeasured,
    ZeroInteractions,
    NonMonotonicBins { index: u32 },
    FractionCount { bin_index: u32 },
    NegativeFraction { bin_index: u32 },
    FractionSum { bin_index: u32, sum: f64 },
    NegativeCount { bin_index: u32 },
    Generate(GenerateError),
    InvalidBinWidth(f64),
}

impl core::fmt::Display for ReconError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ReconError::NoCandidates => write!(f, "need at least one lookup table"),
            ReconError::GridMismatch { measured_kev, table_kev } => write!(
                f,
                "bin grids differ: measured {measured_kev} keV vs table {table_kev} keV"
            ),
            ReconError::AllZeroMeasured => write!(f, "measured histogram has no counts"),
            ReconError::ZeroInteractions => write!(f, "no interactions to tabulate"),
            ReconError::NonMonotonicBins { index } => {
                write!(f, "table bin indices must be strictly increasing at {index}")
            }
            ReconError::FractionCount { bin_index } => {
                write!(f, "bin {bin_index} has the wrong number of fractions")
            }
            ReconError::NegativeFraction { bin_index } => {
                write!(f, "bin {bin_index} has a negative fraction")
            }
            ReconError::FractionSum { bin_index, sum } => {
                write!(f, "bin {bin_index} fractions sum to {sum}, want 1 within 1e-6")
            }
            ReconError::NegativeCount { bin_index } => {
                write!(f, "bin {bin_index} has a negative expected count")
            }
            ReconError::Generate(e) => write!(f, "generate: {e}"),
            ReconError::InvalidBinWidth(w) => write!(f, "bin width must be positive, got {w}"),
        }
    }
}

impl core::error::Error for ReconError {}

impl From<GenerateError> for ReconError {
    fn from(e: GenerateError) -> Self {
        ReconError::Generate(e)
    }
}

/// Binned deposited-energy spectrum with the first bin edge at 0 keV.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DepositionHistogram {
    pub bin_width_kev: f64,
    pub counts: Vec<u64>,
}

impl DepositionHistogram {
    pub fn new(bin_width_kev: f64) -> Result<Self, ReconError> {
        if !(bin_width_kev > 0.0) {
            return Err(ReconError::InvalidBinWidth(bin_width_kev));
        }
        Ok(Self { bin_width_kev, counts: Vec::new() })
    }

    pub fn add(&mut self, e_dep_kev: f64) {
        if !(e_dep_kev >= 0.0) {
            return;
        }
        let bin = libm::floor(e_dep_kev / self.bin_width_kev) as usize;
        if bin >= self.counts.len() {
            self.counts.resize(bin + 1, 0);
        }
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center_kev(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width_kev
    }
}

/// Deposited energy represented by a DT count:
/// `alpha * v_th * exp(counts * period / tau)`.
pub fn edep_estimate(
    dt_counts: u16,
    clock: &ClockConfig,
    tau_s: f64,
    alpha_kev_per_v: f64,
    v_th_v: f64,
) -> f64 {
    alpha_kev_per_v * v_th_v * libm::exp(dt_counts as f64 * clock.period_s() / tau_s)
}

/// Histogram the retained records of an acquisition. Row-coincident records
/// carry summed, unphysical energies and are excluded; missed-column
/// records keep a valid energy and stay in.
pub fn build_histogram(
    records: &[EventRecord],
    clock: &ClockConfig,
    tau_s: f64,
    alpha_kev_per_v: f64,
    v_th_v: f64,
    bin_width_kev: f64,
) -> Result<DepositionHistogram, ReconError> {
    let mut hist = DepositionHistogram::new(bin_width_kev)?;
    for record in records {
        if record.flag == ConflictFlag::RowCoincident {
            continue;
        }
        hist.add(edep_estimate(record.dt_counts, clock, tau_s, alpha_kev_per_v, v_th_v));
    }
    Ok(hist)
}

/// One nonempty bin of a lookup table: its expected count and the
/// distribution of incident energies that deposited into it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LookupBin {
    pub bin_index: u32,
    pub expected_count: f64,
    /// Fractions in `incident_energies_kev` order, summing to 1.
    pub fractions: Vec<f64>,
}

/// Simulated deposited-to-incident energy mapping for one scenario.
///
/// Scenario ids follow `<name>@<depth>mm` where applicable; the suffix
/// carries the source depth used for tie-breaking between equally good
/// matches.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LookupTable {
    pub scenario_id: String,
    pub bin_width_kev: f64,
    pub incident_energies_kev: Vec<f64>,
    pub bins: Vec<LookupBin>,
}

impl LookupTable {
    pub fn validate(&self) -> Result<(), ReconError> {
        if !(self.bin_width_kev > 0.0) {
            return Err(ReconError::InvalidBinWidth(self.bin_width_kev));
        }
        let mut last: Option<u32> = None;
        for bin in &self.bins {
            if let Some(prev) = last {
                if bin.bin_index <= prev {
                    return Err(ReconError::NonMonotonicBins { index: bin.bin_index });
                }
            }
            last = Some(bin.bin_index);
            if bin.fractions.len() != self.incident_energies_kev.len() {
                return Err(ReconError::FractionCount { bin_index: bin.bin_index });
            }
            if bin.fractions.iter().any(|&f| f < 0.0) {
                return Err(ReconError::NegativeFraction { bin_index: bin.bin_index });
            }
            if !(bin.expected_count >= 0.0) {
                return Err(ReconError::NegativeCount { bin_index: bin.bin_index });
            }
            let sum: f64 = bin.fractions.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(ReconError::FractionSum { bin_index: bin.bin_index, sum });
            }
        }
        Ok(())
    }

    /// Source depth parsed from a `...@<depth>mm` scenario id.
    pub fn depth_mm(&self) -> Option<f64> {
        let (_, suffix) = self.scenario_id.rsplit_once('@')?;
        suffix.strip_suffix("mm")?.parse().ok()
    }

    /// Expected counts as a dense vector over `[0, n_bins)`.
    pub fn dense_counts(&self, n_bins: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_bins];
        for bin in &self.bins {
            if (bin.bin_index as usize) < n_bins {
                out[bin.bin_index as usize] = bin.expected_count;
            }
        }
        out
    }
}

/// Best-matching table for a measured histogram.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchResult {
    pub index: usize,
    pub scenario_id: String,
    pub scale: f64,
    pub ssd: f64,
}

/// Scale fit and residual of one candidate against a measured histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchScore {
    pub scale: f64,
    pub ssd: f64,
}

/// Score every candidate: fit one nonnegative scale minimizing
/// `sum (measured - scale * candidate)^2` in closed form and report the
/// residual.
pub fn match_scores(
    measured: &DepositionHistogram,
    candidates: &[LookupTable],
) -> Result<Vec<MatchScore>, ReconError> {
    if candidates.is_empty() {
        return Err(ReconError::NoCandidates);
    }
    if measured.total() == 0 {
        return Err(ReconError::AllZeroMeasured);
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for table in candidates {
        if (table.bin_width_kev - measured.bin_width_kev).abs()
            > 1e-9 * measured.bin_width_kev
        {
            return Err(ReconError::GridMismatch {
                measured_kev: measured.bin_width_kev,
                table_kev: table.bin_width_kev,
            });
        }
        table.validate()?;
        let n_bins = measured
            .counts
            .len()
            .max(table.bins.last().map_or(0, |b| b.bin_index as usize + 1));
        let dense = table.dense_counts(n_bins);
        let mut mc = 0.0;
        let mut cc = 0.0;
        for i in 0..n_bins {
            let m = *measured.counts.get(i).unwrap_or(&0) as f64;
            mc += m * dense[i];
            cc += dense[i] * dense[i];
        }
        let scale = if cc > 0.0 { (mc / cc).max(0.0) } else { 0.0 };
        let mut ssd = 0.0;
        for i in 0..n_bins {
            let m = *measured.counts.get(i).unwrap_or(&0) as f64;
            let r = m - scale * dense[i];
            ssd += r * r;
        }
        scores.push(MatchScore { scale, ssd });
    }
    Ok(scores)
}

/// Fit one nonnegative scale per candidate minimizing
/// `sum (measured - scale * candidate)^2` and return the candidate with
/// the smallest residual. Exact ties go to the shallower depth.
pub fn match_lookup(
    measured: &DepositionHistogram,
    candidates: &[LookupTable],
) -> Result<MatchResult, ReconError> {
    let scores = match_scores(measured, candidates)?;
    let mut best = 0usize;
    for (index, score) in scores.iter().enumerate().skip(1) {
        let better = score.ssd < scores[best].ssd
            || (score.ssd == scores[best].ssd
                && match (candidates[index].depth_mm(), candidates[best].depth_mm()) {
                    (Some(d), Some(bd)) => d < bd,
                    _ => false,
                });
        if better {
            best = index;
        }
    }
    Ok(MatchResult {
        index: best,
        scenario_id: candidates[best].scenario_id.clone(),
        scale: scores[best].scale,
        ssd: scores[best].ssd,
    })
}

/// Incident-energy spectrum assigned from a measured histogram.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IncidentSpectrum {
    pub energies_kev: Vec<f64>,
    pub assigned_counts: Vec<f64>,
    /// Measured counts in bins the table never populated.
    pub unmapped: f64,
}

impl IncidentSpectrum {
    pub fn total_assigned(&self) -> f64 {
        self.assigned_counts.iter().sum()
    }
}

/// Split every measured bin's counts across incident energies by the
/// matched table's per-bin fractions. Event counts are conserved: assigned
/// plus unmapped equals the measured total.
pub fn assign_incident(
    measured: &DepositionHistogram,
    table: &LookupTable,
) -> Result<IncidentSpectrum, ReconError> {
    if (table.bin_width_kev - measured.bin_width_kev).abs() > 1e-9 * measured.bin_width_kev {
        return Err(ReconError::GridMismatch {
            measured_kev: measured.bin_width_kev,
            table_kev: table.bin_width_kev,
        });
    }
    table.validate()?;
    let mut assigned = vec![0.0f64; table.incident_energies_kev.len()];
    let mut unmapped = 0.0f64;
    for (i, &count) in measured.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let count = count as f64;
        match table.bins.iter().find(|b| b.bin_index as usize == i) {
            Some(bin) => {
                let sum: f64 = bin.fractions.iter().sum();
                for (j, &f) in bin.fractions.iter().enumerate() {
                    assigned[j] += count * (f / sum);
                }
            }
            None => unmapped += count,
        }
    }
    Ok(IncidentSpectrum {
        energies_kev: table.incident_energies_kev.clone(),
        assigned_counts: assigned,
        unmapped,
    })
}

/// The measurement map from a true deposit to the binned estimate the chip
/// reports: EHP quantization, one Gaussian amplitude-noise draw, the
/// detection threshold, the supply clip, DT quantization, and the
/// exponential estimate. Lookup tables are tabulated through this map so
/// their axis is the same measured-deposit axis the histograms live on.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub clock: ClockConfig,
    pub c_diode_f: f64,
    pub tau_s: f64,
    pub v_th_v: f64,
    pub clip_v: f64,
    /// Amplitude-noise sigma at the diode node, volt.
    pub noise_sigma_v: f64,
}

impl MeasurementModel {
    /// Measured-deposit estimate for a true deposit, or `None` when the
    /// noisy pulse stays under the detection threshold.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        deposited_kev: f64,
        constants: &crate::constants::PhysicsConstants,
        rng: &mut R,
    ) -> Option<f64> {
        use rand_distr::Distribution;
        let n = crate::analog::n_ehps(deposited_kev, 0.0, constants).ok()?;
        let v_clean = n as f64 * constants.electron_charge_c / self.c_diode_f;
        let noise = rand_distr::Normal::new(0.0, self.noise_sigma_v)
            .expect("finite sigma")
            .sample(rng);
        let v = (v_clean + noise).min(self.clip_v);
        if v < self.v_th_v {
            return None;
        }
        let dt = self.tau_s * libm::log(v / self.v_th_v);
        let counts = crate::readout::quantize_dt(dt, &self.clock);
        let alpha = constants.kev_per_volt(self.c_diode_f);
        Some(edep_estimate(counts, &self.clock, self.tau_s, alpha, self.v_th_v))
    }
}

/// Build a lookup table by running the photon physics with incident-energy
/// labels retained and pushing every labeled deposit through the
/// measurement map.
///
/// Each of `n_samples` transported photons contributes its interaction
/// probability as a weight instead of being Bernoulli-accepted, which
/// reaches smooth per-bin statistics without simulating wall-clock flux;
/// the common flux normalization cancels in the scale-fitted matching.
/// Sub-threshold deposits drop out of the table exactly as they drop out
/// of a measurement.
pub fn generate_lookup<R: Rng + ?Sized>(
    generator: &EventGenerator<'_>,
    scenario_id: String,
    n_samples: u64,
    bin_width_kev: f64,
    model: &MeasurementModel,
    rng: &mut R,
) -> Result<LookupTable, ReconError> {
    if !(bin_width_kev > 0.0) {
        return Err(ReconError::InvalidBinWidth(bin_width_kev));
    }
    let samples = generator.sample_weighted_interactions(n_samples, rng)?;

    let mut energies: Vec<f64> = generator
        .source
        .isotope
        .lines
        .iter()
        .map(|l| l.energy_kev)
        .collect();
    energies.sort_by(f64::total_cmp);
    energies.dedup();

    // bin index -> per-energy weights.
    let mut acc: alloc::collections::BTreeMap<u32, Vec<f64>> = alloc::collections::BTreeMap::new();
    let mut total_weight = 0.0;
    for (event, e_incident, weight) in &samples {
        if *weight <= 0.0 {
            continue;
        }
        let Some(estimate_kev) = model.measure(event.deposited_kev, generator.constants, rng)
        else {
            continue;
        };
        let bin = libm::floor(estimate_kev / bin_width_kev) as u32;
        let slot = acc.entry(bin).or_insert_with(|| vec![0.0; energies.len()]);
        let j = energies.partition_point(|&e| e < *e_incident);
        slot[j.min(energies.len() - 1)] += weight;
        total_weight += weight;
    }
    if total_weight <= 0.0 {
        return Err(ReconError::ZeroInteractions);
    }
    let bins = acc
        .into_iter()
        .map(|(bin_index, weights)| {
            let expected_count: f64 = weights.iter().sum();
            let fractions = weights.iter().map(|w| w / expected_count).collect();
            LookupBin { bin_index, expected_count, fractions }
        })
        .collect();
    let table = LookupTable {
        scenario_id,
        bin_width_kev,
        incident_energies_kev: energies,
        bins,
    };
    table.validate()?;
    Ok(table)
}
