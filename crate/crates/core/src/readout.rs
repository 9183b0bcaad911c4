//! The DT processing unit: column-address sweep, conflict detection, the
//! 10-bit configurable-period counter, row priority encoding, the 16-deep
//! FIFO, and the bit-exact 26-bit event record.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::analog::AnalogPulse;

#[derive(Debug, Clone, PartialEq)]
pub enum ReadoutError {
    InvalidSelectCode(u8),
    InvalidCas,
    ColumnOutOfRange(u16),
    EmptyRowSet,
    FieldOutOfRange(&'static str, u32),
    InvalidFlagBits(u32),
    NonZeroPadding(u32),
    MissedColumnWithAddress,
    ProbabilityOutOfRange(f64),
}

impl core::fmt::Display for ReadoutError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ReadoutError::InvalidSelectCode(c) => write!(f, "clock select code must be 0-7, got {c}"),
            ReadoutError::InvalidCas => {
                write!(f, "CAS pulses must tile the sweep period exactly")
            }
            ReadoutError::ColumnOutOfRange(c) => write!(f, "column {c} outside the sweep"),
            ReadoutError::EmptyRowSet => write!(f, "priority encoder needs a nonempty row set"),
            ReadoutError::FieldOutOfRange(name, v) => {
                write!(f, "record field {name} out of range: {v}")
            }
            ReadoutError::InvalidFlagBits(b) => write!(f, "invalid conflict flag bits {b:#04b}"),
            ReadoutError::NonZeroPadding(w) => {
                write!(f, "upper padding bits of record word {w:#010x} must be zero")
            }
            ReadoutError::MissedColumnWithAddress => {
                write!(f, "missed-column records must carry column 0")
            }
            ReadoutError::ProbabilityOutOfRange(p) => {
                write!(f, "interaction probability must be in [0, 1), got {p}")
            }
        }
    }
}

impl core::error::Error for ReadoutError {}

/// Configurable DT counting clock: period `2^select_code` microseconds,
/// 1-128 us in 2x increments (a one-hot left shift on chip).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ClockConfig {
    select_code: u8,
}

impl ClockConfig {
    pub fn new(select_code: u8) -> Result<Self, ReadoutError> {
        if select_code > 7 {
            return Err(ReadoutError::InvalidSelectCode(select_code));
        }
        Ok(Self { select_code })
    }

    pub fn select_code(&self) -> u8 {
        self.select_code
    }

    pub fn period_us(&self) -> f64 {
        (1u32 << self.select_code) as f64
    }

    pub fn period_s(&self) -> f64 {
        self.period_us() * 1e-6
    }

    /// All selectable periods, in microseconds.
    pub fn available_periods_us() -> [f64; 8] {
        [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    }
}

/// Column-address sweep: non-overlapping active-high pulses, one column at
/// a time, tiling the sweep period.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CasConfig {
    pub pulse_width_us: f64,
    pub sweep_period_us: f64,
    pub n_columns: u16,
}

impl Default for CasConfig {
    fn default() -> Self {
        Self { pulse_width_us: 1.0, sweep_period_us: 110.0, n_columns: 110 }
    }
}

impl CasConfig {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        let tiled = self.pulse_width_us * self.n_columns as f64;
        if self.pulse_width_us > 0.0 && self.n_columns > 0 && (tiled - self.sweep_period_us).abs() < 1e-9
        {
            Ok(())
        } else {
            Err(ReadoutError::InvalidCas)
        }
    }
}

fn rem_euclid(a: f64, modulus: f64) -> f64 {
    let r = a % modulus;
    if r < 0.0 {
        r + modulus
    } else {
        r
    }
}

/// True iff column `col`'s CAS pulse is high at absolute time `t_s`.
pub fn cas_is_high(col: u16, t_s: f64, cas: &CasConfig) -> Result<bool, ReadoutError> {
    if col < 1 || col > cas.n_columns {
        return Err(ReadoutError::ColumnOutOfRange(col));
    }
    let period = cas.sweep_period_us * 1e-6;
    let phase = rem_euclid(t_s, period) * 1e6;
    let open = (col - 1) as f64 * cas.pulse_width_us;
    Ok(phase >= open && phase < open + cas.pulse_width_us)
}

/// The pulse's own column iff that column's CAS goes high at some point in
/// `[start, start + dt_true)`; `None` means the address is missed.
pub fn resolve_column(pulse: &AnalogPulse, cas: &CasConfig) -> Option<u16> {
    let col = pulse.pixel_col;
    if col < 1 || col > cas.n_columns || !pulse.detected {
        return None;
    }
    let period_us = cas.sweep_period_us;
    let dt_us = pulse.dt_true_s * 1e6;
    if dt_us >= period_us {
        return Some(col);
    }
    let phase_us = rem_euclid(pulse.start_time_s * 1e6, period_us);
    let open_us = (col - 1) as f64 * cas.pulse_width_us;
    // Inside the pulse's own CAS window right now?
    let into = rem_euclid(phase_us - open_us, period_us);
    if into < cas.pulse_width_us {
        return Some(col);
    }
    // Otherwise the window must reopen before the pulse dies.
    let until_open = rem_euclid(open_us - phase_us, period_us);
    (until_open < dt_us).then_some(col)
}

/// Row-coincidence detection. Pulses on one shared count line whose active
/// intervals chain into a single CL-high stretch corrupt each other's width
/// measurement; when at least two of them get their columns swept, the
/// count line dips the count-column line multiple times and the whole group
/// is flagged coincident.
pub fn detect_row_coincidence(pulses_on_row: &[&AnalogPulse], cas: &CasConfig) -> Vec<bool> {
    let n = pulses_on_row.len();
    let mut flags = vec![false; n];
    if n < 2 {
        return flags;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        pulses_on_row[a]
            .start_time_s
            .total_cmp(&pulses_on_row[b].start_time_s)
    });
    let mut component: Vec<usize> = Vec::new();
    let mut component_end = f64::NEG_INFINITY;
    let close_component = |component: &mut Vec<usize>, flags: &mut Vec<bool>| {
        if component.len() >= 2 {
            let swept = component
                .iter()
                .filter(|&&i| resolve_column(pulses_on_row[i], cas).is_some())
                .count();
            if swept >= 2 {
                for &i in component.iter() {
                    flags[i] = true;
                }
            }
        }
        component.clear();
    };
    for &i in &order {
        let p = pulses_on_row[i];
        if p.start_time_s >= component_end {
            close_component(&mut component, &mut flags);
            component_end = f64::NEG_INFINITY;
        }
        component.push(i);
        component_end = component_end.max(p.start_time_s + p.dt_true_s);
    }
    close_component(&mut component, &mut flags);
    flags
}

/// Fraction of detection events in a six-diode pixel that are coincident
/// events, `sum_{i=2..6} C(6,i) p^i / p`, for a per-diode interaction
/// probability `p`.
pub fn coincidence_fraction(p_interaction: f64) -> Result<f64, ReadoutError> {
    if !(0.0..1.0).contains(&p_interaction) {
        return Err(ReadoutError::ProbabilityOutOfRange(p_interaction));
    }
    if p_interaction == 0.0 {
        return Ok(0.0);
    }
    const CHOOSE_6: [f64; 7] = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    let mut sum = 0.0;
    for i in (2..=6usize).rev() {
        sum += CHOOSE_6[i] * libm::pow(p_interaction, i as f64);
    }
    Ok(sum / p_interaction)
}

/// Lowest row index wins; rows 1-76 order the three architectures by how
/// much deposited-energy information they carry.
pub fn priority_encode(ready_rows: &[u16]) -> Result<u16, ReadoutError> {
    ready_rows.iter().copied().min().ok_or(ReadoutError::EmptyRowSet)
}

/// 2-bit conflict flag of an event record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ConflictFlag {
    ConflictFree = 0b00,
    RowCoincident = 0b01,
    MissedColumn = 0b10,
}

impl ConflictFlag {
    pub fn bits(self) -> u32 {
        self as u32
    }

    pub fn from_bits(bits: u32) -> Result<Self, ReadoutError> {
        match bits {
            0b00 => Ok(ConflictFlag::ConflictFree),
            0b01 => Ok(ConflictFlag::RowCoincident),
            0b10 => Ok(ConflictFlag::MissedColumn),
            other => Err(ReadoutError::InvalidFlagBits(other)),
        }
    }
}

/// One 26-bit readout word: 2-bit flag, 7-bit row, 7-bit column (0 when the
/// address was missed), 10-bit DT count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventRecord {
    pub flag: ConflictFlag,
    pub row: u16,
    pub col: u16,
    pub dt_counts: u16,
}

impl EventRecord {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        if self.row < 1 || self.row > 0x7f {
            return Err(ReadoutError::FieldOutOfRange("row", self.row as u32));
        }
        if self.col > 0x7f {
            return Err(ReadoutError::FieldOutOfRange("col", self.col as u32));
        }
        if self.dt_counts > 0x3ff {
            return Err(ReadoutError::FieldOutOfRange("dt_counts", self.dt_counts as u32));
        }
        if self.flag == ConflictFlag::MissedColumn && self.col != 0 {
            return Err(ReadoutError::MissedColumnWithAddress);
        }
        if self.flag == ConflictFlag::ConflictFree && self.col == 0 {
            return Err(ReadoutError::FieldOutOfRange("col", 0));
        }
        Ok(())
    }
}

/// Count of whole clock periods the count line stays high, saturating at
/// the 10-bit ceiling.
pub fn quantize_dt(dt_true_s: f64, clock: &ClockConfig) -> u16 {
    if !(dt_true_s > 0.0) {
        return 0;
    }
    let counts = libm::floor(dt_true_s / clock.period_s());
    if counts >= 1023.0 {
        1023
    } else {
        counts as u16
    }
}

/// Pack a record into the 26 low bits of a word:
/// `flag << 24 | row << 17 | col << 10 | dt_counts`.
pub fn pack_record(record: &EventRecord) -> Result<u32, ReadoutError> {
    record.validate()?;
    Ok(record.flag.bits() << 24
        | (record.row as u32) << 17
        | (record.col as u32) << 10
        | record.dt_counts as u32)
}

/// Exact inverse of `pack_record`; nonzero padding above bit 25 is an
/// error.
pub fn unpack_record(word: u32) -> Result<EventRecord, ReadoutError> {
    if word >> 26 != 0 {
        return Err(ReadoutError::NonZeroPadding(word));
    }
    let record = EventRecord {
        flag: ConflictFlag::from_bits(word >> 24 & 0b11)?,
        row: (word >> 17 & 0x7f) as u16,
        col: (word >> 10 & 0x7f) as u16,
        dt_counts: (word & 0x3ff) as u16,
    };
    record.validate()?;
    Ok(record)
}

/// Depth-16 FIFO between the priority encoder and the off-chip link. A full
/// FIFO drops the incoming record: old count data is never overwritten.
#[derive(Debug, Clone, Default)]
pub struct Fifo {
    contents: VecDeque<EventRecord>,
}

impl Fifo {
    pub const DEPTH: usize = 16;

    pub fn push(&mut self, record: EventRecord) -> bool {
        if self.contents.len() >= Self::DEPTH {
            return false;
        }
        self.contents.push_back(record);
        true
    }

    pub fn pop(&mut self) -> Option<EventRecord> {
        self.contents.pop_front()
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }
}

/// Full readout configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ReadoutConfig {
    pub clock: ClockConfig,
    pub cas: CasConfig,
    /// Interval between FIFO drains toward the off-chip link; `None` stalls
    /// the drain until the end of the run.
    pub drain_interval_us: Option<f64>,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            clock: ClockConfig::new(0).expect("valid code"),
            cas: CasConfig::default(),
            drain_interval_us: Some(10.0),
        }
    }
}

/// Bookkeeping from one pipeline pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadoutStats {
    pub pulses_in: u64,
    pub records_out: u64,
    pub fifo_dropped: u64,
    pub row_coincident: u64,
    pub missed_column: u64,
}

/// Run the DT processing unit over a time-ordered pulse stream.
///
/// Per pulse: quantize the count-line width, resolve the column against the
/// sweep, flag conflicts; completions within the same counting period are
/// simultaneous and enter the FIFO lowest-row-first; the FIFO drains at the
/// configured interval and flushes when the stream ends.
pub fn readout_pipeline(
    pulses: &[AnalogPulse],
    cfg: &ReadoutConfig,
) -> Result<(Vec<EventRecord>, ReadoutStats), ReadoutError> {
    cfg.cas.validate()?;
    let mut stats = ReadoutStats { pulses_in: pulses.len() as u64, ..ReadoutStats::default() };

    // Per-row coincidence flags.
    let mut coincident = vec![false; pulses.len()];
    {
        let mut by_row: alloc::collections::BTreeMap<u16, Vec<usize>> =
            alloc::collections::BTreeMap::new();
        for (i, pulse) in pulses.iter().enumerate() {
            if pulse.detected {
                by_row.entry(pulse.pixel_row).or_default().push(i);
            }
        }
        for idx in by_row.values() {
            let on_row: Vec<&AnalogPulse> = idx.iter().map(|&i| &pulses[i]).collect();
            for (k, flagged) in detect_row_coincidence(&on_row, &cfg.cas).into_iter().enumerate() {
                coincident[idx[k]] = flagged;
            }
        }
    }

    // Latch one candidate record per detected pulse at its completion time.
    struct Pending {
        period_index: u64,
        completion_s: f64,
        record: EventRecord,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for (i, pulse) in pulses.iter().enumerate() {
        if !pulse.detected {
            continue;
        }
        let col = resolve_column(pulse, &cfg.cas);
        let flag = if coincident[i] {
            stats.row_coincident += 1;
            ConflictFlag::RowCoincident
        } else if col.is_none() {
            stats.missed_column += 1;
            ConflictFlag::MissedColumn
        } else {
            ConflictFlag::ConflictFree
        };
        let record = EventRecord {
            flag,
            row: pulse.pixel_row,
            col: col.unwrap_or(0),
            dt_counts: quantize_dt(pulse.dt_true_s, &cfg.clock),
        };
        record.validate()?;
        let completion_s = pulse.start_time_s + pulse.dt_true_s;
        let period_index = libm::floor(completion_s / cfg.clock.period_s()) as u64;
        pending.push(Pending { period_index, completion_s, record });
    }
    // Same counting period = simultaneous; the row priority encoder breaks
    // the tie.
    pending.sort_by(|a, b| {
        a.period_index
            .cmp(&b.period_index)
            .then(a.record.row.cmp(&b.record.row))
            .then(a.completion_s.total_cmp(&b.completion_s))
            .then(a.record.col.cmp(&b.record.col))
    });

    let mut fifo = Fifo::default();
    let mut out = Vec::new();
    // Drain ticks fire at n * interval (n = 1, 2, ...); empty-FIFO ticks
    // are no-ops, so the tick counter can jump over them wholesale.
    let mut next_tick = 1u64;
    for p in &pending {
        // Records become available at the end of their counting period.
        let available_s = (p.period_index + 1) as f64 * cfg.clock.period_s();
        if let Some(interval_us) = cfg.drain_interval_us {
            let interval_s = interval_us * 1e-6;
            while next_tick as f64 * interval_s <= available_s {
                match fifo.pop() {
                    Some(r) => {
                        out.push(r);
                        next_tick += 1;
                    }
                    None => {
                        next_tick = libm::floor(available_s / interval_s) as u64 + 1;
                    }
                }
            }
        }
        if !fifo.push(p.record) {
            stats.fifo_dropped += 1;
        }
    }
    while let Some(r) = fifo.pop() {
        out.push(r);
    }
    stats.records_out = out.len() as u64;
    Ok((out, stats))
}
