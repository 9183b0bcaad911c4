//! Pixel-array geometry and per-pixel configuration.
//!
//! The array mixes three pixel architectures by row band: energy-resolving
//! rows at single pitch, low-flux rows at double pitch (six diodes summed
//! per pixel, so five physical rows span ten row addresses), and
//! energy-calibrating rows with a gradient of diode sizes. Row addresses not
//! backed by a physical row are unpopulated.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PixelKind {
    EnergyResolving,
    LowFlux,
    EnergyCalibrating,
}

/// Inclusive 1-based row band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct RowBand {
    pub start: u16,
    pub end: u16,
}

impl RowBand {
    pub fn contains(&self, row: u16) -> bool {
        row >= self.start && row <= self.end
    }

    pub fn len(&self) -> u16 {
        self.end.saturating_sub(self.start).saturating_add(1)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    EmptyArray,
    BandOutOfRange(RowBand),
    OverlappingBands,
    InvalidDepletionDepth(f64),
    EcAreaCount { rows: u16, areas: usize },
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::EmptyArray => write!(f, "array needs at least one row and column"),
            GeometryError::BandOutOfRange(b) => {
                write!(f, "row band {}..={} outside the array", b.start, b.end)
            }
            GeometryError::OverlappingBands => write!(f, "row bands must be disjoint"),
            GeometryError::InvalidDepletionDepth(d) => {
                write!(f, "depletion depth must be positive, got {d} um")
            }
            GeometryError::EcAreaCount { rows, areas } => write!(
                f,
                "energy-calibrating band has {rows} rows but {areas} diode areas"
            ),
        }
    }
}

impl core::error::Error for GeometryError {}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ArrayGeometry {
    pub rows: u16,
    pub cols: u16,
    pub er_rows: RowBand,
    /// Physical low-flux rows (double height). Addresses between this band
    /// and the energy-calibrating band are unpopulated.
    pub lf_rows: RowBand,
    pub ec_rows: RowBand,
    pub pixel_pitch_row_um: f64,
    pub pixel_pitch_col_um: f64,
    /// Row pitch of the double-height low-flux pixels.
    pub lf_pitch_row_um: f64,
    pub depletion_depth_um: f64,
    pub chip_size_mm: [f64; 2],
    pub source_distance_mm: f64,
    /// Diode areas (um^2) of the energy-calibrating rows, one per row in
    /// `ec_rows` order.
    pub ec_diode_areas_um2: Vec<f64>,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            rows: 76,
            cols: 110,
            er_rows: RowBand { start: 1, end: 61 },
            lf_rows: RowBand { start: 62, end: 66 },
            ec_rows: RowBand { start: 72, end: 76 },
            pixel_pitch_row_um: 18.0,
            pixel_pitch_col_um: 26.0,
            lf_pitch_row_um: 36.0,
            depletion_depth_um: 1.5,
            chip_size_mm: [3.0, 3.3],
            source_distance_mm: 10.0,
            ec_diode_areas_um2: vec![6.25, 5.76, 5.29, 4.84, 4.41],
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GeometryError::EmptyArray);
        }
        for band in [self.er_rows, self.lf_rows, self.ec_rows] {
            if band.is_empty() || band.start < 1 || band.end > self.rows {
                return Err(GeometryError::BandOutOfRange(band));
            }
        }
        if self.er_rows.end >= self.lf_rows.start || self.lf_rows.end >= self.ec_rows.start {
            return Err(GeometryError::OverlappingBands);
        }
        if !(self.depletion_depth_um > 0.0) {
            return Err(GeometryError::InvalidDepletionDepth(self.depletion_depth_um));
        }
        if self.ec_diode_areas_um2.len() != self.ec_rows.len() as usize {
            return Err(GeometryError::EcAreaCount {
                rows: self.ec_rows.len(),
                areas: self.ec_diode_areas_um2.len(),
            });
        }
        Ok(())
    }

    pub fn kind_of_row(&self, row: u16) -> Option<PixelKind> {
        if self.er_rows.contains(row) {
            Some(PixelKind::EnergyResolving)
        } else if self.lf_rows.contains(row) {
            Some(PixelKind::LowFlux)
        } else if self.ec_rows.contains(row) {
            Some(PixelKind::EnergyCalibrating)
        } else {
            None
        }
    }

    /// Diode area of a populated row, in um^2; energy-resolving and low-flux
    /// diodes share the reference 4 um^2 size.
    pub fn diode_area_um2(&self, row: u16) -> Option<f64> {
        match self.kind_of_row(row)? {
            PixelKind::EnergyCalibrating => {
                Some(self.ec_diode_areas_um2[(row - self.ec_rows.start) as usize])
            }
            _ => Some(4.0),
        }
    }

    /// Height of a populated row in micrometres.
    fn row_height_um(&self, row: u16) -> Option<f64> {
        match self.kind_of_row(row)? {
            PixelKind::LowFlux => Some(self.lf_pitch_row_um),
            _ => Some(self.pixel_pitch_row_um),
        }
    }

    /// Total extent of the populated array, (width across columns, height
    /// across rows), in millimetres.
    pub fn active_size_mm(&self) -> [f64; 2] {
        let width = self.cols as f64 * self.pixel_pitch_col_um * 1e-3;
        let height: f64 = (1..=self.rows)
            .filter_map(|r| self.row_height_um(r))
            .sum::<f64>()
            * 1e-3;
        [width, height]
    }

    /// Top edge (minimum y) of a populated row within the active area, in
    /// millimetres from the array center. Row 1 sits at the minimum y edge.
    fn row_edge_mm(&self, row: u16) -> Option<f64> {
        self.kind_of_row(row)?;
        let half_height = self.active_size_mm()[1] / 2.0;
        let offset: f64 = (1..row)
            .filter_map(|r| self.row_height_um(r))
            .sum::<f64>()
            * 1e-3;
        Some(offset - half_height)
    }

    /// Map a point on the chip plane (mm from the array center) to the
    /// populated pixel containing it.
    pub fn locate(&self, x_mm: f64, y_mm: f64) -> Option<(u16, u16)> {
        let [width, height] = self.active_size_mm();
        if x_mm < -width / 2.0 || x_mm >= width / 2.0 || y_mm < -height / 2.0 || y_mm >= height / 2.0
        {
            return None;
        }
        let col = ((x_mm + width / 2.0) / (self.pixel_pitch_col_um * 1e-3)) as u16 + 1;
        let col = col.min(self.cols);
        let mut row = None;
        for r in 1..=self.rows {
            if let (Some(edge), Some(h)) = (self.row_edge_mm(r), self.row_height_um(r)) {
                if y_mm >= edge && y_mm < edge + h * 1e-3 {
                    row = Some(r);
                    break;
                }
            }
        }
        row.map(|r| (r, col))
    }

    /// Number of populated pixels.
    pub fn populated_pixels(&self) -> usize {
        (1..=self.rows)
            .filter(|&r| self.kind_of_row(r).is_some())
            .count()
            * self.cols as usize
    }
}

/// Per-pixel analog configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PixelConfig {
    pub kind: PixelKind,
    pub diode_area_um2: f64,
    pub c_diode_f: f64,
    pub tau_s: f64,
    /// 3-bit variable-gain code; 0 disables every kind except
    /// energy-calibrating pixels, which always respond.
    pub gain_code: u8,
    /// Multiplier on the effective detection threshold, modelling
    /// pixel-to-pixel mismatch.
    pub mismatch_factor: f64,
    pub n_diodes: u8,
}

/// Construction parameters for a pixel array.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ArrayParams {
    /// Diode-node capacitance at the reference 4 um^2 diode, in farad.
    /// Scales linearly with diode area.
    pub c_diode_at_4um2_f: f64,
    /// Decay time constant at the reference capacitance; the bias resistance
    /// is shared, so tau scales with capacitance.
    pub tau_at_4um2_s: f64,
    /// Sigma of the lognormal per-pixel threshold mismatch.
    pub mismatch_sigma_ln: f64,
    /// Gain code assigned to every pixel at construction.
    pub default_gain_code: u8,
}

impl Default for ArrayParams {
    fn default() -> Self {
        Self {
            c_diode_at_4um2_f: 1.5e-15,
            tau_at_4um2_s: 200e-6,
            mismatch_sigma_ln: 0.2,
            default_gain_code: 4,
        }
    }
}

/// The configured pixel array: geometry plus one `PixelConfig` per populated
/// address.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelArray {
    geometry: ArrayGeometry,
    pixels: Vec<Option<PixelConfig>>,
}

impl PixelArray {
    /// Build an array with per-pixel mismatch drawn from the run's seeded
    /// generator. Draws are consumed in row-major order over populated
    /// pixels, so a fixed seed reproduces the array exactly.
    pub fn build<R: Rng + ?Sized>(
        geometry: ArrayGeometry,
        params: &ArrayParams,
        rng: &mut R,
    ) -> Result<Self, GeometryError> {
        geometry.validate()?;
        let normal = Normal::new(0.0, params.mismatch_sigma_ln).expect("finite sigma");
        let mut pixels = Vec::with_capacity(geometry.rows as usize * geometry.cols as usize);
        for row in 1..=geometry.rows {
            let kind = geometry.kind_of_row(row);
            for _col in 1..=geometry.cols {
                match kind {
                    None => pixels.push(None),
                    Some(kind) => {
                        let area = geometry.diode_area_um2(row).expect("populated row");
                        let scale = area / 4.0;
                        let mismatch = if params.mismatch_sigma_ln > 0.0 {
                            libm::exp(normal.sample(rng))
                        } else {
                            1.0
                        };
                        pixels.push(Some(PixelConfig {
                            kind,
                            diode_area_um2: area,
                            c_diode_f: params.c_diode_at_4um2_f * scale,
                            tau_s: params.tau_at_4um2_s * scale,
                            gain_code: params.default_gain_code,
                            mismatch_factor: mismatch,
                            n_diodes: if kind == PixelKind::LowFlux { 6 } else { 1 },
                        }));
                    }
                }
            }
        }
        Ok(Self { geometry, pixels })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    fn index(&self, row: u16, col: u16) -> Option<usize> {
        if row < 1 || row > self.geometry.rows || col < 1 || col > self.geometry.cols {
            return None;
        }
        Some((row as usize - 1) * self.geometry.cols as usize + (col as usize - 1))
    }

    pub fn pixel(&self, row: u16, col: u16) -> Option<&PixelConfig> {
        self.pixels.get(self.index(row, col)?)?.as_ref()
    }

    pub fn pixel_mut(&mut self, row: u16, col: u16) -> Option<&mut PixelConfig> {
        let i = self.index(row, col)?;
        self.pixels.get_mut(i)?.as_mut()
    }

    /// Iterate populated pixels in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (u16, u16, &PixelConfig)> {
        let cols = self.geometry.cols as usize;
        self.pixels.iter().enumerate().filter_map(move |(i, p)| {
            p.as_ref()
                .map(|p| ((i / cols) as u16 + 1, (i % cols) as u16 + 1, p))
        })
    }

    pub fn set_gain_code(&mut self, row: u16, col: u16, code: u8) {
        if let Some(p) = self.pixel_mut(row, col) {
            p.gain_code = code.min(7);
        }
    }
}
