//! File formats: isotope definitions, attenuation tables, lookup tables,
//! calibration results, histogram exports, and the binary event stream.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use dtsim_core::calib::CalibrationResult;
use dtsim_core::physics::{AttenuationTable, Isotope};
use dtsim_core::readout::{pack_record, unpack_record, EventRecord};
use dtsim_core::recon::{DepositionHistogram, LookupBin, LookupTable};

/// Magic/version header of the binary event stream.
pub const EVENT_STREAM_MAGIC: &[u8; 8] = b"DTSIMEV1";

/// Load an isotope definition (JSON: `name`, `half_life_s`,
/// `lines[{energy_kev, yield}]`).
pub fn load_isotope(path: &Path) -> Result<Isotope> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading isotope file {}", path.display()))?;
    let isotope: Isotope = serde_json::from_str(&text)
        .with_context(|| format!("parsing isotope file {}", path.display()))?;
    isotope
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid isotope {}: {e}", path.display()))?;
    Ok(isotope)
}

/// Load an attenuation table: a header line with the material name followed
/// by `energy_kev mu_per_cm` rows. Lines starting with `#` are comments.
pub fn load_attenuation(path: &Path) -> Result<AttenuationTable> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading attenuation file {}", path.display()))?;
    let mut material: Option<String> = None;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if material.is_none() {
            material = Some(line.to_string());
            continue;
        }
        let mut parts = line.split_whitespace();
        let energy: f64 = parts
            .next()
            .ok_or_else(|| anyhow::anyhow!("line {}: missing energy", lineno + 1))?
            .parse()
            .with_context(|| format!("line {}: bad energy", lineno + 1))?;
        let mu: f64 = parts
            .next()
            .ok_or_else(|| anyhow::anyhow!("line {}: missing mu", lineno + 1))?
            .parse()
            .with_context(|| format!("line {}: bad mu", lineno + 1))?;
        if parts.next().is_some() {
            bail!("line {}: expected two columns", lineno + 1);
        }
        rows.push((energy, mu));
    }
    let material = material.ok_or_else(|| anyhow::anyhow!("missing material header line"))?;
    AttenuationTable::new(material, rows)
        .map_err(|e| anyhow::anyhow!("invalid attenuation table {}: {e}", path.display()))
}

/// Canonical text serialization of a lookup table. Floats use Rust's
/// shortest round-trip formatting, so `export(import(f))` is byte-stable
/// for canonical files.
pub fn format_lookup(table: &LookupTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("scenario_id {}\n", table.scenario_id));
    out.push_str(&format!("bin_width_kev {}\n", table.bin_width_kev));
    out.push_str("incident_energies_kev");
    for e in &table.incident_energies_kev {
        out.push_str(&format!(" {e}"));
    }
    out.push('\n');
    for bin in &table.bins {
        out.push_str(&format!("{} {}", bin.bin_index, bin.expected_count));
        for f in &bin.fractions {
            out.push_str(&format!(" {f}"));
        }
        out.push('\n');
    }
    out
}

pub fn parse_lookup(text: &str) -> Result<LookupTable> {
    let mut lines = text.lines();
    let id_line = lines.next().context("missing scenario_id line")?;
    let scenario_id = id_line
        .strip_prefix("scenario_id ")
        .context("first line must be `scenario_id <id>`")?
        .to_string();
    let width_line = lines.next().context("missing bin_width_kev line")?;
    let bin_width_kev: f64 = width_line
        .strip_prefix("bin_width_kev ")
        .context("second line must be `bin_width_kev <kev>`")?
        .parse()
        .context("bad bin width")?;
    let energies_line = lines.next().context("missing incident_energies_kev line")?;
    let incident_energies_kev: Vec<f64> = energies_line
        .strip_prefix("incident_energies_kev")
        .context("third line must be `incident_energies_kev <kev>...`")?
        .split_whitespace()
        .map(|t| t.parse().context("bad incident energy"))
        .collect::<Result<_>>()?;
    if incident_energies_kev.is_empty() {
        bail!("need at least one incident energy");
    }
    let mut bins = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let bin_index: u32 = parts
            .next()
            .ok_or_else(|| anyhow::anyhow!("bin row {}: missing index", lineno + 4))?
            .parse()
            .with_context(|| format!("bin row {}: bad index", lineno + 4))?;
        let expected_count: f64 = parts
            .next()
            .ok_or_else(|| anyhow::anyhow!("bin row {}: missing expected count", lineno + 4))?
            .parse()
            .with_context(|| format!("bin row {}: bad expected count", lineno + 4))?;
        let fractions: Vec<f64> = parts
            .map(|t| t.parse().with_context(|| format!("bin row {}: bad fraction", lineno + 4)))
            .collect::<Result<_>>()?;
        bins.push(LookupBin { bin_index, expected_count, fractions });
    }
    let table = LookupTable { scenario_id, bin_width_kev, incident_energies_kev, bins };
    table
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid lookup table: {e}"))?;
    Ok(table)
}

pub fn save_lookup(path: &Path, table: &LookupTable) -> Result<()> {
    fs::write(path, format_lookup(table))
        .with_context(|| format!("writing lookup table {}", path.display()))
}

pub fn import_external_table(path: &Path) -> Result<LookupTable> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading lookup table {}", path.display()))?;
    parse_lookup(&text).with_context(|| format!("in {}", path.display()))
}

/// Persist a sensitivity calibration so it can be loaded onto the array at
/// construction, like codes restored at chip power-up.
pub fn save_calibration(path: &Path, result: &CalibrationResult) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    fs::write(path, text).with_context(|| format!("writing calibration {}", path.display()))
}

pub fn load_calibration(path: &Path) -> Result<CalibrationResult> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading calibration {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing calibration {}", path.display()))
}

/// Two-column histogram export: `bin_center_kev,count`.
pub fn format_histogram(hist: &DepositionHistogram) -> String {
    let mut out = String::from("bin_center_kev,count\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{},{}\n", hist.bin_center_kev(i), count));
    }
    out
}

pub fn save_histogram(path: &Path, hist: &DepositionHistogram) -> Result<()> {
    fs::write(path, format_histogram(hist))
        .with_context(|| format!("writing histogram {}", path.display()))
}

/// Lossless reader for the harness's own histogram export.
pub fn parse_histogram(text: &str, bin_width_kev: f64) -> Result<DepositionHistogram> {
    let mut counts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "bin_center_kev,count" {
                bail!("unexpected histogram header {line:?}");
            }
            continue;
        }
        let (center, count) = line
            .split_once(',')
            .ok_or_else(|| anyhow::anyhow!("line {}: expected two columns", lineno + 1))?;
        let center: f64 = center.parse().context("bad bin center")?;
        let count: u64 = count.parse().context("bad count")?;
        let bin = (center / bin_width_kev) as usize;
        if counts.len() <= bin {
            counts.resize(bin + 1, 0);
        }
        counts[bin] = count;
    }
    Ok(DepositionHistogram { bin_width_kev, counts })
}

/// Write the bit-exact event stream: an 8-byte magic/version header, then
/// one 32-bit little-endian packed record per event.
pub fn save_event_stream(path: &Path, records: &[EventRecord]) -> Result<()> {
    let mut file = fs::File::create(path)
        .with_context(|| format!("creating event stream {}", path.display()))?;
    file.write_all(EVENT_STREAM_MAGIC)?;
    for record in records {
        let word = pack_record(record).map_err(|e| anyhow::anyhow!("packing record: {e}"))?;
        file.write_all(&word.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_event_stream(path: &Path) -> Result<Vec<EventRecord>> {
    let bytes =
        fs::read(path).with_context(|| format!("reading event stream {}", path.display()))?;
    if bytes.len() < 8 || &bytes[..8] != EVENT_STREAM_MAGIC {
        bail!("{} is not an event stream (bad magic)", path.display());
    }
    let payload = &bytes[8..];
    if payload.len() % 4 != 0 {
        bail!("{}: truncated record word", path.display());
    }
    payload
        .chunks_exact(4)
        .enumerate()
        .map(|(i, chunk)| {
            let word = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            unpack_record(word).map_err(|e| anyhow::anyhow!("record {i}: {e}"))
        })
        .collect()
}
