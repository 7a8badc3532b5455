//! Meter series, the feeder dataset container and AMI CSV ingestion.
//!
//! Missing readings are stored as `NaN` and are never imputed. Every meter of
//! a [`FeederDataset`] shares one [`TimeGrid`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for a missing reading.
pub const MISSING: f64 = f64::NAN;

/// Default service voltage used when a meter has no entry.
pub const DEFAULT_SERVICE_VOLTAGE: f64 = 120.0;

/// Per-unit values outside this open band are treated as bad readings.
pub const PU_SANITY_BAND: (f64, f64) = (0.5, 1.5);

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const SNAP_TOLERANCE_SECS: i64 = 60;

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Phase::A),
            "B" => Ok(Phase::B),
            "C" => Ok(Phase::C),
            other => Err(Error::param(format!("unknown phase `{other}`"))),
        }
    }
}

/// Fixed-interval timestamp grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: NaiveDateTime,
    pub interval_minutes: u32,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(start: NaiveDateTime, interval_minutes: u32, len: usize) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::param("interval must be at least one minute"));
        }
        Ok(Self {
            start,
            interval_minutes,
            len,
        })
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.interval_minutes as i64 * index as i64)
    }

    /// Index of the first grid point at or after `instant`, clamped to `len`.
    pub fn index_at_or_after(&self, instant: NaiveDateTime) -> usize {
        let minutes = (instant - self.start).num_minutes();
        if minutes <= 0 {
            return 0;
        }
        let step = self.interval_minutes as i64;
        let idx = (minutes + step - 1) / step;
        (idx as usize).min(self.len)
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len)
    }

    /// Sub-grid covering `range`.
    pub fn slice(&self, range: Range<usize>) -> TimeGrid {
        TimeGrid {
            start: self.timestamp(range.start),
            interval_minutes: self.interval_minutes,
            len: range.len(),
        }
    }
}

/// One meter's aligned power (kW) and voltage series.
///
/// `voltage` holds whatever unit the source used until
/// [`normalize_voltage`] converts it to per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub meter_id: String,
    pub transformer_id: Option<String>,
    pub recorded_phase: Option<Phase>,
    pub grid: TimeGrid,
    pub power_kw: Vec<f64>,
    pub voltage: Vec<f64>,
}

impl MeterSeries {
    pub fn new(meter_id: impl Into<String>, grid: TimeGrid, power_kw: Vec<f64>, voltage: Vec<f64>) -> Result<Self> {
        let meter_id = meter_id.into();
        if power_kw.len() != grid.len || voltage.len() != grid.len {
            return Err(Error::InvalidDataset(format!(
                "meter `{meter_id}`: series length does not match grid length {}",
                grid.len
            )));
        }
        if let Some(p) = power_kw
            .iter()
            .find(|p| !is_missing(**p) && (**p < 0.0 || !p.is_finite()))
        {
            return Err(Error::InvalidDataset(format!(
                "meter `{meter_id}`: power {p} is negative or not finite"
            )));
        }
        if let Some(v) = voltage
            .iter()
            .find(|v| !is_missing(**v) && (**v <= 0.0 || !v.is_finite()))
        {
            return Err(Error::InvalidDataset(format!(
                "meter `{meter_id}`: voltage {v} is not positive"
            )));
        }
        Ok(Self {
            meter_id,
            transformer_id: None,
            recorded_phase: None,
            grid,
            power_kw,
            voltage,
        })
    }

    pub fn with_transformer(mut self, transformer_id: impl Into<String>) -> Self {
        self.transformer_id = Some(transformer_id.into());
        self
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.recorded_phase = Some(phase);
        self
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    pub fn power_missing_fraction(&self) -> f64 {
        missing_fraction(&self.power_kw)
    }

    pub fn voltage_missing_fraction(&self) -> f64 {
        missing_fraction(&self.voltage)
    }

    /// Mean of the present voltage readings.
    pub fn mean_voltage(&self) -> Option<f64> {
        let present: Vec<f64> = self.voltage.iter().copied().filter(|v| !is_missing(*v)).collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }

    fn slice(&self, range: Range<usize>) -> MeterSeries {
        MeterSeries {
            meter_id: self.meter_id.clone(),
            transformer_id: self.transformer_id.clone(),
            recorded_phase: self.recorded_phase,
            grid: self.grid.slice(range.clone()),
            power_kw: self.power_kw[range.clone()].to_vec(),
            voltage: self.voltage[range].to_vec(),
        }
    }
}

fn missing_fraction(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    values.iter().filter(|v| is_missing(**v)).count() as f64 / values.len() as f64
}

/// Meters of one feeder on a shared timestamp grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederDataset {
    pub name: String,
    grid: TimeGrid,
    meters: Vec<MeterSeries>,
}

impl FeederDataset {
    pub fn new(name: impl Into<String>, meters: Vec<MeterSeries>) -> Result<Self> {
        if meters.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least two meters, got {}",
                meters.len()
            )));
        }
        let grid = meters[0].grid;
        let mut seen = HashSet::new();
        for m in &meters {
            if m.grid != grid {
                return Err(Error::InvalidDataset(format!(
                    "meter `{}` is not on the shared grid",
                    m.meter_id
                )));
            }
            if !seen.insert(m.meter_id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate meter id `{}`", m.meter_id)));
            }
        }
        Ok(Self {
            name: name.into(),
            grid,
            meters,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn interval_minutes(&self) -> u32 {
        self.grid.interval_minutes
    }

    pub fn meters(&self) -> &[MeterSeries] {
        &self.meters
    }

    pub fn meter(&self, index: usize) -> &MeterSeries {
        &self.meters[index]
    }

    /// Number of meters, N_M.
    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    /// Number of time steps, T.
    pub fn steps(&self) -> usize {
        self.grid.len
    }

    pub fn meter_ids(&self) -> Vec<String> {
        self.meters.iter().map(|m| m.meter_id.clone()).collect()
    }

    pub fn index_of(&self, meter_id: &str) -> Option<usize> {
        self.meters.iter().position(|m| m.meter_id == meter_id)
    }

    /// Recorded phase labels of the meters that carry one.
    pub fn recorded_labels(&self) -> PhaseLabeling {
        PhaseLabeling(
            self.meters
                .iter()
                .filter_map(|m| m.recorded_phase.map(|p| (m.meter_id.clone(), p)))
                .collect(),
        )
    }

    pub fn has_labels(&self) -> bool {
        self.meters.iter().any(|m| m.recorded_phase.is_some())
    }

    /// Dataset restricted to the time steps in `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<FeederDataset> {
        if range.start > range.end || range.end > self.grid.len {
            return Err(Error::param(format!(
                "time range {range:?} outside grid of length {}",
                self.grid.len
            )));
        }
        let meters = self.meters.iter().map(|m| m.slice(range.clone())).collect();
        FeederDataset::new(self.name.clone(), meters)
    }

    /// Dataset with the meters replaced, keeping name and grid checks.
    pub fn with_meters(&self, meters: Vec<MeterSeries>) -> Result<FeederDataset> {
        FeederDataset::new(self.name.clone(), meters)
    }
}

/// Map meter id → phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLabeling(pub BTreeMap<String, Phase>);

impl PhaseLabeling {
    pub fn get(&self, meter_id: &str) -> Option<Phase> {
        self.0.get(meter_id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Phase)> {
        self.0.iter()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["meter_id", "phase"])?;
        for (id, phase) in &self.0 {
            w.write_record([id.as_str(), &phase.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl FromIterator<(String, Phase)> for PhaseLabeling {
    fn from_iter<I: IntoIterator<Item = (String, Phase)>>(iter: I) -> Self {
        PhaseLabeling(iter.into_iter().collect())
    }
}

/// Column names used when reading an AMI CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub meter_id: String,
    pub timestamp: String,
    pub power: String,
    pub voltage: String,
    pub transformer_id: String,
    pub phase: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            meter_id: "meter_id".into(),
            timestamp: "timestamp".into(),
            power: "power_kw".into(),
            voltage: "voltage".into(),
            transformer_id: "transformer_id".into(),
            phase: "phase".into(),
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    None
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_reading(raw: &str) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    if raw.is_empty() || matches!(raw.to_ascii_lowercase().as_str(), "na" | "nan" | "null") {
        return Ok(MISSING);
    }
    raw.parse::<f64>()
        .map_err(|_| format!("cannot parse `{raw}` as a number"))
}

/// Reads an AMI CSV file. See [`parse_ami_reader`].
pub fn parse_ami_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<FeederDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "feeder".into());
    parse_ami_reader(file, schema, &name)
}

struct Row {
    line: u64,
    meter: usize,
    timestamp: NaiveDateTime,
    power: f64,
    voltage: f64,
}

/// Reads long-format AMI readings (one row per meter and timestamp) and
/// aligns them on a single grid.
///
/// The grid interval is the smallest spacing between distinct timestamps;
/// readings within one minute of a grid point snap to it. An empty grid slot
/// anywhere in the file is reported as an inconsistent interval.
pub fn parse_ami_reader<R: Read>(reader: R, schema: &CsvSchema, name: &str) -> Result<FeederDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let c_meter = need(&schema.meter_id)?;
    let c_ts = need(&schema.timestamp)?;
    let c_power = need(&schema.power)?;
    let c_volt = need(&schema.voltage)?;
    let c_xfmr = col(&schema.transformer_id);
    let c_phase = col(&schema.phase);

    let mut meter_ids: Vec<String> = Vec::new();
    let mut meter_index: HashMap<String, usize> = HashMap::new();
    let mut transformers: Vec<Option<String>> = Vec::new();
    let mut phases: Vec<Option<Phase>> = Vec::new();
    let mut rows = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| Error::MalformedRow { line, message };
        let field = |idx: usize| {
            record
                .get(idx)
                .ok_or_else(|| malformed(format!("expected at least {} fields", idx + 1)))
        };
        let meter = field(c_meter)?.to_string();
        if meter.is_empty() {
            return Err(malformed("empty meter id".into()));
        }
        let raw_ts = field(c_ts)?;
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| malformed(format!("bad timestamp `{raw_ts}`")))?;
        let power = parse_reading(field(c_power)?).map_err(malformed)?;
        if !is_missing(power) && (power < 0.0 || !power.is_finite()) {
            return Err(malformed(format!("power {power} must be non-negative")));
        }
        let voltage = parse_reading(field(c_volt)?).map_err(malformed)?;
        if !is_missing(voltage) && (voltage <= 0.0 || !voltage.is_finite()) {
            return Err(malformed(format!("voltage {voltage} must be positive")));
        }

        let idx = *meter_index.entry(meter.clone()).or_insert_with(|| {
            meter_ids.push(meter.clone());
            transformers.push(None);
            phases.push(None);
            meter_ids.len() - 1
        });
        if let Some(c) = c_xfmr {
            let t = field(c)?;
            if !t.is_empty() {
                match &transformers[idx] {
                    Some(prev) if prev != t => {
                        return Err(malformed(format!(
                            "meter `{meter}` listed under transformers `{prev}` and `{t}`"
                        )))
                    }
                    _ => transformers[idx] = Some(t.to_string()),
                }
            }
        }
        if let Some(c) = c_phase {
            let p = field(c)?;
            if !p.is_empty() {
                let phase: Phase = p.parse().map_err(|e: Error| malformed(e.to_string()))?;
                match phases[idx] {
                    Some(prev) if prev != phase => {
                        return Err(malformed(format!("meter `{meter}` has phases {prev} and {phase}")))
                    }
                    _ => phases[idx] = Some(phase),
                }
            }
        }
        rows.push(Row {
            line,
            meter: idx,
            timestamp,
            power,
            voltage,
        });
    }

    if rows.is_empty() {
        return Err(Error::InvalidDataset("no readings".into()));
    }
    let grid = infer_grid(rows.iter().map(|r| r.timestamp))?;
    let step_secs = grid.interval_minutes as i64 * 60;

    let mut power = vec![vec![MISSING; grid.len]; meter_ids.len()];
    let mut voltage = vec![vec![MISSING; grid.len]; meter_ids.len()];
    let mut filled = vec![vec![false; grid.len]; meter_ids.len()];
    for row in &rows {
        let offset = (row.timestamp - grid.start).num_seconds();
        let k = (offset as f64 / step_secs as f64).round() as usize;
        if filled[row.meter][k] {
            return Err(Error::DuplicateReading {
                line: row.line,
                meter: meter_ids[row.meter].clone(),
                timestamp: format_timestamp(row.timestamp),
            });
        }
        filled[row.meter][k] = true;
        power[row.meter][k] = row.power;
        voltage[row.meter][k] = row.voltage;
    }

    let mut meters = Vec::with_capacity(meter_ids.len());
    for (i, id) in meter_ids.into_iter().enumerate() {
        let mut m = MeterSeries::new(id, grid, std::mem::take(&mut power[i]), std::mem::take(&mut voltage[i]))?;
        m.transformer_id = transformers[i].take();
        m.recorded_phase = phases[i];
        meters.push(m);
    }
    FeederDataset::new(name, meters)
}

fn infer_grid(timestamps: impl Iterator<Item = NaiveDateTime>) -> Result<TimeGrid> {
    let mut unique: Vec<NaiveDateTime> = timestamps.collect();
    unique.sort();
    unique.dedup();

    // Group readings that fall within the snap tolerance of each other.
    let mut slots: Vec<NaiveDateTime> = Vec::new();
    for ts in &unique {
        match slots.last() {
            Some(anchor) if (*ts - *anchor).num_seconds() <= 2 * SNAP_TOLERANCE_SECS => {}
            _ => slots.push(*ts),
        }
    }
    if slots.len() < 2 {
        return Err(Error::InvalidDataset(
            "need at least two distinct timestamps to infer the interval".into(),
        ));
    }
    let min_gap = slots.windows(2).map(|w| (w[1] - w[0]).num_seconds()).min().unwrap_or(0);
    let interval_minutes = ((min_gap as f64) / 60.0).round() as u32;
    if interval_minutes == 0 {
        return Err(Error::InvalidDataset("interval rounds to zero minutes".into()));
    }
    let start_secs = slots[0].and_utc().timestamp();
    let start_secs = ((start_secs as f64) / 60.0).round() as i64 * 60;
    let start = DateTime::from_timestamp(start_secs, 0)
        .map(|d| d.naive_utc())
        .ok_or_else(|| Error::InvalidDataset("timestamp out of range".into()))?;
    let step = interval_minutes as i64 * 60;

    let mut occupied: Vec<(usize, NaiveDateTime)> = Vec::with_capacity(unique.len());
    for ts in &unique {
        let offset = (*ts - start).num_seconds();
        let k = (offset as f64 / step as f64).round() as i64;
        if (offset - k * step).abs() > SNAP_TOLERANCE_SECS || k < 0 {
            let before = occupied.last().map(|(_, t)| *t).unwrap_or(start);
            return Err(Error::InconsistentInterval {
                before: format_timestamp(before),
                after: format_timestamp(*ts),
            });
        }
        occupied.push((k as usize, *ts));
    }
    let mut expected = 0usize;
    let mut prev_ts = start;
    for (k, ts) in &occupied {
        if *k > expected {
            return Err(Error::InconsistentInterval {
                before: format_timestamp(prev_ts),
                after: format_timestamp(*ts),
            });
        }
        expected = *k + 1;
        prev_ts = *ts;
    }
    TimeGrid::new(start, interval_minutes, expected)
}

fn format_reading(v: f64) -> String {
    if is_missing(v) {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the dataset in the long-format schema that [`parse_ami_reader`]
/// reads back (default column names, transformer and phase included).
pub fn write_ami_csv<W: Write>(dataset: &FeederDataset, writer: W) -> Result<()> {
    let schema = CsvSchema::default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        &schema.meter_id,
        &schema.timestamp,
        &schema.power,
        &schema.voltage,
        &schema.transformer_id,
        &schema.phase,
    ])?;
    let stamps: Vec<String> = (0..dataset.steps())
        .map(|k| format_timestamp(dataset.grid().timestamp(k)))
        .collect();
    for m in dataset.meters() {
        let xfmr = m.transformer_id.as_deref().unwrap_or("");
        let phase = m.recorded_phase.map(|p| p.to_string()).unwrap_or_default();
        for (k, ts) in stamps.iter().enumerate() {
            // A row with both readings missing carries no information.
            if is_missing(m.power_kw[k]) && is_missing(m.voltage[k]) {
                continue;
            }
            w.write_record([
                m.meter_id.as_str(),
                ts,
                &format_reading(m.power_kw[k]),
                &format_reading(m.voltage[k]),
                xfmr,
                &phase,
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Converts voltages to per-unit of each meter's service voltage.
///
/// Meters whose mean reading already lies in [0.8, 1.2] are taken to be
/// per-unit and passed through. Values outside the sanity band become
/// missing.
pub fn normalize_voltage(dataset: &FeederDataset, service_voltages: &HashMap<String, f64>) -> Result<FeederDataset> {
    let mut meters = Vec::with_capacity(dataset.len());
    for m in dataset.meters() {
        let service = service_voltages
            .get(&m.meter_id)
            .copied()
            .unwrap_or(DEFAULT_SERVICE_VOLTAGE);
        if !(service > 0.0 && service.is_finite()) {
            return Err(Error::param(format!(
                "service voltage for `{}` must be positive, got {service}",
                m.meter_id
            )));
        }
        let already_pu = m.mean_voltage().is_some_and(|mean| (0.8..=1.2).contains(&mean));
        let scale = if already_pu { 1.0 } else { service };
        let voltage = m
            .voltage
            .iter()
            .map(|v| {
                let pu = v / scale;
                if pu > PU_SANITY_BAND.0 && pu < PU_SANITY_BAND.1 {
                    pu
                } else {
                    MISSING
                }
            })
            .collect();
        meters.push(MeterSeries { voltage, ..m.clone() });
    }
    dataset.with_meters(meters)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalEntry {
    pub meter_id: String,
    pub missing_fraction: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RemovalReport {
    pub entries: Vec<RemovalEntry>,
}

impl RemovalReport {
    pub fn dropped(&self) -> impl Iterator<Item = &RemovalEntry> {
        self.entries.iter().filter(|e| e.dropped)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["meter_id", "missing_fraction", "dropped"])?;
        for e in &self.entries {
            w.write_record([
                e.meter_id.as_str(),
                &e.missing_fraction.to_string(),
                &e.dropped.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Drops meters whose power or voltage missing fraction reaches
/// `max_missing_fraction`.
pub fn filter_missing(dataset: &FeederDataset, max_missing_fraction: f64) -> Result<(FeederDataset, RemovalReport)> {
    if !(max_missing_fraction > 0.0 && max_missing_fraction <= 1.0) {
        return Err(Error::param(format!(
            "max_missing_fraction must be in (0, 1], got {max_missing_fraction}"
        )));
    }
    let mut report = RemovalReport::default();
    let mut kept = Vec::new();
    for m in dataset.meters() {
        let fraction = m.power_missing_fraction().max(m.voltage_missing_fraction());
        let dropped = fraction >= max_missing_fraction;
        report.entries.push(RemovalEntry {
            meter_id: m.meter_id.clone(),
            missing_fraction: fraction,
            dropped,
        });
        if !dropped {
            kept.push(m.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    Ok((dataset.with_meters(kept)?, report))
}
