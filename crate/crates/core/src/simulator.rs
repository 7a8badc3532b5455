//! Synthetic feeders with known phases and transformer pairings.
//!
//! Each transformer secondary feeds meters in pairs through the circuit
//! `V_i = V_T - I R - I_i R_i`, `V_j = V_T - I R - I_j R_j`, `I = I_i + I_j`,
//! with resistive loads `I = P / V`. Transformer voltages follow their
//! primary phase plus a transformer-specific wander and a drop proportional
//! to the total secondary load.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::pcc;
use crate::dataset::{
    format_timestamp, FeederDataset, MeterSeries, Phase, PhaseLabeling, TimeGrid, DEFAULT_SERVICE_VOLTAGE,
};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 20;
const TOLERANCE_V: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionType {
    /// Both service drops leave the transformer terminal (`R = 0`).
    #[default]
    Type1Parallel,
    /// Shared line, then separate drops.
    Type2Partial,
    /// Second meter at the end of the shared line (`R_j = 0`).
    Type3Series,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentMode {
    /// Solve `I = P / V` to convergence.
    #[default]
    FixedPoint,
    /// One step with `I = P / V_nominal`.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitSpec {
    pub connection: ConnectionType,
    /// Shared line, ohms.
    pub r: f64,
    pub r_i: f64,
    pub r_j: f64,
    pub v_nominal: f64,
    /// Half-width of the uniform transformer-voltage band, volts.
    pub vt_half_width: f64,
    pub current_mode: CurrentMode,
}

impl Default for CircuitSpec {
    fn default() -> Self {
        Self {
            connection: ConnectionType::Type1Parallel,
            r: 0.01,
            r_i: 0.05,
            r_j: 0.05,
            v_nominal: 122.0,
            vt_half_width: 0.2,
            current_mode: CurrentMode::FixedPoint,
        }
    }
}

impl CircuitSpec {
    pub fn with_connection(connection: ConnectionType) -> Self {
        Self {
            connection,
            ..Self::default()
        }
    }

    /// Resistances after applying the connection type.
    pub fn effective(&self) -> (f64, f64, f64) {
        match self.connection {
            ConnectionType::Type1Parallel => (0.0, self.r_i, self.r_j),
            ConnectionType::Type2Partial => (self.r, self.r_i, self.r_j),
            ConnectionType::Type3Series => (self.r, self.r_i, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.r, self.r_i, self.r_j, self.vt_half_width]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(Error::param("resistances and voltage band must be non-negative"));
        }
        if !(self.v_nominal > 0.0 && self.v_nominal.is_finite()) {
            return Err(Error::param("nominal voltage must be positive"));
        }
        Ok(())
    }
}

fn meter_voltages(v_t: f64, i_i: f64, i_j: f64, (r, r_i, r_j): (f64, f64, f64)) -> (f64, f64) {
    let shared = (i_i + i_j) * r;
    (v_t - shared - i_i * r_i, v_t - shared - i_j * r_j)
}

/// Meter voltages of one secondary pair. Powers in kW, voltages in volts.
pub fn solve_secondary(v_t: f64, p_i: f64, p_j: f64, spec: &CircuitSpec) -> Result<(f64, f64)> {
    if !(v_t > 0.0 && v_t.is_finite()) || !(p_i >= 0.0 && p_j >= 0.0) {
        return Err(Error::param("need v_t > 0 and non-negative powers"));
    }
    let res = spec.effective();
    let (w_i, w_j) = (p_i * 1000.0, p_j * 1000.0);
    if spec.current_mode == CurrentMode::Nominal {
        return Ok(meter_voltages(v_t, w_i / spec.v_nominal, w_j / spec.v_nominal, res));
    }
    let (mut v_i, mut v_j) = (v_t, v_t);
    for _ in 0..MAX_ITERATIONS {
        let (n_i, n_j) = meter_voltages(v_t, w_i / v_i, w_j / v_j, res);
        if !(n_i > 0.0 && n_j > 0.0) {
            break;
        }
        let delta = (n_i - v_i).abs().max((n_j - v_j).abs());
        (v_i, v_j) = (n_i, n_j);
        if delta < TOLERANCE_V {
            return Ok((v_i, v_j));
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Monte Carlo PCC between the two meter voltages of a secondary, one value
/// per load range. Loads and the transformer voltage are drawn uniformly.
pub fn monte_carlo_pcc(spec: &CircuitSpec, bands: &[(f64, f64)], samples: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(monte_carlo_replicates(spec, bands, samples, 1, seed)?
        .into_iter()
        .map(|r| r[0])
        .collect())
}

/// `replicates` independent PCC draws per load range, for box plots.
pub fn monte_carlo_replicates(
    spec: &CircuitSpec,
    bands: &[(f64, f64)],
    samples: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if samples < 100 {
        return Err(Error::param("Monte Carlo needs at least 100 samples"));
    }
    let mut sorted: Vec<(f64, f64)> = bands.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.iter().any(|(lo, hi)| !(*lo >= 0.0 && hi >= lo)) {
        return Err(Error::param("load ranges need 0 <= low <= high"));
    }
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::param("load ranges overlap"));
    }
    bands
        .par_iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            (0..replicates)
                .map(|r| {
                    let mut rng = stream_rng(seed, (b * replicates + r) as u64);
                    let h = spec.vt_half_width;
                    let mut vi = Vec::with_capacity(samples);
                    let mut vj = Vec::with_capacity(samples);
                    for _ in 0..samples {
                        let v_t = spec.v_nominal + uniform(&mut rng, -h, h);
                        let p_i = uniform(&mut rng, lo, hi);
                        let p_j = uniform(&mut rng, lo, hi);
                        let (a, b) = solve_secondary(v_t, p_i, p_j, spec)?;
                        vi.push(a);
                        vj.push(b);
                    }
                    pcc(&vi, &vj)
                })
                .collect()
        })
        .collect()
}

/// Mean-reverting random walk clipped to `±half_width`. Parameters are per
/// grid step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    pub reversion: f64,
    pub step_sd: f64,
    pub half_width: f64,
}

impl WalkSpec {
    fn validate(&self, what: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reversion) || self.step_sd < 0.0 || self.half_width < 0.0 {
            return Err(Error::param(format!(
                "{what}: reversion in [0,1], step_sd and half_width >= 0"
            )));
        }
        Ok(())
    }

    fn trace(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let step = Normal::new(0.0, self.step_sd).expect("validated sd");
        // Start from the stationary spread so short series are not pinned
        // near zero.
        let stationary = if self.reversion > 0.0 {
            self.step_sd / (1.0 - (1.0 - self.reversion).powi(2)).sqrt()
        } else {
            self.half_width
        };
        let mut x = Normal::new(0.0, stationary).expect("finite sd").sample(rng);
        x = x.clamp(-self.half_width, self.half_width);
        (0..len)
            .map(|_| {
                let out = x;
                x = ((1.0 - self.reversion) * x + step.sample(rng)).clamp(-self.half_width, self.half_width);
                out
            })
            .collect()
    }
}

/// Two-state household load: idle overnight and while away, active
/// otherwise. Levels are redrawn with `change_probability` per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadModel {
    pub idle_min_kw: f64,
    pub idle_max_kw: f64,
    pub active_min_kw: f64,
    pub heavy_min_kw: f64,
    pub active_max_kw: f64,
    /// Share of active draws taken from `[heavy_min_kw, active_max_kw]`.
    pub heavy_share: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    /// Chance per day of one daytime away window.
    pub away_probability: f64,
    pub away_hours: (f64, f64),
    pub change_probability: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            idle_min_kw: 0.05,
            idle_max_kw: 2.0,
            active_min_kw: 0.5,
            heavy_min_kw: 6.0,
            active_max_kw: 16.0,
            heavy_share: 0.2,
            night_start_hour: 0,
            night_end_hour: 6,
            away_probability: 0.3,
            away_hours: (2.0, 8.0),
            change_probability: 0.3,
        }
    }
}

impl LoadModel {
    fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.idle_min_kw
            && self.idle_min_kw <= self.idle_max_kw
            && self.active_min_kw <= self.heavy_min_kw
            && self.heavy_min_kw <= self.active_max_kw;
        let probs = [self.heavy_share, self.away_probability, self.change_probability]
            .iter()
            .all(|p| (0.0..=1.0).contains(p));
        if !ordered || !probs || self.night_start_hour > 24 || self.night_end_hour > 24 {
            return Err(Error::param("inconsistent load model"));
        }
        if !(0.0 <= self.away_hours.0 && self.away_hours.0 <= self.away_hours.1) {
            return Err(Error::param("away window hours out of order"));
        }
        Ok(())
    }

    fn is_night(&self, hour: u32) -> bool {
        if self.night_start_hour <= self.night_end_hour {
            hour >= self.night_start_hour && hour < self.night_end_hour
        } else {
            hour >= self.night_start_hour || hour < self.night_end_hour
        }
    }

    fn draw(&self, idle: bool, rng: &mut ChaCha8Rng) -> f64 {
        if idle {
            uniform(rng, self.idle_min_kw, self.idle_max_kw)
        } else if rng.random_bool(self.heavy_share) {
            uniform(rng, self.heavy_min_kw, self.active_max_kw)
        } else {
            uniform(rng, self.active_min_kw, self.heavy_min_kw)
        }
    }

    fn trace(&self, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len);
        let mut away: Option<(NaiveDateTime, NaiveDateTime)> = None;
        let mut day: Option<NaiveDate> = None;
        let mut level = 0.0;
        let mut was_idle: Option<bool> = None;
        for k in 0..grid.len {
            let ts = grid.timestamp(k);
            if day != Some(ts.date()) {
                day = Some(ts.date());
                away = rng.random_bool(self.away_probability).then(|| {
                    let start_h = uniform(rng, 8.0, 18.0);
                    let len_h = uniform(rng, self.away_hours.0, self.away_hours.1);
                    let from = ts.date().and_hms_opt(0, 0, 0).expect("midnight")
                        + Duration::seconds((start_h * 3600.0) as i64);
                    (from, from + Duration::seconds((len_h * 3600.0) as i64))
                });
            }
            let idle = self.is_night(ts.hour()) || away.is_some_and(|(a, b)| ts >= a && ts < b);
            if was_idle != Some(idle) || rng.random_bool(self.change_probability) {
                level = self.draw(idle, rng);
            }
            was_idle = Some(idle);
            out.push(level);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub id: String,
    pub phase: Phase,
    pub meters: usize,
    #[serde(default)]
    pub circuit: CircuitSpec,
}

/// Meter recorded under `recorded_transformer` but wired elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub meter: String,
    pub recorded_transformer: String,
}

/// Meter rewired to `to_transformer` at `at`; the record keeps the original.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub meter: String,
    pub to_transformer: String,
    pub at: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub name: String,
    pub start: NaiveDateTime,
    pub days: u32,
    pub interval_minutes: u32,
    #[serde(default = "default_service_voltage")]
    pub service_voltage: f64,
    #[serde(default = "default_primary_nominal")]
    pub primary_nominal: f64,
    #[serde(default = "default_phase_walk")]
    pub phase_walk: WalkSpec,
    #[serde(default = "default_transformer_walk")]
    pub transformer_walk: WalkSpec,
    /// Transformer impedance seen by the total secondary current, ohms.
    #[serde(default = "default_transformer_r")]
    pub transformer_r: f64,
    #[serde(default)]
    pub load: LoadModel,
    pub transformers: Vec<TransformerSpec>,
    /// Meters drawing a constant power, kW.
    #[serde(default)]
    pub constant_loads: BTreeMap<String, f64>,
    #[serde(default)]
    pub swaps: Vec<Swap>,
    #[serde(default)]
    pub moves: Vec<Move>,
}

fn default_service_voltage() -> f64 {
    DEFAULT_SERVICE_VOLTAGE
}

fn default_primary_nominal() -> f64 {
    122.0
}

fn default_phase_walk() -> WalkSpec {
    WalkSpec {
        reversion: 0.02,
        step_sd: 0.2,
        half_width: 3.0,
    }
}

fn default_transformer_walk() -> WalkSpec {
    WalkSpec {
        reversion: 0.1,
        step_sd: 0.15,
        half_width: 1.0,
    }
}

fn default_transformer_r() -> f64 {
    0.02
}

/// Meter ids follow transformer order: `M0001`, `M0002`, …
pub fn meter_id(index: usize) -> String {
    format!("M{:04}", index + 1)
}

impl FeederSpec {
    /// `n_transformers` transformers of `meters_each` meters, phases A, B, C
    /// in rotation and connection types 1, 2, 3 in rotation.
    pub fn balanced(n_transformers: usize, meters_each: usize, days: u32, interval_minutes: u32) -> Self {
        let connections = [
            ConnectionType::Type1Parallel,
            ConnectionType::Type2Partial,
            ConnectionType::Type3Series,
        ];
        let transformers = (0..n_transformers)
            .map(|t| TransformerSpec {
                id: format!("T{:03}", t + 1),
                phase: Phase::ALL[t % 3],
                meters: meters_each,
                circuit: CircuitSpec::with_connection(connections[(t / 3) % 3]),
            })
            .collect();
        Self {
            name: "synthetic".into(),
            start: NaiveDate::from_ymd_opt(2024, 1, 1)
                .expect("valid date")
                .and_hms_opt(0, 0, 0)
                .expect("midnight"),
            days,
            interval_minutes,
            service_voltage: default_service_voltage(),
            primary_nominal: default_primary_nominal(),
            phase_walk: default_phase_walk(),
            transformer_walk: default_transformer_walk(),
            transformer_r: default_transformer_r(),
            load: LoadModel::default(),
            transformers,
            constant_loads: BTreeMap::new(),
            swaps: Vec::new(),
            moves: Vec::new(),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if self.interval_minutes == 0 || (24 * 60) % self.interval_minutes != 0 {
            return Err(Error::param("interval must divide a day"));
        }
        let len = self.days as usize * (24 * 60 / self.interval_minutes as usize);
        TimeGrid::new(self.start, self.interval_minutes, len)
    }

    pub fn meter_count(&self) -> usize {
        self.transformers.iter().map(|t| t.meters).sum()
    }

    /// Transformer index of every meter as wired at the start.
    fn home_transformers(&self) -> Vec<usize> {
        self.transformers
            .iter()
            .enumerate()
            .flat_map(|(t, spec)| std::iter::repeat_n(t, spec.meters))
            .collect()
    }

    fn transformer_index(&self, id: &str) -> Result<usize> {
        self.transformers
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::param(format!("unknown transformer `{id}`")))
    }

    fn meter_index(&self, id: &str) -> Result<usize> {
        (0..self.meter_count())
            .find(|i| meter_id(*i) == id)
            .ok_or_else(|| Error::UnknownMeter(id.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::param("simulation needs at least one day"));
        }
        self.grid()?;
        if self.meter_count() < 2 {
            return Err(Error::param("simulation needs at least two meters"));
        }
        if !(self.service_voltage > 0.0 && self.primary_nominal > 0.0 && self.transformer_r >= 0.0) {
            return Err(Error::param("voltages must be positive and transformer_r non-negative"));
        }
        self.phase_walk.validate("phase_walk")?;
        self.transformer_walk.validate("transformer_walk")?;
        self.load.validate()?;
        let mut ids = std::collections::HashSet::new();
        for t in &self.transformers {
            t.circuit.validate()?;
            if !ids.insert(t.id.as_str()) {
                return Err(Error::param(format!("duplicate transformer `{}`", t.id)));
            }
        }
        let mut touched = std::collections::HashSet::new();
        for s in &self.swaps {
            self.meter_index(&s.meter)?;
            self.transformer_index(&s.recorded_transformer)?;
            if !touched.insert(s.meter.as_str()) {
                return Err(Error::param(format!("meter `{}` mislabeled twice", s.meter)));
            }
        }
        for m in &self.moves {
            self.meter_index(&m.meter)?;
            self.transformer_index(&m.to_transformer)?;
            if !touched.insert(m.meter.as_str()) {
                return Err(Error::param(format!("meter `{}` mislabeled twice", m.meter)));
            }
        }
        for (m, kw) in &self.constant_loads {
            self.meter_index(m)?;
            if kw.is_nan() || *kw < 0.0 {
                return Err(Error::param("constant loads must be non-negative"));
            }
        }
        Ok(())
    }

    /// Adds random static swaps and mid-span moves. Each mislabeled meter
    /// comes from a different transformer with at least three meters, and
    /// moves happen between 35% and 45% of the span.
    pub fn inject_mislabels(&mut self, swaps: usize, moves: usize, seed: u64) -> Result<()> {
        let mut rng = stream_rng(seed, u64::MAX);
        let homes = self.home_transformers();
        let mut sources: Vec<usize> = (0..self.transformers.len())
            .filter(|t| self.transformers[*t].meters >= 3)
            .collect();
        if sources.len() < swaps + moves + 1 {
            return Err(Error::param("not enough transformers with three or more meters"));
        }
        sources.shuffle(&mut rng);
        let chosen: Vec<usize> = sources[..swaps + moves].to_vec();
        let mut targets: Vec<usize> = (0..self.transformers.len()).filter(|t| !chosen.contains(t)).collect();
        targets.shuffle(&mut rng);
        let span = self.days as f64 * 24.0 * 3600.0;
        for (k, &src) in chosen.iter().enumerate() {
            let members: Vec<usize> = (0..homes.len()).filter(|m| homes[*m] == src).collect();
            let meter = meter_id(members[rng.random_range(0..members.len())]);
            let dst = targets[k % targets.len()];
            if k < swaps {
                // Wired at `src`, recorded at `dst`.
                self.swaps.push(Swap {
                    meter,
                    recorded_transformer: self.transformers[dst].id.clone(),
                });
            } else {
                let secs = span * uniform(&mut rng, 0.35, 0.45);
                let at = self.start + Duration::seconds(secs as i64);
                let grid = self.grid()?;
                let at = grid.timestamp(grid.index_at_or_after(at));
                self.moves.push(Move {
                    meter,
                    to_transformer: self.transformers[dst].id.clone(),
                    at,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InjectedMislabel {
    pub meter: String,
    pub recorded_transformer: String,
    pub actual_transformer: String,
    pub moved_at: Option<NaiveDateTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Phase as wired at the end of the span.
    pub phases: PhaseLabeling,
    /// Transformer as wired at the end of the span.
    pub transformers: BTreeMap<String, String>,
    pub mislabels: Vec<InjectedMislabel>,
}

impl GroundTruth {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let moved: BTreeMap<&str, &InjectedMislabel> = self.mislabels.iter().map(|m| (m.meter.as_str(), m)).collect();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "meter_id",
            "phase",
            "transformer_id",
            "recorded_transformer_id",
            "moved_at",
        ])?;
        for (id, t) in &self.transformers {
            let phase = self.phases.get(id).map(|p| p.to_string()).unwrap_or_default();
            let (recorded, at) = match moved.get(id.as_str()) {
                Some(m) => (
                    m.recorded_transformer.clone(),
                    m.moved_at.map(format_timestamp).unwrap_or_default(),
                ),
                None => (t.clone(), String::new()),
            };
            w.write_record([id.as_str(), &phase, t, &recorded, &at])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFeeder {
    pub dataset: FeederDataset,
    pub truth: GroundTruth,
}

/// Simulated feeder with voltages in per-unit of the service voltage.
/// Deterministic for a given spec and seed.
pub fn generate_feeder(spec: &FeederSpec, seed: u64) -> Result<SimulatedFeeder> {
    spec.validate()?;
    let grid = spec.grid()?;
    let len = grid.len;
    let n = spec.meter_count();
    let homes = spec.home_transformers();

    let phase_traces: Vec<Vec<f64>> = (0..3)
        .map(|p| {
            let mut rng = stream_rng(seed, p);
            spec.phase_walk
                .trace(len, &mut rng)
                .into_iter()
                .map(|x| spec.primary_nominal + x)
                .collect()
        })
        .collect();
    let loads: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| match spec.constant_loads.get(&meter_id(m)) {
            Some(kw) => vec![*kw; len],
            None => {
                let mut rng = stream_rng(seed, (1 << 32) + m as u64);
                spec.load.trace(&grid, &mut rng)
            }
        })
        .collect();

    // Wiring: (meter, transformer, from index) segments.
    let mut wiring: Vec<Vec<(usize, usize)>> = homes.iter().map(|t| vec![(*t, 0)]).collect();
    for mv in &spec.moves {
        let m = spec.meter_index(&mv.meter)?;
        let k = grid.index_at_or_after(mv.at);
        wiring[m].push((spec.transformer_index(&mv.to_transformer)?, k));
    }

    let per_transformer: Vec<Vec<(usize, Vec<f64>)>> = spec
        .transformers
        .par_iter()
        .enumerate()
        .map(|(x, t)| {
            let mut rng = stream_rng(seed, 16 + x as u64);
            let wander = spec.transformer_walk.trace(len, &mut rng);
            let phase = &phase_traces[t.phase.index()];
            let ever: Vec<usize> = (0..n).filter(|m| wiring[*m].iter().any(|(tx, _)| *tx == x)).collect();
            let mut volts = vec![vec![f64::NAN; len]; ever.len()];
            let mut attached = Vec::with_capacity(ever.len());
            for k in 0..len {
                attached.clear();
                attached.extend((0..ever.len()).filter(|e| {
                    let w = &wiring[ever[*e]];
                    let current = w.iter().rev().find(|(_, from)| *from <= k).expect("wired from 0");
                    current.0 == x
                }));
                let total_kw: f64 = attached.iter().map(|e| loads[ever[*e]][k]).sum();
                let v_t = phase[k] + wander[k] - spec.transformer_r * total_kw * 1000.0 / phase[k];
                for pair in attached.chunks(2) {
                    let p_i = loads[ever[pair[0]]][k];
                    let p_j = pair.get(1).map_or(0.0, |e| loads[ever[*e]][k]);
                    let (v_i, v_j) = solve_secondary(v_t, p_i, p_j, &t.circuit)?;
                    volts[pair[0]][k] = v_i;
                    if let Some(e) = pair.get(1) {
                        volts[*e][k] = v_j;
                    }
                }
            }
            Ok(ever.into_iter().zip(volts).collect())
        })
        .collect::<Result<_>>()?;

    let mut voltage = vec![vec![f64::NAN; len]; n];
    for (m, v) in per_transformer.into_iter().flatten() {
        for (k, x) in v.into_iter().enumerate() {
            if !x.is_nan() {
                voltage[m][k] = x / spec.service_voltage;
            }
        }
    }

    let swapped: BTreeMap<&str, &Swap> = spec.swaps.iter().map(|s| (s.meter.as_str(), s)).collect();
    let mut meters = Vec::with_capacity(n);
    let mut truth = GroundTruth {
        phases: PhaseLabeling::default(),
        transformers: BTreeMap::new(),
        mislabels: Vec::new(),
    };
    for (m, (power, volts)) in loads.into_iter().zip(voltage).enumerate() {
        let id = meter_id(m);
        let home = &spec.transformers[homes[m]];
        let last = &spec.transformers[wiring[m].last().expect("wired").0];
        let recorded = swapped
            .get(id.as_str())
            .map_or(home.id.clone(), |s| s.recorded_transformer.clone());
        if recorded != last.id {
            truth.mislabels.push(InjectedMislabel {
                meter: id.clone(),
                recorded_transformer: recorded.clone(),
                actual_transformer: last.id.clone(),
                moved_at: (wiring[m].len() > 1).then(|| grid.timestamp(wiring[m][1].1)),
            });
        }
        truth.phases.0.insert(id.clone(), last.phase);
        truth.transformers.insert(id.clone(), last.id.clone());
        meters.push(
            MeterSeries::new(id, grid, power, volts)?
                .with_transformer(recorded)
                .with_phase(home.phase),
        );
    }
    let dataset = FeederDataset::new(spec.name.clone(), meters)?;
    Ok(SimulatedFeeder { dataset, truth })
}
