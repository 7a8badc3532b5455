//! Power-band data segmentation.
//!
//! For a pair of meters, keep the time steps where both meters draw power
//! inside a band, split them into contiguous runs, and keep only runs that
//! last at least the minimum duration. Those voltage runs are the ones whose
//! correlation is not masked by secondary-circuit voltage drops.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{is_missing, FeederDataset, MeterSeries};
use crate::error::{Error, Result};

/// Power band `[p_low, p_high]` in kW plus a minimum run duration in hours.
///
/// `p_high` may be `f64::INFINITY` for an open-ended band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBand {
    pub p_low: f64,
    pub p_high: f64,
    pub t_dur: f64,
}

impl PowerBand {
    pub fn new(p_low: f64, p_high: f64, t_dur: f64) -> Result<Self> {
        let band = Self { p_low, p_high, t_dur };
        band.validate()?;
        Ok(band)
    }

    /// Band `[0, c]`: the single-threshold low-power criterion.
    pub fn low_power(c: f64, t_dur: f64) -> Result<Self> {
        Self::new(0.0, c, t_dur)
    }

    /// Open band `[p_low, ∞)`.
    pub fn above(p_low: f64, t_dur: f64) -> Result<Self> {
        Self::new(p_low, f64::INFINITY, t_dur)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_low >= 0.0 && self.p_low < self.p_high) || self.p_low.is_nan() {
            return Err(Error::param(format!(
                "power band needs 0 <= p_low < p_high, got [{}, {}]",
                self.p_low, self.p_high
            )));
        }
        if !(self.t_dur >= 0.0 && self.t_dur.is_finite()) {
            return Err(Error::param(format!(
                "minimum duration must be a non-negative number of hours, got {}",
                self.t_dur
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: f64) -> bool {
        p >= self.p_low && p <= self.p_high
    }

    /// Minimum run length in samples for a grid interval. Never admits a run
    /// shorter than `t_dur`; always at least one sample.
    pub fn min_samples(&self, interval_minutes: u32) -> usize {
        let exact = self.t_dur * 60.0 / interval_minutes as f64;
        // Absorb representation error such as 0.7 * 60 = 42.000000000000007.
        let samples = (exact - 1e-9).ceil().max(1.0);
        samples as usize
    }
}

/// Rule for falling back to the full series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackRule {
    /// Use the full series when fewer than two runs qualify.
    #[default]
    FewerThanTwoRuns,
    /// Use the full series only when no run qualifies.
    NoRuns,
}

/// Where the minimum-duration test is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    /// On the runs of the joint (both-meters) mask.
    #[default]
    JointMask,
    /// On each meter's own runs before intersecting; can leave fragments
    /// shorter than the minimum duration.
    PerMeter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub fallback: FallbackRule,
    pub duration_mode: DurationMode,
}

/// Selected index runs for a meter pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentSet {
    /// Disjoint, sorted half-open runs into the shared grid.
    pub runs: Vec<Range<usize>>,
    pub total_points: usize,
    pub fallback_used: bool,
}

impl SegmentSet {
    #[allow(clippy::single_range_in_vec_init)]
    pub fn full(len: usize) -> Self {
        Self {
            runs: if len == 0 { Vec::new() } else { vec![0..len] },
            total_points: len,
            fallback_used: true,
        }
    }

    fn from_runs(runs: Vec<Range<usize>>) -> Self {
        let total_points = runs.iter().map(|r| r.len()).sum();
        Self {
            runs,
            total_points,
            fallback_used: false,
        }
    }

    /// Number of runs, K.
    pub fn k(&self) -> usize {
        self.runs.len()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs.iter().flat_map(|r| r.clone())
    }
}

fn runs_of(mask: impl Iterator<Item = bool>) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    let mut len = 0;
    for (t, on) in mask.enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push(s..t);
                start = None;
            }
            _ => {}
        }
        len = t + 1;
    }
    if let Some(s) = start {
        runs.push(s..len);
    }
    runs
}

#[inline]
fn usable(m: &MeterSeries, t: usize, band: &PowerBand) -> bool {
    let p = m.power_kw[t];
    !is_missing(p) && !is_missing(m.voltage[t]) && band.contains(p)
}

/// Runs where a single meter stays in the band for at least `t_dur`.
pub fn meter_runs(series: &MeterSeries, band: &PowerBand) -> Vec<Range<usize>> {
    let min_len = band.min_samples(series.grid.interval_minutes);
    runs_of((0..series.len()).map(|t| usable(series, t, band)))
        .into_iter()
        .filter(|r| r.len() >= min_len)
        .collect()
}

/// Selects the runs where both meters' power lies in `band` (and both power
/// and voltage are present) for at least `band.t_dur`, using the default
/// configuration.
pub fn select_segments(series_i: &MeterSeries, series_j: &MeterSeries, band: &PowerBand) -> Result<SegmentSet> {
    select_segments_with(series_i, series_j, band, &SegmentationConfig::default())
}

pub fn select_segments_with(
    series_i: &MeterSeries,
    series_j: &MeterSeries,
    band: &PowerBand,
    config: &SegmentationConfig,
) -> Result<SegmentSet> {
    if series_i.grid != series_j.grid {
        return Err(Error::GridMismatch);
    }
    band.validate()?;
    let len = series_i.len();
    let min_len = band.min_samples(series_i.grid.interval_minutes);

    let runs: Vec<Range<usize>> = match config.duration_mode {
        DurationMode::JointMask => runs_of((0..len).map(|t| usable(series_i, t, band) && usable(series_j, t, band)))
            .into_iter()
            .filter(|r| r.len() >= min_len)
            .collect(),
        DurationMode::PerMeter => {
            let mut mask = vec![false; len];
            let mut other = vec![false; len];
            for r in meter_runs(series_i, band) {
                mask[r].iter_mut().for_each(|m| *m = true);
            }
            for r in meter_runs(series_j, band) {
                other[r].iter_mut().for_each(|m| *m = true);
            }
            runs_of(mask.iter().zip(&other).map(|(a, b)| *a && *b))
        }
    };

    let fallback = match config.fallback {
        FallbackRule::FewerThanTwoRuns => runs.len() < 2,
        FallbackRule::NoRuns => runs.is_empty(),
    };
    if fallback {
        Ok(SegmentSet::full(len))
    } else {
        Ok(SegmentSet::from_runs(runs))
    }
}

/// Segment statistics of one meter pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCoverage {
    pub i: usize,
    pub j: usize,
    pub meter_i: String,
    pub meter_j: String,
    pub k: usize,
    pub points: usize,
    pub coverage_pct: f64,
    pub fallback: bool,
}

/// Segment statistics for every meter pair `i < j`, in row-major order.
pub fn segment_coverage(dataset: &FeederDataset, band: &PowerBand) -> Result<Vec<PairCoverage>> {
    segment_coverage_with(dataset, band, &SegmentationConfig::default())
}

pub fn segment_coverage_with(
    dataset: &FeederDataset,
    band: &PowerBand,
    config: &SegmentationConfig,
) -> Result<Vec<PairCoverage>> {
    band.validate()?;
    let n = dataset.len();
    let steps = dataset.steps().max(1) as f64;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let (mi, mj) = (dataset.meter(i), dataset.meter(j));
            let seg = select_segments_with(mi, mj, band, config)?;
            Ok(PairCoverage {
                i,
                j,
                meter_i: mi.meter_id.clone(),
                meter_j: mj.meter_id.clone(),
                k: seg.k(),
                points: seg.total_points,
                coverage_pct: seg.total_points as f64 / steps * 100.0,
                fallback: seg.fallback_used,
            })
        })
        .collect()
}

pub fn write_coverage_csv<W: Write>(rows: &[PairCoverage], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair_i", "pair_j", "K", "points", "coverage_pct", "fallback"])?;
    for r in rows {
        w.write_record([
            r.meter_i.as_str(),
            r.meter_j.as_str(),
            &r.k.to_string(),
            &r.points.to_string(),
            &format!("{:.4}", r.coverage_pct),
            &r.fallback.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
