//! Transformer-meter pairing checks.
//!
//! Stage 1 flags meters that correlate better with another transformer's
//! meters than with their own, by average PCC and by top-2 PCC. Flags are
//! then filtered by a seasonal check on each transformer's average PCC and
//! re-verified on high-power segments (stage 2).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{pair_pcc, pcc_matrix_with, PccMatrix, PointSelection};
use crate::dataset::FeederDataset;
use crate::error::{Error, Result};
use crate::numeric::percentile;
use crate::segmentation::{meter_runs, PowerBand, SegmentationConfig};

/// A transformer and the dataset indices of its recorded meters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransformerGroup {
    pub transformer_id: String,
    pub members: Vec<usize>,
}

impl TransformerGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups by recorded transformer id, sorted by id. Meters without a
/// transformer id are left out.
pub fn transformer_groups(dataset: &FeederDataset) -> Vec<TransformerGroup> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in dataset.meters().iter().enumerate() {
        if let Some(t) = &m.transformer_id {
            map.entry(t).or_default().push(i);
        }
    }
    map.into_iter()
        .map(|(t, members)| TransformerGroup {
            transformer_id: t.to_string(),
            members,
        })
        .collect()
}

/// Mean PCC of meter `j` to the other meters of its own group.
pub fn apcc_within(j: usize, group: &TransformerGroup, pcc: &PccMatrix) -> Result<f64> {
    let peers: Vec<f64> = group
        .members
        .iter()
        .filter(|k| **k != j)
        .map(|k| pcc.get(j, *k))
        .collect();
    if peers.is_empty() {
        return Err(Error::SingletonGroup(group.transformer_id.clone()));
    }
    Ok(peers.iter().sum::<f64>() / peers.len() as f64)
}

/// Mean PCC of meter `j` to every meter of another group.
pub fn apcc_cross(j: usize, group: &TransformerGroup, pcc: &PccMatrix) -> f64 {
    let vals: Vec<f64> = group
        .members
        .iter()
        .filter(|k| **k != j)
        .map(|k| pcc.get(j, *k))
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Weighted mean of the two largest values; a single value gets full weight.
pub fn top2_weighted(values: &[f64], weights: [f64; 2]) -> Option<f64> {
    let mut best = [f64::NEG_INFINITY; 2];
    for &v in values {
        if v > best[0] {
            best = [v, best[0]];
        } else if v > best[1] {
            best[1] = v;
        }
    }
    match values.len() {
        0 => None,
        1 => Some(best[0]),
        _ => Some(weights[0] * best[0] + weights[1] * best[1]),
    }
}

fn peer_pccs(j: usize, group: &TransformerGroup, pcc: &PccMatrix) -> Vec<f64> {
    group
        .members
        .iter()
        .filter(|k| **k != j)
        .map(|k| pcc.get(j, *k))
        .collect()
}

pub fn t2pcc_within(j: usize, group: &TransformerGroup, pcc: &PccMatrix, w: [f64; 2]) -> Result<f64> {
    top2_weighted(&peer_pccs(j, group, pcc), w).ok_or_else(|| Error::SingletonGroup(group.transformer_id.clone()))
}

pub fn t2pcc_cross(j: usize, group: &TransformerGroup, pcc: &PccMatrix, w: [f64; 2]) -> f64 {
    top2_weighted(&peer_pccs(j, group, pcc), w).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStage {
    Apcc,
    T2pcc,
}

impl fmt::Display for FlagStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagStage::Apcc => "apcc",
            FlagStage::T2pcc => "t2pcc",
        })
    }
}

/// A meter that correlates better with another transformer. `within` and
/// `cross` hold the stage-1 score that raised the flag (APCC or T2PCC).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagRecord {
    pub meter_id: String,
    pub original_transformer: String,
    pub identified_transformer: String,
    pub stage: FlagStage,
    pub within: f64,
    pub cross: f64,
    pub seasonal_retained: bool,
    pub stage2_retained: bool,
    pub low_consumption: bool,
}

impl FlagRecord {
    /// Survives both the seasonal check and stage 2.
    pub fn is_final(&self) -> bool {
        self.seasonal_retained && self.stage2_retained
    }
}

pub fn write_flags_csv<W: Write>(flags: &[FlagRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "meter_id",
        "original_T",
        "identified_T",
        "stage",
        "apcc_within",
        "apcc_cross",
        "seasonal_retained",
        "stage2_retained",
    ])?;
    for f in flags {
        w.write_record([
            f.meter_id.clone(),
            f.original_transformer.clone(),
            f.identified_transformer.clone(),
            f.stage.to_string(),
            format!("{:.6}", f.within),
            format!("{:.6}", f.cross),
            f.seasonal_retained.to_string(),
            f.stage2_retained.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn flag_with<W, C>(
    dataset: &FeederDataset,
    groups: &[TransformerGroup],
    stage: FlagStage,
    within_score: W,
    cross_score: C,
) -> Vec<FlagRecord>
where
    W: Fn(usize, &TransformerGroup) -> f64 + Sync,
    C: Fn(usize, &TransformerGroup) -> f64 + Sync,
{
    let targets: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.len() >= 2)
        .flat_map(|(gi, g)| g.members.iter().map(move |j| (gi, *j)))
        .collect();
    targets
        .par_iter()
        .filter_map(|&(gi, j)| {
            let within = within_score(j, &groups[gi]);
            let mut best: Option<(usize, f64)> = None;
            for (ri, r) in groups.iter().enumerate() {
                if ri == gi || r.is_empty() {
                    continue;
                }
                let s = cross_score(j, r);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((ri, s));
                }
            }
            let (ri, cross) = best?;
            (cross > within).then(|| FlagRecord {
                meter_id: dataset.meter(j).meter_id.clone(),
                original_transformer: groups[gi].transformer_id.clone(),
                identified_transformer: groups[ri].transformer_id.clone(),
                stage,
                within,
                cross,
                seasonal_retained: true,
                stage2_retained: true,
                low_consumption: false,
            })
        })
        .collect()
}

/// Flags meters whose average PCC to some other transformer exceeds the
/// average to their own; the best such transformer is the identified host.
pub fn flag_by_apcc(dataset: &FeederDataset, groups: &[TransformerGroup], pcc: &PccMatrix) -> Vec<FlagRecord> {
    flag_with(
        dataset,
        groups,
        FlagStage::Apcc,
        |j, g| apcc_within(j, g, pcc).unwrap_or(f64::NEG_INFINITY),
        |j, r| apcc_cross(j, r, pcc),
    )
}

/// Same as [`flag_by_apcc`] with the weighted top-2 PCC per group.
pub fn flag_by_t2pcc(
    dataset: &FeederDataset,
    groups: &[TransformerGroup],
    pcc: &PccMatrix,
    weights: [f64; 2],
) -> Vec<FlagRecord> {
    flag_with(
        dataset,
        groups,
        FlagStage::T2pcc,
        |j, g| t2pcc_within(j, g, pcc, weights).unwrap_or(f64::NEG_INFINITY),
        |j, r| t2pcc_cross(j, r, pcc, weights),
    )
}

/// Named half-open time window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Season {
    pub name: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Seasons {
    /// Jan–Mar, Apr–Jun, Jul–Sep, Oct–Dec, clipped to the data.
    #[default]
    CalendarQuarters,
    /// The span cut into this many equal windows.
    EqualWindows(usize),
    Explicit(Vec<Season>),
}

/// Pool used for the seasonal percentile threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    /// All transformers and seasons of the feeder together.
    #[default]
    Feeder,
    /// Each transformer's own seasonal values.
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingConfig {
    pub t2_weights: [f64; 2],
    pub seasonal_percentile: f64,
    pub threshold_scope: ThresholdScope,
    pub seasons: Seasons,
    /// Stage-2 lower power limit, kW.
    pub stage2_p_low: f64,
    /// Stage-2 minimum run duration, hours.
    pub stage2_t_dur: f64,
    pub segmentation: SegmentationConfig,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            t2_weights: [0.5, 0.5],
            seasonal_percentile: 20.0,
            threshold_scope: ThresholdScope::Feeder,
            seasons: Seasons::CalendarQuarters,
            stage2_p_low: 1.0,
            stage2_t_dur: 1.0,
            segmentation: SegmentationConfig::default(),
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.t2_weights;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-9 {
            return Err(Error::param("top-2 weights must be non-negative and sum to 1"));
        }
        if !(self.seasonal_percentile > 0.0 && self.seasonal_percentile <= 100.0) {
            return Err(Error::param(format!(
                "seasonal percentile {} outside (0, 100]",
                self.seasonal_percentile
            )));
        }
        if let Seasons::EqualWindows(0) = self.seasons {
            return Err(Error::param("need at least one season window"));
        }
        PowerBand::above(self.stage2_p_low, self.stage2_t_dur)?;
        Ok(())
    }
}

fn quarter_start(year: i32, q: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, q * 3 + 1, 1)
        .expect("valid quarter start")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
}

/// Grid index ranges of the configured seasons, with their names.
pub fn season_windows(dataset: &FeederDataset, seasons: &Seasons) -> Vec<(String, std::ops::Range<usize>)> {
    let grid = dataset.grid();
    match seasons {
        Seasons::CalendarQuarters => {
            let (start, end) = (grid.start, grid.end());
            let mut out = Vec::new();
            let (mut year, mut q) = (start.year(), start.month0() / 3);
            loop {
                let from = quarter_start(year, q);
                if from >= end {
                    break;
                }
                let (ny, nq) = if q == 3 { (year + 1, 0) } else { (year, q + 1) };
                let to = quarter_start(ny, nq);
                out.push((
                    format!("{year}-Q{}", q + 1),
                    grid.index_at_or_after(from)..grid.index_at_or_after(to),
                ));
                (year, q) = (ny, nq);
            }
            out
        }
        Seasons::EqualWindows(n) => {
            let len = grid.len;
            (0..*n)
                .map(|k| (format!("window-{}", k + 1), k * len / n..(k + 1) * len / n))
                .collect()
        }
        Seasons::Explicit(list) => list
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    grid.index_at_or_after(s.start)..grid.index_at_or_after(s.end),
                )
            })
            .collect(),
    }
}

/// Average PCC of one transformer's meters in one season.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonalApcc {
    pub transformer_id: String,
    pub season: String,
    pub apcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonalSummary {
    pub values: Vec<SeasonalApcc>,
    /// Thresholds keyed by transformer id; a single `*` entry when the
    /// threshold is feeder-wide.
    pub thresholds: BTreeMap<String, f64>,
    pub skipped_seasons: Vec<String>,
}

impl SeasonalSummary {
    fn threshold_for(&self, transformer: &str) -> Option<f64> {
        self.thresholds
            .get(transformer)
            .or_else(|| self.thresholds.get("*"))
            .copied()
    }

    /// True when the transformer's average PCC dips to the threshold in at
    /// least one season.
    pub fn dips(&self, transformer: &str) -> bool {
        let Some(th) = self.threshold_for(transformer) else {
            return false;
        };
        self.values
            .iter()
            .any(|v| v.transformer_id == transformer && v.apcc <= th)
    }
}

/// Per-season, per-transformer average PCC (mean over the group's meters of
/// each meter's within-group APCC) and the percentile threshold.
pub fn seasonal_apcc(
    dataset: &FeederDataset,
    groups: &[TransformerGroup],
    config: &PairingConfig,
) -> Result<SeasonalSummary> {
    let windows = season_windows(dataset, &config.seasons);
    let multi: Vec<&TransformerGroup> = groups.iter().filter(|g| g.len() >= 2).collect();
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for (name, range) in windows {
        if range.len() < 3 {
            log::warn!("season {name} has fewer than 3 samples; skipped");
            skipped.push(name);
        } else {
            usable.push((name, range));
        }
    }
    let values: Vec<Vec<SeasonalApcc>> = usable
        .par_iter()
        .map(|(name, range)| {
            let slice = dataset.slice(range.clone())?;
            Ok(multi
                .iter()
                .map(|g| {
                    let mut sum = 0.0;
                    for &j in &g.members {
                        let mut peers = 0.0;
                        for &k in &g.members {
                            if k != j {
                                peers +=
                                    pair_pcc(slice.meter(j), slice.meter(k), &PointSelection::AllData).unwrap_or(0.0);
                            }
                        }
                        sum += peers / (g.len() - 1) as f64;
                    }
                    SeasonalApcc {
                        transformer_id: g.transformer_id.clone(),
                        season: name.clone(),
                        apcc: sum / g.len() as f64,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let values: Vec<SeasonalApcc> = values.into_iter().flatten().collect();

    let q = config.seasonal_percentile;
    let mut thresholds = BTreeMap::new();
    match config.threshold_scope {
        ThresholdScope::Feeder => {
            let all: Vec<f64> = values.iter().map(|v| v.apcc).collect();
            if let Some(th) = percentile(&all, q) {
                thresholds.insert("*".to_string(), th);
            }
        }
        ThresholdScope::Transformer => {
            for g in &multi {
                let own: Vec<f64> = values
                    .iter()
                    .filter(|v| v.transformer_id == g.transformer_id)
                    .map(|v| v.apcc)
                    .collect();
                if let Some(th) = percentile(&own, q) {
                    thresholds.insert(g.transformer_id.clone(), th);
                }
            }
        }
    }
    Ok(SeasonalSummary {
        values,
        thresholds,
        skipped_seasons: skipped,
    })
}

/// Keeps a flag only if its original transformer's seasonal average PCC
/// reaches the threshold in some season.
pub fn seasonal_check(
    dataset: &FeederDataset,
    groups: &[TransformerGroup],
    flags: &mut [FlagRecord],
    config: &PairingConfig,
) -> Result<SeasonalSummary> {
    let summary = seasonal_apcc(dataset, groups, config)?;
    for f in flags.iter_mut() {
        f.seasonal_retained = summary.dips(&f.original_transformer);
    }
    Ok(summary)
}

/// Re-scores every flag on high-power segments. Meters with no qualifying
/// run of their own are marked low consumption and dropped.
pub fn stage2_verify(
    dataset: &FeederDataset,
    groups: &[TransformerGroup],
    flags: &mut [FlagRecord],
    config: &PairingConfig,
) -> Result<()> {
    let band = PowerBand::above(config.stage2_p_low, config.stage2_t_dur)?;
    let selection = PointSelection::Band(band, config.segmentation);
    let by_id: BTreeMap<&str, &TransformerGroup> = groups.iter().map(|g| (g.transformer_id.as_str(), g)).collect();
    let mut pcc_cache: Option<PccMatrix> = None;
    for f in flags.iter_mut() {
        let j = dataset
            .index_of(&f.meter_id)
            .ok_or_else(|| Error::UnknownMeter(f.meter_id.clone()))?;
        if meter_runs(dataset.meter(j), &band).is_empty() {
            f.low_consumption = true;
            f.stage2_retained = false;
            continue;
        }
        let pcc = match &pcc_cache {
            Some(p) => p,
            None => pcc_cache.insert(pcc_matrix_with(dataset, &selection)?.matrix),
        };
        let (own, host) = match (
            by_id.get(f.original_transformer.as_str()),
            by_id.get(f.identified_transformer.as_str()),
        ) {
            (Some(o), Some(h)) => (*o, *h),
            _ => {
                return Err(Error::param(format!(
                    "flag for `{}` names an unknown transformer",
                    f.meter_id
                )))
            }
        };
        let apcc_removed = apcc_within(j, own, pcc)? > apcc_cross(j, host, pcc);
        let w = config.t2_weights;
        let t2_removed = t2pcc_within(j, own, pcc, w)? > t2pcc_cross(j, host, pcc, w);
        f.stage2_retained = !(apcc_removed || t2_removed);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub pcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityMap {
    pub transformer_id: String,
    pub edges: Vec<Edge>,
}

/// Greedy tree: start at the meter with the highest mean voltage, then keep
/// attaching the unattached meter with the highest PCC to any attached one.
/// Ties go to the smaller meter id.
pub fn connectivity_map(dataset: &FeederDataset, group: &TransformerGroup, pcc: &PccMatrix) -> Result<ConnectivityMap> {
    if group.len() < 2 {
        return Err(Error::SingletonGroup(group.transformer_id.clone()));
    }
    let id = |i: usize| dataset.meter(i).meter_id.as_str();
    let mut members = group.members.clone();
    members.sort_by(|a, b| id(*a).cmp(id(*b)));
    let mean_v = |i: usize| dataset.meter(i).mean_voltage().unwrap_or(f64::NEG_INFINITY);
    let mut seed = members[0];
    for &m in &members[1..] {
        if mean_v(m) > mean_v(seed) {
            seed = m;
        }
    }
    let mut attached = vec![seed];
    let mut rest: Vec<usize> = members.into_iter().filter(|m| *m != seed).collect();
    let mut edges = Vec::new();
    while !rest.is_empty() {
        // (pcc, position in rest, attached meter)
        let mut best: Option<(f64, usize, usize)> = None;
        for (pos, &u) in rest.iter().enumerate() {
            for &a in &attached {
                let r = pcc.get(u, a);
                let better = match best {
                    None => true,
                    Some((b, bpos, ba)) => r > b || (r == b && (pos, id(a)) < (bpos, id(ba))),
                };
                if better {
                    best = Some((r, pos, a));
                }
            }
        }
        let (r, pos, a) = best.expect("non-empty");
        let u = rest.remove(pos);
        edges.push(Edge {
            from: id(a).to_string(),
            to: id(u).to_string(),
            pcc: r,
        });
        attached.push(u);
    }
    Ok(ConnectivityMap {
        transformer_id: group.transformer_id.clone(),
        edges,
    })
}

pub fn write_maps_csv<W: Write>(maps: &[ConnectivityMap], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["transformer_id", "from", "to", "pcc"])?;
    for m in maps {
        for e in &m.edges {
            w.write_record([&m.transformer_id, &e.from, &e.to, &format!("{:.6}", e.pcc)])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingReport {
    pub groups: Vec<TransformerGroup>,
    /// Transformers with a single recorded meter; not analyzed as targets.
    pub singletons: Vec<String>,
    /// Stage-1 flags in meter order, APCC before T2PCC for each meter.
    pub flags: Vec<FlagRecord>,
    pub seasonal: SeasonalSummary,
    pub maps: Vec<ConnectivityMap>,
    pub pcc_warnings: usize,
}

impl PairingReport {
    pub fn final_flags(&self) -> impl Iterator<Item = &FlagRecord> {
        self.flags.iter().filter(|f| f.is_final())
    }

    /// Distinct meters with at least one surviving flag, sorted.
    pub fn final_meters(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.final_flags().map(|f| f.meter_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Full two-stage pipeline on a dataset with recorded transformer ids.
pub fn identify_pairing(dataset: &FeederDataset, config: &PairingConfig) -> Result<PairingReport> {
    config.validate()?;
    let groups = transformer_groups(dataset);
    if groups.is_empty() {
        return Err(Error::InvalidDataset("no transformer ids recorded".into()));
    }
    let singletons: Vec<String> = groups
        .iter()
        .filter(|g| g.len() < 2)
        .map(|g| g.transformer_id.clone())
        .collect();
    for s in &singletons {
        log::warn!("transformer {s} serves a single meter; not analyzed");
    }

    let report = pcc_matrix_with(dataset, &PointSelection::AllData)?;
    let pcc = report.matrix;
    let mut flags = flag_by_apcc(dataset, &groups, &pcc);
    flags.extend(flag_by_t2pcc(dataset, &groups, &pcc, config.t2_weights));
    flags.sort_by_key(|f| (dataset.index_of(&f.meter_id), f.stage));

    let seasonal = seasonal_check(dataset, &groups, &mut flags, config)?;
    stage2_verify(dataset, &groups, &mut flags, config)?;
    let maps = groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| connectivity_map(dataset, g, &pcc))
        .collect::<Result<_>>()?;
    Ok(PairingReport {
        groups,
        singletons,
        flags,
        seasonal,
        maps,
        pcc_warnings: report.warnings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MeterSeries, TimeGrid};

    fn group(id: &str, members: &[usize]) -> TransformerGroup {
        TransformerGroup {
            transformer_id: id.into(),
            members: members.to_vec(),
        }
    }

    fn pcc(rows: &[Vec<f64>]) -> PccMatrix {
        let ids = (0..rows.len()).map(|i| format!("m{i}")).collect();
        PccMatrix::from_rows(ids, rows).unwrap()
    }

    fn dataset(n: usize) -> FeederDataset {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let grid = TimeGrid::new(start, 60, 4).unwrap();
        let meters = (0..n)
            .map(|i| {
                let v = vec![120.0 + i as f64, 121.0, 119.0, 120.0];
                MeterSeries::new(format!("m{i}"), grid, vec![1.0; 4], v).unwrap()
            })
            .collect();
        FeederDataset::new("t", meters).unwrap()
    }

    #[test]
    fn apcc_examples() {
        let p = pcc(&[
            vec![1.0, 0.8, 0.6, 0.5],
            vec![0.8, 1.0, 0.0, 0.7],
            vec![0.6, 0.0, 1.0, 0.0],
            vec![0.5, 0.7, 0.0, 1.0],
        ]);
        assert!((apcc_within(0, &group("T", &[0, 1, 2]), &p).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(apcc_within(0, &group("T", &[0, 1]), &p).unwrap(), 0.8);
        assert!(apcc_within(0, &group("T", &[0]), &p).is_err());
        assert_eq!(apcc_cross(0, &group("R", &[3]), &p), 0.5);
        assert!((apcc_cross(3, &group("R", &[0, 1]), &p) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn top2_examples() {
        assert!((top2_weighted(&[0.9, 0.8, 0.2], [0.5, 0.5]).unwrap() - 0.85).abs() < 1e-12);
        assert_eq!(top2_weighted(&[0.9], [0.5, 0.5]), Some(0.9));
        assert_eq!(top2_weighted(&[], [0.5, 0.5]), None);
        assert!((top2_weighted(&[0.2, 0.9, 0.8], [0.7, 0.3]).unwrap() - 0.87).abs() < 1e-12);
    }

    #[test]
    fn apcc_flags_best_host() {
        // Meter 0 under T with meter 1 (0.6); T1 = {2} at 0.7, T2 = {3} at 0.8.
        let p = pcc(&[
            vec![1.0, 0.6, 0.7, 0.8],
            vec![0.6, 1.0, 0.1, 0.1],
            vec![0.7, 0.1, 1.0, 0.1],
            vec![0.8, 0.1, 0.1, 1.0],
        ]);
        let ds = dataset(4);
        let groups = [group("T", &[0, 1]), group("T1", &[2]), group("T2", &[3])];
        let flags = flag_by_apcc(&ds, &groups, &p);
        let f = flags.iter().find(|f| f.meter_id == "m0").unwrap();
        assert_eq!(f.identified_transformer, "T2");
        assert_eq!((f.within, f.cross), (0.6, 0.8));
        assert!(flags
            .iter()
            .all(|f| f.cross > f.within && f.identified_transformer != f.original_transformer));
    }

    #[test]
    fn no_flag_when_own_group_wins() {
        let p = pcc(&[
            vec![1.0, 0.9, 0.7, 0.7],
            vec![0.9, 1.0, 0.7, 0.7],
            vec![0.7, 0.7, 1.0, 0.9],
            vec![0.7, 0.7, 0.9, 1.0],
        ]);
        let ds = dataset(4);
        let groups = [group("T", &[0, 1]), group("R", &[2, 3])];
        assert!(flag_by_apcc(&ds, &groups, &p).is_empty());
        assert!(flag_by_t2pcc(&ds, &groups, &p, [0.5, 0.5]).is_empty());
    }

    #[test]
    fn map_attaches_weak_meter_last() {
        let p = pcc(&[
            vec![1.0, 0.9, 0.8, 0.2],
            vec![0.9, 1.0, 0.85, 0.3],
            vec![0.8, 0.85, 1.0, 0.1],
            vec![0.2, 0.3, 0.1, 1.0],
        ]);
        // m3 has the highest mean voltage in `dataset`; use the rest as seed.
        let ds = dataset(4);
        let m = connectivity_map(&ds, &group("T", &[0, 1, 2]), &p).unwrap();
        assert_eq!(m.edges.len(), 2);
        assert_eq!((m.edges[0].from.as_str(), m.edges[0].to.as_str()), ("m2", "m1"));
        assert_eq!((m.edges[1].from.as_str(), m.edges[1].to.as_str()), ("m1", "m0"));

        let m = connectivity_map(&ds, &group("T", &[0, 1, 2, 3]), &p).unwrap();
        // Seed m3; greedy: m1 (0.3), then m0 (0.9), then m2 (0.85).
        let order: Vec<&str> = m.edges.iter().map(|e| e.to.as_str()).collect();
        assert_eq!(order, vec!["m1", "m0", "m2"]);
        assert_eq!(m.edges[0].pcc, 0.3);
    }

    #[test]
    fn map_ties_use_meter_ids() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.5 }).collect())
            .collect();
        let p = pcc(&rows);
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let grid = TimeGrid::new(start, 60, 3).unwrap();
        let meters = (0..n)
            .map(|i| MeterSeries::new(format!("m{i}"), grid, vec![0.0; 3], vec![120.0; 3]).unwrap())
            .collect();
        let ds = FeederDataset::new("t", meters).unwrap();
        let m = connectivity_map(&ds, &group("T", &[3, 1, 0, 2]), &p).unwrap();
        let pairs: Vec<(&str, &str)> = m.edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
        assert_eq!(pairs, vec![("m0", "m1"), ("m0", "m2"), ("m0", "m3")]);
        assert!(connectivity_map(&ds, &group("T", &[0]), &p).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PairingConfig::default().validate().is_ok());
        let c = PairingConfig {
            t2_weights: [0.7, 0.7],
            ..PairingConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PairingConfig {
            seasonal_percentile: 0.0,
            ..PairingConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn calendar_quarters_clip_to_data() {
        let start = NaiveDate::from_ymd_opt(2024, 3, 31)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let grid = TimeGrid::new(start, 60 * 24, 100).unwrap();
        let meters = (0..2)
            .map(|i| MeterSeries::new(format!("m{i}"), grid, vec![0.0; 100], vec![120.0; 100]).unwrap())
            .collect();
        let ds = FeederDataset::new("t", meters).unwrap();
        let w = season_windows(&ds, &Seasons::CalendarQuarters);
        let names: Vec<&str> = w.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["2024-Q1", "2024-Q2", "2024-Q3"]);
        assert_eq!(w[0].1, 0..1);
        assert_eq!(w[1].1, 1..92);
        assert_eq!(w[2].1, 92..100);
        let eq = season_windows(&ds, &Seasons::EqualWindows(4));
        assert_eq!(eq[3].1, 75..100);
    }
}
