//! Agglomerative hierarchical clustering over correlation distance, cluster
//! cuts, majority-vote phase labeling and accuracy accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{distance_matrix, pcc_matrix_with, DistanceMatrix, PointSelection};
use crate::dataset::{FeederDataset, Phase, PhaseLabeling};
use crate::error::{Error, Result};
use crate::segmentation::{PowerBand, SegmentationConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            other => Err(Error::param(format!("unknown linkage `{other}`"))),
        }
    }
}

/// Cluster count by feeder size: tens of meters → 6, a few hundred → 12,
/// larger feeders → 36.
pub fn default_cluster_count(n_meters: usize) -> usize {
    let n = if n_meters < 100 {
        6
    } else if n_meters < 400 {
        12
    } else {
        36
    };
    n.min(n_meters.max(1))
}

/// One merge step. Leaves are nodes `0..n`; the node created by step `s`
/// is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    meter_ids: Vec<String>,
    merges: Vec<Merge>,
    linkage: Linkage,
}

impl Dendrogram {
    pub fn meter_ids(&self) -> &[String] {
        &self.meter_ids
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn linkage(&self) -> Linkage {
        self.linkage
    }

    pub fn n_leaves(&self) -> usize {
        self.meter_ids.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "left", "right", "distance", "size"])?;
        for (s, m) in self.merges.iter().enumerate() {
            w.write_record([
                s.to_string(),
                m.left.to_string(),
                m.right.to_string(),
                m.distance.to_string(),
                m.size.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

const NO_NEIGHBOR: (f64, usize) = (f64::INFINITY, usize::MAX);

/// Smallest `(distance, j)` over active `j > i`.
fn row_min(dist: &[f64], n: usize, active: &[bool], i: usize) -> (f64, usize) {
    let mut best = NO_NEIGHBOR;
    for j in i + 1..n {
        if active[j] {
            let d = dist[i * n + j];
            if d < best.0 {
                best = (d, j);
            }
        }
    }
    best
}

/// Agglomerative clustering on a distance matrix.
///
/// Clusters live in slots `0..n`; merging slots `a < b` keeps the result in
/// `a`. Among equal distances the smallest `(a, b)` slot pair merges first,
/// which makes the output fully deterministic.
pub fn agglomerate(d: &DistanceMatrix, linkage: Linkage) -> Dendrogram {
    let n = d.n();
    let mut dist: Vec<f64> = (0..n).flat_map(|i| d.row(i).to_vec()).collect();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut nn: Vec<(f64, usize)> = (0..n).map(|i| row_min(&dist, n, &active, i)).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if active[i] && nn[i].1 != usize::MAX && (nn[i].0 < best.0 || best.1 == usize::MAX) {
                best = (nn[i].0, i, nn[i].1);
            }
        }
        let (distance, a, b) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (da, db) = (dist[a * n + k], dist[b * n + k]);
            let merged = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (na * da + nb * db) / (na + nb),
            };
            dist[a * n + k] = merged;
            dist[k * n + a] = merged;
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            left: node[a],
            right: node[b],
            distance,
            size: size[a],
        });
        node[a] = n + step;

        for i in 0..n {
            if !active[i] {
                continue;
            }
            if i == a || nn[i].1 == a || nn[i].1 == b {
                nn[i] = row_min(&dist, n, &active, i);
            } else if i < a {
                let da = dist[i * n + a];
                if da < nn[i].0 || (da == nn[i].0 && a < nn[i].1) {
                    nn[i] = (da, a);
                }
            }
        }
        nn[b] = NO_NEIGHBOR;
    }

    Dendrogram {
        meter_ids: d.meter_ids().to_vec(),
        merges,
        linkage,
    }
}

/// Assignment of meters to clusters `0..n_clusters`, numbered in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    meter_ids: Vec<String>,
    assignments: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Builds a partition from arbitrary labels, renumbering them by first
    /// appearance.
    pub fn from_labels(meter_ids: Vec<String>, labels: &[usize]) -> Result<Self> {
        if meter_ids.len() != labels.len() {
            return Err(Error::param("one label per meter required"));
        }
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        let assignments = labels
            .iter()
            .map(|l| {
                *map.entry(*l).or_insert_with(|| {
                    order.push(*l);
                    order.len() - 1
                })
            })
            .collect();
        Ok(Self {
            meter_ids,
            assignments,
            n_clusters: order.len(),
        })
    }

    pub fn meter_ids(&self) -> &[String] {
        &self.meter_ids
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn cluster_of(&self, meter: usize) -> usize {
        self.assignments[meter]
    }

    /// Member indices of each cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, c) in self.assignments.iter().enumerate() {
            out[*c].push(i);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["meter_id", "cluster"])?;
        for (id, c) in self.meter_ids.iter().zip(&self.assignments) {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cuts the dendrogram into exactly `n_clusters` clusters by undoing the
/// last `n_clusters - 1` merges.
pub fn cut(dendrogram: &Dendrogram, n_clusters: usize) -> Result<Partition> {
    let n = dendrogram.n_leaves();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::param(format!("cluster count {n_clusters} outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges[..n - n_clusters] {
        let (ra, rb) = (find(&mut parent, rep[m.left]), find(&mut parent, rep[m.right]));
        parent[rb] = ra;
        rep.push(ra);
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Partition::from_labels(dendrogram.meter_ids.clone(), &roots)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityVote {
    pub predicted: PhaseLabeling,
    /// Clusters whose plurality was tied and resolved by A < B < C.
    pub tied_clusters: Vec<usize>,
}

/// Plurality recorded label of a cluster; `None` when nobody is labeled.
fn plurality(members: &[usize], ids: &[String], recorded: &PhaseLabeling) -> Option<(Phase, bool)> {
    let mut counts = [0usize; 3];
    for &m in members {
        if let Some(p) = recorded.get(&ids[m]) {
            counts[p.index()] += 1;
        }
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    let winners: Vec<Phase> = Phase::ALL.into_iter().filter(|p| counts[p.index()] == best).collect();
    Some((winners[0], winners.len() > 1))
}

/// Labels every meter with its cluster's plurality recorded phase.
/// Unlabeled meters take part but do not vote.
pub fn majority_vote(partition: &Partition, recorded: &PhaseLabeling) -> Result<MajorityVote> {
    let ids = partition.meter_ids();
    let mut predicted = PhaseLabeling::default();
    let mut tied_clusters = Vec::new();
    for (c, members) in partition.clusters().iter().enumerate() {
        let (phase, tied) = plurality(members, ids, recorded).ok_or(Error::UnlabeledCluster(c))?;
        if tied {
            log::warn!("cluster {c}: tied phase vote resolved to {phase}");
            tied_clusters.push(c);
        }
        for &m in members {
            predicted.0.insert(ids[m].clone(), phase);
        }
    }
    Ok(MajorityVote {
        predicted,
        tied_clusters,
    })
}

/// Majority vote that leaves meters of unlabeled clusters without a
/// prediction instead of failing.
fn majority_vote_partial(partition: &Partition, recorded: &PhaseLabeling) -> PhaseLabeling {
    let ids = partition.meter_ids();
    let mut predicted = PhaseLabeling::default();
    for members in partition.clusters() {
        if let Some((phase, _)) = plurality(&members, ids, recorded) {
            for m in members {
                predicted.0.insert(ids[m].clone(), phase);
            }
        }
    }
    predicted
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PhaseCounts {
    pub recorded: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    /// Indexed by `Phase::index()`.
    pub per_phase: [PhaseCounts; 3],
}

impl AccuracyReport {
    /// Report from totals alone, without per-phase counts.
    pub fn from_counts(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            per_phase: [PhaseCounts::default(); 3],
        }
    }

    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64 * 100.0
        }
    }

    /// Percentage truncated (not rounded) to one decimal:
    /// 537/577 = 93.07 → 93.0, 804/919 = 87.49 → 87.4.
    pub fn percent_one_decimal(&self) -> f64 {
        // Work in integers so that e.g. 100% never truncates to 99.9.
        if self.total == 0 {
            return 0.0;
        }
        let tenths = (self.correct as u128 * 1000) / self.total as u128;
        tenths as f64 / 10.0
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "value"])?;
        for p in Phase::ALL {
            let c = self.per_phase[p.index()];
            w.write_record([format!("phase_{p}_recorded"), c.recorded.to_string()])?;
            w.write_record([format!("phase_{p}_predicted"), c.predicted.to_string()])?;
        }
        w.write_record(["correct_labels".to_string(), self.correct.to_string()])?;
        w.write_record(["recorded_labels".to_string(), self.total.to_string()])?;
        w.write_record(["accuracy_pct".to_string(), format!("{:.1}", self.percent_one_decimal())])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in Phase::ALL {
            let c = self.per_phase[p.index()];
            writeln!(f, "Phase {p}")?;
            writeln!(f, "  Recorded phase   {:>8}", c.recorded)?;
            writeln!(f, "  Predicted phase  {:>8}", c.predicted)?;
        }
        writeln!(f, "Total")?;
        writeln!(f, "  Correct labels   {:>8}", self.correct)?;
        writeln!(f, "  Recorded labels  {:>8}", self.total)?;
        write!(f, "  Accuracy (%)     {:>8.1}", self.percent_one_decimal())
    }
}

/// Share of recorded meters whose predicted label matches. Meters without a
/// recorded label are ignored; recorded meters without a prediction count
/// as wrong.
pub fn accuracy(predicted: &PhaseLabeling, recorded: &PhaseLabeling) -> AccuracyReport {
    let mut report = AccuracyReport::from_counts(0, 0);
    for (id, rec) in recorded.iter() {
        report.total += 1;
        report.per_phase[rec.index()].recorded += 1;
        if let Some(pred) = predicted.get(id) {
            report.per_phase[pred.index()].predicted += 1;
            if pred == *rec {
                report.correct += 1;
            }
        }
    }
    report
}

/// Parameter grid for the labeled-mode sweep. Bands are `[p_low, p_high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub p_low: f64,
    pub p_high: Vec<f64>,
    pub t_dur: Vec<f64>,
    pub n_clusters: Vec<usize>,
}

/// Inclusive decimal range built from integer steps to avoid drift.
pub fn decimal_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as i64;
    (0..=count.max(-1))
        .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

impl SweepGrid {
    /// Upper power limit 0–2 kW by 0.1, duration 0–3 h by 0.5, clusters 3–30
    /// by 3.
    pub fn standard() -> Self {
        Self {
            p_low: 0.0,
            p_high: decimal_range(0.0, 2.0, 0.1),
            t_dur: decimal_range(0.0, 3.0, 0.5),
            n_clusters: (3..=30).step_by(3).collect(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.p_high.len() * self.t_dur.len() * self.n_clusters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub p_low: f64,
    pub p_high: f64,
    pub t_dur: f64,
    pub n_clusters: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy_pct: f64,
    /// The band was empty (`p_high <= p_low`) and the full series was used.
    pub all_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// Cells in grid order: p_high, then t_dur, then n_clusters.
    pub cells: Vec<SweepCell>,
    /// Indices of every cell reaching the maximum accuracy.
    pub best: Vec<usize>,
}

impl SweepResult {
    pub fn best_cells(&self) -> impl Iterator<Item = &SweepCell> {
        self.best.iter().map(|i| &self.cells[*i])
    }

    pub fn max_accuracy(&self) -> f64 {
        self.best_cells().next().map(|c| c.accuracy_pct).unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["p_low", "p_high", "t_dur", "n_clusters", "accuracy_pct"])?;
        for c in &self.cells {
            w.write_record([
                c.p_low.to_string(),
                c.p_high.to_string(),
                c.t_dur.to_string(),
                c.n_clusters.to_string(),
                format!("{:.4}", c.accuracy_pct),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Phase-identification accuracy over a grid of band, duration and cluster
/// count. Returns every maximizing cell.
pub fn sweep_parameters(
    dataset: &FeederDataset,
    recorded: &PhaseLabeling,
    grid: &SweepGrid,
    linkage: Linkage,
    segmentation: &SegmentationConfig,
) -> Result<SweepResult> {
    if recorded.is_empty() {
        return Err(Error::param("sweep needs recorded phase labels"));
    }
    if let Some(bad) = grid.n_clusters.iter().find(|n| **n == 0 || **n > dataset.len()) {
        return Err(Error::param(format!(
            "cluster count {bad} outside 1..={}",
            dataset.len()
        )));
    }
    if grid.p_low < 0.0 || grid.t_dur.iter().any(|t| *t < 0.0) {
        return Err(Error::param("sweep bands need p_low >= 0 and t_dur >= 0"));
    }

    let combos: Vec<(f64, f64)> = grid
        .p_high
        .iter()
        .flat_map(|h| grid.t_dur.iter().map(move |t| (*h, *t)))
        .collect();
    let blocks: Vec<Vec<SweepCell>> = combos
        .par_iter()
        .map(|&(p_high, t_dur)| {
            let all_data = p_high <= grid.p_low;
            let selection = if all_data {
                PointSelection::AllData
            } else {
                PointSelection::Band(PowerBand::new(grid.p_low, p_high, t_dur)?, *segmentation)
            };
            let pcc = pcc_matrix_with(dataset, &selection)?.matrix;
            let tree = agglomerate(&distance_matrix(&pcc), linkage);
            grid.n_clusters
                .iter()
                .map(|&n| {
                    let partition = cut(&tree, n)?;
                    let report = accuracy(&majority_vote_partial(&partition, recorded), recorded);
                    Ok(SweepCell {
                        p_low: grid.p_low,
                        p_high,
                        t_dur,
                        n_clusters: n,
                        correct: report.correct,
                        total: report.total,
                        accuracy_pct: report.percent(),
                        all_data,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let cells: Vec<SweepCell> = blocks.into_iter().flatten().collect();
    let top = cells.iter().map(|c| c.correct).max().unwrap_or(0);
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.correct == top)
        .map(|(i, _)| i)
        .collect();
    Ok(SweepResult { cells, best })
}

/// Labeled-mode phase identification for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseIdOutcome {
    pub dendrogram: Dendrogram,
    pub partition: Partition,
    pub vote: MajorityVote,
    pub accuracy: AccuracyReport,
    pub warnings: usize,
}

pub fn identify_phases(
    dataset: &FeederDataset,
    selection: &PointSelection,
    n_clusters: usize,
    linkage: Linkage,
) -> Result<PhaseIdOutcome> {
    let recorded = dataset.recorded_labels();
    let report = pcc_matrix_with(dataset, selection)?;
    let tree = agglomerate(&distance_matrix(&report.matrix), linkage);
    let partition = cut(&tree, n_clusters)?;
    let vote = majority_vote(&partition, &recorded)?;
    let accuracy = accuracy(&vote.predicted, &recorded);
    Ok(PhaseIdOutcome {
        dendrogram: tree,
        partition,
        vote,
        accuracy,
        warnings: report.warnings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    fn dm(rows: &[Vec<f64>]) -> DistanceMatrix {
        DistanceMatrix::from_rows(ids(rows.len()), rows).unwrap()
    }

    fn block() -> DistanceMatrix {
        dm(&[
            vec![0.0, 0.1, 0.9, 0.9],
            vec![0.1, 0.0, 0.9, 0.9],
            vec![0.9, 0.9, 0.0, 0.1],
            vec![0.9, 0.9, 0.1, 0.0],
        ])
    }

    #[test]
    fn two_meters_single_merge() {
        let tree = agglomerate(&dm(&[vec![0.0, 0.3], vec![0.3, 0.0]]), Linkage::Average);
        assert_eq!(
            tree.merges(),
            &[Merge {
                left: 0,
                right: 1,
                distance: 0.3,
                size: 2
            }]
        );
    }

    #[test]
    fn block_matrix_merges_blocks_first() {
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let tree = agglomerate(&block(), linkage);
            let m = tree.merges();
            assert_eq!((m[0].left, m[0].right, m[0].distance), (0, 1, 0.1));
            assert_eq!((m[1].left, m[1].right, m[1].distance), (2, 3, 0.1));
            assert_eq!((m[2].left, m[2].right), (4, 5));
            assert!((m[2].distance - 0.9).abs() < 1e-12);
            let p = cut(&tree, 2).unwrap();
            assert_eq!(p.assignments(), &[0, 0, 1, 1]);
        }
    }

    #[test]
    fn all_equal_distances_use_lexicographic_order() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 0.5 }).collect())
            .collect();
        let tree = agglomerate(&dm(&rows), Linkage::Average);
        let pairs: Vec<(usize, usize)> = tree.merges().iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (4, 2), (5, 3)]);
    }

    #[test]
    fn cut_extremes_and_range() {
        let tree = agglomerate(&block(), Linkage::Average);
        assert_eq!(cut(&tree, 4).unwrap().assignments(), &[0, 1, 2, 3]);
        assert_eq!(cut(&tree, 1).unwrap().assignments(), &[0, 0, 0, 0]);
        assert!(cut(&tree, 0).is_err());
        assert!(cut(&tree, 5).is_err());
    }

    fn labels(pairs: &[(&str, Phase)]) -> PhaseLabeling {
        pairs.iter().map(|(i, p)| (i.to_string(), *p)).collect()
    }

    #[test]
    fn plurality_and_ties() {
        let p = Partition::from_labels(ids(5), &[0, 0, 0, 1, 1]).unwrap();
        let rec = labels(&[
            ("m0", Phase::A),
            ("m1", Phase::A),
            ("m2", Phase::B),
            ("m3", Phase::B),
            ("m4", Phase::A),
        ]);
        let vote = majority_vote(&p, &rec).unwrap();
        assert_eq!(vote.predicted.get("m2"), Some(Phase::A));
        assert_eq!(vote.predicted.get("m3"), Some(Phase::A));
        assert_eq!(vote.tied_clusters, vec![1]);
    }

    #[test]
    fn vote_fixed_point_and_unlabeled_cluster() {
        let p = Partition::from_labels(ids(3), &[0, 1, 2]).unwrap();
        let rec = labels(&[("m0", Phase::C), ("m1", Phase::B), ("m2", Phase::A)]);
        let vote = majority_vote(&p, &rec).unwrap();
        assert_eq!(vote.predicted, rec);
        assert_eq!(accuracy(&vote.predicted, &rec).percent(), 100.0);

        let partial = labels(&[("m0", Phase::C), ("m1", Phase::B)]);
        assert!(matches!(majority_vote(&p, &partial), Err(Error::UnlabeledCluster(2))));
    }

    #[test]
    fn one_decimal_truncates() {
        let r = AccuracyReport::from_counts(537, 577);
        assert_eq!(r.percent_one_decimal(), 93.0);
        let r = AccuracyReport::from_counts(804, 919);
        assert!((r.percent_one_decimal() - 87.4).abs() <= 0.2);
        assert_eq!(AccuracyReport::from_counts(1100, 1100).percent_one_decimal(), 100.0);
    }

    #[test]
    fn accuracy_counts_per_phase() {
        let rec = labels(&[("a", Phase::A), ("b", Phase::B), ("c", Phase::C)]);
        let pred = labels(&[("a", Phase::A), ("b", Phase::A), ("c", Phase::C)]);
        let r = accuracy(&pred, &rec);
        assert_eq!((r.correct, r.total), (2, 3));
        assert_eq!(
            r.per_phase[0],
            PhaseCounts {
                recorded: 1,
                predicted: 2
            }
        );
        assert_eq!(
            r.per_phase[1],
            PhaseCounts {
                recorded: 1,
                predicted: 0
            }
        );
        assert!(r.to_string().contains("Accuracy (%)"));
    }

    #[test]
    fn standard_grid_size() {
        let g = SweepGrid::standard();
        assert_eq!(g.p_high.len(), 21);
        assert_eq!(g.t_dur.len(), 7);
        assert_eq!(g.n_clusters.len(), 10);
        assert_eq!(g.cell_count(), 1470);
        assert_eq!(g.p_high[7], 0.7);
        assert_eq!(decimal_range(0.5, 0.5, 0.1), vec![0.5]);
    }

    #[test]
    fn cluster_count_heuristic() {
        assert_eq!(default_cluster_count(60), 6);
        assert_eq!(default_cluster_count(150), 12);
        assert_eq!(default_cluster_count(919), 36);
        assert_eq!(default_cluster_count(4), 4);
    }

    /// O(n^3) reference: scan all active pairs every step, keep the first
    /// strict minimum in (i, j) order.
    fn naive(d: &DistanceMatrix, linkage: Linkage) -> Vec<(usize, usize, f64)> {
        let n = d.n();
        let mut dist = d.to_rows();
        let mut active = vec![true; n];
        let mut size = vec![1.0; n];
        let mut node: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        for step in 0..n - 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..n {
                for j in i + 1..n {
                    if active[i] && active[j] && (dist[i][j] < best.0 || best.0.is_infinite()) {
                        best = (dist[i][j], i, j);
                    }
                }
            }
            let (dd, a, b) = best;
            for k in 0..n {
                if active[k] && k != a && k != b {
                    let v = match linkage {
                        Linkage::Single => dist[a][k].min(dist[b][k]),
                        Linkage::Complete => dist[a][k].max(dist[b][k]),
                        Linkage::Average => (size[a] * dist[a][k] + size[b] * dist[b][k]) / (size[a] + size[b]),
                    };
                    dist[a][k] = v;
                    dist[k][a] = v;
                }
            }
            active[b] = false;
            size[a] += size[b];
            out.push((node[a], node[b], dd));
            node[a] = n + step;
        }
        out
    }

    #[allow(clippy::needless_range_loop)]
    fn random_matrix() -> impl Strategy<Value = DistanceMatrix> {
        (2usize..14).prop_flat_map(|n| {
            prop::collection::vec(0u8..6, n * (n - 1) / 2).prop_map(move |vals| {
                // Coarse values force plenty of ties.
                let mut rows = vec![vec![0.0; n]; n];
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        rows[i][j] = vals[k] as f64 / 5.0;
                        rows[j][i] = rows[i][j];
                        k += 1;
                    }
                }
                DistanceMatrix::from_rows(ids(n), &rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn cached_agglomeration_matches_naive(d in random_matrix(), which in 0usize..3) {
            let linkage = [Linkage::Average, Linkage::Complete, Linkage::Single][which];
            let fast: Vec<(usize, usize, f64)> = agglomerate(&d, linkage)
                .merges().iter().map(|m| (m.left, m.right, m.distance)).collect();
            prop_assert_eq!(fast, naive(&d, linkage));
        }

        #[test]
        fn merge_distances_non_decreasing(d in random_matrix(), which in 0usize..3) {
            let linkage = [Linkage::Average, Linkage::Complete, Linkage::Single][which];
            let tree = agglomerate(&d, linkage);
            for w in tree.merges().windows(2) {
                prop_assert!(w[1].distance >= w[0].distance - 1e-12);
            }
        }

        #[test]
        fn majority_vote_maximizes_agreement(
            labels_raw in prop::collection::vec(0usize..4, 3..30),
            phases in prop::collection::vec(0usize..3, 30),
        ) {
            let n = labels_raw.len();
            let p = Partition::from_labels(ids(n), &labels_raw).unwrap();
            let rec: PhaseLabeling = (0..n).map(|i| (format!("m{i}"), Phase::ALL[phases[i]])).collect();
            let vote = majority_vote(&p, &rec).unwrap();
            for members in p.clusters() {
                let agree = |ph: Phase| members.iter().filter(|m| rec.get(&format!("m{m}")) == Some(ph)).count();
                let chosen = vote.predicted.get(&format!("m{}", members[0])).unwrap();
                for ph in Phase::ALL {
                    prop_assert!(agree(chosen) >= agree(ph));
                }
            }
        }
    }
}
