//! Label-free consensus clustering: an ensemble of partitions over varied
//! segmentation parameters, merged through a connected-triple similarity.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{agglomerate, cut, decimal_range, Linkage, Partition};
use crate::correlation::{
    check_symmetric, distance_matrix, pcc_matrix_with, DistanceMatrix, PointSelection, SquareMatrix,
};
use crate::dataset::FeederDataset;
use crate::error::{Error, Result};
use crate::segmentation::{PowerBand, SegmentationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub band: PowerBand,
    pub n_clusters: usize,
}

/// How two clusters combine their links to a shared third cluster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleWeight {
    #[default]
    Min,
    Product,
}

/// Scope of the maximum used to normalize triple weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleNormalization {
    #[default]
    PerPartition,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<EnsembleMember>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub triple: TripleWeight,
    #[serde(default)]
    pub normalization: TripleNormalization,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
}

fn default_decay() -> f64 {
    0.8
}

impl EnsembleSpec {
    /// Every combination of the listed upper limits and durations, all with
    /// the same lower limit and cluster count.
    pub fn grid(p_low: f64, p_high: &[f64], t_dur: &[f64], n_clusters: usize) -> Result<Self> {
        let mut members = Vec::new();
        for &h in p_high {
            for &t in t_dur {
                members.push(EnsembleMember {
                    band: PowerBand::new(p_low, h, t)?,
                    n_clusters,
                });
            }
        }
        let spec = Self {
            members,
            decay: default_decay(),
            triple: TripleWeight::default(),
            normalization: TripleNormalization::default(),
            linkage: Linkage::default(),
            segmentation: SegmentationConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ten members: upper limit 0.6–1.0 kW by 0.1, durations 0.5 h and 1 h,
    /// 30 clusters each.
    pub fn standard() -> Self {
        Self::grid(0.0, &decimal_range(0.6, 1.0, 0.1), &[0.5, 1.0], 30).expect("standard ensemble is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::param("an ensemble needs at least two parameter sets"));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::param(format!("decay {} outside [0, 1]", self.decay)));
        }
        for m in &self.members {
            m.band.validate()?;
            if m.n_clusters == 0 {
                return Err(Error::param("ensemble members need at least one cluster"));
            }
        }
        Ok(())
    }
}

/// One partition per ensemble member.
pub fn generate_ensemble(dataset: &FeederDataset, spec: &EnsembleSpec) -> Result<Vec<Partition>> {
    spec.validate()?;
    let finest = spec.members.iter().map(|m| m.n_clusters).max().unwrap_or(0);
    if finest * 3 > dataset.len() {
        log::warn!(
            "ensemble members ask for up to {finest} clusters on {} meters; \
             clusters this small rarely overlap and the consensus may be arbitrary",
            dataset.len()
        );
    }
    spec.members
        .par_iter()
        .map(|m| {
            let selection = PointSelection::Band(m.band, spec.segmentation);
            let pcc = pcc_matrix_with(dataset, &selection)?.matrix;
            let tree = agglomerate(&distance_matrix(&pcc), spec.linkage);
            cut(&tree, m.n_clusters)
        })
        .collect()
}

/// Link weights between every pair of clusters of an ensemble. Clusters are
/// numbered globally: partition 0's clusters first, then partition 1's, …
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterWeights {
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl ClusterWeights {
    pub fn n_clusters(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Global index of cluster `c` of partition `m`.
    pub fn index(&self, m: usize, c: usize) -> usize {
        self.offsets[m] + c
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.n_clusters() + b]
    }
}

fn check_ensemble(partitions: &[Partition]) -> Result<()> {
    let first = partitions.first().ok_or_else(|| Error::param("empty ensemble"))?;
    if partitions.iter().any(|p| p.meter_ids() != first.meter_ids()) {
        return Err(Error::param("ensemble partitions cover different meters"));
    }
    Ok(())
}

/// Jaccard overlap `|a ∩ b| / |a ∪ b|` between all ensemble clusters.
pub fn cluster_jaccard_weights(partitions: &[Partition]) -> Result<ClusterWeights> {
    check_ensemble(partitions)?;
    let mut offsets = vec![0];
    for p in partitions {
        offsets.push(offsets.last().unwrap() + p.n_clusters());
    }
    let k = *offsets.last().unwrap();
    let mut size = vec![0usize; k];
    let mut shared = vec![0usize; k * k];
    let n = partitions[0].len();
    let mut ids = Vec::with_capacity(partitions.len());
    for x in 0..n {
        ids.clear();
        ids.extend(partitions.iter().enumerate().map(|(m, p)| offsets[m] + p.cluster_of(x)));
        for &a in &ids {
            size[a] += 1;
            for &b in &ids {
                shared[a * k + b] += 1;
            }
        }
    }
    let weights = (0..k * k)
        .map(|ab| {
            let (a, b) = (ab / k, ab % k);
            let inter = shared[ab];
            if inter == 0 {
                0.0
            } else {
                inter as f64 / (size[a] + size[b] - inter) as f64
            }
        })
        .collect();
    Ok(ClusterWeights { offsets, weights })
}

/// Connected-triple similarity: co-clustering counts 1, otherwise the pair
/// earns `decay` times the normalized weight its two clusters share through
/// third clusters. Averaged over partitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtsMatrix(SquareMatrix);

impl std::ops::Deref for CtsMatrix {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

impl CtsMatrix {
    pub fn from_rows(meter_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = SquareMatrix::from_rows(meter_ids, rows)?;
        check_symmetric(&m, 1.0, (0.0, 1.0))?;
        Ok(Self(m))
    }

    pub fn distance(&self) -> DistanceMatrix {
        DistanceMatrix::from_similarity(&self.0)
    }
}

/// Raw triple weight between clusters of each partition, `k_m × k_m`.
fn triple_weights(w: &ClusterWeights, m: usize, k_m: usize, triple: TripleWeight) -> Vec<f64> {
    let k = w.n_clusters();
    let mut out = vec![0.0; k_m * k_m];
    for a in 0..k_m {
        for b in a + 1..k_m {
            let (ga, gb) = (w.index(m, a), w.index(m, b));
            let mut total = 0.0;
            for t in 0..k {
                if t == ga || t == gb {
                    continue;
                }
                let (wa, wb) = (w.get(ga, t), w.get(gb, t));
                total += match triple {
                    TripleWeight::Min => wa.min(wb),
                    TripleWeight::Product => wa * wb,
                };
            }
            out[a * k_m + b] = total;
            out[b * k_m + a] = total;
        }
    }
    out
}

pub fn cts_matrix(partitions: &[Partition], decay: f64) -> Result<CtsMatrix> {
    cts_matrix_with(partitions, decay, TripleWeight::Min, TripleNormalization::PerPartition)
}

pub fn cts_matrix_with(
    partitions: &[Partition],
    decay: f64,
    triple: TripleWeight,
    normalization: TripleNormalization,
) -> Result<CtsMatrix> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::param(format!("decay {decay} outside [0, 1]")));
    }
    let w = cluster_jaccard_weights(partitions)?;
    let mut wct: Vec<Vec<f64>> = partitions
        .par_iter()
        .enumerate()
        .map(|(m, p)| triple_weights(&w, m, p.n_clusters(), triple))
        .collect();
    let max_of = |v: &Vec<f64>| v.iter().copied().fold(0.0, f64::max);
    let global = wct.iter().map(max_of).fold(0.0, f64::max);
    for v in &mut wct {
        let top = match normalization {
            TripleNormalization::PerPartition => max_of(v),
            TripleNormalization::Global => global,
        };
        for x in v.iter_mut() {
            *x = if top > 0.0 { *x / top } else { 0.0 };
        }
    }

    let n = partitions[0].len();
    let ids = partitions[0].meter_ids().to_vec();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| {
            (0..n)
                .map(|y| {
                    let mut sum = 0.0;
                    for (p, v) in partitions.iter().zip(&wct) {
                        let (cx, cy) = (p.cluster_of(x), p.cluster_of(y));
                        sum += if cx == cy {
                            1.0
                        } else {
                            decay * v[cx * p.n_clusters() + cy]
                        };
                    }
                    (sum / partitions.len() as f64).min(1.0)
                })
                .collect()
        })
        .collect();
    let m = SquareMatrix::from_rows(ids, &rows)?;
    Ok(CtsMatrix(m))
}

/// Final clusters from `1 - CTS`.
pub fn consensus_partition(cts: &CtsMatrix, n_clusters: usize, linkage: Linkage) -> Result<Partition> {
    cut(&agglomerate(&cts.distance(), linkage), n_clusters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub partitions: Vec<Partition>,
    pub cts: CtsMatrix,
    pub consensus: Partition,
}

/// Ensemble, CTS and consensus in one call.
pub fn run_ensemble(dataset: &FeederDataset, spec: &EnsembleSpec, n_clusters: usize) -> Result<EnsembleOutcome> {
    let partitions = generate_ensemble(dataset, spec)?;
    let cts = cts_matrix_with(&partitions, spec.decay, spec.triple, spec.normalization)?;
    let consensus = consensus_partition(&cts, n_clusters, spec.linkage)?;
    Ok(EnsembleOutcome {
        partitions,
        cts,
        consensus,
    })
}

pub fn write_cts_csv<W: Write>(cts: &CtsMatrix, writer: W) -> Result<()> {
    cts.write_csv(writer)
}
