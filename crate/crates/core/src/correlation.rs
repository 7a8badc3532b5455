//! Pearson correlation over selected segments and correlation distance.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{is_missing, FeederDataset, MeterSeries};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::segmentation::{select_segments_with, PowerBand, SegmentSet, SegmentationConfig};

/// Pearson correlation of two equal-length sequences.
///
/// Pairs where either value is missing (`NaN`) are dropped first. Sums are
/// compensated, means are taken over the retained points.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::param(format!(
            "sequences differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| !is_missing(**a) && !is_missing(**b))
        .map(|(a, b)| (*a, *b))
        .unzip();
    pcc_complete(&xs, &ys)
}

fn pcc_complete(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(n));
    }
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(Error::UndefinedCorrelation);
    }
    let mean_x = x.iter().copied().collect::<CompensatedSum>().total() / n as f64;
    let mean_y = y.iter().copied().collect::<CompensatedSum>().total() / n as f64;
    let mut sxy = CompensatedSum::new();
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let denom = (sxx.total() * syy.total()).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy.total() / denom).clamp(-1.0, 1.0))
}

/// PCC of two voltage series restricted to the runs of `segments`.
///
/// Runs are concatenated and a single coefficient is computed, with means
/// over all selected points.
pub fn pcc_over_segments(v_i: &[f64], v_j: &[f64], segments: &SegmentSet) -> Result<f64> {
    if v_i.len() != v_j.len() {
        return Err(Error::GridMismatch);
    }
    let mut xs = Vec::with_capacity(segments.total_points);
    let mut ys = Vec::with_capacity(segments.total_points);
    for t in segments.indices() {
        let (a, b) = (v_i[t], v_j[t]);
        if !is_missing(a) && !is_missing(b) {
            xs.push(a);
            ys.push(b);
        }
    }
    pcc_complete(&xs, &ys)
}

/// Symmetric N×N matrix with meter ids, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareMatrix {
    meter_ids: Vec<String>,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub(crate) fn filled(meter_ids: Vec<String>, diagonal: f64, off: f64) -> Self {
        let n = meter_ids.len();
        let mut values = vec![off; n * n];
        for i in 0..n {
            values[i * n + i] = diagonal;
        }
        Self { meter_ids, values }
    }

    pub(crate) fn from_rows(meter_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = meter_ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::param(format!("matrix must be {n}x{n}")));
        }
        Ok(Self {
            meter_ids,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.meter_ids.len()
    }

    pub fn meter_ids(&self) -> &[String] {
        &self.meter_ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub(crate) fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n();
        self.values[i * n + j] = v;
        self.values[j * n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Dense CSV with a meter-id header row and first column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::from("meter_id")];
        header.extend(self.meter_ids.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.meter_ids[i].clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pairwise voltage correlations; diagonal exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PccMatrix(SquareMatrix);

/// Correlation distance `1 - |PCC|`; diagonal exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix(SquareMatrix);

impl std::ops::Deref for PccMatrix {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

impl std::ops::Deref for DistanceMatrix {
    type Target = SquareMatrix;
    fn deref(&self) -> &SquareMatrix {
        &self.0
    }
}

pub(crate) fn check_symmetric(m: &SquareMatrix, diag: f64, range: (f64, f64)) -> Result<()> {
    let n = m.n();
    for i in 0..n {
        if m.get(i, i) != diag {
            return Err(Error::param(format!("diagonal entry {i} must be {diag}")));
        }
        for j in 0..n {
            let v = m.get(i, j);
            if !(v >= range.0 && v <= range.1) {
                return Err(Error::param(format!(
                    "entry ({i},{j}) = {v} outside [{}, {}]",
                    range.0, range.1
                )));
            }
            if v != m.get(j, i) {
                return Err(Error::param(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

impl PccMatrix {
    pub fn from_rows(meter_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = SquareMatrix::from_rows(meter_ids, rows)?;
        check_symmetric(&m, 1.0, (-1.0, 1.0))?;
        Ok(Self(m))
    }
}

impl DistanceMatrix {
    pub fn from_rows(meter_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = SquareMatrix::from_rows(meter_ids, rows)?;
        check_symmetric(&m, 0.0, (0.0, f64::INFINITY))?;
        Ok(Self(m))
    }

    /// Builds a distance matrix from any symmetric similarity in [0, 1]
    /// as `1 - similarity`.
    pub(crate) fn from_similarity(similarity: &SquareMatrix) -> Self {
        let mut m = SquareMatrix::filled(similarity.meter_ids.clone(), 0.0, 0.0);
        let n = m.n();
        for i in 0..n {
            for j in i + 1..n {
                m.set_pair(i, j, 1.0 - similarity.get(i, j));
            }
        }
        Self(m)
    }
}

/// Pair whose correlation could not be computed and was recorded as 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairWarning {
    pub meter_i: String,
    pub meter_j: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PccReport {
    pub matrix: PccMatrix,
    pub warnings: Vec<PairWarning>,
}

/// How meter pairs pick the points they correlate over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointSelection {
    /// Every jointly present point.
    AllData,
    /// Power-band segmentation.
    Band(PowerBand, SegmentationConfig),
}

/// Segment points for a pair under a selection rule.
pub fn pair_segments(mi: &MeterSeries, mj: &MeterSeries, selection: &PointSelection) -> Result<SegmentSet> {
    match selection {
        PointSelection::AllData => {
            if mi.grid != mj.grid {
                return Err(Error::GridMismatch);
            }
            Ok(SegmentSet::full(mi.len()))
        }
        PointSelection::Band(band, config) => select_segments_with(mi, mj, band, config),
    }
}

/// Correlation of one pair under a selection rule.
pub fn pair_pcc(mi: &MeterSeries, mj: &MeterSeries, selection: &PointSelection) -> Result<f64> {
    let seg = pair_segments(mi, mj, selection)?;
    pcc_over_segments(&mi.voltage, &mj.voltage, &seg)
}

/// PCC matrix with band segmentation per pair (default segmentation config).
pub fn pcc_matrix(dataset: &FeederDataset, band: &PowerBand) -> Result<PccReport> {
    band.validate()?;
    pcc_matrix_with(dataset, &PointSelection::Band(*band, SegmentationConfig::default()))
}

/// PCC matrix over the whole series (no segmentation).
pub fn pcc_matrix_all_data(dataset: &FeederDataset) -> PccReport {
    pcc_matrix_with(dataset, &PointSelection::AllData).expect("all-data selection cannot fail")
}

/// PCC matrix for any selection rule. Pairs whose correlation is undefined
/// are stored as 0 and listed in the warnings.
pub fn pcc_matrix_with(dataset: &FeederDataset, selection: &PointSelection) -> Result<PccReport> {
    if let PointSelection::Band(band, _) = selection {
        band.validate()?;
    }
    let n = dataset.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<(usize, usize, std::result::Result<f64, String>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let r = pair_pcc(dataset.meter(i), dataset.meter(j), selection).map_err(|e| e.to_string());
            (i, j, r)
        })
        .collect();

    let mut m = SquareMatrix::filled(dataset.meter_ids(), 1.0, 0.0);
    let mut warnings = Vec::new();
    for (i, j, r) in results {
        match r {
            Ok(v) => m.set_pair(i, j, v),
            Err(reason) => {
                m.set_pair(i, j, 0.0);
                warnings.push(PairWarning {
                    meter_i: dataset.meter(i).meter_id.clone(),
                    meter_j: dataset.meter(j).meter_id.clone(),
                    reason,
                });
            }
        }
    }
    Ok(PccReport {
        matrix: PccMatrix(m),
        warnings,
    })
}

/// Correlation distance `1 - |PCC|`.
pub fn distance_matrix(pcc: &PccMatrix) -> DistanceMatrix {
    let mut m = SquareMatrix::filled(pcc.meter_ids.clone(), 0.0, 0.0);
    let n = m.n();
    for i in 0..n {
        for j in i + 1..n {
            m.set_pair(i, j, 1.0 - pcc.get(i, j).abs());
        }
    }
    DistanceMatrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_timestamp, TimeGrid, MISSING};
    use proptest::prelude::*;

    #[test]
    fn self_and_anti_correlation() {
        let x = [1.0, 2.0, 3.5, 2.2, 0.1];
        assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn hand_evaluated_value() {
        // means 2.5 and 2.75; sxy = 6.5, sxx = 5, syy = 8.75
        let r = pcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - 6.5 / 43.75f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.98270).abs() < 1e-5, "{r}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(matches!(pcc(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData(2))));
        assert!(matches!(
            pcc(&[1.0, MISSING, 3.0, 4.0], &[1.0, 2.0, MISSING, 4.0]),
            Err(Error::InsufficientData(2))
        ));
        assert!(pcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_from_pcc() {
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string(), "d".to_string()];
        let p = PccMatrix::from_rows(
            ids,
            &[
                vec![1.0, 1.0, -0.8, 0.0],
                vec![1.0, 1.0, 0.0, 0.0],
                vec![-0.8, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        let d = distance_matrix(&p);
        assert_eq!(d.get(0, 1), 0.0);
        assert!((d.get(0, 2) - 0.2).abs() < 1e-15);
        assert_eq!(d.get(0, 3), 1.0);
        assert_eq!(d.get(2, 2), 0.0);
    }

    fn meter(id: &str, power: Vec<f64>, voltage: Vec<f64>) -> MeterSeries {
        let grid = TimeGrid::new(parse_timestamp("2024-01-01T00:00").unwrap(), 15, power.len()).unwrap();
        MeterSeries::new(id, grid, power, voltage).unwrap()
    }

    #[test]
    fn matrix_shape_and_identical_series() {
        let v = vec![1.0, 1.01, 0.99, 1.02, 1.0, 0.98];
        let w = vec![1.0, 0.97, 1.01, 0.99, 1.03, 1.0];
        let ds = FeederDataset::new(
            "f",
            vec![
                meter("a", vec![0.5; 6], v.clone()),
                meter("b", vec![0.5; 6], v),
                meter("c", vec![0.5; 6], w),
            ],
        )
        .unwrap();
        let report = pcc_matrix(&ds, &PowerBand::new(0.0, 2.0, 0.0).unwrap()).unwrap();
        let m = &report.matrix;
        assert_eq!(m.n(), 3);
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn constant_pair_is_recorded_as_zero_with_warning() {
        let ds = FeederDataset::new(
            "f",
            vec![
                meter("a", vec![0.5; 5], vec![1.0; 5]),
                meter("b", vec![0.5; 5], vec![1.0, 1.1, 0.9, 1.0, 1.2]),
            ],
        )
        .unwrap();
        let report = pcc_matrix_all_data(&ds);
        assert_eq!(report.matrix.get(0, 1), 0.0);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(distance_matrix(&report.matrix).get(0, 1), 1.0);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            x in prop::collection::vec(-10.0..10.0f64, 5..60),
            a in 0.01..100.0f64, b in -50.0..50.0f64,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| v.sin() + k as f64 * 0.1).collect();
            if let (Ok(r), Ok(r2)) = (pcc(&x, &y), pcc(&x.iter().map(|v| a * v + b).collect::<Vec<_>>(), &y)) {
                prop_assert!((r - r2).abs() < 1e-12);
                prop_assert!(r.abs() <= 1.0);
            }
        }
    }
}
