//! Python bindings for the `meterphase` toolkit.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use meterphase::clustering::{self, Linkage};
use meterphase::correlation::{self, DistanceMatrix, PointSelection};
use meterphase::dataset::{self, CsvSchema, FeederDataset};
use meterphase::ensemble::{self, EnsembleSpec};
use meterphase::pairing::{self, PairingConfig, Seasons};
use meterphase::segmentation::PowerBand;
use meterphase::simulator::{self, CircuitSpec, ConnectionType, FeederSpec};

fn err(e: meterphase::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn linkage(name: &str) -> PyResult<Linkage> {
    name.parse().map_err(err)
}

fn selection(p_low: f64, p_high: Option<f64>, t_dur: f64) -> PyResult<PointSelection> {
    Ok(match p_high {
        Some(h) => PointSelection::Band(PowerBand::new(p_low, h, t_dur).map_err(err)?, Default::default()),
        None => PointSelection::AllData,
    })
}

/// Aligned AMI readings of one feeder.
#[pyclass(name = "Dataset", module = "meterphase", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: FeederDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads an AMI CSV and converts voltages to per-unit of 120 V.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let raw = dataset::parse_ami_csv(path, &CsvSchema::default()).map_err(err)?;
        let inner = dataset::normalize_voltage(&raw, &Default::default()).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        dataset::write_ami_csv(&self.inner, file).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn meter_ids(&self) -> Vec<String> {
        self.inner.meter_ids()
    }

    fn recorded_phases(&self) -> BTreeMap<String, String> {
        self.inner
            .recorded_labels()
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }

    fn transformers(&self) -> BTreeMap<String, String> {
        self.inner
            .meters()
            .iter()
            .filter_map(|m| m.transformer_id.clone().map(|t| (m.meter_id.clone(), t)))
            .collect()
    }

    fn power(&self, meter_id: &str) -> PyResult<Vec<f64>> {
        let i = self.index(meter_id)?;
        Ok(self.inner.meter(i).power_kw.clone())
    }

    fn voltage(&self, meter_id: &str) -> PyResult<Vec<f64>> {
        let i = self.index(meter_id)?;
        Ok(self.inner.meter(i).voltage.clone())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(meters={}, steps={})", self.inner.len(), self.inner.steps())
    }
}

impl PyDataset {
    fn index(&self, meter_id: &str) -> PyResult<usize> {
        self.inner
            .index_of(meter_id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown meter `{meter_id}`")))
    }
}

/// Simulated feeder and its ground truth.
#[pyclass(name = "SimulatedFeeder", module = "meterphase", get_all)]
struct PySimulatedFeeder {
    dataset: PyDataset,
    /// meter id → phase as wired
    phases: BTreeMap<String, String>,
    /// meter id → transformer as wired
    transformers: BTreeMap<String, String>,
    /// meter ids whose recorded transformer is wrong
    mislabeled: Vec<String>,
}

#[pyfunction]
#[pyo3(signature = (n_transformers, meters_per_transformer, days, interval_minutes=15, seed=0, swaps=0, moves=0))]
fn simulate_feeder(
    n_transformers: usize,
    meters_per_transformer: usize,
    days: u32,
    interval_minutes: u32,
    seed: u64,
    swaps: usize,
    moves: usize,
) -> PyResult<PySimulatedFeeder> {
    let mut spec = FeederSpec::balanced(n_transformers, meters_per_transformer, days, interval_minutes);
    if swaps + moves > 0 {
        spec.inject_mislabels(swaps, moves, seed).map_err(err)?;
    }
    let sim = simulator::generate_feeder(&spec, seed).map_err(err)?;
    Ok(PySimulatedFeeder {
        phases: sim
            .truth
            .phases
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect(),
        transformers: sim.truth.transformers.clone(),
        mislabeled: sim.truth.mislabels.iter().map(|m| m.meter.clone()).collect(),
        dataset: PyDataset { inner: sim.dataset },
    })
}

/// Pairwise voltage PCC; `p_high=None` uses the full series.
#[pyfunction]
#[pyo3(signature = (dataset, p_low=0.0, p_high=None, t_dur=1.0))]
fn pcc_matrix(dataset: &PyDataset, p_low: f64, p_high: Option<f64>, t_dur: f64) -> PyResult<Vec<Vec<f64>>> {
    let sel = selection(p_low, p_high, t_dur)?;
    Ok(correlation::pcc_matrix_with(&dataset.inner, &sel)
        .map_err(err)?
        .matrix
        .to_rows())
}

/// Agglomerative clustering of a distance matrix cut into `n_clusters`.
#[pyfunction]
#[pyo3(signature = (distance, n_clusters, linkage="average"))]
fn cluster(distance: Vec<Vec<f64>>, n_clusters: usize, linkage: &str) -> PyResult<Vec<usize>> {
    let ids = (0..distance.len()).map(|i| i.to_string()).collect();
    let d = DistanceMatrix::from_rows(ids, &distance).map_err(err)?;
    let tree = clustering::agglomerate(&d, self::linkage(linkage)?);
    Ok(clustering::cut(&tree, n_clusters).map_err(err)?.assignments().to_vec())
}

#[pyclass(name = "PhaseResult", module = "meterphase", get_all)]
struct PyPhaseResult {
    predicted: BTreeMap<String, String>,
    clusters: Vec<usize>,
    correct: usize,
    total: usize,
    /// Accuracy truncated to one decimal.
    accuracy: f64,
}

/// Labeled-mode phase identification with majority vote.
#[pyfunction]
#[pyo3(signature = (dataset, p_low=0.0, p_high=Some(2.0), t_dur=1.0, n_clusters=None, linkage="average"))]
fn identify_phases(
    dataset: &PyDataset,
    p_low: f64,
    p_high: Option<f64>,
    t_dur: f64,
    n_clusters: Option<usize>,
    linkage: &str,
) -> PyResult<PyPhaseResult> {
    let sel = selection(p_low, p_high, t_dur)?;
    let n = n_clusters.unwrap_or_else(|| clustering::default_cluster_count(dataset.inner.len()));
    let out = clustering::identify_phases(&dataset.inner, &sel, n, self::linkage(linkage)?).map_err(err)?;
    Ok(PyPhaseResult {
        predicted: out
            .vote
            .predicted
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect(),
        clusters: out.partition.assignments().to_vec(),
        correct: out.accuracy.correct,
        total: out.accuracy.total,
        accuracy: out.accuracy.percent_one_decimal(),
    })
}

/// Connected-triple similarity of an ensemble given as label lists.
#[pyfunction]
#[pyo3(signature = (partitions, decay=0.8))]
fn cts_matrix(partitions: Vec<Vec<usize>>, decay: f64) -> PyResult<Vec<Vec<f64>>> {
    let n = partitions.first().map_or(0, |p| p.len());
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let parts = partitions
        .iter()
        .map(|l| clustering::Partition::from_labels(ids.clone(), l))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Ok(ensemble::cts_matrix(&parts, decay).map_err(err)?.to_rows())
}

/// Label-free consensus clusters from the standard band grid with
/// `member_clusters` clusters per member.
#[pyfunction]
#[pyo3(signature = (dataset, n_clusters=None, decay=0.8, member_clusters=30))]
fn consensus_clusters(
    dataset: &PyDataset,
    n_clusters: Option<usize>,
    decay: f64,
    member_clusters: usize,
) -> PyResult<Vec<usize>> {
    let mut spec = EnsembleSpec::grid(0.0, &[0.6, 0.7, 0.8, 0.9, 1.0], &[0.5, 1.0], member_clusters).map_err(err)?;
    spec.decay = decay;
    let n = n_clusters.unwrap_or_else(|| clustering::default_cluster_count(dataset.inner.len()));
    let out = ensemble::run_ensemble(&dataset.inner, &spec, n).map_err(err)?;
    Ok(out.consensus.assignments().to_vec())
}

#[pyclass(name = "Flag", module = "meterphase", get_all)]
struct PyFlag {
    meter_id: String,
    original_transformer: String,
    identified_transformer: String,
    stage: String,
    within: f64,
    cross: f64,
    seasonal_retained: bool,
    stage2_retained: bool,
}

#[pymethods]
impl PyFlag {
    fn __repr__(&self) -> String {
        format!(
            "Flag({} {} -> {}, {})",
            self.meter_id, self.original_transformer, self.identified_transformer, self.stage
        )
    }
}

/// Two-stage transformer pairing check. `seasons` splits the span into that
/// many equal windows; `None` uses calendar quarters.
#[pyfunction]
#[pyo3(signature = (dataset, percentile=20.0, seasons=None))]
fn pairing_flags(dataset: &PyDataset, percentile: f64, seasons: Option<usize>) -> PyResult<Vec<PyFlag>> {
    let config = PairingConfig {
        seasonal_percentile: percentile,
        seasons: seasons.map_or(Seasons::CalendarQuarters, Seasons::EqualWindows),
        ..PairingConfig::default()
    };
    let report = pairing::identify_pairing(&dataset.inner, &config).map_err(err)?;
    Ok(report
        .flags
        .into_iter()
        .map(|f| PyFlag {
            meter_id: f.meter_id,
            original_transformer: f.original_transformer,
            identified_transformer: f.identified_transformer,
            stage: f.stage.to_string(),
            within: f.within,
            cross: f.cross,
            seasonal_retained: f.seasonal_retained,
            stage2_retained: f.stage2_retained,
        })
        .collect())
}

fn circuit(connection: &str, r: f64, r_i: f64, r_j: f64, half_width: f64) -> PyResult<CircuitSpec> {
    let connection = match connection {
        "type1" => ConnectionType::Type1Parallel,
        "type2" => ConnectionType::Type2Partial,
        "type3" => ConnectionType::Type3Series,
        other => return Err(PyValueError::new_err(format!("unknown connection `{other}`"))),
    };
    Ok(CircuitSpec {
        connection,
        r,
        r_i,
        r_j,
        vt_half_width: half_width,
        ..CircuitSpec::default()
    })
}

/// Meter voltages (V) of a secondary pair; powers in kW.
#[pyfunction]
#[pyo3(signature = (v_t, p_i, p_j, connection="type1", r=0.01, r_i=0.05, r_j=0.05))]
fn solve_secondary(v_t: f64, p_i: f64, p_j: f64, connection: &str, r: f64, r_i: f64, r_j: f64) -> PyResult<(f64, f64)> {
    let spec = circuit(connection, r, r_i, r_j, 0.0)?;
    simulator::solve_secondary(v_t, p_i, p_j, &spec).map_err(err)
}

/// PCC of the two meter voltages per load range `(low_kw, high_kw)`.
#[pyfunction]
#[pyo3(signature = (bands, samples=10_000, seed=0, half_width=0.2, connection="type1"))]
fn monte_carlo_pcc(
    bands: Vec<(f64, f64)>,
    samples: usize,
    seed: u64,
    half_width: f64,
    connection: &str,
) -> PyResult<Vec<f64>> {
    let spec = circuit(connection, 0.01, 0.05, 0.05, half_width)?;
    simulator::monte_carlo_pcc(&spec, &bands, samples, seed).map_err(err)
}

/// Percentage of correct labels truncated to one decimal.
#[pyfunction]
fn accuracy_percent(correct: usize, total: usize) -> f64 {
    clustering::AccuracyReport::from_counts(correct, total).percent_one_decimal()
}

#[pymodule]
#[pyo3(name = "meterphase")]
fn meterphase_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySimulatedFeeder>()?;
    m.add_class::<PyPhaseResult>()?;
    m.add_class::<PyFlag>()?;
    m.add_function(wrap_pyfunction!(simulate_feeder, m)?)?;
    m.add_function(wrap_pyfunction!(pcc_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(identify_phases, m)?)?;
    m.add_function(wrap_pyfunction!(cts_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(pairing_flags, m)?)?;
    m.add_function(wrap_pyfunction!(solve_secondary, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_pcc, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_percent, m)?)?;
    Ok(())
}
