//! Command-line front end: configuration, command dispatch and artifact
//! output.
//!
//! Every command renders its artifacts in memory first; files are written
//! only after the whole run succeeded, so a failed run leaves no partial
//! output behind.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::clustering::{default_cluster_count, identify_phases, sweep_parameters, Linkage, SweepGrid};
use crate::correlation::PointSelection;
use crate::dataset::{filter_missing, normalize_voltage, parse_ami_csv, write_ami_csv, CsvSchema, FeederDataset};
use crate::ensemble::{run_ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::pairing::{identify_pairing, write_flags_csv, write_maps_csv, PairingConfig};
use crate::segmentation::{PowerBand, SegmentationConfig};
use crate::simulator::{generate_feeder, FeederSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    PhaseId,
    PairId,
    Sweep,
    Ensemble,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::PhaseId => "phase-id",
            Command::PairId => "pair-id",
            Command::Sweep => "sweep",
            Command::Ensemble => "ensemble",
        }
    }
}

/// Random mislabels added to a simulated feeder.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Injection {
    pub swaps: usize,
    pub moves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Labeled or unlabeled phase identification; `None` follows the data.
    pub labeled: Option<bool>,
    /// `None` selects by feeder size.
    pub n_clusters: Option<usize>,
    pub linkage: Linkage,
    /// `None` correlates over the full series.
    pub band: Option<PowerBand>,
    pub segmentation: SegmentationConfig,
    pub ensemble: Option<EnsembleSpec>,
    pub pairing: PairingConfig,
    pub sweep: Option<SweepGrid>,
    pub schema: CsvSchema,
    pub service_voltage: f64,
    pub max_missing_fraction: Option<f64>,
    pub feeder: Option<FeederSpec>,
    pub inject: Injection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            input: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            labeled: None,
            n_clusters: None,
            linkage: Linkage::Average,
            band: Some(PowerBand {
                p_low: 0.0,
                p_high: 2.0,
                t_dur: 1.0,
            }),
            segmentation: SegmentationConfig::default(),
            ensemble: None,
            pairing: PairingConfig::default(),
            sweep: None,
            schema: CsvSchema::default(),
            service_voltage: crate::dataset::DEFAULT_SERVICE_VOLTAGE,
            max_missing_fraction: None,
            feeder: None,
            inject: Injection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn validate(&self) -> Result<()> {
        if let Some(b) = &self.band {
            b.validate()?;
        }
        if let Some(e) = &self.ensemble {
            e.validate()?;
        }
        if self.n_clusters == Some(0) {
            return Err(Error::param("n_clusters must be at least 1"));
        }
        self.pairing.validate()
    }

    fn selection(&self) -> PointSelection {
        match self.band {
            Some(b) => PointSelection::Band(b, self.segmentation),
            None => PointSelection::AllData,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "meterphase",
    version,
    about = "Phase and transformer pairing identification from AMI data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic feeder with ground truth.
    Simulate,
    /// Identify meter phases (labeled or consensus mode).
    PhaseId,
    /// Flag suspicious transformer-meter pairings.
    PairId,
    /// Accuracy over a grid of band, duration and cluster count.
    Sweep,
    /// Consensus clustering without labels.
    Ensemble,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// AMI CSV input.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Random seed for simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Cluster count; defaults by feeder size.
    #[arg(long, global = true)]
    pub n_clusters: Option<usize>,
    /// Lower power limit of the band, kW.
    #[arg(long, global = true)]
    pub p_low: Option<f64>,
    /// Upper power limit of the band, kW.
    #[arg(long, global = true)]
    pub p_high: Option<f64>,
    /// Minimum time in band, hours.
    #[arg(long, global = true)]
    pub t_dur: Option<f64>,
    /// Ignore recorded phases and run consensus clustering.
    #[arg(long, global = true)]
    pub unlabeled: bool,
}

impl Cli {
    /// Config file with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.command = Some(match self.command {
            CliCommand::Simulate => Command::Simulate,
            CliCommand::PhaseId => Command::PhaseId,
            CliCommand::PairId => Command::PairId,
            CliCommand::Sweep => Command::Sweep,
            CliCommand::Ensemble => Command::Ensemble,
        });
        let c = &self.common;
        if let Some(i) = &c.input {
            cfg.input = Some(i.clone());
        }
        if let Some(o) = &c.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(n) = c.n_clusters {
            cfg.n_clusters = Some(n);
        }
        if c.p_low.is_some() || c.p_high.is_some() || c.t_dur.is_some() {
            let base = cfg.band.unwrap_or(PowerBand {
                p_low: 0.0,
                p_high: 2.0,
                t_dur: 1.0,
            });
            cfg.band = Some(PowerBand {
                p_low: c.p_low.unwrap_or(base.p_low),
                p_high: c.p_high.unwrap_or(base.p_high),
                t_dur: c.t_dur.unwrap_or(base.t_dur),
            });
        }
        if c.unlabeled {
            cfg.labeled = Some(false);
        }
        Ok(cfg)
    }
}

/// Named output file contents.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn add_text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file; on any failure removes what was written.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(Error::io(path, e));
            }
            written.push(path);
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    artifacts: Vec<&'a str>,
    timings_ms: Vec<(&'static str, u128)>,
}

struct Timer {
    laps: Vec<(&'static str, u128)>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            laps: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, name: &'static str) {
        let now = Instant::now();
        self.laps.push((name, (now - self.last).as_millis()));
        self.last = now;
    }
}

fn load_dataset(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<FeederDataset> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::param("no input dataset given (--input)"))?;
    let raw = parse_ami_csv(input, &cfg.schema)?;
    let service: HashMap<String, f64> = raw
        .meters()
        .iter()
        .map(|m| (m.meter_id.clone(), cfg.service_voltage))
        .collect();
    let normalized = normalize_voltage(&raw, &service)?;
    match cfg.max_missing_fraction {
        Some(f) => {
            let (kept, report) = filter_missing(&normalized, f)?;
            artifacts.add("removed_meters.csv", |b| report.write_csv(b))?;
            Ok(kept)
        }
        None => Ok(normalized),
    }
}

fn consensus_outputs(
    dataset: &FeederDataset,
    spec: &EnsembleSpec,
    n_clusters: usize,
    artifacts: &mut Artifacts,
) -> Result<()> {
    let out = run_ensemble(dataset, spec, n_clusters)?;
    artifacts.add("consensus_clusters.csv", |b| out.consensus.write_csv(b))?;
    artifacts.add("cts_matrix.csv", |b| out.cts.write_csv(b))?;
    artifacts.add("ensemble_partitions.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["meter_id".to_string()];
        header.extend((1..=out.partitions.len()).map(|k| format!("member_{k}")));
        w.write_record(&header)?;
        for (i, id) in dataset.meter_ids().iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(out.partitions.iter().map(|p| p.cluster_of(i).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    })
}

/// Runs one command and returns its artifacts without touching the disk.
pub fn execute(cfg: &RunConfig) -> Result<(Artifacts, Vec<(&'static str, u128)>)> {
    cfg.validate()?;
    let command = cfg.command.ok_or_else(|| Error::param("no command given"))?;
    let mut artifacts = Artifacts::default();
    let mut timer = Timer::new();
    match command {
        Command::Simulate => {
            let mut spec = cfg
                .feeder
                .clone()
                .unwrap_or_else(|| FeederSpec::balanced(21, 3, 30, 15));
            if cfg.inject.swaps + cfg.inject.moves > 0 {
                spec.inject_mislabels(cfg.inject.swaps, cfg.inject.moves, cfg.seed)?;
            }
            let sim = generate_feeder(&spec, cfg.seed)?;
            timer.lap("simulate");
            artifacts.add("dataset.csv", |b| write_ami_csv(&sim.dataset, b))?;
            artifacts.add("ground_truth.csv", |b| sim.truth.write_csv(b))?;
            let text = toml::to_string(&spec).map_err(|e| Error::param(format!("spec: {e}")))?;
            artifacts.add_text("feeder_spec.toml", text);
        }
        Command::PhaseId => {
            let dataset = load_dataset(cfg, &mut artifacts)?;
            timer.lap("load");
            let n = cfg.n_clusters.unwrap_or_else(|| default_cluster_count(dataset.len()));
            let labeled = cfg.labeled.unwrap_or_else(|| dataset.has_labels());
            if labeled {
                if !dataset.has_labels() {
                    return Err(Error::param("labeled mode needs recorded phases in the input"));
                }
                let selection = cfg.selection();
                let out = identify_phases(&dataset, &selection, n, cfg.linkage)?;
                timer.lap("cluster");
                artifacts.add("predicted_phases.csv", |b| out.vote.predicted.write_csv(b))?;
                artifacts.add("clusters.csv", |b| out.partition.write_csv(b))?;
                artifacts.add("dendrogram.csv", |b| out.dendrogram.write_csv(b))?;
                artifacts.add("accuracy.csv", |b| out.accuracy.write_csv(b))?;
                artifacts.add_text("accuracy.txt", format!("{}\n", out.accuracy));
            } else {
                let spec = cfg
                    .ensemble
                    .as_ref()
                    .ok_or_else(|| Error::param("unlabeled mode requires ensemble spec"))?;
                consensus_outputs(&dataset, spec, n, &mut artifacts)?;
                timer.lap("ensemble");
            }
        }
        Command::Ensemble => {
            let dataset = load_dataset(cfg, &mut artifacts)?;
            timer.lap("load");
            let n = cfg.n_clusters.unwrap_or_else(|| default_cluster_count(dataset.len()));
            let spec = cfg.ensemble.clone().unwrap_or_else(EnsembleSpec::standard);
            consensus_outputs(&dataset, &spec, n, &mut artifacts)?;
            timer.lap("ensemble");
        }
        Command::Sweep => {
            let dataset = load_dataset(cfg, &mut artifacts)?;
            timer.lap("load");
            let grid = cfg.sweep.clone().unwrap_or_else(SweepGrid::standard);
            let result = sweep_parameters(
                &dataset,
                &dataset.recorded_labels(),
                &grid,
                cfg.linkage,
                &cfg.segmentation,
            )?;
            timer.lap("sweep");
            artifacts.add("sweep.csv", |b| result.write_csv(b))?;
            let best = SweepResultView(&result);
            artifacts.add("sweep_best.csv", |b| best.write_best(b))?;
        }
        Command::PairId => {
            let dataset = load_dataset(cfg, &mut artifacts)?;
            timer.lap("load");
            let report = identify_pairing(&dataset, &cfg.pairing)?;
            timer.lap("pairing");
            artifacts.add("flags.csv", |b| write_flags_csv(&report.flags, b))?;
            artifacts.add("connectivity.csv", |b| write_maps_csv(&report.maps, b))?;
            artifacts.add("seasonal_apcc.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["transformer_id", "season", "apcc"])?;
                for v in &report.seasonal.values {
                    w.write_record([&v.transformer_id, &v.season, &format!("{:.6}", v.apcc)])?;
                }
                w.flush().map_err(csv::Error::from)?;
                Ok(())
            })?;
        }
    }
    Ok((artifacts, timer.laps))
}

struct SweepResultView<'a>(&'a crate::clustering::SweepResult);

impl SweepResultView<'_> {
    fn write_best(&self, b: &mut Vec<u8>) -> Result<()> {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["p_low", "p_high", "t_dur", "n_clusters", "accuracy_pct"])?;
        for c in self.0.best_cells() {
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

/// Executes the command and writes its artifacts plus `manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<Artifacts> {
    let (mut artifacts, timings) = execute(cfg)?;
    let names: Vec<String> = artifacts.names().iter().map(|s| s.to_string()).collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command.map(|c| c.name()).unwrap_or(""),
        config: cfg,
        artifacts: names.iter().map(|s| s.as_str()).collect(),
        timings_ms: timings,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::param(e.to_string()))?;
    artifacts.add_text("manifest.json", json);
    artifacts.write_all(&cfg.out_dir)?;
    Ok(artifacts)
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(j) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = cli.resolve().and_then(|cfg| run(&cfg).map(|a| (cfg, a)));
    match result {
        Ok((cfg, artifacts)) => {
            for name in artifacts.names() {
                log::info!("wrote {}", cfg.out_dir.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_partial_toml() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            n_clusters = 9
            [band]
            p_low = 0.0
            p_high = 1.5
            t_dur = 2.0
            [pairing]
            seasonal_percentile = 25.0
            seasons = { kind = "equal_windows", value = 4 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.band.unwrap().p_high, 1.5);
        assert_eq!(cfg.pairing.seasonal_percentile, 25.0);
        assert_eq!(cfg.pairing.t2_weights, [0.5, 0.5]);
        assert!(RunConfig::from_toml("nonsense = [").is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "meterphase",
            "phase-id",
            "--seed",
            "3",
            "--p-high",
            "1.2",
            "--unlabeled",
        ])
        .unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.command, Some(Command::PhaseId));
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.band.unwrap().p_high, 1.2);
        assert_eq!(cfg.band.unwrap().t_dur, 1.0);
        assert_eq!(cfg.labeled, Some(false));
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig {
            ensemble: Some(EnsembleSpec::standard()),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}
