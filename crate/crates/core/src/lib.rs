//! Phase identification and transformer-meter pairing checks for smart meter
//! (AMI) data.
//!
//! The pipeline works on aligned power/voltage series per meter:
//!
//! * [`dataset`] ingests and normalizes AMI readings,
//! * [`segmentation`] selects the voltage runs where a meter pair stays inside
//!   a power band long enough,
//! * [`correlation`] turns those runs into Pearson correlation and
//!   correlation-distance matrices,
//! * [`clustering`] and [`ensemble`] group meters into phases, with or without
//!   recorded labels,
//! * [`pairing`] flags meters that look attached to the wrong transformer,
//! * [`simulator`] generates feeders with known ground truth.

pub mod cli;
pub mod clustering;
pub mod correlation;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod numeric;
pub mod pairing;
pub mod segmentation;
pub mod simulator;

pub use clustering::{Dendrogram, Linkage, Partition};
pub use correlation::{DistanceMatrix, PccMatrix};
pub use dataset::{FeederDataset, MeterSeries, Phase, PhaseLabeling, TimeGrid};
pub use ensemble::{CtsMatrix, EnsembleSpec};
pub use error::{Error, Result};
pub use pairing::{FlagRecord, PairingConfig};
pub use segmentation::{PowerBand, SegmentSet};
