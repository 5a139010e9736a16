//! Shallow sigmoid networks trained by KPI-driven backpropagation or a
//! variant particle swarm, plus the data handling and experiment protocols
//! around them.

pub mod dataio;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pdbp;
pub mod snn;
pub mod training;
pub mod vpso;

pub use dataio::{Dataset, Manifest};
pub use error::{Error, Result};
pub use harness::{Experiment, ExperimentSpec, Protocol};
pub use metrics::{Driver, Kpi, KpiReport};
pub use pdbp::{train_pdbp, PdbpConfig};
pub use snn::SnnModel;
pub use training::{Algorithm, TrainedResult};
pub use vpso::{optimize_vpso, VpsoConfig};
