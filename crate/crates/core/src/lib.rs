//! Four-wave-mixing photon-pair source in microstructure fiber: dispersion
//! and phase matching, a calibrated multimode-thermal photon source,
//! coincidence counting, and deterministic Monte Carlo experiment drivers.

pub mod counting;
pub mod dispersion;
pub mod error;
pub mod harness;
pub mod pairgen;
pub mod units;

pub use counting::{CountsRecord, MetricsRecord, Rate, RecordKind, ZwmValue};
pub use dispersion::{DispersionModel, DispersionTargets, FiberSpec, PumpSpec, Sidebands};
pub use error::{Error, Result};
pub use harness::config::ExperimentConfig;
pub use pairgen::{
    Arm, CalibrationReference, CollectionSpec, DetectionSpec, PulseMeans, PulseOutcome, PulseSampler,
    SourceModel,
};
