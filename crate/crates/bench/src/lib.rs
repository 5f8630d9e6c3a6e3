//! Fixtures shared by the benchmarks.

use fwm_core::harness::config::ExperimentConfig;
use fwm_core::harness::experiments::Calibrated;

/// The default configuration, calibrated.
pub fn calibrated() -> Calibrated {
    Calibrated::from_config(&ExperimentConfig::nominal()).expect("default configuration calibrates")
}
