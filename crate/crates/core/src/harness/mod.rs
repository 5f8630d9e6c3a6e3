//! Experiment drivers, configuration, fitting and the batch engine.

pub mod config;
pub mod engine;
pub mod experiments;
pub mod fit;
pub mod output;
pub mod selftest;
