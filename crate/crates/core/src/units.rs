//! Physical constants and the handful of unit conversions used at I/O
//! boundaries. Everything inside the crate is SI: meters, seconds, watts,
//! rad/s.

use std::f64::consts::PI;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const NM: f64 = 1e-9;
pub const UM: f64 = 1e-6;
pub const PS: f64 = 1e-12;
pub const MW: f64 = 1e-3;
pub const UW: f64 = 1e-6;
pub const MHZ: f64 = 1e6;
pub const KHZ: f64 = 1e3;

/// Angular frequency of light with vacuum wavelength `wavelength`.
#[inline]
pub fn angular_frequency(wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength
}

#[inline]
pub fn wavelength_of(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega
}

/// Optical bandwidth in Hz of a window `bandwidth` wide centered at `wavelength`.
#[inline]
pub fn frequency_bandwidth(bandwidth: f64, wavelength: f64) -> f64 {
    SPEED_OF_LIGHT * bandwidth / (wavelength * wavelength)
}
