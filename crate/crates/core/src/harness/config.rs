//! Line-oriented `key = value` experiment configuration.
//!
//! Keys carry their unit in the name (`pump.average_power_mW`). Lists are
//! comma separated, or `start:stop:step` for an evenly spaced axis. `#`
//! starts a comment. Unknown and duplicate keys are rejected.

use crate::dispersion::{DispersionModel, DispersionTargets, FiberSpec, PumpSpec};
use crate::error::{Error, Result};
use crate::pairgen::{Arm, CalibrationReference, CollectionSpec, DetectionSpec, SourceModel};
use crate::units::{KHZ, MHZ, MW, NM, PS, UM};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;

struct KeySpec {
    key: &'static str,
    default: Option<&'static str>,
}

const fn key(key: &'static str, default: &'static str) -> KeySpec {
    KeySpec {
        key,
        default: Some(default),
    }
}

const fn optional(key: &'static str) -> KeySpec {
    KeySpec { key, default: None }
}

/// Every accepted key in canonical order, with its default.
const KEYS: &[KeySpec] = &[
    key("fiber.length_m", "1.8"),
    key("fiber.gamma_per_W_km", "110"),
    key("fiber.zero_dispersion_wavelength_nm", "735.7"),
    key("fiber.mode_diameter_um", "1.2"),
    key("fiber.refractive_index", "1.45"),
    key("pump.wavelength_nm", "735.7"),
    key("pump.bandwidth_nm", "0.1"),
    key("pump.average_power_mW", "1.0"),
    key("pump.repetition_rate_MHz", "80"),
    key("pump.pulse_width_ps", "8"),
    key("collection.signal_wavelength_nm", "688.5"),
    key("collection.idler_wavelength_nm", "789.8"),
    key("collection.bandwidth_nm", "0.7"),
    key("collection.pump_envelope_bandwidth_nm", "0.1"),
    key("collection.mode_count_arm", "idler"),
    key("detection.eta_s", "0.097"),
    key("detection.eta_i", "0.076"),
    key("detection.eta_pair", "0.0074"),
    key("calibration.reference_power_mW", "1.0"),
    key("calibration.coincidence_rate_kHz", "37.6"),
    key("calibration.contrast", "10"),
    key("calibration.pair_ratio_signal", "0.96"),
    key("calibration.pair_ratio_idler", "0.50"),
    key("calibration.matched_signal_nm", "688.5"),
    key("calibration.walkoff_ps", "2.0"),
    key("calibration.dispersion_power_mW", "0.5"),
    optional("dispersion.reference_wavelength_nm"),
    optional("dispersion.beta2_s2_per_m"),
    optional("dispersion.beta3_s3_per_m"),
    optional("dispersion.beta4_s4_per_m"),
    optional("source.kappa"),
    optional("source.raman_signal_per_pulse_per_W"),
    optional("source.raman_idler_per_pulse_per_W"),
    optional("source.modes_signal"),
    optional("source.modes_idler"),
    optional("source.pair_modes"),
    key("sweep.powers_mW", "0.05, 0.2, 0.4, 0.6, 0.8, 1.0"),
    key("scan.power_mW", "0.5"),
    key("scan.offsets_nm", "-2.0:2.0:0.1"),
    key("zwm.powers_mW", "0.05, 0.2, 0.4, 0.6, 0.8, 1.0"),
    key("integration.threshold_mW", "0.4"),
    key("integration.seconds_at_or_above", "30"),
    key("integration.seconds_below", "600"),
    optional("integration.fixed_seconds"),
    key("run.seed", "1"),
    key("run.batch_pulses", "4194304"),
    key("run.workers", "0"),
];

const DISPERSION_KEYS: [&str; 4] = [
    "dispersion.reference_wavelength_nm",
    "dispersion.beta2_s2_per_m",
    "dispersion.beta3_s3_per_m",
    "dispersion.beta4_s4_per_m",
];

const SOURCE_KEYS: [&str; 6] = [
    "source.kappa",
    "source.raman_signal_per_pulse_per_W",
    "source.raman_idler_per_pulse_per_W",
    "source.modes_signal",
    "source.modes_idler",
    "source.pair_modes",
];

fn spec_of(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Unparsed key/value table plus the overrides applied on top of it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    overrides: Vec<(String, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if spec_of(k).is_none() {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if v.is_empty() {
                return Err(Error::Config(format!("line {}: empty value for `{k}`", lineno + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Ok(RawConfig {
            values,
            overrides: Vec::new(),
        })
    }

    /// Applies a `--set key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        self.set(k, v)?;
        self.overrides.push((k.to_string(), v.to_string()));
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if spec_of(key).is_none() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("empty value for `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
    }

    pub fn overrides(&self) -> &[(String, String)] {
        &self.overrides
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| spec_of(key).and_then(|s| s.default))
    }

    fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Every key with its effective value, in canonical order.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for spec in KEYS {
            let Some(value) = self.get(spec.key) else {
                continue;
            };
            let this = spec.key.split('.').next().unwrap_or("");
            if this != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {this}");
                section = this;
            }
            let _ = writeln!(out, "{} = {}", spec.key, value);
        }
        out
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    fn number(&self, key: &str) -> Result<f64> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        parse_number(key, raw)
    }

    fn integer(&self, key: &str) -> Result<u64> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        raw.parse::<u64>()
            .map_err(|_| Error::Config(format!("`{key}`: expected a non-negative integer, got `{raw}`")))
    }

    fn axis(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        let values = parse_axis(key, raw)?;
        if values.is_empty() {
            return Err(Error::Config(format!("`{key}`: axis is empty")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("`{key}`: axis must be strictly increasing")));
        }
        Ok(values)
    }

    fn group_state(&self, keys: &[&str]) -> usize {
        keys.iter().filter(|k| self.is_set(k)).count()
    }
}

fn parse_number(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected a number, got `{raw}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}`: value must be finite")))
    }
}

fn parse_axis(key: &str, raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() == 3 {
        let start = parse_number(key, parts[0])?;
        let stop = parse_number(key, parts[1])?;
        let step = parse_number(key, parts[2])?;
        if step <= 0.0 || stop < start {
            return Err(Error::Config(format!("`{key}`: range needs step > 0 and stop ≥ start")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if n > 100_000 {
            return Err(Error::Config(format!("`{key}`: range has too many points")));
        }
        // snap to the step grid so that 0 is represented exactly
        return Ok((0..n)
            .map(|k| {
                let v = start + k as f64 * step;
                let snapped = (v / step).round() * step;
                if (v - snapped).abs() < 1e-9 * step {
                    (snapped * 1e12).round() / 1e12
                } else {
                    v
                }
            })
            .collect());
    }
    raw.split(',').map(|s| parse_number(key, s)).collect()
}

/// Seconds of integration per point as a function of pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationPolicy {
    pub threshold_power: f64,
    pub seconds_at_or_above: f64,
    pub seconds_below: f64,
    pub fixed_seconds: Option<f64>,
}

impl IntegrationPolicy {
    /// 30 s at or above 0.4 mW, 600 s below.
    pub fn nominal() -> Self {
        IntegrationPolicy {
            threshold_power: 0.4 * MW,
            seconds_at_or_above: 30.0,
            seconds_below: 600.0,
            fixed_seconds: None,
        }
    }

    pub fn fixed(seconds: f64) -> Self {
        IntegrationPolicy {
            fixed_seconds: Some(seconds),
            ..Self::nominal()
        }
    }

    pub fn seconds_for(&self, power: f64) -> f64 {
        if let Some(s) = self.fixed_seconds {
            s
        } else if power >= self.threshold_power * (1.0 - 1e-12) {
            self.seconds_at_or_above
        } else {
            self.seconds_below
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSetup {
    Model(SourceModel),
    Calibrate(CalibrationReference),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispersionSetup {
    Model(DispersionModel),
    Calibrate(DispersionTargets),
}

/// Fully typed experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fiber: FiberSpec,
    pub pump: PumpSpec,
    pub collection: CollectionSpec,
    pub detection: DetectionSpec,
    pub pair_mode_arm: Arm,
    pub calibration: CalibrationReference,
    pub dispersion_targets: DispersionTargets,
    pub source: SourceSetup,
    pub dispersion: DispersionSetup,
    pub sweep_powers: Vec<f64>,
    pub scan_power: f64,
    pub scan_offsets: Vec<f64>,
    pub zwm_powers: Vec<f64>,
    pub integration: IntegrationPolicy,
    pub seed: u64,
    pub batch_pulses: u64,
    pub workers: usize,
    pub raw: RawConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(RawConfig::parse(text)?)
    }

    /// The built-in defaults.
    pub fn nominal() -> Self {
        Self::from_raw(RawConfig::default()).expect("built-in defaults are valid")
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let n = |k: &str| raw.number(k);
        let fiber = FiberSpec {
            length: n("fiber.length_m")?,
            gamma: n("fiber.gamma_per_W_km")? * 1e-3,
            zero_dispersion_wavelength: n("fiber.zero_dispersion_wavelength_nm")? * NM,
            mode_diameter: n("fiber.mode_diameter_um")? * UM,
            refractive_index: n("fiber.refractive_index")?,
        };
        let pump = PumpSpec {
            wavelength: n("pump.wavelength_nm")? * NM,
            bandwidth: n("pump.bandwidth_nm")? * NM,
            average_power: n("pump.average_power_mW")? * MW,
            repetition_rate: n("pump.repetition_rate_MHz")? * MHZ,
            pulse_width: n("pump.pulse_width_ps")? * PS,
        };
        let collection = CollectionSpec {
            signal_wavelength: n("collection.signal_wavelength_nm")? * NM,
            idler_wavelength: n("collection.idler_wavelength_nm")? * NM,
            bandwidth: n("collection.bandwidth_nm")? * NM,
            pump_envelope_bandwidth: n("collection.pump_envelope_bandwidth_nm")? * NM,
        };
        let pair_mode_arm: Arm = raw.get("collection.mode_count_arm").unwrap_or("idler").parse()?;
        let detection = DetectionSpec {
            eta_s: n("detection.eta_s")?,
            eta_i: n("detection.eta_i")?,
            eta_pair: n("detection.eta_pair")?,
        };
        let calibration = CalibrationReference {
            power: n("calibration.reference_power_mW")? * MW,
            coincidence_rate: n("calibration.coincidence_rate_kHz")? * KHZ,
            contrast: n("calibration.contrast")?,
            pair_ratio_signal: n("calibration.pair_ratio_signal")?,
            pair_ratio_idler: n("calibration.pair_ratio_idler")?,
        };
        let dispersion_targets = DispersionTargets {
            matched_signal: n("calibration.matched_signal_nm")? * NM,
            walkoff: n("calibration.walkoff_ps")? * PS,
            power: n("calibration.dispersion_power_mW")? * MW,
        };

        let dispersion = match raw.group_state(&DISPERSION_KEYS[1..]) {
            0 if !raw.is_set(DISPERSION_KEYS[0]) => DispersionSetup::Calibrate(dispersion_targets),
            _ if raw.is_set("dispersion.beta2_s2_per_m") && raw.is_set("dispersion.beta4_s4_per_m") => {
                let reference = if raw.is_set(DISPERSION_KEYS[0]) {
                    n(DISPERSION_KEYS[0])? * NM
                } else {
                    pump.wavelength
                };
                let beta3 = if raw.is_set("dispersion.beta3_s3_per_m") {
                    n("dispersion.beta3_s3_per_m")?
                } else {
                    0.0
                };
                DispersionSetup::Model(
                    DispersionModel::new(
                        reference,
                        n("dispersion.beta2_s2_per_m")?,
                        beta3,
                        n("dispersion.beta4_s4_per_m")?,
                    )
                    .map_err(config_error)?,
                )
            }
            _ => {
                return Err(Error::Config(
                    "dispersion section needs both beta2_s2_per_m and beta4_s4_per_m".into(),
                ))
            }
        };
        let source = match raw.group_state(&SOURCE_KEYS) {
            0 => SourceSetup::Calibrate(calibration),
            6 => {
                let model = SourceModel {
                    kappa: n("source.kappa")?,
                    raman_signal: n("source.raman_signal_per_pulse_per_W")?,
                    raman_idler: n("source.raman_idler_per_pulse_per_W")?,
                    modes_signal: n("source.modes_signal")?,
                    modes_idler: n("source.modes_idler")?,
                    pair_modes: n("source.pair_modes")?,
                };
                model.validate().map_err(config_error)?;
                SourceSetup::Model(model)
            }
            _ => {
                return Err(Error::Config(format!(
                    "source section must set all of {} or none",
                    SOURCE_KEYS.join(", ")
                )))
            }
        };

        let to_watts = |v: Vec<f64>| v.into_iter().map(|p| p * MW).collect::<Vec<_>>();
        let sweep_powers = to_watts(raw.axis("sweep.powers_mW")?);
        let zwm_powers = to_watts(raw.axis("zwm.powers_mW")?);
        let scan_offsets = raw.axis("scan.offsets_nm")?.into_iter().map(|o| o * NM).collect();
        let integration = IntegrationPolicy {
            threshold_power: n("integration.threshold_mW")? * MW,
            seconds_at_or_above: n("integration.seconds_at_or_above")?,
            seconds_below: n("integration.seconds_below")?,
            fixed_seconds: if raw.is_set("integration.fixed_seconds") {
                Some(n("integration.fixed_seconds")?)
            } else {
                None
            },
        };
        let cfg = ExperimentConfig {
            fiber,
            pump,
            collection,
            detection,
            pair_mode_arm,
            calibration,
            dispersion_targets,
            source,
            dispersion,
            sweep_powers,
            scan_power: n("scan.power_mW")? * MW,
            scan_offsets,
            zwm_powers,
            integration,
            seed: raw.integer("run.seed")?,
            batch_pulses: raw.integer("run.batch_pulses")?,
            workers: raw.integer("run.workers")? as usize,
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.fiber.validate().map_err(config_error)?;
        self.pump.validate().map_err(config_error)?;
        self.collection.validate(&self.pump).map_err(config_error)?;
        self.detection.validate().map_err(config_error)?;
        let i = &self.integration;
        let times = [Some(i.seconds_at_or_above), Some(i.seconds_below), i.fixed_seconds];
        if times.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("integration seconds must be positive".into()));
        }
        if self.batch_pulses == 0 {
            return Err(Error::Config("run.batch_pulses must be at least 1".into()));
        }
        let powers = self.sweep_powers.iter().chain(&self.zwm_powers).chain([&self.scan_power]);
        for p in powers {
            if !(*p > 0.0) {
                return Err(Error::Config(format!("pump powers must be positive, got {p} W")));
            }
        }
        Ok(())
    }

    /// Reapplies overrides and re-types the configuration.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let mut raw = self.raw.clone();
        raw.apply_override(assignment)?;
        Self::from_raw(raw)
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }

    /// Canonical text with the given models written into their sections.
    pub fn derived_text(&self, dispersion: &DispersionModel, source: &SourceModel) -> String {
        let mut raw = self.raw.clone();
        let entries = [
            (DISPERSION_KEYS[0], dispersion.reference_wavelength / NM),
            (DISPERSION_KEYS[1], dispersion.beta2),
            (DISPERSION_KEYS[2], dispersion.beta3),
            (DISPERSION_KEYS[3], dispersion.beta4),
            (SOURCE_KEYS[0], source.kappa),
            (SOURCE_KEYS[1], source.raman_signal),
            (SOURCE_KEYS[2], source.raman_idler),
            (SOURCE_KEYS[3], source.modes_signal),
            (SOURCE_KEYS[4], source.modes_idler),
            (SOURCE_KEYS[5], source.pair_modes),
        ];
        for (k, v) in entries {
            raw.set(k, &format_number(v)).expect("known key");
        }
        if dispersion.reference_wavelength == self.pump.wavelength {
            raw.set(DISPERSION_KEYS[0], self.raw.get("pump.wavelength_nm").unwrap_or("735.7"))
                .expect("known key");
        }
        raw.canonical_text()
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Config(msg),
        other => other,
    }
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}
