//! Experiment drivers: calibration, power sweep, spectral scan and the
//! Zou-Wang-Mandel test. Every row carries the analytic expectation next
//! to the Monte Carlo estimate.

use super::config::{DispersionSetup, ExperimentConfig, SourceSetup};
use super::engine::{scenario_id, simulate, BatchPlan, Measurement};
use super::fit::{fit_gaussian, fit_power_law, GaussianFit, Point, PowerLawFit};
use crate::counting::{
    expected_metrics, expected_self_metrics, to_metrics, zwm_v, MetricsRecord, ZwmValue,
};
use crate::dispersion::{
    calibrate_dispersion, group_delay_walkoff, signal_shift_per_power, solve_phase_matched_signal,
    DispersionModel, Sidebands,
};
use crate::error::{Error, Result};
use crate::pairgen::{
    analytic_rates, analytic_self_rates, calibrate_source, spectral_weights, Arm, PulseMeans,
    PulseSampler, SourceCalibration, SourceModel, Target, Thermal,
};
use crate::units::{MW, NM};
use serde::Serialize;

/// Lower edge of the power range used for the singles power-law fits.
pub const POWER_LAW_MIN_POWER: f64 = 0.4 * MW;

/// A configuration with both models resolved.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub config: ExperimentConfig,
    pub dispersion: DispersionModel,
    pub source: SourceModel,
    /// Present when the source was inverted from calibration references.
    pub source_calibration: Option<SourceCalibration>,
}

impl Calibrated {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let dispersion = match &config.dispersion {
            DispersionSetup::Model(m) => *m,
            DispersionSetup::Calibrate(t) => calibrate_dispersion(&config.pump, &config.fiber, t)?,
        };
        let (source, source_calibration) = match &config.source {
            SourceSetup::Model(m) => (*m, None),
            SourceSetup::Calibrate(reference) => {
                let cal = calibrate_source(
                    reference,
                    &config.detection,
                    &config.pump,
                    &config.fiber,
                    &config.collection,
                    config.pair_mode_arm,
                )?;
                (cal.model, Some(cal))
            }
        };
        Ok(Calibrated {
            config: config.clone(),
            dispersion,
            source,
            source_calibration,
        })
    }

    /// The same setup with pair generation switched off.
    pub fn without_pairs(&self) -> Self {
        Calibrated {
            source: self.source.without_pairs(),
            source_calibration: None,
            ..self.clone()
        }
    }

    pub fn means(&self, power: f64) -> PulseMeans {
        self.source.means(power, &self.config.fiber, &self.config.pump)
    }

    pub fn repetition_rate(&self) -> f64 {
        self.config.pump.repetition_rate
    }

    pub fn analytic_cross(&self, power: f64, seconds: f64) -> Result<MetricsRecord> {
        self.analytic_cross_for(&self.means(power), seconds)
    }

    fn analytic_cross_for(&self, means: &PulseMeans, seconds: f64) -> Result<MetricsRecord> {
        let det = &self.config.detection;
        expected_metrics(&analytic_rates(means, det, self.repetition_rate()), det, seconds)
    }

    pub fn analytic_self(&self, power: f64, arm: Arm, seconds: f64) -> Result<MetricsRecord> {
        let det = &self.config.detection;
        let rates = analytic_self_rates(&self.means(power), det, arm, self.repetition_rate());
        expected_self_metrics(&rates, arm, det, seconds)
    }

    /// Phase-matched sidebands at average power `power`.
    pub fn sidebands(&self, power: f64) -> Result<Sidebands> {
        let pump = self.config.pump.with_power(power);
        solve_phase_matched_signal(&pump, &self.config.fiber, &self.dispersion)
    }

    fn plan(&self, seconds: f64) -> BatchPlan {
        BatchPlan {
            pulses: pulses_for(seconds, self.repetition_rate()),
            batch_pulses: self.config.batch_pulses,
            seed: self.config.seed,
            workers: self.config.workers,
        }
    }

    fn simulate_metrics(
        &self,
        means: &PulseMeans,
        measurement: Measurement,
        seconds: f64,
        scenario: u64,
    ) -> Result<MetricsRecord> {
        let det = &self.config.detection;
        let sampler = PulseSampler::new(means, det)?;
        let counts = simulate(&sampler, measurement, self.repetition_rate(), &self.plan(seconds), scenario)?;
        to_metrics(&counts, det)
    }
}

/// Pulses in `seconds` of integration, at least one.
pub fn pulses_for(seconds: f64, repetition_rate: f64) -> u64 {
    ((seconds * repetition_rate).round() as u64).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PowerSweep,
    SpectralScan,
    ZwmTest,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::PowerSweep => "power-sweep",
            Experiment::SpectralScan => "spectral-scan",
            Experiment::ZwmTest => "zwm-test",
        }
    }

    fn code(self) -> u64 {
        match self {
            Experiment::PowerSweep => 1,
            Experiment::SpectralScan => 2,
            Experiment::ZwmTest => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Skip the Monte Carlo and report expectations only.
    pub analytic_only: bool,
}

/// A Monte Carlo estimate and its analytic expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Paired<T> {
    pub mc: Option<T>,
    pub analytic: T,
}

impl<T: Copy> Paired<T> {
    /// The Monte Carlo value when present, else the expectation.
    pub fn best(&self) -> T {
        self.mc.unwrap_or(self.analytic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    /// Average pump power in watts, or signal-window offset in meters.
    pub axis: f64,
    pub seconds: f64,
    pub cross: Paired<MetricsRecord>,
    pub self_signal: Option<Paired<MetricsRecord>>,
    pub self_idler: Option<Paired<MetricsRecord>>,
    pub zwm: Option<Paired<ZwmValue>>,
    /// Relative pair rate at this offset; spectral scans only.
    pub spectral_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitOutcome {
    Gaussian {
        name: String,
        result: std::result::Result<GaussianFit, String>,
    },
    PowerLaw {
        name: String,
        result: std::result::Result<PowerLawFit, String>,
    },
}

impl FitOutcome {
    pub fn name(&self) -> &str {
        match self {
            FitOutcome::Gaussian { name, .. } | FitOutcome::PowerLaw { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub overrides: Vec<(String, String)>,
    pub analytic_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub experiment: Experiment,
    pub rows: Vec<Row>,
    pub fits: Vec<FitOutcome>,
    pub provenance: Provenance,
}

impl ScanResult {
    pub fn fit(&self, name: &str) -> Option<&FitOutcome> {
        self.fits.iter().find(|f| f.name() == name)
    }

    pub fn gaussian(&self, name: &str) -> Option<&GaussianFit> {
        match self.fit(name) {
            Some(FitOutcome::Gaussian { result: Ok(fit), .. }) => Some(fit),
            _ => None,
        }
    }

    pub fn power_law(&self, name: &str) -> Option<&PowerLawFit> {
        match self.fit(name) {
            Some(FitOutcome::PowerLaw { result: Ok(fit), .. }) => Some(fit),
            _ => None,
        }
    }
}

fn provenance(cal: &Calibrated, opts: RunOptions) -> Provenance {
    Provenance {
        config_hash: cal.config.hash(),
        seed: cal.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        overrides: cal.config.raw.overrides().to_vec(),
        analytic_only: opts.analytic_only,
    }
}

fn paired_cross(
    cal: &Calibrated,
    means: &PulseMeans,
    seconds: f64,
    scenario: u64,
    opts: RunOptions,
) -> Result<Paired<MetricsRecord>> {
    let analytic = cal.analytic_cross_for(means, seconds)?;
    let mc = if opts.analytic_only {
        None
    } else {
        Some(cal.simulate_metrics(means, Measurement::Cross, seconds, scenario)?)
    };
    Ok(Paired { mc, analytic })
}

/// Singles, coincidences, contrast and pair ratios against pump power.
pub fn run_power_sweep(cal: &Calibrated, opts: RunOptions) -> Result<ScanResult> {
    let cfg = &cal.config;
    let mut rows = Vec::with_capacity(cfg.sweep_powers.len());
    for (k, &power) in cfg.sweep_powers.iter().enumerate() {
        let seconds = cfg.integration.seconds_for(power);
        let scenario = scenario_id(Experiment::PowerSweep.code(), k, Measurement::Cross);
        rows.push(Row {
            axis: power,
            seconds,
            cross: paired_cross(cal, &cal.means(power), seconds, scenario, opts)?,
            self_signal: None,
            self_idler: None,
            zwm: None,
            spectral_weight: None,
        });
    }
    let mut fits = Vec::new();
    let in_range: Vec<&Row> = rows.iter().filter(|r| r.axis >= POWER_LAW_MIN_POWER * (1.0 - 1e-12)).collect();
    let fit_rows = if in_range.len() >= 3 { in_range } else { rows.iter().collect() };
    let series: [(&str, fn(&MetricsRecord) -> f64); 3] = [
        ("signal_singles", |m| m.singles_a.value),
        ("idler_singles", |m| m.singles_b.value),
        ("coincidences", |m| m.coincidences.value),
    ];
    for (name, value) in series {
        let points: Vec<(f64, f64)> = fit_rows.iter().map(|r| (r.axis, value(&r.cross.best()))).collect();
        fits.push(FitOutcome::PowerLaw {
            name: name.to_string(),
            result: fit_power_law(&points).map_err(|e| e.to_string()),
        });
    }
    Ok(ScanResult {
        experiment: Experiment::PowerSweep,
        rows,
        fits,
        provenance: provenance(cal, opts),
    })
}

/// Per-pulse means with the signal window moved off the matched wavelength.
///
/// Only a fraction `weight` of the pairs lands in both windows; the rest
/// still reach one window or the other, so the singles stay flat while the
/// correlated part follows the joint spectrum.
pub fn offset_means(base: &PulseMeans, weight: f64) -> PulseMeans {
    let mut components = Vec::with_capacity(base.components.len() + 2);
    for c in &base.components {
        if c.target == Target::Both {
            let stray = c.mean * (1.0 - weight);
            components.push(Thermal {
                mean: c.mean * weight,
                ..*c
            });
            for target in [Target::Signal, Target::Idler] {
                components.push(Thermal {
                    mean: stray,
                    modes: c.modes,
                    target,
                });
            }
        } else {
            components.push(*c);
        }
    }
    PulseMeans { components }
}

/// Contrast and signal singles against signal-window offset, with a
/// Gaussian fitted to the contrast.
pub fn run_spectral_scan(cal: &Calibrated, opts: RunOptions) -> Result<ScanResult> {
    let cfg = &cal.config;
    let power = cfg.scan_power;
    let pump = cfg.pump.with_power(power);
    let matched = cal.sidebands(power)?.signal;
    let weights = spectral_weights(
        &cfg.scan_offsets,
        &pump,
        &cfg.fiber,
        &cal.dispersion,
        &cfg.collection,
        matched,
    )?;
    let base = cal.means(power);
    let seconds = cfg.integration.seconds_for(power);
    let mut rows = Vec::with_capacity(weights.len());
    for (k, (&offset, &weight)) in cfg.scan_offsets.iter().zip(&weights).enumerate() {
        let scenario = scenario_id(Experiment::SpectralScan.code(), k, Measurement::Cross);
        let means = offset_means(&base, weight.clamp(0.0, 1.0));
        rows.push(Row {
            axis: offset,
            seconds,
            cross: paired_cross(cal, &means, seconds, scenario, opts)?,
            self_signal: None,
            self_idler: None,
            zwm: None,
            spectral_weight: Some(weight),
        });
    }
    let mut fits = Vec::new();
    let contrast = |m: &MetricsRecord| (m.contrast, m.contrast_sigma);
    let analytic_points: Vec<Point> = rows
        .iter()
        .map(|r| Point::new(r.axis / NM, contrast(&r.cross.analytic).0))
        .collect();
    fits.push(FitOutcome::Gaussian {
        name: "contrast_analytic".into(),
        result: fit_gaussian(&analytic_points).map_err(|e| e.to_string()),
    });
    if !opts.analytic_only {
        let points: Vec<Point> = rows
            .iter()
            .filter_map(|r| r.cross.mc.map(|m| (r.axis, contrast(&m))))
            .map(|(x, (y, s))| if s > 0.0 { Point::weighted(x / NM, y, s) } else { Point::new(x / NM, y) })
            .collect();
        fits.push(FitOutcome::Gaussian {
            name: "contrast".into(),
            result: fit_gaussian(&points).map_err(|e| e.to_string()),
        });
    }
    Ok(ScanResult {
        experiment: Experiment::SpectralScan,
        rows,
        fits,
        provenance: provenance(cal, opts),
    })
}

/// Cross and split-arm self correlations per power, and the ZWM statistic.
pub fn run_zwm(cal: &Calibrated, opts: RunOptions) -> Result<ScanResult> {
    let cfg = &cal.config;
    let mut rows = Vec::with_capacity(cfg.zwm_powers.len());
    for (k, &power) in cfg.zwm_powers.iter().enumerate() {
        let seconds = cfg.integration.seconds_for(power);
        let means = cal.means(power);
        let code = Experiment::ZwmTest.code();
        let cross = paired_cross(cal, &means, seconds, scenario_id(code, k, Measurement::Cross), opts)?;
        let mut arms = [(Arm::Signal, Measurement::SelfSignal), (Arm::Idler, Measurement::SelfIdler)]
            .into_iter()
            .map(|(arm, m)| {
                let analytic = cal.analytic_self(power, arm, seconds)?;
                let mc = if opts.analytic_only {
                    None
                } else {
                    Some(cal.simulate_metrics(&means, m, seconds, scenario_id(code, k, m))?)
                };
                Ok(Paired { mc, analytic })
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let (self_s, self_i) = (arms.next().expect("two arms"), arms.next().expect("two arms"));
        let zwm = Paired {
            analytic: zwm_v(&cross.analytic, &self_s.analytic, &self_i.analytic)?,
            mc: match (cross.mc, self_s.mc, self_i.mc) {
                (Some(c), Some(s), Some(i)) => Some(zwm_v(&c, &s, &i)?),
                _ => None,
            },
        };
        rows.push(Row {
            axis: power,
            seconds,
            cross,
            self_signal: Some(self_s),
            self_idler: Some(self_i),
            zwm: Some(zwm),
            spectral_weight: None,
        });
    }
    Ok(ScanResult {
        experiment: Experiment::ZwmTest,
        rows,
        fits: Vec::new(),
        provenance: provenance(cal, opts),
    })
}

/// Predicted metrics at one power, for the calibration report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub power: f64,
    pub coincidences: f64,
    pub contrast: f64,
    pub pair_ratio_signal: f64,
    pub pair_ratio_idler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub signal_wavelength: f64,
    pub idler_wavelength: f64,
    pub walkoff: f64,
    /// Signal shift for a 1 mW power change.
    pub shift_per_milliwatt: f64,
    pub kappa: f64,
    pub raman_signal: f64,
    pub raman_idler: f64,
    pub modes_signal: f64,
    pub modes_idler: f64,
    pub pair_modes: f64,
    /// `η_pair μ_f R` at the reference power with `κ = 1`.
    pub unit_kappa_rate: f64,
    /// Coincidence rate per unit power and bandwidth, Hz/W/m.
    pub figure_of_merit: f64,
    pub predictions: Vec<Prediction>,
}

fn predict(cal: &Calibrated, power: f64) -> Result<Prediction> {
    let m = cal.analytic_cross(power, 1.0)?;
    Ok(Prediction {
        power,
        coincidences: m.coincidences.value,
        contrast: m.contrast,
        pair_ratio_signal: m.pair_ratio_signal.unwrap_or(f64::NAN),
        pair_ratio_idler: m.pair_ratio_idler.unwrap_or(f64::NAN),
    })
}

/// Reference power used for the report; the calibration power when known.
fn reference_power(cal: &Calibrated) -> f64 {
    cal.config.calibration.power
}

/// Cross-check table for the calibrated models.
pub fn calibration_report(cal: &Calibrated, prediction_powers: &[f64]) -> Result<CalibrationReport> {
    let cfg = &cal.config;
    let target_power = cfg.dispersion_targets.power;
    let sb = cal.sidebands(target_power)?;
    let walkoff = group_delay_walkoff(sb.signal, sb.idler, &cal.dispersion, cfg.fiber.length);
    let p_ref = reference_power(cal);
    let unit = SourceModel {
        kappa: 1.0,
        ..cal.source
    };
    let mu_unit = crate::pairgen::mean_pair_number(p_ref, &unit, &cfg.fiber, &cfg.pump);
    let at_ref = predict(cal, p_ref)?;
    let mut predictions = vec![at_ref];
    for &p in prediction_powers {
        predictions.push(predict(cal, p)?);
    }
    Ok(CalibrationReport {
        beta2: cal.dispersion.beta2,
        beta3: cal.dispersion.beta3,
        beta4: cal.dispersion.beta4,
        signal_wavelength: sb.signal,
        idler_wavelength: sb.idler,
        walkoff,
        shift_per_milliwatt: signal_shift_per_power(sb.signal, MW, &cfg.pump, &cfg.fiber),
        kappa: cal.source.kappa,
        raman_signal: cal.source.raman_signal,
        raman_idler: cal.source.raman_idler,
        modes_signal: cal.source.modes_signal,
        modes_idler: cal.source.modes_idler,
        pair_modes: cal.source.pair_modes,
        unit_kappa_rate: cfg.detection.eta_pair * mu_unit * cal.repetition_rate(),
        figure_of_merit: at_ref.coincidences / (p_ref * cfg.collection.bandwidth),
        predictions,
    })
}

/// Canonical configuration text with the resolved models filled in.
pub fn derived_config(cal: &Calibrated) -> String {
    cal.config.derived_text(&cal.dispersion, &cal.source)
}

/// Fails unless `result` has at least one row.
pub fn ensure_rows(result: &ScanResult) -> Result<()> {
    if result.rows.is_empty() {
        Err(Error::Config(format!("{} has an empty axis", result.experiment.as_str())))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::IntegrationPolicy;

    fn calibrated() -> Calibrated {
        Calibrated::from_config(&ExperimentConfig::nominal()).unwrap()
    }

    fn short(seconds: f64) -> Calibrated {
        let mut cal = calibrated();
        cal.config.integration = IntegrationPolicy::fixed(seconds);
        cal
    }

    #[test]
    fn calibration_point_is_reproduced() {
        let cal = calibrated();
        let m = cal.analytic_cross(1e-3, 30.0).unwrap();
        assert!((m.coincidences.value / 37.6e3 - 1.0).abs() < 0.05, "{}", m.coincidences.value);
        assert!((m.contrast - 10.0).abs() < 1.0, "{}", m.contrast);
        assert!((m.pair_ratio_signal.unwrap() - 0.96).abs() < 0.05);
        assert!((m.pair_ratio_idler.unwrap() - 0.50).abs() < 0.05);
    }

    #[test]
    fn offset_means_keep_singles_flat() {
        let base = calibrated().means(0.5e-3);
        for w in [0.0, 0.3, 1.0] {
            let m = offset_means(&base, w);
            for arm in [Arm::Signal, Arm::Idler] {
                assert!((m.arm_mean(arm) - base.arm_mean(arm)).abs() < 1e-15);
            }
            assert!((m.pair_mean() - w * base.pair_mean()).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_sweep_has_no_mc_columns() {
        let r = run_power_sweep(&calibrated(), RunOptions { analytic_only: true }).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.rows.iter().all(|row| row.cross.mc.is_none()));
        assert!(r.power_law("signal_singles").unwrap().exponent > 1.9);
    }

    #[test]
    fn spectral_scan_peaks_at_zero_offset() {
        let r = run_spectral_scan(&calibrated(), RunOptions { analytic_only: true }).unwrap();
        let best = r
            .rows
            .iter()
            .max_by(|a, b| a.cross.analytic.contrast.total_cmp(&b.cross.analytic.contrast))
            .unwrap();
        assert_eq!(best.axis, 0.0);
        let fit = r.gaussian("contrast_analytic").unwrap();
        assert!(fit.center.abs() < 0.05, "{}", fit.center);
        assert!((0.7..=1.5).contains(&fit.fwhm), "{}", fit.fwhm);
    }

    #[test]
    fn short_mc_sweep_tracks_expectation() {
        let mut cal = short(1.0);
        cal.config.sweep_powers = vec![0.2e-3, 1e-3];
        let r = run_power_sweep(&cal, RunOptions::default()).unwrap();
        for row in &r.rows {
            let (mc, an) = (row.cross.mc.unwrap(), row.cross.analytic);
            for (a, b) in [
                (mc.singles_a, an.singles_a),
                (mc.singles_b, an.singles_b),
                (mc.coincidences, an.coincidences),
            ] {
                assert!((a.value - b.value).abs() < 4.0 * b.sigma, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn zwm_is_positive_with_pairs() {
        let r = run_zwm(&calibrated(), RunOptions { analytic_only: true }).unwrap();
        for row in &r.rows {
            assert!(row.zwm.unwrap().analytic.v > 0.0);
        }
        let none = run_zwm(&calibrated().without_pairs(), RunOptions { analytic_only: true }).unwrap();
        for row in &none.rows {
            assert!(row.zwm.unwrap().analytic.v <= 0.0);
        }
    }
}
