//! Phenomenological pair source: per-pulse photon numbers for the
//! four-wave-mixing pairs and the two Raman backgrounds, detector thinning,
//! and exact click statistics from probability generating functions.
//!
//! Every photon-number process is multimode thermal, i.e. negative binomial
//! with mean `μ` and shape `M` (the number of time-bandwidth modes). Pair
//! photons land in both arms with perfect number correlation before loss;
//! Raman photons land in one arm only.

use crate::dispersion::{DispersionModel, FiberSpec, PumpSpec};
use crate::error::{ensure, Error, Result};
use crate::units::{angular_frequency, frequency_bandwidth, SPEED_OF_LIGHT};
use rand::Rng;
use std::f64::consts::LN_2;

/// Which arm's bandwidth sets the pair mode count `M = Δν·τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arm {
    Signal,
    #[default]
    Idler,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Signal => "signal",
            Arm::Idler => "idler",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" => Ok(Arm::Signal),
            "idler" => Ok(Arm::Idler),
            other => Err(Error::Config(format!(
                "arm must be `signal` or `idler`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionSpec {
    pub signal_wavelength: f64,
    pub idler_wavelength: f64,
    /// Collection FWHM per arm, meters.
    pub bandwidth: f64,
    pub pump_envelope_bandwidth: f64,
}

impl CollectionSpec {
    /// 688.5 nm / 789.8 nm, 0.7 nm per arm.
    pub fn nominal() -> Self {
        CollectionSpec {
            signal_wavelength: 688.5e-9,
            idler_wavelength: 789.8e-9,
            bandwidth: 0.7e-9,
            pump_envelope_bandwidth: 0.1e-9,
        }
    }

    pub fn validate(&self, pump: &PumpSpec) -> Result<()> {
        ensure(self.bandwidth > 0.0 && self.bandwidth.is_finite(), || {
            format!("collection bandwidth must be positive, got {}", self.bandwidth)
        })?;
        ensure(self.pump_envelope_bandwidth > 0.0, || {
            "pump envelope bandwidth must be positive".into()
        })?;
        ensure(
            self.signal_wavelength < pump.wavelength && pump.wavelength < self.idler_wavelength,
            || {
                format!(
                    "need λ_s < λ_p < λ_i, got {} < {} < {}",
                    self.signal_wavelength, pump.wavelength, self.idler_wavelength
                )
            },
        )
    }

    pub fn wavelength(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Signal => self.signal_wavelength,
            Arm::Idler => self.idler_wavelength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionSpec {
    pub eta_s: f64,
    pub eta_i: f64,
    /// Pair detection efficiency as quoted; must agree with `η_s·η_i`.
    pub eta_pair: f64,
}

impl DetectionSpec {
    pub fn new(eta_s: f64, eta_i: f64, eta_pair: f64) -> Result<Self> {
        let d = DetectionSpec {
            eta_s,
            eta_i,
            eta_pair,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn nominal() -> Self {
        DetectionSpec {
            eta_s: 0.097,
            eta_i: 0.076,
            eta_pair: 0.0074,
        }
    }

    /// Independent efficiencies with `η_pair = η_s·η_i` exactly.
    pub fn product(eta_s: f64, eta_i: f64) -> Self {
        DetectionSpec {
            eta_s,
            eta_i,
            eta_pair: eta_s * eta_i,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_s", self.eta_s),
            ("eta_i", self.eta_i),
            ("eta_pair", self.eta_pair),
        ] {
            ensure((0.0..=1.0).contains(&v), || {
                format!("{name} must lie in [0, 1], got {v}")
            })?;
        }
        ensure((self.eta_pair - self.eta_s * self.eta_i).abs() <= 1e-3, || {
            format!(
                "eta_pair {} disagrees with eta_s·eta_i = {}",
                self.eta_pair,
                self.eta_s * self.eta_i
            )
        })
    }

    pub fn efficiency(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Signal => self.eta_s,
            Arm::Idler => self.eta_i,
        }
    }
}

/// Calibrated generator parameters. `kappa = 0` switches pairing off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub kappa: f64,
    /// Raman photons per pulse per watt of average power, signal arm.
    pub raman_signal: f64,
    pub raman_idler: f64,
    pub modes_signal: f64,
    pub modes_idler: f64,
    pub pair_modes: f64,
}

pub const MIN_MODES: f64 = 1e-6;

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        ensure((0.0..=2.0).contains(&self.kappa), || {
            format!("kappa must lie in [0, 2], got {}", self.kappa)
        })?;
        ensure(self.raman_signal >= 0.0 && self.raman_idler >= 0.0, || {
            "Raman coefficients must be non-negative".into()
        })?;
        for m in [self.modes_signal, self.modes_idler, self.pair_modes] {
            ensure(m >= MIN_MODES && m.is_finite(), || {
                format!("mode counts must be at least {MIN_MODES}, got {m}")
            })?;
        }
        Ok(())
    }

    /// Per-pulse means at average pump power `power`.
    pub fn means(&self, power: f64, fiber: &FiberSpec, pump: &PumpSpec) -> PulseMeans {
        let (rs, ri) = raman_means(power, self);
        PulseMeans::standard(
            mean_pair_number(power, self, fiber, pump),
            self.pair_modes,
            rs,
            self.modes_signal,
            ri,
            self.modes_idler,
        )
    }

    pub fn without_pairs(&self) -> Self {
        SourceModel { kappa: 0.0, ..*self }
    }
}

pub fn peak_power(pump: &PumpSpec) -> f64 {
    pump.peak_power()
}

/// Time-bandwidth mode count `(cΔλ/λ²)·τ`.
pub fn mode_count(bandwidth: f64, wavelength: f64, pulse_width: f64) -> Result<f64> {
    ensure(bandwidth > 0.0, || {
        format!("bandwidth must be positive, got {bandwidth}")
    })?;
    ensure(wavelength > 0.0 && pulse_width > 0.0, || {
        "wavelength and pulse width must be positive".into()
    })?;
    Ok(frequency_bandwidth(bandwidth, wavelength) * pulse_width)
}

/// Pairs per pulse `κ (γ P_peak z)² M`.
pub fn mean_pair_number(
    power: f64,
    source: &SourceModel,
    fiber: &FiberSpec,
    pump: &PumpSpec,
) -> f64 {
    let phase = fiber.gamma * pump.peak_power_at(power) * fiber.length;
    source.kappa * phase * phase * source.pair_modes
}

/// Spontaneous Raman photons per pulse in each arm; linear in power.
pub fn raman_means(power: f64, source: &SourceModel) -> (f64, f64) {
    (source.raman_signal * power, source.raman_idler * power)
}

/// Where a thermal photon-number process deposits its photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Both,
    Signal,
    Idler,
}

impl Target {
    fn hits(self, arm: Arm) -> bool {
        matches!(
            (self, arm),
            (Target::Both, _) | (Target::Signal, Arm::Signal) | (Target::Idler, Arm::Idler)
        )
    }
}

/// One negative-binomial photon-number process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thermal {
    pub mean: f64,
    pub modes: f64,
    pub target: Target,
}

impl Thermal {
    /// `ln E[z^n] = −M ln(1 + μ(1−z)/M)`.
    pub fn ln_pgf(&self, z: f64) -> f64 {
        if self.mean == 0.0 {
            return 0.0;
        }
        -self.modes * (self.mean * (1.0 - z) / self.modes).ln_1p()
    }

    pub fn variance(&self) -> f64 {
        self.mean * (1.0 + self.mean / self.modes)
    }
}

/// Per-pulse means of every photon-number process feeding the two arms.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseMeans {
    pub components: Vec<Thermal>,
}

impl PulseMeans {
    /// Pair process first, then signal Raman, then idler Raman.
    pub fn standard(
        pair: f64,
        pair_modes: f64,
        raman_s: f64,
        modes_s: f64,
        raman_i: f64,
        modes_i: f64,
    ) -> Self {
        PulseMeans {
            components: vec![
                Thermal {
                    mean: pair,
                    modes: pair_modes,
                    target: Target::Both,
                },
                Thermal {
                    mean: raman_s,
                    modes: modes_s,
                    target: Target::Signal,
                },
                Thermal {
                    mean: raman_i,
                    modes: modes_i,
                    target: Target::Idler,
                },
            ],
        }
    }

    pub fn pair_mean(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.target == Target::Both)
            .map(|c| c.mean)
            .sum()
    }

    /// Mean photons per pulse reaching `arm` before loss.
    pub fn arm_mean(&self, arm: Arm) -> f64 {
        self.components
            .iter()
            .filter(|c| c.target.hits(arm))
            .map(|c| c.mean)
            .sum()
    }

    /// `ln G(z)` of the total photon number in `arm`.
    pub fn arm_ln_pgf(&self, arm: Arm, z: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.target.hits(arm))
            .map(|c| c.ln_pgf(z))
            .sum()
    }

    /// `ln E[z_s^{N_s} z_i^{N_i}]`.
    pub fn joint_ln_pgf(&self, zs: f64, zi: f64) -> f64 {
        self.components
            .iter()
            .map(|c| match c.target {
                Target::Both => c.ln_pgf(zs * zi),
                Target::Signal => c.ln_pgf(zs),
                Target::Idler => c.ln_pgf(zi),
            })
            .sum()
    }

    /// Zero-delay intensity correlation `g²` of the photon number in `arm`.
    pub fn arm_g2(&self, arm: Arm) -> f64 {
        let (mut mean, mut excess) = (0.0, 0.0);
        for c in self.components.iter().filter(|c| c.target.hits(arm)) {
            mean += c.mean;
            excess += c.mean * c.mean / c.modes;
        }
        if mean == 0.0 {
            1.0
        } else {
            1.0 + excess / (mean * mean)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            ensure(c.mean >= 0.0 && c.mean.is_finite(), || {
                format!("photon mean must be non-negative, got {}", c.mean)
            })?;
            ensure(c.modes >= MIN_MODES, || {
                format!("mode count must be at least {MIN_MODES}")
            })?;
        }
        Ok(())
    }
}

/// The 1 mW operating point: coincidences, contrast and pair ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReference {
    pub power: f64,
    pub coincidence_rate: f64,
    pub contrast: f64,
    pub pair_ratio_signal: f64,
    pub pair_ratio_idler: f64,
}

impl CalibrationReference {
    pub fn nominal() -> Self {
        CalibrationReference {
            power: 1e-3,
            coincidence_rate: 37.6e3,
            contrast: 10.0,
            pair_ratio_signal: 0.96,
            pair_ratio_idler: 0.50,
        }
    }
}

/// Intermediate quantities of the source inversion, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceCalibration {
    pub model: SourceModel,
    pub true_pair_rate: f64,
    pub singles_signal: f64,
    pub singles_idler: f64,
    pub pair_mean: f64,
    pub raman_signal_mean: f64,
    pub raman_idler_mean: f64,
}

impl SourceCalibration {
    /// Photons generated per pulse in each arm at the reference power.
    pub fn generated_per_pulse(&self) -> (f64, f64) {
        (
            self.pair_mean + self.raman_signal_mean,
            self.pair_mean + self.raman_idler_mean,
        )
    }
}

/// Inverts the pair-ratio definitions at one reference point.
///
/// With `T = D_c(1 − A/C)` the true-pair rate, the singles follow from
/// `R_s = T/(η_i D_s)` and `R_i = T/(η_s D_i)`; dividing by efficiency and
/// repetition rate gives per-pulse means, and whatever the pairs do not
/// explain in each arm is attributed to Raman scattering.
pub fn calibrate_source(
    reference: &CalibrationReference,
    det: &DetectionSpec,
    pump: &PumpSpec,
    fiber: &FiberSpec,
    collection: &CollectionSpec,
    pair_mode_arm: Arm,
) -> Result<SourceCalibration> {
    det.validate()?;
    let r = reference;
    let positive = [r.power, r.coincidence_rate, r.contrast, r.pair_ratio_signal, r.pair_ratio_idler]
        .iter()
        .all(|v| *v > 0.0 && !v.is_nan());
    if !positive {
        return Err(Error::InconsistentReference(format!(
            "calibration references must be positive: {r:?}"
        )));
    }
    if r.pair_ratio_signal > 1.0 || r.pair_ratio_idler > 1.0 {
        return Err(Error::InconsistentReference(format!(
            "pair ratios must not exceed 1 (R_s = {}, R_i = {})",
            r.pair_ratio_signal, r.pair_ratio_idler
        )));
    }
    if r.contrast <= 1.0 {
        return Err(Error::InconsistentReference(format!(
            "contrast {} leaves no true coincidences",
            r.contrast
        )));
    }
    if det.eta_s == 0.0 || det.eta_i == 0.0 || det.eta_pair == 0.0 {
        return Err(Error::InconsistentReference(
            "detection efficiencies must be non-zero to invert rates".into(),
        ));
    }

    let rate = pump.repetition_rate;
    let true_pairs = r.coincidence_rate * (1.0 - 1.0 / r.contrast);
    let singles_s = true_pairs / (det.eta_i * r.pair_ratio_signal);
    let singles_i = true_pairs / (det.eta_s * r.pair_ratio_idler);
    let mu_f = true_pairs / (det.eta_pair * rate);
    let mu_rs = clamp_rounding(singles_s / (det.eta_s * rate) - mu_f, mu_f);
    let mu_ri = clamp_rounding(singles_i / (det.eta_i * rate) - mu_f, mu_f);
    if mu_rs < 0.0 || mu_ri < 0.0 {
        return Err(Error::InconsistentReference(format!(
            "references imply negative Raman means (signal {mu_rs:e}, idler {mu_ri:e})"
        )));
    }

    let modes_signal = mode_count(collection.bandwidth, collection.signal_wavelength, pump.pulse_width)?;
    let modes_idler = mode_count(collection.bandwidth, collection.idler_wavelength, pump.pulse_width)?;
    let pair_modes = match pair_mode_arm {
        Arm::Signal => modes_signal,
        Arm::Idler => modes_idler,
    };
    let phase = fiber.gamma * pump.peak_power_at(r.power) * fiber.length;
    let kappa = mu_f / (phase * phase * pair_modes);
    let model = SourceModel {
        kappa,
        raman_signal: mu_rs / r.power,
        raman_idler: mu_ri / r.power,
        modes_signal,
        modes_idler,
        pair_modes,
    };
    model.validate().map_err(|e| match e {
        Error::Domain(msg) => Error::InconsistentReference(msg),
        other => other,
    })?;
    Ok(SourceCalibration {
        model,
        true_pair_rate: true_pairs,
        singles_signal: singles_s,
        singles_idler: singles_i,
        pair_mean: mu_f,
        raman_signal_mean: mu_rs,
        raman_idler_mean: mu_ri,
    })
}

fn clamp_rounding(value: f64, scale: f64) -> f64 {
    if value.abs() <= 1e-12 * scale {
        0.0
    } else {
        value
    }
}

/// One pump pulse: generated photon numbers, detected photons and clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulseOutcome {
    pub n_pair: u32,
    pub n_raman_s: u32,
    pub n_raman_i: u32,
    pub det_s: u32,
    pub det_i: u32,
    pub click_s: bool,
    pub click_i: bool,
}

impl PulseOutcome {
    pub fn detected(&self, arm: Arm) -> u32 {
        match arm {
            Arm::Signal => self.det_s,
            Arm::Idler => self.det_i,
        }
    }
}

/// Inverse-CDF sampler for one negative-binomial process. Means are well
/// below one photon per pulse, so the search rarely passes `k = 1`.
#[derive(Debug, Clone, Copy)]
struct ThermalSampler {
    zero_prob: f64,
    /// `1 − P(0)`, computed without cancellation.
    nonzero_prob: f64,
    ratio: f64,
    modes: f64,
    target: Target,
}

impl ThermalSampler {
    fn new(c: &Thermal) -> Self {
        let ln_zero = c.ln_pgf(0.0);
        ThermalSampler {
            zero_prob: ln_zero.exp(),
            nonzero_prob: -ln_zero.exp_m1(),
            ratio: c.mean / (c.modes + c.mean),
            modes: c.modes,
            target: c.target,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        if u < self.zero_prob {
            0
        } else {
            self.search(1, u - self.zero_prob)
        }
    }

    /// Draw conditioned on at least one photon.
    fn sample_positive<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.search(1, u * self.nonzero_prob)
    }

    /// Smallest `k ≥ start` whose partial tail mass from 1 exceeds `target`.
    fn search(&self, start: u32, target: f64) -> u32 {
        let mut k = start;
        let mut pmf = self.zero_prob * self.modes * self.ratio;
        let mut cum = pmf;
        while target >= cum {
            let next = pmf * (k as f64 + self.modes) / (k as f64 + 1.0) * self.ratio;
            if next <= 0.0 || !next.is_finite() || k == u32::MAX - 1 {
                break;
            }
            k += 1;
            pmf = next;
            cum += pmf;
        }
        k
    }
}

/// Prepared per-pulse sampler for one configuration.
///
/// Empty pulses dominate, so a single uniform decides whether any photon
/// was generated; non-empty pulses are then drawn exactly from the
/// conditional law by walking the components in order.
#[derive(Debug, Clone)]
pub struct PulseSampler {
    components: Vec<ThermalSampler>,
    /// `P(component k is the first non-empty one | pulse non-empty)`, as
    /// `1 − Π_{j≥k} z_j` for each suffix.
    suffix_nonzero: Vec<f64>,
    empty_prob: f64,
    nonempty_prob: f64,
    eta_s: f64,
    eta_i: f64,
}

impl PulseSampler {
    pub fn new(means: &PulseMeans, det: &DetectionSpec) -> Result<Self> {
        means.validate()?;
        det.validate()?;
        let components: Vec<_> = means.components.iter().map(ThermalSampler::new).collect();
        let ln_zero: Vec<f64> = means.components.iter().map(|c| c.ln_pgf(0.0)).collect();
        let mut suffix_nonzero = vec![0.0; ln_zero.len()];
        let mut acc = 0.0;
        for k in (0..ln_zero.len()).rev() {
            acc += ln_zero[k];
            suffix_nonzero[k] = -acc.exp_m1();
        }
        let total: f64 = ln_zero.iter().sum();
        Ok(PulseSampler {
            components,
            suffix_nonzero,
            empty_prob: total.exp(),
            nonempty_prob: -total.exp_m1(),
            eta_s: det.eta_s,
            eta_i: det.eta_i,
        })
    }

    /// Probability that a pulse generates at least one photon anywhere.
    pub fn nonempty_probability(&self) -> f64 {
        self.nonempty_prob
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PulseOutcome {
        let u: f64 = rng.random();
        if u < self.empty_prob {
            PulseOutcome::default()
        } else {
            self.sample_nonempty(rng)
        }
    }

    /// A pulse drawn conditional on at least one generated photon.
    pub fn sample_nonempty<R: Rng + ?Sized>(&self, rng: &mut R) -> PulseOutcome {
        let mut out = PulseOutcome::default();
        let mut pair = 0u32;
        let mut sig = 0u32;
        let mut idl = 0u32;
        let mut forced = true;
        for (k, c) in self.components.iter().enumerate() {
            let n = if forced {
                let p_first = c.nonzero_prob / self.suffix_nonzero[k];
                let last = k + 1 == self.components.len();
                if last || rng.random::<f64>() < p_first {
                    forced = false;
                    c.sample_positive(rng)
                } else {
                    0
                }
            } else {
                c.sample(rng)
            };
            match c.target {
                Target::Both => pair += n,
                Target::Signal => sig += n,
                Target::Idler => idl += n,
            }
        }
        out.n_pair = pair;
        out.n_raman_s = sig;
        out.n_raman_i = idl;
        out.det_s = thin(rng, pair + sig, self.eta_s);
        out.det_i = thin(rng, pair + idl, self.eta_i);
        out.click_s = out.det_s > 0;
        out.click_i = out.det_i > 0;
        out
    }
}

/// Binomial thinning of a small photon number.
pub fn thin<R: Rng + ?Sized>(rng: &mut R, n: u32, p: f64) -> u32 {
    if p >= 1.0 {
        return n;
    }
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u32
}

/// Draws one pulse for `means` under detection `det`.
pub fn sample_pulse<R: Rng + ?Sized>(rng: &mut R, sampler: &PulseSampler) -> PulseOutcome {
    sampler.sample(rng)
}

/// Expected cross-correlation rates for threshold detectors, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticRates {
    pub singles_s: f64,
    pub singles_i: f64,
    pub coincidences: f64,
    pub accidentals: f64,
}

/// Per-pulse click probabilities behind [`AnalyticRates`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    pub signal: f64,
    pub idler: f64,
    pub both: f64,
}

pub fn click_probabilities(means: &PulseMeans, det: &DetectionSpec) -> ClickProbabilities {
    let ln_qs = means.arm_ln_pgf(Arm::Signal, 1.0 - det.eta_s);
    let ln_qi = means.arm_ln_pgf(Arm::Idler, 1.0 - det.eta_i);
    let ln_q00 = means.joint_ln_pgf(1.0 - det.eta_s, 1.0 - det.eta_i);
    let ps = -ln_qs.exp_m1();
    let pi = -ln_qi.exp_m1();
    // P(both) = P00 − Q_s Q_i + p_s p_i, with the first difference formed
    // from the log ratio so that small correlations survive.
    let correlated = (ln_qs + ln_qi).exp() * (ln_q00 - ln_qs - ln_qi).exp_m1();
    ClickProbabilities {
        signal: ps,
        idler: pi,
        both: correlated + ps * pi,
    }
}

/// Exact singles, same-pulse coincidences and one-pulse-delay accidentals.
pub fn analytic_rates(means: &PulseMeans, det: &DetectionSpec, repetition_rate: f64) -> AnalyticRates {
    let p = click_probabilities(means, det);
    AnalyticRates {
        singles_s: p.signal * repetition_rate,
        singles_i: p.idler * repetition_rate,
        coincidences: p.both * repetition_rate,
        accidentals: p.signal * p.idler * repetition_rate,
    }
}

/// Expected rates behind a balanced splitter on one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfRates {
    /// Singles on each splitter output.
    pub singles_half: f64,
    pub coincidences: f64,
    pub accidentals: f64,
}

/// Each detected photon exits either splitter port with probability ½, so
/// each port sees the arm thinned by `η/2`.
pub fn analytic_self_rates(
    means: &PulseMeans,
    det: &DetectionSpec,
    arm: Arm,
    repetition_rate: f64,
) -> SelfRates {
    let eta = det.efficiency(arm);
    let ln_half = means.arm_ln_pgf(arm, 1.0 - eta / 2.0);
    let ln_full = means.arm_ln_pgf(arm, 1.0 - eta);
    let p_half = -ln_half.exp_m1();
    // P(A ∧ B) = 1 − 2G(1−η/2) + G(1−η) = p_A² + [G(1−η) − G(1−η/2)²]
    let excess = (2.0 * ln_half).exp() * (ln_full - 2.0 * ln_half).exp_m1();
    SelfRates {
        singles_half: p_half * repetition_rate,
        coincidences: (p_half * p_half + excess) * repetition_rate,
        accidentals: p_half * p_half * repetition_rate,
    }
}

/// Relative pair rate when the signal window is moved `offset` meters away
/// from the phase-matched signal while the idler window stays on its
/// conjugate.
///
/// Integrates the joint spectral intensity, the pump pair envelope in
/// `ω_s + ω_i` times `sinc²(Δk z/2)`, against Gaussian passbands of FWHM
/// `collection.bandwidth`, normalized to the zero-offset value.
pub fn spectral_weight(
    offset: f64,
    pump: &PumpSpec,
    fiber: &FiberSpec,
    model: &DispersionModel,
    collection: &CollectionSpec,
    matched_signal: f64,
) -> Result<f64> {
    let grid = SpectralGrid::new(pump, fiber, model, collection, matched_signal)?;
    let peak = grid.overlap(0.0);
    ensure(peak > 0.0, || "joint spectrum has no overlap with the windows".into())?;
    Ok(grid.overlap(offset) / peak)
}

/// Spectral weights for many offsets sharing one normalization.
pub fn spectral_weights(
    offsets: &[f64],
    pump: &PumpSpec,
    fiber: &FiberSpec,
    model: &DispersionModel,
    collection: &CollectionSpec,
    matched_signal: f64,
) -> Result<Vec<f64>> {
    let grid = SpectralGrid::new(pump, fiber, model, collection, matched_signal)?;
    let peak = grid.overlap(0.0);
    ensure(peak > 0.0, || "joint spectrum has no overlap with the windows".into())?;
    Ok(offsets.iter().map(|&o| grid.overlap(o) / peak).collect())
}

struct SpectralGrid<'a> {
    fiber: &'a FiberSpec,
    model: &'a DispersionModel,
    pump_omega: f64,
    model_shift: f64,
    nonlinear: f64,
    envelope_sigma: f64,
    matched_signal: f64,
    bandwidth: f64,
    idler_center: f64,
    idler_sigma: f64,
}

const ENVELOPE_SPAN: f64 = 6.0;
const ENVELOPE_POINTS: usize = 61;
const WINDOW_SPAN: f64 = 6.0;
const WINDOW_POINTS: usize = 241;

/// Gaussian σ for an intensity FWHM.
fn sigma_of_fwhm(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

impl<'a> SpectralGrid<'a> {
    fn new(
        pump: &PumpSpec,
        fiber: &'a FiberSpec,
        model: &'a DispersionModel,
        collection: &CollectionSpec,
        matched_signal: f64,
    ) -> Result<Self> {
        collection.validate(pump)?;
        let pump_omega = pump.angular_frequency();
        let idler = crate::dispersion::conjugate_wavelength(pump.wavelength, matched_signal)?;
        let pump_sigma = sigma_of_fwhm(
            2.0 * std::f64::consts::PI
                * frequency_bandwidth(collection.pump_envelope_bandwidth, pump.wavelength),
        );
        let idler_center = angular_frequency(idler);
        Ok(SpectralGrid {
            fiber,
            model,
            pump_omega,
            model_shift: pump_omega - model.reference_frequency(),
            nonlinear: 2.0 * fiber.gamma * pump.peak_power(),
            // pair envelope |α⊗α|² is √2 wider than the pump intensity
            envelope_sigma: std::f64::consts::SQRT_2 * pump_sigma,
            matched_signal,
            bandwidth: collection.bandwidth,
            idler_center,
            idler_sigma: sigma_of_fwhm(window_fwhm(collection.bandwidth, idler)),
        })
    }

    fn overlap(&self, offset: f64) -> f64 {
        let signal_wavelength = self.matched_signal + offset;
        let signal_center = angular_frequency(signal_wavelength);
        let signal_sigma = sigma_of_fwhm(window_fwhm(self.bandwidth, signal_wavelength));
        let d_sum = 2.0 * ENVELOPE_SPAN * self.envelope_sigma / (ENVELOPE_POINTS - 1) as f64;
        let d_omega = 2.0 * WINDOW_SPAN * self.idler_sigma / (WINDOW_POINTS - 1) as f64;
        let z = self.fiber.length;
        let mut total = 0.0;
        for a in 0..ENVELOPE_POINTS {
            // Σ = ω_s + ω_i − 2ω_p
            let sum = -ENVELOPE_SPAN * self.envelope_sigma + a as f64 * d_sum;
            let envelope = gaussian(sum, self.envelope_sigma);
            let half = 0.5 * sum;
            let center = self.pump_omega + half - self.idler_center;
            for b in 0..WINDOW_POINTS {
                let omega = center - WINDOW_SPAN * self.idler_sigma + b as f64 * d_omega;
                let ws = self.pump_omega + half + omega;
                let wi = self.pump_omega + half - omega;
                let windows = gaussian(ws - signal_center, signal_sigma)
                    * gaussian(wi - self.idler_center, self.idler_sigma);
                if windows < 1e-300 {
                    continue;
                }
                let dk = self.model.mismatch_about(self.model_shift + half, omega) - self.nonlinear;
                total += envelope * windows * sinc_squared(0.5 * dk * z);
            }
        }
        total * d_sum * d_omega
    }
}

fn window_fwhm(bandwidth: f64, wavelength: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * bandwidth / (wavelength * wavelength)
}

#[inline]
fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp()
}

#[inline]
fn sinc_squared(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}
