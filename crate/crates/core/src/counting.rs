//! Pulse-synchronous coincidence counting and the metrics derived from it.

use crate::error::{Error, Result};
use crate::pairgen::{thin, AnalyticRates, Arm, DetectionSpec, PulseOutcome, SelfRates};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Cross,
    SelfSignal,
    SelfIdler,
}

impl RecordKind {
    pub fn self_arm(arm: Arm) -> Self {
        match arm {
            Arm::Signal => RecordKind::SelfSignal,
            Arm::Idler => RecordKind::SelfIdler,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Cross => "cross",
            RecordKind::SelfSignal => "self_signal",
            RecordKind::SelfIdler => "self_idler",
        }
    }
}

/// Raw counts for one configuration. Channel `a`/`b` are signal/idler for
/// cross records and the two splitter outputs for self records.
///
/// Records over disjoint pulse batches merge by field-wise addition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountsRecord {
    pub kind: RecordKind,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
    /// `click_a(k) ∧ click_b(k−1)`.
    pub accidentals: u64,
    pub pulses: u64,
    /// Adjacent pulse pairs examined for accidentals.
    pub delay_pairs: u64,
    pub repetition_rate: f64,
}

impl CountsRecord {
    pub fn empty(kind: RecordKind, repetition_rate: f64) -> Self {
        CountsRecord {
            kind,
            singles_a: 0,
            singles_b: 0,
            coincidences: 0,
            accidentals: 0,
            pulses: 0,
            delay_pairs: 0,
            repetition_rate,
        }
    }

    pub fn integration_time(&self) -> f64 {
        self.pulses as f64 / self.repetition_rate
    }

    pub fn merge(&self, other: &CountsRecord) -> Result<CountsRecord> {
        if self.kind != other.kind || self.repetition_rate != other.repetition_rate {
            return Err(Error::MismatchedRecords(format!(
                "cannot merge {:?} at {} Hz with {:?} at {} Hz",
                self.kind, self.repetition_rate, other.kind, other.repetition_rate
            )));
        }
        Ok(CountsRecord {
            kind: self.kind,
            singles_a: self.singles_a + other.singles_a,
            singles_b: self.singles_b + other.singles_b,
            coincidences: self.coincidences + other.coincidences,
            accidentals: self.accidentals + other.accidentals,
            pulses: self.pulses + other.pulses,
            delay_pairs: self.delay_pairs + other.delay_pairs,
            repetition_rate: self.repetition_rate,
        })
    }
}

/// Two-channel coincidence circuit with a one-period delay line.
#[derive(Debug, Clone)]
pub struct CoincidenceCounter {
    record: CountsRecord,
    prev_click_b: Option<bool>,
}

impl CoincidenceCounter {
    pub fn new(kind: RecordKind, repetition_rate: f64) -> Self {
        CoincidenceCounter {
            record: CountsRecord::empty(kind, repetition_rate),
            prev_click_b: None,
        }
    }

    #[inline]
    pub fn push(&mut self, click_a: bool, click_b: bool) {
        let r = &mut self.record;
        r.pulses += 1;
        r.singles_a += click_a as u64;
        r.singles_b += click_b as u64;
        r.coincidences += (click_a && click_b) as u64;
        if let Some(prev) = self.prev_click_b {
            r.delay_pairs += 1;
            r.accidentals += (click_a && prev) as u64;
        }
        self.prev_click_b = Some(click_b);
    }

    /// Records `count` consecutive pulses without any click.
    #[inline]
    pub fn push_dark(&mut self, count: u64) {
        if count == 0 {
            return;
        }
        let r = &mut self.record;
        r.pulses += count;
        r.delay_pairs += if self.prev_click_b.is_some() { count } else { count - 1 };
        self.prev_click_b = Some(false);
    }

    pub fn finish(self) -> CountsRecord {
        self.record
    }
}

/// Counts singles, same-pulse coincidences and delayed accidentals over a
/// stream of pulses.
pub fn accumulate<I>(pulses: I, repetition_rate: f64) -> Result<CountsRecord>
where
    I: IntoIterator<Item = PulseOutcome>,
{
    let mut counter = CoincidenceCounter::new(RecordKind::Cross, repetition_rate);
    for p in pulses {
        counter.push(p.click_s, p.click_i);
    }
    let record = counter.finish();
    if record.pulses == 0 {
        return Err(Error::EmptyStream);
    }
    Ok(record)
}

/// Splits each detected photon of `arm` onto two outputs with probability ½.
#[inline]
pub fn split_clicks<R: Rng + ?Sized>(rng: &mut R, detected: u32) -> (bool, bool) {
    if detected == 0 {
        return (false, false);
    }
    let a = thin(rng, detected, 0.5);
    (a > 0, a < detected)
}

/// Self-correlation of one arm behind a balanced beam splitter.
pub fn self_correlate<I, R>(
    pulses: I,
    arm: Arm,
    rng: &mut R,
    repetition_rate: f64,
) -> Result<CountsRecord>
where
    I: IntoIterator<Item = PulseOutcome>,
    R: Rng + ?Sized,
{
    let mut counter = CoincidenceCounter::new(RecordKind::self_arm(arm), repetition_rate);
    for p in pulses {
        let (a, b) = split_clicks(rng, p.detected(arm));
        counter.push(a, b);
    }
    let record = counter.finish();
    if record.pulses == 0 {
        return Err(Error::EmptyStream);
    }
    Ok(record)
}

/// A rate with its one-σ uncertainty, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub value: f64,
    pub sigma: f64,
}

impl Rate {
    fn poisson(count: u64, opportunities: u64, repetition_rate: f64) -> Rate {
        let scale = repetition_rate / opportunities as f64;
        Rate {
            value: count as f64 * scale,
            sigma: (count as f64).sqrt() * scale,
        }
    }

    /// Expected Poisson σ of a rate observed for `seconds`.
    fn expected(value: f64, seconds: f64) -> Rate {
        Rate {
            value,
            sigma: (value / seconds).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    pub integration_time: f64,
    pub singles_a: Rate,
    pub singles_b: Rate,
    pub coincidences: Rate,
    pub accidentals: Rate,
    pub contrast: f64,
    pub contrast_sigma: f64,
    /// Pair ratios; cross records only.
    pub pair_ratio_signal: Option<f64>,
    pub pair_ratio_idler: Option<f64>,
}

impl MetricsRecord {
    pub fn true_coincidences(&self) -> f64 {
        self.coincidences.value - self.accidentals.value
    }
}

/// Rates, contrast and pair ratios from raw counts, with Poisson errors.
pub fn to_metrics(counts: &CountsRecord, det: &DetectionSpec) -> Result<MetricsRecord> {
    if counts.pulses == 0 || counts.repetition_rate <= 0.0 {
        return Err(Error::UndefinedMetric("zero integration time".into()));
    }
    if counts.accidentals == 0 || counts.delay_pairs == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{} record has no accidentals; contrast undefined",
            counts.kind.as_str()
        )));
    }
    let r = counts.repetition_rate;
    let singles_a = Rate::poisson(counts.singles_a, counts.pulses, r);
    let singles_b = Rate::poisson(counts.singles_b, counts.pulses, r);
    let coincidences = Rate::poisson(counts.coincidences, counts.pulses, r);
    let accidentals = Rate::poisson(counts.accidentals, counts.delay_pairs, r);
    build(
        counts.kind,
        counts.integration_time(),
        singles_a,
        singles_b,
        coincidences,
        accidentals,
        det,
    )
}

/// Expected metrics for the analytic rates over `seconds` of integration.
pub fn expected_metrics(
    rates: &AnalyticRates,
    det: &DetectionSpec,
    seconds: f64,
) -> Result<MetricsRecord> {
    build(
        RecordKind::Cross,
        seconds,
        Rate::expected(rates.singles_s, seconds),
        Rate::expected(rates.singles_i, seconds),
        Rate::expected(rates.coincidences, seconds),
        Rate::expected(rates.accidentals, seconds),
        det,
    )
}

pub fn expected_self_metrics(
    rates: &SelfRates,
    arm: Arm,
    det: &DetectionSpec,
    seconds: f64,
) -> Result<MetricsRecord> {
    let half = Rate::expected(rates.singles_half, seconds);
    build(
        RecordKind::self_arm(arm),
        seconds,
        half,
        half,
        Rate::expected(rates.coincidences, seconds),
        Rate::expected(rates.accidentals, seconds),
        det,
    )
}

fn build(
    kind: RecordKind,
    integration_time: f64,
    singles_a: Rate,
    singles_b: Rate,
    coincidences: Rate,
    accidentals: Rate,
    det: &DetectionSpec,
) -> Result<MetricsRecord> {
    if accidentals.value <= 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "{} accidental rate is zero; contrast undefined",
            kind.as_str()
        )));
    }
    let contrast = coincidences.value / accidentals.value;
    let contrast_sigma = contrast
        * ((coincidences.sigma / coincidences.value.max(f64::MIN_POSITIVE)).powi(2)
            + (accidentals.sigma / accidentals.value).powi(2))
        .sqrt();
    let (pair_ratio_signal, pair_ratio_idler) = if kind == RecordKind::Cross {
        let excess = coincidences.value - accidentals.value;
        if singles_a.value <= 0.0 || singles_b.value <= 0.0 {
            return Err(Error::UndefinedMetric("zero singles rate; pair ratio undefined".into()));
        }
        (
            Some(excess / (det.eta_i * singles_a.value)),
            Some(excess / (det.eta_s * singles_b.value)),
        )
    } else {
        (None, None)
    };
    Ok(MetricsRecord {
        kind,
        integration_time,
        singles_a,
        singles_b,
        coincidences,
        accidentals,
        contrast,
        contrast_sigma,
        pair_ratio_signal,
        pair_ratio_idler,
    })
}

/// Zou-Wang-Mandel statistic with its combined standard uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZwmValue {
    pub v: f64,
    pub sigma: f64,
    pub ratio: f64,
}

/// `V = (D_c − D_a) − 2(D_s − D_{s,a} + D_i − D_{i,a})`, where the self terms
/// are the splitter coincidence and accidental rates of each arm.
pub fn zwm_v(
    cross: &MetricsRecord,
    self_signal: &MetricsRecord,
    self_idler: &MetricsRecord,
) -> Result<ZwmValue> {
    let t = cross.integration_time;
    for rec in [self_signal, self_idler] {
        if ((rec.integration_time - t) / t).abs() > 1e-9 {
            return Err(Error::MismatchedRecords(format!(
                "integration times differ: {} s vs {} s",
                t, rec.integration_time
            )));
        }
    }
    let v = cross.true_coincidences()
        - 2.0 * (self_signal.true_coincidences() + self_idler.true_coincidences());
    let var = cross.coincidences.sigma.powi(2)
        + cross.accidentals.sigma.powi(2)
        + 4.0
            * (self_signal.coincidences.sigma.powi(2)
                + self_signal.accidentals.sigma.powi(2)
                + self_idler.coincidences.sigma.powi(2)
                + self_idler.accidentals.sigma.powi(2));
    let sigma = var.sqrt();
    Ok(ZwmValue {
        v,
        sigma,
        ratio: nonclassicality_violation(v, sigma)?,
    })
}

pub fn nonclassicality_violation(v: f64, sigma: f64) -> Result<f64> {
    if sigma > 0.0 {
        Ok(v / sigma)
    } else {
        Err(Error::UndefinedMetric("V/σ undefined for σ = 0".into()))
    }
}
