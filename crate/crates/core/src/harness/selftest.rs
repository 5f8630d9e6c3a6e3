//! Reduced-scale oracle checks run by the `selftest` subcommand.

use super::config::ExperimentConfig;
use super::engine::{batch_rng, pulse_kernel, Measurement};
use super::experiments::Calibrated;
use super::fit::fit_power_law;
use crate::counting::accumulate;
use crate::dispersion::{
    calibrate_dispersion, group_delay_walkoff, solve_phase_matched_signal, DispersionModel,
    DispersionTargets, FiberSpec, PumpSpec,
};
use crate::pairgen::{analytic_rates, DetectionSpec, PulseMeans, PulseSampler, Target, Thermal};

/// Inputs of the closed-form solver check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestFixture {
    /// Quartic coefficient of the β2 = 0 model, s⁴/m; must be negative.
    pub beta4: f64,
    pub peak_power: f64,
    pub gamma: f64,
    pub pulses: u64,
    pub seed: u64,
}

impl Default for SelftestFixture {
    fn default() -> Self {
        SelftestFixture {
            beta4: -1e-55,
            peak_power: 1.0,
            gamma: 0.11,
            pulses: 1_000_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Widened band for small samples.
const SIGMAS: f64 = 5.0;

pub fn run_selftest(fixture: &SelftestFixture) -> Vec<CheckResult> {
    vec![
        closed_form_root(fixture),
        dispersion_round_trip(),
        negative_binomial_moments(fixture),
        accidental_factorization(fixture),
        mc_matches_analytic(fixture),
        power_law_exact(),
    ]
}

fn closed_form_root(f: &SelftestFixture) -> CheckResult {
    let pump = PumpSpec::nominal();
    let fiber = FiberSpec {
        gamma: f.gamma,
        ..FiberSpec::nominal()
    };
    let pump = pump.with_power(f.peak_power * pump.duty_factor());
    let expected = (24.0 * f.gamma * f.peak_power / -f.beta4).powf(0.25);
    let result = DispersionModel::new(pump.wavelength, 0.0, 0.0, f.beta4)
        .and_then(|m| solve_phase_matched_signal(&pump, &fiber, &m));
    match result {
        Ok(sb) if expected.is_finite() => {
            let rel = (sb.detuning / expected - 1.0).abs();
            check("closed_form_root", rel < 1e-6, format!("relative error {rel:e}"))
        }
        Ok(sb) => check(
            "closed_form_root",
            false,
            format!("solver found Ω = {:e} rad/s but no closed-form root exists", sb.detuning),
        ),
        Err(e) => check("closed_form_root", false, e.to_string()),
    }
}

fn dispersion_round_trip() -> CheckResult {
    let (pump, fiber, t) = (PumpSpec::nominal(), FiberSpec::nominal(), DispersionTargets::nominal());
    let outcome = calibrate_dispersion(&pump, &fiber, &t).and_then(|m| {
        let sb = solve_phase_matched_signal(&pump.with_power(t.power), &fiber, &m)?;
        let w = group_delay_walkoff(sb.signal, sb.idler, &m, fiber.length);
        Ok(((sb.signal / t.matched_signal - 1.0).abs(), (w / t.walkoff - 1.0).abs()))
    });
    match outcome {
        Ok((a, b)) => check(
            "dispersion_round_trip",
            a < 1e-6 && b < 1e-6,
            format!("wavelength {a:e}, walkoff {b:e} relative"),
        ),
        Err(e) => check("dispersion_round_trip", false, e.to_string()),
    }
}

fn negative_binomial_moments(f: &SelftestFixture) -> CheckResult {
    let (mean, modes) = (0.4, 3.0);
    let means = PulseMeans {
        components: vec![Thermal {
            mean,
            modes,
            target: Target::Both,
        }],
    };
    let sampler = match PulseSampler::new(&means, &DetectionSpec::product(1.0, 1.0)) {
        Ok(s) => s,
        Err(e) => return check("negative_binomial_moments", false, e.to_string()),
    };
    let mut rng = batch_rng(f.seed, 0x5e1f, 0);
    let n = f.pulses as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..f.pulses {
        let k = sampler.sample(&mut rng).n_pair as f64;
        s1 += k;
        s2 += k * k;
    }
    let m = s1 / n;
    let var = s2 / n - m * m;
    let want_var = mean * (1.0 + mean / modes);
    let mean_err = (m - mean).abs() / (want_var / n).sqrt();
    // var of the sample variance ≈ (μ4 − σ⁴)/n; bound μ4 generously by 10σ⁴
    let var_err = (var - want_var).abs() / (9.0 * want_var * want_var / n).sqrt();
    check(
        "negative_binomial_moments",
        mean_err < SIGMAS && var_err < SIGMAS,
        format!("mean {m:.5} ({mean_err:.2}σ), variance {var:.5} ({var_err:.2}σ)"),
    )
}

fn nominal_sampler() -> Result<(PulseSampler, PulseMeans, DetectionSpec), String> {
    let cal = Calibrated::from_config(&ExperimentConfig::nominal()).map_err(|e| e.to_string())?;
    let det = cal.config.detection;
    let means = cal.means(1e-3);
    let sampler = PulseSampler::new(&means, &det).map_err(|e| e.to_string())?;
    Ok((sampler, means, det))
}

fn accidental_factorization(f: &SelftestFixture) -> CheckResult {
    let (sampler, _, _) = match nominal_sampler() {
        Ok(s) => s,
        Err(e) => return check("accidental_factorization", false, e),
    };
    let mut rng = batch_rng(f.seed, 0xacc, 0);
    let rec = match accumulate((0..f.pulses).map(|_| sampler.sample(&mut rng)), 1.0) {
        Ok(r) => r,
        Err(e) => return check("accidental_factorization", false, e.to_string()),
    };
    let n = rec.pulses as f64;
    let expected = (rec.singles_a as f64 / n) * (rec.singles_b as f64 / n);
    let observed = rec.accidentals as f64 / rec.delay_pairs as f64;
    let se = (expected * (1.0 - expected) / rec.delay_pairs as f64).sqrt();
    let z = (observed - expected).abs() / se;
    check(
        "accidental_factorization",
        z < SIGMAS,
        format!("delayed-pair rate {observed:e} vs product {expected:e} ({z:.2}σ)"),
    )
}

fn mc_matches_analytic(f: &SelftestFixture) -> CheckResult {
    let (sampler, means, det) = match nominal_sampler() {
        Ok(s) => s,
        Err(e) => return check("mc_matches_analytic", false, e),
    };
    let mut rng = batch_rng(f.seed, 0xa7a, 0);
    let rec = pulse_kernel(&sampler, Measurement::Cross, 1.0, &mut rng, f.pulses);
    let expect = analytic_rates(&means, &det, 1.0);
    let n = f.pulses as f64;
    let worst = [
        (rec.singles_a, expect.singles_s),
        (rec.singles_b, expect.singles_i),
        (rec.coincidences, expect.coincidences),
    ]
    .iter()
    .map(|&(count, p)| (count as f64 - p * n).abs() / (n * p * (1.0 - p)).sqrt())
    .fold(0.0, f64::max);
    check(
        "mc_matches_analytic",
        worst < SIGMAS,
        format!("largest deviation {worst:.2}σ over {} pulses", f.pulses),
    )
}

fn power_law_exact() -> CheckResult {
    let quad: Vec<(f64, f64)> = (1..=5).map(|k| (k as f64, 3.0 * (k * k) as f64)).collect();
    match fit_power_law(&quad) {
        Ok(fit) => check(
            "power_law_exact",
            (fit.exponent - 2.0).abs() < 1e-12,
            format!("exponent {}", fit.exponent),
        ),
        Err(e) => check("power_law_exact", false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixture_passes() {
        for c in run_selftest(&SelftestFixture::default()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn flipped_beta4_fails_by_name() {
        let fixture = SelftestFixture {
            beta4: 1e-55,
            ..SelftestFixture::default()
        };
        let failed: Vec<_> = run_selftest(&fixture).into_iter().filter(|c| !c.passed).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "closed_form_root");
    }
}
