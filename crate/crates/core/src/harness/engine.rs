//! Deterministic batched Monte Carlo.
//!
//! A run of `N` pulses is cut into fixed-size batches. Batch `b` of scenario
//! `s` draws from its own ChaCha8 stream keyed by `(seed, s)` with stream
//! number `b`, so every batch is reproducible on its own and the merged
//! result does not depend on how batches are scheduled across workers.

use crate::counting::{split_clicks, CoincidenceCounter, CountsRecord, RecordKind};
use crate::error::{Error, Result};
use crate::pairgen::PulseSampler;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Which coincidence measurement a batch emulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    Cross,
    SelfSignal,
    SelfIdler,
}

impl Measurement {
    pub fn kind(self) -> RecordKind {
        match self {
            Measurement::Cross => RecordKind::Cross,
            Measurement::SelfSignal => RecordKind::SelfSignal,
            Measurement::SelfIdler => RecordKind::SelfIdler,
        }
    }

    fn code(self) -> u64 {
        match self {
            Measurement::Cross => 0,
            Measurement::SelfSignal => 1,
            Measurement::SelfIdler => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPlan {
    pub pulses: u64,
    pub batch_pulses: u64,
    pub seed: u64,
    /// Zero lets rayon pick.
    pub workers: usize,
}

impl BatchPlan {
    pub fn batches(&self) -> u64 {
        self.pulses.div_ceil(self.batch_pulses)
    }

    /// Pulses in batch `b`; the final batch carries the remainder.
    pub fn batch_len(&self, b: u64) -> u64 {
        let start = b * self.batch_pulses;
        self.batch_pulses.min(self.pulses - start)
    }
}

/// Stream identifier for one scenario of an experiment.
pub fn scenario_id(experiment: u64, row: usize, measurement: Measurement) -> u64 {
    (experiment << 40) ^ ((row as u64) << 8) ^ measurement.code()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// The random stream for batch `batch` of `scenario` under `seed`.
pub fn batch_rng(seed: u64, scenario: u64, batch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix(seed) ^ splitmix(scenario.rotate_left(17) ^ 0x5eed);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(batch);
    rng
}

/// Runs every batch through `kernel` and merges the partial records.
pub fn execute_batches<K>(plan: &BatchPlan, scenario: u64, kernel: K) -> Result<CountsRecord>
where
    K: Fn(&mut ChaCha8Rng, u64) -> CountsRecord + Sync,
{
    if plan.pulses == 0 {
        return Err(Error::EmptyStream);
    }
    if plan.batch_pulses == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let run = || {
        (0..plan.batches())
            .into_par_iter()
            .map(|b| {
                let mut rng = batch_rng(plan.seed, scenario, b);
                kernel(&mut rng, plan.batch_len(b))
            })
            .collect::<Vec<_>>()
    };
    let parts = if plan.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?
            .install(run)
    };
    let mut iter = parts.into_iter();
    let first = iter.next().ok_or(Error::EmptyStream)?;
    iter.try_fold(first, |acc, part| acc.merge(&part))
}

/// Pulse kernel: skips runs of empty pulses geometrically, draws each
/// non-empty pulse from the conditional law, and feeds the coincidence
/// circuit for `measurement`.
pub fn pulse_kernel<R: Rng + ?Sized>(
    sampler: &PulseSampler,
    measurement: Measurement,
    repetition_rate: f64,
    rng: &mut R,
    pulses: u64,
) -> CountsRecord {
    let mut counter = CoincidenceCounter::new(measurement.kind(), repetition_rate);
    let q = sampler.nonempty_probability();
    if q <= 0.0 {
        counter.push_dark(pulses);
        return counter.finish();
    }
    let ln_empty = (-q).ln_1p();
    let mut done = 0u64;
    while done < pulses {
        let gap = if q >= 1.0 {
            0
        } else {
            let u: f64 = 1.0 - rng.random::<f64>();
            let g = (u.ln() / ln_empty).floor();
            if g >= (pulses - done) as f64 {
                pulses - done
            } else {
                g as u64
            }
        };
        counter.push_dark(gap);
        done += gap;
        if done == pulses {
            break;
        }
        let pulse = sampler.sample_nonempty(rng);
        let (a, b) = match measurement {
            Measurement::Cross => (pulse.click_s, pulse.click_i),
            Measurement::SelfSignal => split_clicks(rng, pulse.det_s),
            Measurement::SelfIdler => split_clicks(rng, pulse.det_i),
        };
        counter.push(a, b);
        done += 1;
    }
    counter.finish()
}

/// Monte Carlo counts for `measurement` over `plan`.
pub fn simulate(
    sampler: &PulseSampler,
    measurement: Measurement,
    repetition_rate: f64,
    plan: &BatchPlan,
    scenario: u64,
) -> Result<CountsRecord> {
    execute_batches(plan, scenario, |rng, n| {
        pulse_kernel(sampler, measurement, repetition_rate, rng, n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{accumulate, to_metrics};
    use crate::pairgen::{analytic_rates, DetectionSpec, PulseMeans};

    fn sampler() -> (PulseSampler, PulseMeans) {
        let means = PulseMeans::standard(0.05, 2.7, 0.003, 3.5, 0.05, 2.7);
        (PulseSampler::new(&means, &DetectionSpec::nominal()).unwrap(), means)
    }

    #[test]
    fn batch_partition() {
        let plan = BatchPlan {
            pulses: 10,
            batch_pulses: 4,
            seed: 0,
            workers: 1,
        };
        assert_eq!(plan.batches(), 3);
        assert_eq!((0..3).map(|b| plan.batch_len(b)).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn worker_count_does_not_change_counts() {
        let (s, _) = sampler();
        let results: Vec<_> = [1, 4, 16]
            .iter()
            .map(|&workers| {
                let plan = BatchPlan {
                    pulses: 3_000_000,
                    batch_pulses: 65_536,
                    seed: 42,
                    workers,
                };
                simulate(&s, Measurement::Cross, 80e6, &plan, 9).unwrap()
            })
            .collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
    }

    #[test]
    fn distinct_seeds_differ_but_agree_statistically() {
        let (s, means) = sampler();
        let det = DetectionSpec::nominal();
        let run = |seed| {
            let plan = BatchPlan {
                pulses: 4_000_000,
                batch_pulses: 1 << 18,
                seed,
                workers: 0,
            };
            to_metrics(&simulate(&s, Measurement::Cross, 80e6, &plan, 1).unwrap(), &det).unwrap()
        };
        let (a, b) = (run(1), run(2));
        assert_ne!(a.coincidences.value, b.coincidences.value);
        let diff = (a.coincidences.value - b.coincidences.value).abs();
        let sd = (a.coincidences.sigma.powi(2) + b.coincidences.sigma.powi(2)).sqrt();
        assert!(diff < 4.0 * sd);
        let expected = analytic_rates(&means, &det, 80e6);
        assert!((a.singles_a.value - expected.singles_s).abs() < 4.0 * a.singles_a.sigma);
    }

    /// The skipping kernel and a plain per-pulse loop sample the same law.
    #[test]
    fn skipping_kernel_matches_per_pulse_loop() {
        let (s, _) = sampler();
        let n = 2_000_000u64;
        let mut rng = batch_rng(3, 0, 0);
        let direct = accumulate((0..n).map(|_| s.sample(&mut rng)), 80e6).unwrap();
        let mut rng = batch_rng(3, 1, 0);
        let skipped = pulse_kernel(&s, Measurement::Cross, 80e6, &mut rng, n);
        for (a, b) in [
            (direct.singles_a, skipped.singles_a),
            (direct.singles_b, skipped.singles_b),
            (direct.coincidences, skipped.coincidences),
            (direct.accidentals, skipped.accidentals),
        ] {
            let sd = ((a + b) as f64).sqrt();
            assert!((a as f64 - b as f64).abs() < 4.0 * sd, "{a} vs {b}");
        }
        assert_eq!(skipped.pulses, n);
        assert_eq!(skipped.delay_pairs, n - 1);
    }

    #[test]
    fn streams_are_independent_of_scheduling() {
        let mut a = batch_rng(7, 11, 5);
        let mut b = batch_rng(7, 11, 5);
        let mut c = batch_rng(7, 11, 6);
        let x: u64 = a.random();
        assert_eq!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
    }
}
