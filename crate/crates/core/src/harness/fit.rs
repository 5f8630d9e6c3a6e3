//! Gaussian peak and power-law fits used by the experiment drivers.

use crate::error::{Error, Result};
use nalgebra::{Matrix4, Vector4};
use serde::Serialize;
use std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Absent for an unweighted fit.
    pub sigma: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y, sigma: None }
    }

    pub fn weighted(x: f64, y: f64, sigma: f64) -> Self {
        Point {
            x,
            y,
            sigma: Some(sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub baseline: f64,
    /// Weighted residual sum of squares at the solution.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        gaussian(&[self.center, self.fwhm, self.amplitude, self.baseline], x)
    }
}

const MAX_ITERATIONS: usize = 200;
const RELATIVE_STEP: f64 = 1e-8;

fn gaussian(p: &[f64; 4], x: f64) -> f64 {
    let [c, w, a, b] = *p;
    b + a * (-4.0 * LN_2 * ((x - c) / w).powi(2)).exp()
}

fn gradient(p: &[f64; 4], x: f64) -> Vector4<f64> {
    let [c, w, a, _] = *p;
    let d = x - c;
    let e = (-4.0 * LN_2 * (d / w).powi(2)).exp();
    Vector4::new(
        a * e * 8.0 * LN_2 * d / (w * w),
        a * e * 8.0 * LN_2 * d * d / (w * w * w),
        e,
        1.0,
    )
}

/// Levenberg-Marquardt fit of `b + A·exp(−4 ln2 (x−c)²/FWHM²)`.
///
/// Initial guess: center at the maximum (smallest `x` on ties), baseline at
/// the minimum, amplitude `max − min`, width from the half-maximum
/// crossings either side of the peak.
pub fn fit_gaussian(points: &[Point]) -> Result<GaussianFit> {
    if points.len() < 5 {
        return Err(Error::Fit(format!(
            "need at least 5 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let weights: Vec<f64> = sorted
        .iter()
        .map(|p| match p.sigma {
            Some(s) if s > 0.0 => 1.0 / (s * s),
            Some(_) => 0.0,
            None => 1.0,
        })
        .collect();

    let mut p = initial_guess(&sorted)?;
    let cost = |p: &[f64; 4]| -> f64 {
        sorted
            .iter()
            .zip(&weights)
            .map(|(pt, w)| w * (pt.y - gaussian(p, pt.x)).powi(2))
            .sum()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let scale = sorted.last().unwrap().x - sorted[0].x;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (pt, w) in sorted.iter().zip(&weights) {
            let g = gradient(&p, pt.x);
            let r = pt.y - gaussian(&p, pt.x);
            jtj += g * g.transpose() * *w;
            jtr += g * (r * w);
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            if trial[1] <= 0.0 || !trial.iter().all(|v| v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let trial_cost = cost(&trial);
            if trial_cost <= current {
                let floors = [scale, scale, p[2].abs(), p[2].abs()];
                let rel = (0..4)
                    .map(|k| step[k].abs() / p[k].abs().max(1e-12 * floors[k]).max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                p = trial;
                current = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < RELATIVE_STEP {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: already at the minimum
            converged = current.is_finite();
            break;
        }
    }
    Ok(GaussianFit {
        center: p[0],
        fwhm: p[1],
        amplitude: p[2],
        baseline: p[3],
        residual: current,
        iterations,
        converged,
    })
}

fn initial_guess(sorted: &[Point]) -> Result<[f64; 4]> {
    let (mut imax, mut ymin) = (0, f64::INFINITY);
    for (k, pt) in sorted.iter().enumerate() {
        if pt.y > sorted[imax].y {
            imax = k;
        }
        ymin = ymin.min(pt.y);
    }
    let ymax = sorted[imax].y;
    if ymax - ymin <= 0.0 {
        return Err(Error::Fit("degenerate data: all y values equal".into()));
    }
    let half = ymin + 0.5 * (ymax - ymin);
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for k in range {
            if sorted[k].y <= half {
                let (a, b) = (&sorted[k], &sorted[prev]);
                let t = (half - a.y) / (b.y - a.y);
                return Some(a.x + t * (b.x - a.x));
            }
            prev = k;
        }
        None
    };
    let left = crossing(&mut (0..imax).rev());
    let right = crossing(&mut (imax + 1..sorted.len()));
    let span = sorted.last().unwrap().x - sorted[0].x;
    let center = sorted[imax].x;
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (center - l),
        (None, Some(r)) => 2.0 * (r - center),
        (None, None) => 0.5 * span,
    };
    Ok([center, fwhm.max(span * 1e-6), ymax - ymin, ymin])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Fit("power-law fit needs positive x and y".into()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("power-law fit needs distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    Ok(PowerLawFit {
        exponent,
        prefactor: (my - exponent * mx).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;

    fn samples(c: f64, w: f64, a: f64, b: f64, xs: impl Iterator<Item = f64>) -> Vec<Point> {
        let p = [c, w, a, b];
        xs.map(|x| Point::new(x, gaussian(&p, x))).collect()
    }

    #[test]
    fn recovers_exact_gaussian() {
        let pts = samples(0.12, 0.9, 9.0, 1.0, (0..41).map(|k| -2.0 + 0.1 * k as f64));
        let f = fit_gaussian(&pts).unwrap();
        assert!(f.converged);
        for (got, want) in [(f.center, 0.12), (f.fwhm, 0.9), (f.amplitude, 9.0), (f.baseline, 1.0)] {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn recovers_narrow_offset_peak() {
        let pts = samples(700.3, 0.05, 2.5e4, 300.0, (0..25).map(|k| 699.9 + 0.04 * k as f64));
        let f = fit_gaussian(&pts).unwrap();
        assert!(((f.fwhm - 0.05) / 0.05).abs() < 1e-6);
        assert!(((f.center - 700.3) / 700.3).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let flat: Vec<_> = (0..7).map(|k| Point::new(k as f64, 3.0)).collect();
        assert!(matches!(fit_gaussian(&flat), Err(Error::Fit(_))));
        let few: Vec<_> = (0..4).map(|k| Point::new(k as f64, k as f64)).collect();
        assert!(fit_gaussian(&few).is_err());
    }

    #[test]
    fn noisy_fits_are_unbiased() {
        let truth = [0.0, 0.9, 10.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 100;
        let mut sums = [0.0; 4];
        for _ in 0..trials {
            let pts: Vec<_> = (0..41)
                .map(|k| {
                    let x = -2.0 + 0.1 * k as f64;
                    let y = gaussian(&truth, x);
                    // 1% multiplicative noise via Box-Muller
                    let (u1, u2): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    Point::weighted(x, y * (1.0 + 0.01 * z), 0.01 * y)
                })
                .collect();
            let f = fit_gaussian(&pts).unwrap();
            for (s, v) in sums.iter_mut().zip([f.center, f.fwhm, f.amplitude, f.baseline]) {
                *s += v;
            }
        }
        for (k, want) in truth.iter().enumerate() {
            let mean = sums[k] / trials as f64;
            let tol = if *want == 0.0 { 0.05 * truth[1] } else { 0.05 * want.abs() };
            assert!((mean - want).abs() < tol, "param {k}: {mean} vs {want}");
        }
    }

    #[test]
    fn argmax_tie_takes_smallest_x() {
        let pts: Vec<_> = [0.0, 1.0, 5.0, 5.0, 1.0, 0.0, 0.0]
            .iter()
            .enumerate()
            .map(|(k, &y)| Point::new(k as f64, y))
            .collect();
        let guess = initial_guess(&pts).unwrap();
        assert_eq!(guess[0], 2.0);
    }

    #[test]
    fn power_laws() {
        let quad: Vec<_> = (1..=6).map(|k| (k as f64 * 0.2, 3.0 * (k as f64 * 0.2).powi(2))).collect();
        assert!((fit_power_law(&quad).unwrap().exponent - 2.0).abs() < 1e-12);
        let lin: Vec<_> = (1..=6).map(|k| (k as f64, 7.0 * k as f64)).collect();
        let f = fit_power_law(&lin).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12);
        assert!((f.prefactor - 7.0).abs() < 1e-9);
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }
}
