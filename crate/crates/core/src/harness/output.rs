//! CSV tables and JSON metadata sidecars.
//!
//! Column order is fixed per experiment. Floats use the shortest decimal
//! that round-trips; missing values are empty cells.

use super::experiments::{Experiment, Row, ScanResult};
use crate::counting::{MetricsRecord, ZwmValue};
use crate::error::Result;
use crate::units::{MW, NM};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

type Getter = Box<dyn Fn(&Row) -> Option<f64>>;

struct Column {
    name: String,
    get: Getter,
}

fn col(name: impl Into<String>, get: impl Fn(&Row) -> Option<f64> + 'static) -> Column {
    Column {
        name: name.into(),
        get: Box::new(get),
    }
}

#[derive(Clone, Copy)]
enum Source {
    Mc,
    Analytic,
}

impl Source {
    fn prefix(self) -> &'static str {
        match self {
            Source::Mc => "mc",
            Source::Analytic => "an",
        }
    }
}

fn pick<T: Copy>(p: &super::experiments::Paired<T>, src: Source) -> Option<T> {
    match src {
        Source::Mc => p.mc,
        Source::Analytic => Some(p.analytic),
    }
}

fn cross_columns(src: Source) -> Vec<Column> {
    let p = src.prefix();
    let metric = move |f: fn(&MetricsRecord) -> Option<f64>| move |r: &Row| pick(&r.cross, src).and_then(|m| f(&m));
    vec![
        col(format!("{p}_D_s_Hz"), metric(|m| Some(m.singles_a.value))),
        col(format!("{p}_D_s_sigma_Hz"), metric(|m| Some(m.singles_a.sigma))),
        col(format!("{p}_D_i_Hz"), metric(|m| Some(m.singles_b.value))),
        col(format!("{p}_D_i_sigma_Hz"), metric(|m| Some(m.singles_b.sigma))),
        col(format!("{p}_D_c_Hz"), metric(|m| Some(m.coincidences.value))),
        col(format!("{p}_D_c_sigma_Hz"), metric(|m| Some(m.coincidences.sigma))),
        col(format!("{p}_D_a_Hz"), metric(|m| Some(m.accidentals.value))),
        col(format!("{p}_D_a_sigma_Hz"), metric(|m| Some(m.accidentals.sigma))),
        col(format!("{p}_CA"), metric(|m| Some(m.contrast))),
        col(format!("{p}_CA_sigma"), metric(|m| Some(m.contrast_sigma))),
        col(format!("{p}_R_s"), metric(|m| m.pair_ratio_signal)),
        col(format!("{p}_R_i"), metric(|m| m.pair_ratio_idler)),
    ]
}

fn self_columns(src: Source, tag: &'static str, signal: bool) -> Vec<Column> {
    let p = src.prefix();
    let metric = move |f: fn(&MetricsRecord) -> f64| {
        move |r: &Row| {
            let paired = if signal { r.self_signal } else { r.self_idler };
            paired.and_then(|x| pick(&x, src)).map(|m| f(&m))
        }
    };
    vec![
        col(format!("{p}_{tag}_coinc_Hz"), metric(|m| m.coincidences.value)),
        col(format!("{p}_{tag}_coinc_sigma_Hz"), metric(|m| m.coincidences.sigma)),
        col(format!("{p}_{tag}_acc_Hz"), metric(|m| m.accidentals.value)),
        col(format!("{p}_{tag}_acc_sigma_Hz"), metric(|m| m.accidentals.sigma)),
        col(format!("{p}_{tag}_CA"), metric(|m| m.contrast)),
        col(format!("{p}_{tag}_CA_sigma"), metric(|m| m.contrast_sigma)),
    ]
}

fn zwm_columns(src: Source) -> Vec<Column> {
    let p = src.prefix();
    let value = move |f: fn(&ZwmValue) -> f64| move |r: &Row| r.zwm.and_then(|z| pick(&z, src)).map(|z| f(&z));
    vec![
        col(format!("{p}_V_Hz"), value(|z| z.v)),
        col(format!("{p}_sigma_V_Hz"), value(|z| z.sigma)),
        col(format!("{p}_V_over_sigma"), value(|z| z.ratio)),
    ]
}

fn columns(experiment: Experiment, with_mc: bool) -> Vec<Column> {
    let mut cols = match experiment {
        Experiment::PowerSweep | Experiment::ZwmTest => {
            vec![col("power_mW", |r| Some(r.axis / MW)), col("seconds", |r| Some(r.seconds))]
        }
        Experiment::SpectralScan => vec![
            col("offset_nm", |r| Some(r.axis / NM)),
            col("seconds", |r| Some(r.seconds)),
            col("spectral_weight", |r| r.spectral_weight),
        ],
    };
    let sources: &[Source] = if with_mc {
        &[Source::Mc, Source::Analytic]
    } else {
        &[Source::Analytic]
    };
    for &src in sources {
        cols.extend(cross_columns(src));
        if experiment == Experiment::ZwmTest {
            cols.extend(self_columns(src, "self_s", true));
            cols.extend(self_columns(src, "self_i", false));
            cols.extend(zwm_columns(src));
        }
    }
    cols
}

/// Column names of the table for `experiment`.
pub fn header(experiment: Experiment, with_mc: bool) -> Vec<String> {
    columns(experiment, with_mc).into_iter().map(|c| c.name).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn to_csv(result: &ScanResult) -> String {
    let cols = columns(result.experiment, !result.provenance.analytic_only);
    let mut out = String::new();
    let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(out, "{}", names.join(","));
    for row in &result.rows {
        let cells: Vec<String> = cols.iter().map(|c| cell((c.get)(row))).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a> {
    experiment: &'a str,
    provenance: &'a super::experiments::Provenance,
    columns: Vec<String>,
    fits: &'a [super::experiments::FitOutcome],
    config: &'a str,
}

pub fn to_json(result: &ScanResult, config_text: &str) -> Result<String> {
    pretty_json(&Sidecar {
        experiment: result.experiment.as_str(),
        provenance: &result.provenance,
        columns: header(result.experiment, !result.provenance.analytic_only),
        fits: &result.fits,
        config: config_text,
    })
}

/// Indented JSON with a trailing newline.
pub fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| crate::error::Error::Io(e.to_string()))
}

/// Writes `<experiment>.csv` and `<experiment>.json` into `dir`.
pub fn write_result(dir: &Path, result: &ScanResult, config_text: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let stem = result.experiment.as_str();
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&csv, to_csv(result))?;
    std::fs::write(&json, to_json(result, config_text)?)?;
    Ok((csv, json))
}

/// One human-readable line per row.
pub fn summary_lines(result: &ScanResult) -> Vec<String> {
    result
        .rows
        .iter()
        .map(|row| {
            let m = row.cross.best();
            let axis = match result.experiment {
                Experiment::SpectralScan => format!("offset {:+.2} nm", row.axis / NM),
                _ => format!("P {:.3} mW", row.axis / MW),
            };
            let mut line = format!(
                "{axis}  T {:.0} s  D_s {:.4e} Hz  D_i {:.4e} Hz  D_c {:.4e} Hz  C/A {:.2}",
                row.seconds, m.singles_a.value, m.singles_b.value, m.coincidences.value, m.contrast
            );
            if let (Some(rs), Some(ri)) = (m.pair_ratio_signal, m.pair_ratio_idler) {
                let _ = write!(line, "  R_s {rs:.3}  R_i {ri:.3}");
            }
            if let Some(z) = row.zwm {
                let z = z.best();
                let _ = write!(line, "  V {:.4e} Hz  V/σ {:.1}", z.v, z.ratio);
            }
            line
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::experiments::{run_power_sweep, run_zwm, Calibrated, RunOptions};

    fn analytic(exp: Experiment) -> ScanResult {
        let cal = Calibrated::from_config(&ExperimentConfig::nominal()).unwrap();
        let opts = RunOptions { analytic_only: true };
        match exp {
            Experiment::ZwmTest => run_zwm(&cal, opts).unwrap(),
            _ => run_power_sweep(&cal, opts).unwrap(),
        }
    }

    #[test]
    fn csv_shape() {
        let r = analytic(Experiment::PowerSweep);
        let csv = to_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        let width = lines[0].split(',').count();
        assert_eq!(width, 14);
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[0].starts_with("power_mW,seconds,an_D_s_Hz"));
        assert!(!lines[0].contains("mc_"));
    }

    #[test]
    fn floats_round_trip() {
        let r = analytic(Experiment::ZwmTest);
        let csv = to_csv(&r);
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(row[0] * MW, r.rows[0].axis);
        assert_eq!(row[2], r.rows[0].cross.analytic.singles_a.value);
    }

    #[test]
    fn sidecar_has_provenance_and_fits() {
        let r = analytic(Experiment::PowerSweep);
        let json: serde_json::Value = serde_json::from_str(&to_json(&r, "x = 1\n").unwrap()).unwrap();
        assert_eq!(json["experiment"], "power-sweep");
        assert_eq!(json["provenance"]["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(json["fits"][0]["name"], "signal_singles");
        assert!(json["fits"][0]["result"]["Ok"]["exponent"].as_f64().unwrap() > 1.9);
    }
}
