//! `fwmpair`: command-line drivers for the photon-pair source model.

use clap::{Args, Parser, Subcommand};
use fwm_core::harness::config::{ExperimentConfig, RawConfig};
use fwm_core::harness::experiments::{
    calibration_report, derived_config, run_power_sweep, run_spectral_scan, run_zwm, Calibrated,
    FitOutcome, RunOptions, ScanResult,
};
use fwm_core::harness::output::{pretty_json, summary_lines, write_result};
use fwm_core::harness::selftest::{run_selftest, SelftestFixture};
use fwm_core::units::{MW, NM, PS, UW};
use fwm_core::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fwmpair", version, about = "Four-wave-mixing photon-pair source simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the dispersion and source models and write a derived config.
    Calibrate(Common),
    /// Singles, coincidences, contrast and pair ratios against pump power.
    SweepPower(Common),
    /// Contrast against signal-window offset with a Gaussian fit.
    ScanSpectrum(Common),
    /// Cross and self correlations and the Zou-Wang-Mandel statistic.
    ZwmTest(Common),
    /// Reduced-scale oracle checks.
    Selftest,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory.
    #[arg(short, long, env = "FWMPAIR_OUT_DIR", default_value = "fwmpair-out")]
    out: PathBuf,
    /// Override a config key, applied after the file is parsed.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; same as `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks automatically.
    #[arg(long)]
    workers: Option<usize>,
    /// Report expectations only, without Monte Carlo.
    #[arg(long)]
    analytic_only: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config)
            .map_err(|e| Error::Config(format!("{}: {e}", self.config.display())))?;
        let mut raw = RawConfig::parse(&text)?;
        for o in &self.overrides {
            raw.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            raw.apply_override(&format!("run.seed={seed}"))?;
        }
        if let Some(workers) = self.workers {
            raw.apply_override(&format!("run.workers={workers}"))?;
        }
        ExperimentConfig::from_raw(raw)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            analytic_only: self.analytic_only,
        }
    }
}

fn calibrate(args: &Common) -> Result<()> {
    let cal = Calibrated::from_config(&args.load()?)?;
    let report = calibration_report(&cal, &[50.0 * UW, 0.6 * MW])?;
    std::fs::create_dir_all(&args.out)?;
    let derived = args.out.join("derived.conf");
    std::fs::write(&derived, derived_config(&cal))?;
    let report_path = args.out.join("calibration.json");
    std::fs::write(&report_path, pretty_json(&report)?)?;

    println!("dispersion  β2 {:.4e} s²/m  β3 {:.4e} s³/m  β4 {:.4e} s⁴/m", report.beta2, report.beta3, report.beta4);
    println!(
        "sidebands   λ_s {:.3} nm  λ_i {:.3} nm  walkoff {:.3} ps  shift {:.2e} nm/mW",
        report.signal_wavelength / NM,
        report.idler_wavelength / NM,
        report.walkoff / PS,
        report.shift_per_milliwatt / NM
    );
    println!(
        "source      κ {:.4}  Raman {:.4e} / {:.4e} per pulse per W  modes {:.3} / {:.3} (pairs {:.3})",
        report.kappa,
        report.raman_signal,
        report.raman_idler,
        report.modes_signal,
        report.modes_idler,
        report.pair_modes
    );
    println!(
        "anchors     κ = 1 rate {:.1} kHz  figure of merit {:.1} kHz/mW/nm",
        report.unit_kappa_rate / 1e3,
        report.figure_of_merit / 1e3 * MW * NM
    );
    println!("{:>10} {:>12} {:>10} {:>8} {:>8}", "P (mW)", "D_c (kHz)", "C/A", "R_s", "R_i");
    for p in &report.predictions {
        println!(
            "{:>10.3} {:>12.3} {:>10.2} {:>8.3} {:>8.3}",
            p.power / MW,
            p.coincidences / 1e3,
            p.contrast,
            p.pair_ratio_signal,
            p.pair_ratio_idler
        );
    }
    println!("wrote {} and {}", derived.display(), report_path.display());
    Ok(())
}

fn experiment(args: &Common, run: fn(&Calibrated, RunOptions) -> Result<ScanResult>) -> Result<()> {
    let config = args.load()?;
    let cal = Calibrated::from_config(&config)?;
    let result = run(&cal, args.options())?;
    for line in summary_lines(&result) {
        println!("{line}");
    }
    for fit in &result.fits {
        println!("{}", describe_fit(fit));
    }
    let (csv, json) = write_result(&args.out, &result, &config.raw.canonical_text())?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn describe_fit(fit: &FitOutcome) -> String {
    match fit {
        FitOutcome::PowerLaw { name, result: Ok(f) } => format!("fit {name}: exponent {:.3}", f.exponent),
        FitOutcome::Gaussian { name, result: Ok(f) } => format!(
            "fit {name}: center {:+.3} nm  FWHM {:.3} nm  amplitude {:.3}  baseline {:.3}{}",
            f.center,
            f.fwhm,
            f.amplitude,
            f.baseline,
            if f.converged { "" } else { "  (not converged)" }
        ),
        FitOutcome::PowerLaw { name, result: Err(e) } | FitOutcome::Gaussian { name, result: Err(e) } => {
            format!("fit {name}: failed: {e}")
        }
    }
}

fn selftest() -> Result<()> {
    let checks = run_selftest(&SelftestFixture::default());
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(Error::Numerical(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::SweepPower(a) => experiment(a, run_power_sweep),
        Command::ScanSpectrum(a) => experiment(a, run_spectral_scan),
        Command::ZwmTest(a) => experiment(a, run_zwm),
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
