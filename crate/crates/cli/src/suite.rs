//! Desk-scale reproduction of the imaging comparison: a saline-analog and a
//! nerve-analog phantom, each imaged at three phantom positions by SA (plain, CF,
//! CFPL, amplitude-corrected) and by FUS with the focus fixed at 22 mm.

use anyhow::{Context, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::pipeline::{
    evaluate, group_means, groups_csv, metrics_csv, reconstruct, simulate, write_channel_file,
    write_reconstruction, GroupMean, Overrides, ReconstructOptions, Reconstruction,
};
use crate::scenario::{Scenario, TransmitCfg, Weighting};
use ae_core::metrics::peak_pixel;
use ae_core::{MetricsReport, Roi};

pub const SALINE: &str = include_str!("../scenarios/saline.toml");
pub const NERVE: &str = include_str!("../scenarios/nerve.toml");
pub const SHAM: &str = include_str!("../scenarios/sham.toml");

pub const FOCAL_DEPTH_MM: f64 = 22.0;
/// Half-length of the FUS focal zone used to label targets on- or off-focus.
pub const FOCAL_ZONE_HALF_MM: f64 = 3.0;

/// Depth shifts of the three phantom positions, relative to the bundled file.
pub fn phantom_shifts(phantom: &str) -> [f64; 3] {
    match phantom {
        // S+ on focus, then S- on focus, then neither
        "saline" => [0.0, -8.0, 8.0],
        _ => [0.0, 8.0, 16.0],
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub seed: Option<u64>,
    pub no_noise: bool,
    pub f_number: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// One simulated and reconstructed phantom position.
#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub phantom: String,
    pub position: usize,
    pub scenario: Scenario,
    pub sa: Reconstruction,
    pub fus: Reconstruction,
    pub reports: Vec<(String, MetricsReport)>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub runs: Vec<SuiteRun>,
    pub checks: Vec<PropertyCheck>,
    /// Per-run failures, reported together at the end.
    pub errors: Vec<String>,
    pub written: Vec<PathBuf>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

fn label_groups(s: &mut Scenario) {
    for t in &mut s.targets {
        let on = (t.z_mm - FOCAL_DEPTH_MM).abs() <= FOCAL_ZONE_HALF_MM;
        t.group = Some(if on { "on-focus" } else { "off-focus" }.to_string());
    }
}

/// Scenario of one phantom position with on/off-focus target groups.
pub fn position_scenario(base: &Scenario, shift_mm: f64) -> Scenario {
    let mut s = base.shifted(shift_mm);
    label_groups(&mut s);
    s
}

fn with_transmit(s: &Scenario, transmit: TransmitCfg) -> Scenario {
    let mut s = s.clone();
    s.transmit = transmit;
    s
}

fn run_position(
    phantom: &str,
    position: usize,
    scenario: &Scenario,
    seed: u64,
    opts: &SuiteOptions,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<SuiteRun> {
    let stem = format!("{phantom}_p{}", position + 1);
    let base_dir = Path::new(".");
    let ov = Overrides {
        seed: Some(seed),
        no_noise: opts.no_noise,
        f_number: opts.f_number,
        weighting: None,
        amplitude_correct: true,
    };
    let targets = scenario.targets();

    let sa_scn = with_transmit(scenario, TransmitCfg::Sa);
    let sa_data = simulate(&sa_scn, base_dir, &ov)?;
    let sa_file = out_dir.join("channels").join(format!("{stem}_sa.aecd"));
    write_channel_file(&sa_data, &sa_file)?;
    written.push(sa_file.clone());
    let mut sa_opts = ReconstructOptions::from_scenario(&sa_scn, &ov)?;
    sa_opts.weightings = vec![Weighting::Cf, Weighting::Cfpl];
    let sa = reconstruct(&sa_data, &sa_opts)?;
    let images_dir = out_dir.join("images");
    written.extend(write_reconstruction(
        &sa,
        &images_dir,
        &format!("{stem}_"),
        sa_opts.dynamic_range_db,
    )?);

    let fus_scn = with_transmit(
        scenario,
        TransmitCfg::Fus {
            focal_depth_mm: FOCAL_DEPTH_MM,
            line_centers_mm: None,
        },
    );
    let fus_ov = Overrides {
        seed: Some(seed.wrapping_add(1)),
        amplitude_correct: false,
        ..ov.clone()
    };
    let fus_data = simulate(&fus_scn, base_dir, &fus_ov)?;
    let fus_file = out_dir.join("channels").join(format!("{stem}_fus.aecd"));
    write_channel_file(&fus_data, &fus_file)?;
    written.push(fus_file.clone());
    let mut fus_opts = ReconstructOptions::from_scenario(&fus_scn, &fus_ov)?;
    fus_opts.weightings.clear();
    fus_opts.amplitude_correct = false;
    let fus = reconstruct(&fus_data, &fus_opts)?;
    written.extend(write_reconstruction(
        &fus,
        &images_dir,
        &format!("{stem}_"),
        fus_opts.dynamic_range_db,
    )?);

    let mut reports = evaluate(&sa.images, &targets)?;
    reports.extend(evaluate(&fus.images, &targets)?);
    for (name, _) in &mut reports {
        *name = format!("{stem}_{name}");
    }
    Ok(SuiteRun {
        phantom: phantom.to_string(),
        position,
        scenario: scenario.clone(),
        sa,
        fus,
        reports,
    })
}

/// Runs every phantom position and writes channel files, images, `metrics.csv`,
/// per-phantom `groups_<phantom>.csv`, `checksums.txt` and `summary.txt`.
pub fn run_suite(out_dir: &Path, opts: &SuiteOptions) -> Result<SuiteOutcome> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut outcome = SuiteOutcome::default();
    for (phantom, text) in [("saline", SALINE), ("nerve", NERVE)] {
        let base =
            Scenario::from_toml(text).with_context(|| format!("bundled {phantom} scenario"))?;
        let base_seed = opts.seed.unwrap_or(base.seed);
        for (position, shift) in phantom_shifts(phantom).into_iter().enumerate() {
            let scenario = position_scenario(&base, shift);
            // distinct, reproducible noise for every acquisition in the suite
            let seed = base_seed.wrapping_mul(64).wrapping_add(2 * position as u64);
            match run_position(
                phantom,
                position,
                &scenario,
                seed,
                opts,
                out_dir,
                &mut outcome.written,
            ) {
                Ok(run) => outcome.runs.push(run),
                Err(e) => outcome
                    .errors
                    .push(format!("{phantom} position {}: {e:#}", position + 1)),
            }
        }
    }

    let all_reports: Vec<(String, MetricsReport)> = outcome
        .runs
        .iter()
        .flat_map(|r| r.reports.iter().cloned())
        .collect();
    crate::pipeline::write_atomic(
        &out_dir.join("metrics.csv"),
        metrics_csv(&all_reports).as_bytes(),
    )?;
    let mut summary = String::new();
    for phantom in ["saline", "nerve"] {
        let reports: Vec<(String, MetricsReport)> = outcome
            .runs
            .iter()
            .filter(|r| r.phantom == phantom)
            .flat_map(|r| r.reports.iter().cloned())
            .collect();
        let means = group_means(&reports);
        let csv = groups_csv(&means);
        crate::pipeline::write_atomic(
            &out_dir.join(format!("groups_{phantom}.csv")),
            csv.as_bytes(),
        )?;
        let _ = writeln!(
            summary,
            "== {phantom}: group means (relative to FUS) ==\n{csv}"
        );
    }

    let mut sums = String::new();
    for path in outcome
        .written
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "aecd"))
    {
        let bytes = std::fs::read(path)?;
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        let _ = writeln!(
            sums,
            "{}  {}",
            crate::pipeline::sha256_hex(&bytes),
            rel.display()
        );
    }
    crate::pipeline::write_atomic(&out_dir.join("checksums.txt"), sums.as_bytes())?;

    outcome.checks = check_properties(&outcome.runs, opts);
    let _ = writeln!(summary, "== properties ==");
    for c in &outcome.checks {
        let _ = writeln!(
            summary,
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    for e in &outcome.errors {
        let _ = writeln!(summary, "[ERROR] {e}");
    }
    crate::pipeline::write_atomic(&out_dir.join("summary.txt"), summary.as_bytes())?;
    Ok(outcome)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Finite values of one metric for a variant over the given runs.
fn collect(
    runs: &[&SuiteRun],
    variant: &str,
    group: Option<&str>,
    pick: impl Fn(&ae_core::metrics::TargetMetrics) -> Option<f64>,
) -> Vec<f64> {
    runs.iter()
        .flat_map(|r| r.reports.iter())
        .filter(|(_, rep)| rep.method == variant)
        .flat_map(|(_, rep)| rep.targets.iter())
        .filter(|t| group.is_none_or(|g| t.group.as_deref() == Some(g)))
        .filter_map(&pick)
        .filter(|v| v.is_finite())
        .collect()
}

fn snr(t: &ae_core::metrics::TargetMetrics) -> Option<f64> {
    t.snr_db.as_ref().ok().copied()
}

fn lr(t: &ae_core::metrics::TargetMetrics) -> Option<f64> {
    t.lr.as_ref().ok().map(|v| v * 1e3)
}

fn compare(
    name: String,
    a: Option<f64>,
    b: Option<f64>,
    a_label: &str,
    b_label: &str,
    unit: &str,
) -> PropertyCheck {
    match (a, b) {
        (Some(a), Some(b)) => PropertyCheck {
            name,
            passed: a > b,
            detail: format!("{a_label} {a:.2} {unit} vs {b_label} {b:.2} {unit}"),
        },
        _ => PropertyCheck {
            name,
            passed: false,
            detail: "metric unavailable".into(),
        },
    }
}

/// Largest distance between a target and the envelope peak found in its region.
fn max_localisation_error(
    recs: &[(&Reconstruction, &Scenario)],
    variant: &str,
    only_group: Option<&str>,
) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (rec, scn) in recs {
        let Some(img) = rec.image(variant) else {
            continue;
        };
        let env = img.image.envelope.as_ref()?;
        for t in scn.targets() {
            if only_group.is_some_and(|g| t.group.as_deref() != Some(g)) {
                continue;
            }
            let roi = Roi::around(t.position, 2e-3, 2e-3);
            let p = peak_pixel(env, &img.image.grid, &roi).ok()?;
            let d = (p.x - t.position.x).hypot(p.z - t.position.z);
            worst = Some(worst.map_or(d, |w: f64| w.max(d)));
        }
    }
    worst
}

/// Qualitative orderings the suite is expected to reproduce.
pub fn check_properties(runs: &[SuiteRun], opts: &SuiteOptions) -> Vec<PropertyCheck> {
    let mut checks = Vec::new();
    for phantom in ["saline", "nerve"] {
        let rs: Vec<&SuiteRun> = runs.iter().filter(|r| r.phantom == phantom).collect();
        if rs.is_empty() {
            continue;
        }
        let m = |variant: &str,
                 group: Option<&str>,
                 pick: fn(&ae_core::metrics::TargetMetrics) -> Option<f64>| {
            mean(&collect(&rs, variant, group, pick))
        };
        if !opts.no_noise {
            checks.push(compare(
                format!("{phantom}: CF-SA SNR above SA"),
                m("CF-SA", None, snr),
                m("SA", None, snr),
                "CF-SA",
                "SA",
                "dB",
            ));
            checks.push(compare(
                format!("{phantom}: CFPL-SA SNR above CF-SA"),
                m("CFPL-SA", None, snr),
                m("CF-SA", None, snr),
                "CFPL-SA",
                "CF-SA",
                "dB",
            ));
            checks.push(compare(
                format!("{phantom}: CF-SA SNR above FUS off focus"),
                m("CF-SA", Some("off-focus"), snr),
                m("FUS", Some("off-focus"), snr),
                "CF-SA",
                "FUS",
                "dB",
            ));
            checks.push(compare(
                format!("{phantom}: FUS SNR above SA"),
                m("FUS", None, snr),
                m("SA", None, snr),
                "FUS",
                "SA",
                "dB",
            ));
        }
        checks.push(compare(
            format!("{phantom}: FUS lateral resolution degrades off focus"),
            m("FUS", Some("off-focus"), lr),
            m("FUS", Some("on-focus"), lr),
            "off-focus",
            "on-focus",
            "mm",
        ));
        checks.push(compare(
            format!("{phantom}: SA lateral resolution finer than FUS off focus"),
            m("FUS", Some("off-focus"), lr),
            m("SA", Some("off-focus"), lr),
            "FUS",
            "SA",
            "mm",
        ));
    }

    let saline: Vec<&SuiteRun> = runs.iter().filter(|r| r.phantom == "saline").collect();
    if !saline.is_empty() {
        let lambda = saline[0].scenario.wavelength();
        let sa: Vec<(&Reconstruction, &Scenario)> =
            saline.iter().map(|r| (&r.sa, &r.scenario)).collect();
        let fus: Vec<(&Reconstruction, &Scenario)> =
            saline.iter().map(|r| (&r.fus, &r.scenario)).collect();
        let (variant, tol, tol_label) = if opts.no_noise {
            ("SA", lambda / 2.0, "lambda/2")
        } else {
            ("CF-SA", lambda, "lambda")
        };
        let err = max_localisation_error(&sa, variant, None);
        checks.push(PropertyCheck {
            name: format!("saline: {variant} localises every electrode within {tol_label}"),
            passed: err.is_some_and(|e| e <= tol),
            detail: err.map_or("no peak".into(), |e| {
                format!("worst error {:.3} mm", e * 1e3)
            }),
        });
        if opts.no_noise {
            let err = max_localisation_error(&fus, "FUS", Some("on-focus"));
            checks.push(PropertyCheck {
                name: "saline: FUS localises on-focus electrodes within lambda/2".into(),
                passed: err.is_some_and(|e| e <= lambda / 2.0),
                detail: err.map_or("no peak".into(), |e| {
                    format!("worst error {:.3} mm", e * 1e3)
                }),
            });
        }
        // amplitude correction brings the two electrodes closer in amplitude
        let spread = |variant: &str| -> Option<f64> {
            let mut logs = Vec::new();
            for r in &saline {
                let img = r.sa.image(variant)?;
                let env = img.image.envelope.as_ref()?;
                let peaks: Vec<f64> = r
                    .scenario
                    .targets()
                    .iter()
                    .map(|t| {
                        peak_pixel(env, &img.image.grid, &Roi::around(t.position, 1e-3, 1e-3))
                            .map(|p| p.value)
                    })
                    .collect::<ae_core::Result<_>>()
                    .ok()?;
                logs.push((peaks[1] / peaks[0]).ln().abs());
            }
            mean(&logs)
        };
        let (before, after) = (spread("SA"), spread("SA+AC"));
        checks.push(PropertyCheck {
            name: "saline: amplitude correction equalises the electrodes".into(),
            passed: matches!((before, after), (Some(b), Some(a)) if a < b),
            detail: match (before, after) {
                (Some(b), Some(a)) => format!("mean |ln ratio| {b:.3} before, {a:.3} after"),
                _ => "metric unavailable".into(),
            },
        });
    }
    checks
}

/// Group means of one phantom, for callers that want the table in memory.
pub fn phantom_group_means(outcome: &SuiteOutcome, phantom: &str) -> Vec<GroupMean> {
    let reports: Vec<(String, MetricsReport)> = outcome
        .runs
        .iter()
        .filter(|r| r.phantom == phantom)
        .flat_map(|r| r.reports.iter().cloned())
        .collect();
    group_means(&reports)
}
