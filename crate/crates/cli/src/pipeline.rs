//! simulate, reconstruct and evaluate, plus the files each one reads and writes.

use ae_core::coherence::{
    amplitude_correct, apply_weighting, coherence_factor, coherence_factor_pl, effective_beam_map,
};
use ae_core::export::{envelope_pgm, linear_pgm, to_csv};
use ae_core::metrics::evaluate_targets;
use ae_core::reconstruct::{das_sa, envelope, fus_line_map};
use ae_core::{
    AeError, BeamformedImage, ChannelDataSet, Method, MetricsReport, PixelGrid, Point,
    PressureModel, PulseWindow, TargetSpec, WindowAlignment,
};
use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use sha2::{Digest as _, Sha256};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::scenario::{Scenario, Weighting};

/// Command-line overrides applied on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_noise: bool,
    pub f_number: Option<f64>,
    pub weighting: Option<Weighting>,
    pub amplitude_correct: bool,
}

pub fn simulate(scenario: &Scenario, base_dir: &Path, ov: &Overrides) -> Result<ChannelDataSet> {
    let mut setup = scenario.setup()?;
    if ov.no_noise {
        setup.acquisition.noise_power = 0.0;
    }
    let field = scenario.s_field(base_dir)?;
    let events = scenario.events()?;
    Ok(ae_core::forward::simulate_dataset(
        &field,
        &events,
        &setup,
        ov.seed.unwrap_or(scenario.seed),
    )?)
}

/// One-line summary of a written channel file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelDigest {
    pub m_tx: usize,
    pub t: usize,
    pub sample_rate: String,
    pub sha256: String,
}

impl std::fmt::Display for ChannelDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "M_tx={} T={} sample_rate={} Hz sha256={}",
            self.m_tx, self.t, self.sample_rate, self.sha256
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory, so an
/// interrupted run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

pub fn write_channel_file(ds: &ChannelDataSet, path: &Path) -> Result<ChannelDigest> {
    let bytes = ae_core::io::encode(ds)?;
    let digest = ChannelDigest {
        m_tx: ds.num_events(),
        t: ds.num_samples(),
        sample_rate: format!("{}", ds.sample_rate),
        sha256: sha256_hex(&bytes),
    };
    write_atomic(path, &bytes)?;
    Ok(digest)
}

pub fn read_channel_file(path: &Path) -> Result<ChannelDataSet> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ae_core::io::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    /// Requested method; `None` follows the recorded events.
    pub method: Option<Method>,
    pub grid: PixelGrid,
    pub f_number: f64,
    /// Coherence weightings to produce in addition to the plain image.
    pub weightings: Vec<Weighting>,
    pub amplitude_correct: bool,
    pub epsilon: f64,
    pub cfpl_window: WindowAlignment,
    pub model: PressureModel,
    pub dynamic_range_db: f64,
}

impl ReconstructOptions {
    pub fn from_scenario(scenario: &Scenario, ov: &Overrides) -> Result<Self> {
        let r = &scenario.reconstruction;
        let weighting = ov.weighting.unwrap_or(r.weighting);
        Ok(ReconstructOptions {
            method: None,
            grid: scenario.pixel_grid()?,
            f_number: ov.f_number.unwrap_or(r.f_number),
            weightings: if weighting == Weighting::None {
                vec![]
            } else {
                vec![weighting]
            },
            amplitude_correct: ov.amplitude_correct || r.amplitude_correct,
            epsilon: r.epsilon,
            cfpl_window: r.cfpl_window.into(),
            model: scenario.pressure_model(),
            dynamic_range_db: r.dynamic_range_db,
        })
    }
}

/// A reconstructed image ready for export; `envelope` is always filled.
#[derive(Debug, Clone)]
pub struct NamedImage {
    /// File stem.
    pub name: String,
    /// Display label such as `CF-SA` or `SA+AC`.
    pub variant: String,
    pub weighting: Weighting,
    pub amplitude_corrected: bool,
    pub image: BeamformedImage,
}

#[derive(Debug, Clone)]
pub struct NamedMap {
    pub name: String,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub images: Vec<NamedImage>,
    pub maps: Vec<NamedMap>,
}

impl Reconstruction {
    pub fn image(&self, variant: &str) -> Option<&NamedImage> {
        self.images.iter().find(|i| i.variant == variant)
    }
}

fn detect_method(ds: &ChannelDataSet) -> Result<Method> {
    if ds.is_single_element() {
        Ok(Method::Sa)
    } else if ds.is_focused() {
        Ok(Method::Fus)
    } else {
        bail!("channel file mixes single-element and focused events")
    }
}

pub fn reconstruct(ds: &ChannelDataSet, opts: &ReconstructOptions) -> Result<Reconstruction> {
    let recorded = detect_method(ds)?;
    if let Some(m) = opts.method {
        if m != recorded {
            return Err(AeError::MethodMismatch(format!(
                "{} reconstruction requested but the file holds {} events",
                m.as_str(),
                recorded.as_str()
            ))
            .into());
        }
    }
    let mut images = Vec::new();
    let mut maps = Vec::new();
    match recorded {
        Method::Fus => {
            if !opts.weightings.is_empty() || opts.amplitude_correct {
                return Err(AeError::MethodMismatch(
                    "coherence weighting and amplitude correction need single-element (SA) events"
                        .into(),
                )
                .into());
            }
            let img = envelope(&fus_line_map(ds, &opts.grid, &ds.medium)?)?;
            images.push(NamedImage {
                name: "fus".into(),
                variant: "FUS".into(),
                weighting: Weighting::None,
                amplitude_corrected: false,
                image: img,
            });
        }
        Method::Sa => {
            let window = opts
                .weightings
                .contains(&Weighting::Cfpl)
                .then(|| PulseWindow {
                    len: ds.pulse.length_samples(),
                    alignment: opts.cfpl_window,
                });
            let (img, aperture) = das_sa(ds, &opts.grid, opts.f_number, window)?;
            let base = envelope(&img)?;
            images.push(NamedImage {
                name: "sa".into(),
                variant: "SA".into(),
                weighting: Weighting::None,
                amplitude_corrected: false,
                image: base.clone(),
            });
            for &w in &opts.weightings {
                let (map, tag) = match w {
                    Weighting::None => continue,
                    Weighting::Cf => (coherence_factor(&aperture), "cf"),
                    Weighting::Cfpl => (coherence_factor_pl(&aperture)?, "cfpl"),
                };
                images.push(NamedImage {
                    name: format!("sa_{tag}"),
                    variant: format!("{}-SA", tag.to_ascii_uppercase()),
                    weighting: w,
                    amplitude_corrected: false,
                    image: apply_weighting(&base, &map)?,
                });
                maps.push(NamedMap {
                    name: format!("{tag}_map"),
                    values: map.values,
                });
            }
            if opts.amplitude_correct {
                let beam = effective_beam_map(&ds.geometry, &opts.grid, opts.f_number, &opts.model);
                let corrected: Vec<NamedImage> = images
                    .iter()
                    .map(|ni| -> Result<NamedImage> {
                        Ok(NamedImage {
                            name: format!("{}_ac", ni.name),
                            variant: format!("{}+AC", ni.variant),
                            weighting: ni.weighting,
                            amplitude_corrected: true,
                            image: amplitude_correct(&ni.image, &beam, opts.epsilon)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                images.extend(corrected);
                maps.push(NamedMap {
                    name: "beam_map".into(),
                    values: beam.values,
                });
            }
        }
    }
    Ok(Reconstruction { images, maps })
}

fn meta_text(ni: &NamedImage, dynamic_range_db: f64) -> String {
    let img = &ni.image;
    let g = &img.grid;
    let mut s = String::new();
    let _ = writeln!(s, "variant = {}", ni.variant);
    let _ = writeln!(s, "method = {}", img.method.as_str());
    let _ = writeln!(s, "weighting = {}", ni.weighting.as_str());
    let _ = writeln!(s, "amplitude_corrected = {}", ni.amplitude_corrected);
    match img.f_number {
        Some(f) => writeln!(s, "f_number = {f}"),
        None => writeln!(s, "f_number = NA"),
    }
    .ok();
    let _ = writeln!(s, "origin_x_m = {:e}", g.origin.x);
    let _ = writeln!(s, "origin_z_m = {:e}", g.origin.z);
    let _ = writeln!(s, "dx_m = {:e}", g.dx);
    let _ = writeln!(s, "dz_m = {:e}", g.dz);
    let _ = writeln!(s, "nx = {}", g.nx);
    let _ = writeln!(s, "nz = {}", g.nz);
    let _ = writeln!(s, "dynamic_range_db = {dynamic_range_db}");
    s
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.txt")
}

/// Writes each image as `<prefix><name>.csv` (pre-envelope values),
/// `<prefix><name>.pgm` (log envelope) and `<prefix><name>.meta.txt`, and each map
/// as CSV plus a linear PGM. Returns the image CSV paths.
pub fn write_reconstruction(
    rec: &Reconstruction,
    out_dir: &Path,
    prefix: &str,
    dynamic_range_db: f64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    for ni in &rec.images {
        let csv = out_dir.join(format!("{prefix}{}.csv", ni.name));
        write_atomic(&csv, to_csv(&ni.image.values).as_bytes())?;
        let env = ni.image.envelope_or_err()?;
        write_atomic(
            &csv.with_extension("pgm"),
            &envelope_pgm(env, dynamic_range_db),
        )?;
        write_atomic(&meta_path(&csv), meta_text(ni, dynamic_range_db).as_bytes())?;
        written.push(csv);
    }
    for m in &rec.maps {
        let csv = out_dir.join(format!("{prefix}{}.csv", m.name));
        write_atomic(&csv, to_csv(&m.values).as_bytes())?;
        let peak = m.values.iter().cloned().fold(0.0, f64::max);
        let scaled = if peak > 1.0 {
            &m.values / peak
        } else {
            m.values.clone()
        };
        write_atomic(&csv.with_extension("pgm"), &linear_pgm(&scaled))?;
    }
    Ok(written)
}

fn parse_meta(text: &str) -> std::collections::BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Reads an image CSV written by [`write_reconstruction`] together with its sidecar
/// and recomputes the envelope.
pub fn load_image(csv: &Path) -> Result<NamedImage> {
    let meta_file = meta_path(csv);
    let meta = parse_meta(
        &std::fs::read_to_string(&meta_file)
            .with_context(|| format!("reading sidecar {}", meta_file.display()))?,
    );
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| anyhow!("{}: missing `{k}`", meta_file.display()))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .with_context(|| format!("{}: `{k}`", meta_file.display()))
    };
    let count = |k: &str| -> Result<usize> {
        get(k)?
            .parse::<usize>()
            .with_context(|| format!("{}: `{k}`", meta_file.display()))
    };
    let grid = PixelGrid::new(
        Point::new(num("origin_x_m")?, num("origin_z_m")?),
        num("dx_m")?,
        num("dz_m")?,
        count("nx")?,
        count("nz")?,
    )?;
    let text =
        std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
        })
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", csv.display()))?;
    if rows.len() != grid.nz || rows.iter().any(|r| r.len() != grid.nx) {
        bail!(
            "{}: shape does not match its sidecar ({} x {})",
            csv.display(),
            grid.nx,
            grid.nz
        );
    }
    let values = Array2::from_shape_fn(grid.dim(), |(ix, iz)| rows[iz][ix]);
    let method = match get("method")?.as_str() {
        "SA" => Method::Sa,
        "FUS" => Method::Fus,
        other => bail!("{}: unknown method `{other}`", meta_file.display()),
    };
    let mut image = BeamformedImage::new(grid, values, method)?;
    image.f_number = get("f_number")?.parse().ok();
    let weighting = get("weighting")?.parse().map_err(|e: String| anyhow!(e))?;
    Ok(NamedImage {
        name: csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        variant: get("variant")?.clone(),
        weighting,
        amplitude_corrected: get("amplitude_corrected")? == "true",
        image: envelope(&image)?,
    })
}

/// Per-target metrics for every image, labelled by variant.
pub fn evaluate(
    images: &[NamedImage],
    targets: &[TargetSpec],
) -> Result<Vec<(String, MetricsReport)>> {
    images
        .iter()
        .map(|ni| {
            let mut report = evaluate_targets(&ni.image, targets)?;
            report.method = ni.variant.clone();
            Ok((ni.name.clone(), report))
        })
        .collect()
}

pub fn metrics_csv(reports: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{}\n", MetricsReport::CSV_HEADER);
    for (name, r) in reports {
        out.push_str(&r.csv_rows(name));
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Acc {
    n: usize,
    sums: [f64; 4],
    counts: [usize; 4],
}

impl Acc {
    fn add(&mut self, i: usize, v: &ae_core::Result<f64>) {
        if let Ok(x) = v {
            if x.is_finite() {
                self.sums[i] += x;
                self.counts[i] += 1;
            }
        }
    }
    fn mean(&self, i: usize) -> Option<f64> {
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }
}

/// Mean of a metric per (variant, group) for grouped targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMean {
    pub variant: String,
    pub group: String,
    pub n: usize,
    pub ar_mm: Option<f64>,
    pub lr_mm: Option<f64>,
    pub psl_db: Option<f64>,
    pub snr_db: Option<f64>,
}

pub fn group_means(reports: &[(String, MetricsReport)]) -> Vec<GroupMean> {
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut accs: Vec<Acc> = Vec::new();
    for (_, r) in reports {
        for t in &r.targets {
            let Some(group) = &t.group else { continue };
            let key = (r.method.clone(), group.clone());
            let idx = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    accs.push(Acc::default());
                    keys.len() - 1
                }
            };
            let a = &mut accs[idx];
            a.n += 1;
            a.add(0, &t.ar.as_ref().map(|v| v * 1e3).map_err(Clone::clone));
            a.add(1, &t.lr.as_ref().map(|v| v * 1e3).map_err(Clone::clone));
            a.add(2, &t.psl_db);
            a.add(3, &t.snr_db);
        }
    }
    keys.into_iter()
        .zip(accs)
        .map(|((variant, group), a)| GroupMean {
            variant,
            group,
            n: a.n,
            ar_mm: a.mean(0),
            lr_mm: a.mean(1),
            psl_db: a.mean(2),
            snr_db: a.mean(3),
        })
        .collect()
}

pub const GROUPS_HEADER: &str =
    "method,group,n,ar_mm,lr_mm,psl_db,snr_db,ar_vs_fus_pct,lr_vs_fus_pct,psl_vs_fus_db,snr_vs_fus_db";

/// Group means with the change relative to FUS in the same group: percent for
/// lengths, dB difference for levels. FUS rows are marked `bm`.
pub fn groups_csv(means: &[GroupMean]) -> String {
    let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
    let mut out = format!("{GROUPS_HEADER}\n");
    for m in means {
        let bm = means
            .iter()
            .find(|b| b.variant == "FUS" && b.group == m.group);
        let rel = |a: Option<f64>, b: Option<f64>, pct: bool| -> String {
            if m.variant == "FUS" {
                return "bm".into();
            }
            match (a, b) {
                (Some(a), Some(b)) if pct && b != 0.0 => format!("{:.3}", 100.0 * (a - b) / b),
                (Some(a), Some(b)) if !pct => format!("{:.3}", a - b),
                _ => "NA".into(),
            }
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.variant,
            m.group,
            m.n,
            f(m.ar_mm),
            f(m.lr_mm),
            f(m.psl_db),
            f(m.snr_db),
            rel(m.ar_mm, bm.and_then(|b| b.ar_mm), true),
            rel(m.lr_mm, bm.and_then(|b| b.lr_mm), true),
            rel(m.psl_db, bm.and_then(|b| b.psl_db), false),
            rel(m.snr_db, bm.and_then(|b| b.snr_db), false),
        );
    }
    out
}
