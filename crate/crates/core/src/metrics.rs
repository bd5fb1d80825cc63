//! Resolution, sidelobe and SNR metrics over declared regions of interest.
//!
//! Resolution and PSL are measured on the envelope; SNR on the pre-envelope values.

use ndarray::Array2;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::ops::Range;

use crate::domain::{PixelGrid, Point};
use crate::error::{AeError, Result};
use crate::reconstruct::BeamformedImage;

/// Axis-aligned rectangle in physical coordinates [m], edges inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Roi {
    pub fn around(center: Point, half_width: f64, half_depth: f64) -> Self {
        Roi {
            x_min: center.x - half_width,
            x_max: center.x + half_width,
            z_min: center.z - half_depth,
            z_max: center.z + half_depth,
        }
    }

    /// Column and row index ranges of the pixels whose centres lie inside.
    pub fn pixel_ranges(&self, grid: &PixelGrid) -> (Range<usize>, Range<usize>) {
        let axis = |lo: f64, hi: f64, origin: f64, step: f64, n: usize| {
            let eps = 1e-9 * step;
            let a = ((lo - origin - eps) / step).ceil().max(0.0);
            let b = ((hi - origin + eps) / step).floor() + 1.0;
            let a = (a as usize).min(n);
            let b = if b <= 0.0 { 0 } else { (b as usize).min(n) };
            a..b.max(a)
        };
        (
            axis(self.x_min, self.x_max, grid.origin.x, grid.dx, grid.nx),
            axis(self.z_min, self.z_max, grid.origin.z, grid.dz, grid.nz),
        )
    }

    pub fn is_empty_on(&self, grid: &PixelGrid) -> bool {
        let (xs, zs) = self.pixel_ranges(grid);
        xs.is_empty() || zs.is_empty()
    }

    pub fn overlaps_on(&self, other: &Roi, grid: &PixelGrid) -> bool {
        let (ax, az) = self.pixel_ranges(grid);
        let (bx, bz) = other.pixel_ranges(grid);
        ax.start < bx.end && bx.start < ax.end && az.start < bz.end && bz.start < az.end
    }

    fn values<'a>(
        &self,
        values: &'a Array2<f64>,
        grid: &PixelGrid,
    ) -> impl Iterator<Item = f64> + 'a {
        let (xs, zs) = self.pixel_ranges(grid);
        xs.flat_map(move |ix| zs.clone().map(move |iz| values[[ix, iz]]))
    }
}

/// A source to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub label: String,
    pub position: Point,
    pub signal_roi: Roi,
    pub noise_roi: Roi,
    /// Optional grouping key (e.g. on-focus / off-focus) for aggregation.
    pub group: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub ix: usize,
    pub iz: usize,
    pub x: f64,
    pub z: f64,
    pub value: f64,
}

/// Largest envelope value inside `roi`; ties go to the smallest z, then smallest x.
pub fn peak_pixel(envelope: &Array2<f64>, grid: &PixelGrid, roi: &Roi) -> Result<Peak> {
    let (xs, zs) = roi.pixel_ranges(grid);
    if xs.is_empty() || zs.is_empty() {
        return Err(AeError::EmptyRegion);
    }
    let mut best: Option<Peak> = None;
    for iz in zs {
        for ix in xs.clone() {
            let v = envelope[[ix, iz]];
            if best.is_none_or(|b| v > b.value) {
                best = Some(Peak {
                    ix,
                    iz,
                    x: grid.x(ix),
                    z: grid.z(iz),
                    value: v,
                });
            }
        }
    }
    match best {
        Some(p) if p.value > 0.0 => Ok(p),
        _ => Err(AeError::NoPeak),
    }
}

fn argmax(profile: &[f64]) -> Option<usize> {
    profile
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Full width at half maximum around the global maximum, with linearly
/// interpolated crossings.
pub fn profile_fwhm(profile: &[f64], spacing: f64) -> Result<f64> {
    let peak = argmax(profile).ok_or(AeError::EmptyRegion)?;
    let max = profile[peak];
    if !(max > 0.0) {
        return Err(AeError::NoPeak);
    }
    let half = max / 2.0;
    let left = (0..peak)
        .rev()
        .find(|&i| profile[i] <= half)
        .map(|i| i as f64 + (half - profile[i]) / (profile[i + 1] - profile[i]))
        .ok_or(AeError::OneSided("left"))?;
    let right = (peak + 1..profile.len())
        .find(|&i| profile[i] <= half)
        .map(|i| i as f64 - (half - profile[i]) / (profile[i - 1] - profile[i]))
        .ok_or(AeError::OneSided("right"))?;
    Ok((right - left) * spacing)
}

/// Peak sidelobe level [dB] of a lateral profile. The main lobe runs from the peak
/// down to the first local minimum on each side; `-inf` when nothing lies outside it.
pub fn peak_sidelobe_level(profile: &[f64]) -> Result<f64> {
    let peak = argmax(profile).ok_or(AeError::EmptyRegion)?;
    let main = profile[peak];
    if !(main > 0.0) {
        return Err(AeError::NoPeak);
    }
    let mut lo = peak;
    while lo > 0 && profile[lo - 1] <= profile[lo] {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < profile.len() && profile[hi + 1] <= profile[hi] {
        hi += 1;
    }
    let side = profile[..lo]
        .iter()
        .chain(&profile[hi + 1..])
        .cloned()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(match side {
        Some(s) if s > 0.0 => 20.0 * (s / main).log10(),
        _ => f64::NEG_INFINITY,
    })
}

/// `10 log10(mean(x^2) / var(y))` with population normalisation; `-inf` for an
/// all-zero signal region.
pub fn image_snr(values: &Array2<f64>, grid: &PixelGrid, signal: &Roi, noise: &Roi) -> Result<f64> {
    if signal.is_empty_on(grid) || noise.is_empty_on(grid) {
        return Err(AeError::EmptyRegion);
    }
    if signal.overlaps_on(noise, grid) {
        return Err(AeError::param(
            "noise_roi",
            "signal and noise regions overlap",
        ));
    }
    let sig: Vec<f64> = signal.values(values, grid).collect();
    let noi: Vec<f64> = noise.values(values, grid).collect();
    let p_sig = sig.iter().map(|x| x * x).sum::<f64>() / sig.len() as f64;
    let mean = noi.iter().sum::<f64>() / noi.len() as f64;
    let var = noi.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / noi.len() as f64;
    if !(var > 0.0) {
        return Err(AeError::UndefinedSnr);
    }
    if p_sig == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (p_sig / var).log10())
}

/// Metrics for one target; each metric can fail on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMetrics {
    pub label: String,
    pub group: Option<String>,
    pub peak: Result<Peak>,
    /// Axial FWHM [m].
    pub ar: Result<f64>,
    /// Lateral FWHM [m].
    pub lr: Result<f64>,
    pub psl_db: Result<f64>,
    pub snr_db: Result<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub targets: Vec<TargetMetrics>,
}

fn eval_target(image: &BeamformedImage, env: &Array2<f64>, t: &TargetSpec) -> TargetMetrics {
    let grid = &image.grid;
    let peak = peak_pixel(env, grid, &t.signal_roi);
    let (ar, lr, psl) = match &peak {
        Ok(p) => {
            let axial: Vec<f64> = (0..grid.nz).map(|iz| env[[p.ix, iz]]).collect();
            let lateral: Vec<f64> = (0..grid.nx).map(|ix| env[[ix, p.iz]]).collect();
            (
                profile_fwhm(&axial, grid.dz),
                profile_fwhm(&lateral, grid.dx),
                peak_sidelobe_level(&lateral),
            )
        }
        Err(e) => (Err(e.clone()), Err(e.clone()), Err(e.clone())),
    };
    TargetMetrics {
        label: t.label.clone(),
        group: t.group.clone(),
        snr_db: image_snr(&image.values, grid, &t.signal_roi, &t.noise_roi),
        peak,
        ar,
        lr,
        psl_db: psl,
    }
}

/// Evaluates every target. The FWHM profiles pass through the peak pixel found in
/// the target's signal region.
pub fn evaluate_targets(image: &BeamformedImage, targets: &[TargetSpec]) -> Result<MetricsReport> {
    let env = image.envelope_or_err()?;
    let targets = targets
        .par_iter()
        .map(|t| eval_target(image, env, t))
        .collect();
    Ok(MetricsReport {
        method: image.method.as_str().to_string(),
        targets,
    })
}

fn fmt_metric(v: &Result<f64>, scale: f64) -> String {
    match v {
        Ok(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.to_string(),
        Ok(x) => format!("{:.6}", x * scale),
        Err(_) => "NA".to_string(),
    }
}

fn fmt_error(t: &TargetMetrics) -> String {
    [
        &t.peak.as_ref().err(),
        &t.ar.as_ref().err(),
        &t.lr.as_ref().err(),
        &t.psl_db.as_ref().err(),
        &t.snr_db.as_ref().err(),
    ]
    .iter()
    .filter_map(|e| e.map(|e| e.to_string()))
    .next()
    .unwrap_or_default()
    .replace(',', ";")
}

impl MetricsReport {
    /// Mean of the finite per-target SNRs [dB].
    pub fn image_snr_db(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .targets
            .iter()
            .filter_map(|t| t.snr_db.as_ref().ok().copied())
            .filter(|x| x.is_finite())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub const CSV_HEADER: &'static str =
        "image,method,target,group,peak_x_mm,peak_z_mm,ar_mm,lr_mm,psl_db,snr_db,error";

    /// One CSV row per target (no header); lengths in mm.
    pub fn csv_rows(&self, image_name: &str) -> String {
        let mut out = String::new();
        for t in &self.targets {
            let (px, pz) = match &t.peak {
                Ok(p) => (format!("{:.6}", p.x * 1e3), format!("{:.6}", p.z * 1e3)),
                Err(_) => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                image_name,
                self.method,
                t.label,
                t.group.as_deref().unwrap_or(""),
                px,
                pz,
                fmt_metric(&t.ar, 1e3),
                fmt_metric(&t.lr, 1e3),
                fmt_metric(&t.psl_db, 1.0),
                fmt_metric(&t.snr_db, 1.0),
                fmt_error(t),
            );
        }
        out
    }

    /// Flat `key = value` listing.
    pub fn to_key_value(&self) -> String {
        let mut out = format!("method = {}\n", self.method);
        match self.image_snr_db() {
            Some(s) => {
                let _ = writeln!(out, "image.snr_db = {s:.6}");
            }
            None => out.push_str("image.snr_db = NA\n"),
        }
        for t in &self.targets {
            let k = &t.label;
            if let Ok(p) = &t.peak {
                let _ = writeln!(
                    out,
                    "{k}.peak_x_mm = {:.6}\n{k}.peak_z_mm = {:.6}",
                    p.x * 1e3,
                    p.z * 1e3
                );
            }
            let _ = writeln!(out, "{k}.ar_mm = {}", fmt_metric(&t.ar, 1e3));
            let _ = writeln!(out, "{k}.lr_mm = {}", fmt_metric(&t.lr, 1e3));
            let _ = writeln!(out, "{k}.psl_db = {}", fmt_metric(&t.psl_db, 1.0));
            let _ = writeln!(out, "{k}.snr_db = {}", fmt_metric(&t.snr_db, 1.0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{envelope, Method};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn grid(nx: usize, nz: usize) -> PixelGrid {
        PixelGrid::new(Point::new(0.0, 0.0), 1.0, 1.0, nx, nz).unwrap()
    }

    #[test]
    fn peak_pixel_rules() {
        let g = grid(4, 5);
        let all = Roi {
            x_min: 0.0,
            x_max: 3.0,
            z_min: 0.0,
            z_max: 4.0,
        };
        let mut e = Array2::zeros((4, 5));
        e[[2, 3]] = 1.0;
        let p = peak_pixel(&e, &g, &all).unwrap();
        assert_eq!((p.ix, p.iz), (2, 3));
        e[[3, 1]] = 1.0;
        e[[1, 1]] = 1.0;
        let p = peak_pixel(&e, &g, &all).unwrap();
        assert_eq!((p.ix, p.iz), (1, 1));
        assert_eq!(
            peak_pixel(&Array2::zeros((4, 5)), &g, &all),
            Err(AeError::NoPeak)
        );
        let outside = Roi {
            x_min: 10.0,
            x_max: 11.0,
            z_min: 0.0,
            z_max: 1.0,
        };
        assert_eq!(peak_pixel(&e, &g, &outside), Err(AeError::EmptyRegion));
    }

    #[test]
    fn fwhm_examples() {
        assert_eq!(profile_fwhm(&[0.0, 0.5, 1.0, 0.5, 0.0], 1.0).unwrap(), 2.0);
        assert_eq!(profile_fwhm(&[0.0, 1.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(
            profile_fwhm(&[1.0, 0.7, 0.2], 1.0),
            Err(AeError::OneSided("left"))
        );
        assert_eq!(
            profile_fwhm(&[0.2, 0.7, 1.0], 1.0),
            Err(AeError::OneSided("right"))
        );
    }

    #[test]
    fn fwhm_of_sampled_gaussian() {
        let sigma = 2.0;
        let g = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp();
        let coarse: Vec<f64> = (-20..=20).map(|i| g(i as f64)).collect();
        // oversampled oracle
        let fine: Vec<f64> = (-2000..=2000).map(|i| g(i as f64 / 100.0)).collect();
        let oracle = profile_fwhm(&fine, 0.01).unwrap();
        let analytic = 2.0 * sigma * (2.0 * 2f64.ln()).sqrt();
        assert!((oracle - analytic).abs() < 1e-3);
        let w = profile_fwhm(&coarse, 1.0).unwrap();
        assert!((w - 4.71).abs() < 0.05, "fwhm {w}");
    }

    #[test]
    fn psl_examples() {
        assert!((peak_sidelobe_level(&[0.1, 0.0, 1.0, 0.0, 0.05]).unwrap() + 20.0).abs() < 1e-12);
        assert_eq!(
            peak_sidelobe_level(&[0.1, 0.4, 1.0, 0.3, 0.0]).unwrap(),
            f64::NEG_INFINITY
        );
        let psl = peak_sidelobe_level(&[0.5, 0.2, 1.0, 0.1, 0.3]).unwrap();
        assert!((psl + 6.0206).abs() < 1e-3);
        // plateau on the falling side is still main lobe
        assert!(
            (peak_sidelobe_level(&[0.2, 0.0, 0.5, 0.5, 1.0, 0.0]).unwrap() - 20.0 * 0.2f64.log10())
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn snr_examples() {
        let g = grid(2, 8);
        let signal = Roi {
            x_min: 0.0,
            x_max: 1.0,
            z_min: 0.0,
            z_max: 3.0,
        };
        let noise = Roi {
            x_min: 0.0,
            x_max: 1.0,
            z_min: 4.0,
            z_max: 7.0,
        };
        let mut v = Array2::zeros((2, 8));
        for iz in 0..4 {
            v[[0, iz]] = if iz % 2 == 0 { 2.0 } else { -2.0 };
            v[[1, iz]] = -2.0;
        }
        // noise: +-1 around mean 3 -> variance 1
        for (k, iz) in (4..8).enumerate() {
            v[[0, iz]] = 3.0 + if k % 2 == 0 { 1.0 } else { -1.0 };
            v[[1, iz]] = 3.0 - if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        let snr = image_snr(&v, &g, &signal, &noise).unwrap();
        assert!((snr - 6.0206).abs() < 0.05);

        let mut z = v.clone();
        for ix in 0..2 {
            for iz in 0..4 {
                z[[ix, iz]] = 0.0;
            }
        }
        assert_eq!(
            image_snr(&z, &g, &signal, &noise).unwrap(),
            f64::NEG_INFINITY
        );
        let flat = Array2::from_elem((2, 8), 1.0);
        assert_eq!(
            image_snr(&flat, &g, &signal, &noise),
            Err(AeError::UndefinedSnr)
        );
        assert!(image_snr(&v, &g, &signal, &signal).is_err());
    }

    #[test]
    fn snr_of_pure_noise_is_zero_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = grid(100, 200);
        let v = Array2::from_shape_fn((100, 200), |_| rng.sample::<f64, _>(StandardNormal));
        let a = Roi {
            x_min: 0.0,
            x_max: 99.0,
            z_min: 0.0,
            z_max: 99.0,
        };
        let b = Roi {
            x_min: 0.0,
            x_max: 99.0,
            z_min: 100.0,
            z_max: 199.0,
        };
        assert!(image_snr(&v, &g, &a, &b).unwrap().abs() < 1.0);
    }

    proptest! {
        #[test]
        fn metrics_scale_invariant(
            raw in proptest::collection::vec(0.0f64..1.0, 9..40),
            scale in 1e-3f64..1e3,
        ) {
            let mut p = raw.clone();
            let mid = p.len() / 2;
            p[mid] = 2.0;
            p[0] = 0.0;
            *p.last_mut().unwrap() = 0.0;
            let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let (a, b) = (profile_fwhm(&p, 1.0).unwrap(), profile_fwhm(&scaled, 1.0).unwrap());
            prop_assert!((a - b).abs() < 1e-9);
            let (a, b) = (peak_sidelobe_level(&p).unwrap(), peak_sidelobe_level(&scaled).unwrap());
            prop_assert!(a == b || (a - b).abs() < 1e-9);
        }

        #[test]
        fn snr_scale_invariant(seed in 0u64..1000, alpha in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = grid(4, 10);
            let v = Array2::from_shape_fn((4, 10), |_| rng.sample::<f64, _>(StandardNormal));
            let s = Roi { x_min: 0.0, x_max: 3.0, z_min: 0.0, z_max: 3.0 };
            let n = Roi { x_min: 0.0, x_max: 3.0, z_min: 5.0, z_max: 9.0 };
            let a = image_snr(&v, &g, &s, &n).unwrap();
            let b = image_snr(&(&v * alpha), &g, &s, &n).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn psl_drops_when_sidelobe_attenuated() {
        let p = [0.3, 0.1, 1.0, 0.1, 0.2];
        let q = [0.15, 0.1, 1.0, 0.1, 0.2];
        assert!(peak_sidelobe_level(&q).unwrap() < peak_sidelobe_level(&p).unwrap());
    }

    #[test]
    fn evaluate_batch() {
        let nx = 21;
        let nz = 41;
        let g = PixelGrid::new(Point::new(-10.0, 0.0), 1.0, 1.0, nx, nz).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = Array2::from_shape_fn((nx, nz), |(ix, iz)| {
            let x = g.x(ix);
            let z = g.z(iz);
            let blob = (-(x * x) / 4.0 - (z - 20.0).powi(2) / 8.0).exp() * (z * 1.3).cos() * 10.0;
            blob + 0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        let img = envelope(&BeamformedImage::new(g, values, Method::Sa).unwrap()).unwrap();
        let target = TargetSpec {
            label: "src".into(),
            position: Point::new(0.0, 20.0),
            signal_roi: Roi::around(Point::new(0.0, 20.0), 2.0, 2.0),
            noise_roi: Roi {
                x_min: -10.0,
                x_max: -6.0,
                z_min: 0.0,
                z_max: 10.0,
            },
            group: None,
        };
        let empty = TargetSpec {
            label: "nothing".into(),
            signal_roi: Roi::around(Point::new(50.0, 50.0), 1.0, 1.0),
            ..target.clone()
        };
        let r = evaluate_targets(&img, &[target.clone(), empty]).unwrap();
        let t = &r.targets[0];
        assert!(t.ar.is_ok() && t.lr.is_ok() && t.psl_db.is_ok() && t.snr_db.is_ok());
        let p = t.peak.as_ref().unwrap();
        assert!(p.x.abs() <= 1.0 && (p.z - 20.0).abs() <= 2.0);
        assert!(r.targets[1].peak.is_err());
        assert_eq!(r.csv_rows("img").lines().count(), 2);
        assert!(r
            .csv_rows("img")
            .lines()
            .nth(1)
            .unwrap()
            .ends_with("region is empty or outside the image"));
        assert!(r.to_key_value().contains("src.lr_mm"));

        assert!(evaluate_targets(&img, &[]).unwrap().targets.is_empty());
        let no_env = img.with_values(img.values.clone());
        assert!(evaluate_targets(&no_env, &[target]).is_err());
    }
}
