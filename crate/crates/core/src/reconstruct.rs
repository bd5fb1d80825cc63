//! Image formation.
//!
//! SA: every pixel is reconstructed by sampling each single-element channel of its
//! depth-dependent sub-aperture at the one-way travel time and summing. FUS: each
//! focused line is laid into its image column and time is mapped to depth.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::ops::Range;

use crate::domain::{ArrayGeometry, Medium, PixelGrid, Point};
use crate::error::{AeError, Result};
use crate::forward::{interpolate, ChannelDataSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sa,
    Fus,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sa => "SA",
            Method::Fus => "FUS",
        }
    }
}

/// Reconstructed image. `values[[ix, iz]]` is the pre-envelope estimate at
/// `grid.point(ix, iz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedImage {
    pub grid: PixelGrid,
    pub values: Array2<f64>,
    pub envelope: Option<Array2<f64>>,
    pub method: Method,
    pub f_number: Option<f64>,
    /// False where part of the reconstruction fell outside the recorded data
    /// (SA: a delayed sample past the record; FUS: a column with no line).
    pub coverage: Array2<bool>,
}

impl BeamformedImage {
    pub fn new(grid: PixelGrid, values: Array2<f64>, method: Method) -> Result<Self> {
        if values.dim() != grid.dim() {
            return Err(AeError::DimensionMismatch(format!(
                "values {:?} vs grid {:?}",
                values.dim(),
                grid.dim()
            )));
        }
        let coverage = Array2::from_elem(grid.dim(), true);
        Ok(BeamformedImage {
            grid,
            values,
            envelope: None,
            method,
            f_number: None,
            coverage,
        })
    }

    /// Same image with new pre-envelope values; any envelope is dropped.
    pub fn with_values(&self, values: Array2<f64>) -> BeamformedImage {
        BeamformedImage {
            values,
            envelope: None,
            ..self.clone()
        }
    }

    pub fn envelope_or_err(&self) -> Result<&Array2<f64>> {
        self.envelope
            .as_ref()
            .ok_or_else(|| AeError::param("envelope", "envelope has not been computed"))
    }
}

/// Per-pixel delayed single-element samples kept for coherence estimation.
///
/// Pixel `p = ix * nz + iz` owns `samples[offsets[p]..offsets[p + 1]]`, one entry per
/// element of its sub-aperture in ascending element order. Entries that fell outside
/// the record are stored as zero and excluded from `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureSamples {
    pub grid: PixelGrid,
    pub offsets: Vec<usize>,
    pub samples: Vec<f64>,
    pub valid: Vec<u16>,
    /// Window length `P` (0 when no windows were recorded).
    pub window_len: usize,
    /// `windows[(offsets[p] + k) * P + j]` is element `k` of pixel `p` at the `j`-th
    /// window instant (see [`WindowAlignment`]).
    pub windows: Vec<f64>,
}

impl ApertureSamples {
    pub fn num_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.samples[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn window(&self, p: usize) -> Option<&[f64]> {
        (self.window_len > 0).then(|| {
            &self.windows[self.offsets[p] * self.window_len..self.offsets[p + 1] * self.window_len]
        })
    }

    pub fn pixel_index(&self, ix: usize, iz: usize) -> usize {
        ix * self.grid.nz + iz
    }
}

/// `round(z / (f_number * pitch))` clamped to `[1, num_elements]`.
pub fn sub_aperture_size(z: f64, f_number: f64, pitch: f64, num_elements: usize) -> usize {
    let n = (z / (f_number * pitch)).round();
    if !(n >= 1.0) {
        return 1;
    }
    (n as usize).min(num_elements.max(1))
}

/// Contiguous elements nearest to `pixel.x`, centred on it and truncated at the
/// array ends (never shifted). A sub-aperture clamped to the full array uses every
/// element.
pub fn sub_aperture_elements(
    pixel: Point,
    geometry: &ArrayGeometry,
    f_number: f64,
) -> Range<usize> {
    let m = geometry.num_elements;
    let m_sa = sub_aperture_size(pixel.z, f_number, geometry.pitch, m);
    // once the sub-aperture has grown to the whole array it is the whole array
    if m_sa == m {
        return 0..m;
    }
    let u = (pixel.x - geometry.element_x(0)) / geometry.pitch;
    let start = (u - (m_sa as f64 - 1.0) / 2.0).round();
    let end = start + m_sa as f64;
    let lo = start.max(0.0).min(m as f64) as usize;
    let hi = end.max(0.0).min(m as f64) as usize;
    lo..hi.max(lo)
}

fn element_channels(data: &ChannelDataSet) -> Result<Vec<Option<(usize, f64)>>> {
    let mut map = vec![None; data.geometry.num_elements];
    for (ch, ev) in data.events.iter().enumerate() {
        let elem = ev.single_element().ok_or_else(|| {
            AeError::MethodMismatch(format!(
                "SA reconstruction needs single-element events; `{}` is not",
                ev.label
            ))
        })?;
        let delay = ev.delays[elem].unwrap_or(0.0);
        map[elem] = Some((ch, delay));
    }
    Ok(map)
}

/// Where the pulse-length window sits relative to a pixel's arrival time.
///
/// Simulated pulses are zero-phase, so the arrival time marks the middle of the
/// pulse and the centred window is the one covering the pulse itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowAlignment {
    /// `t_k, t_k + 1/fs, ..., t_k + (P-1)/fs`.
    Causal,
    /// Shifted back by `(P-1)/2` samples so the arrival sits mid-window.
    #[default]
    Centered,
}

/// Pulse-length window recorded alongside the delayed samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseWindow {
    pub len: usize,
    pub alignment: WindowAlignment,
}

impl PulseWindow {
    pub fn causal(len: usize) -> Self {
        PulseWindow {
            len,
            alignment: WindowAlignment::Causal,
        }
    }

    pub fn centered(len: usize) -> Self {
        PulseWindow {
            len,
            alignment: WindowAlignment::Centered,
        }
    }

    fn start_offset(&self) -> f64 {
        match self.alignment {
            WindowAlignment::Causal => 0.0,
            WindowAlignment::Centered => -((self.len.saturating_sub(1)) as f64) / 2.0,
        }
    }
}

/// Pixel-oriented delay-and-sum of single-element channel data with a fixed
/// F-number sub-aperture. With a window, the `P` samples around each arrival are
/// also kept for pulse-length coherence.
pub fn das_sa(
    data: &ChannelDataSet,
    grid: &PixelGrid,
    f_number: f64,
    window: Option<PulseWindow>,
) -> Result<(BeamformedImage, ApertureSamples)> {
    grid.validate()?;
    if !(f_number > 0.0) {
        return Err(AeError::param("f_number", "must be positive"));
    }
    let channels = element_channels(data)?;
    let geometry = &data.geometry;
    let c = data.medium.sos;
    let fs = data.sample_rate;
    let p_len = window.map_or(0, |w| w.len);
    let w_start = window.map_or(0.0, |w| w.start_offset());
    let nz = grid.nz;

    struct Column {
        values: Vec<f64>,
        covered: Vec<bool>,
        counts: Vec<usize>,
        samples: Vec<f64>,
        valid: Vec<u16>,
        windows: Vec<f64>,
    }

    let columns: Vec<Column> = (0..grid.nx)
        .into_par_iter()
        .map(|ix| {
            let mut col = Column {
                values: Vec::with_capacity(nz),
                covered: Vec::with_capacity(nz),
                counts: Vec::with_capacity(nz),
                samples: Vec::new(),
                valid: Vec::with_capacity(nz),
                windows: Vec::new(),
            };
            for iz in 0..nz {
                let px = grid.point(ix, iz);
                let elems = sub_aperture_elements(px, geometry, f_number);
                let mut sum = 0.0;
                let mut n_valid = 0u16;
                let mut all_in = true;
                for e in elems.clone() {
                    let sample = channels[e].and_then(|(ch, delay)| {
                        let t = delay + geometry.element_position(e).distance(&px) / c;
                        let row = data.channels.row(ch);
                        let trace = row.as_slice().expect("standard layout");
                        let pos = (t - data.t0) * fs;
                        let s = interpolate(trace, pos)?;
                        if p_len > 0 {
                            for j in 0..p_len {
                                col.windows.push(
                                    interpolate(trace, pos + w_start + j as f64).unwrap_or(0.0),
                                );
                            }
                        }
                        Some(s)
                    });
                    match sample {
                        Some(s) => {
                            sum += s;
                            n_valid += 1;
                            col.samples.push(s);
                        }
                        None => {
                            all_in = false;
                            col.samples.push(0.0);
                            col.windows.extend(std::iter::repeat_n(0.0, p_len));
                        }
                    }
                }
                col.values.push(sum);
                col.covered.push(all_in);
                col.counts.push(elems.len());
                col.valid.push(n_valid);
            }
            col
        })
        .collect();

    let mut values = Array2::zeros(grid.dim());
    let mut coverage = Array2::from_elem(grid.dim(), true);
    let mut offsets = Vec::with_capacity(grid.len() + 1);
    offsets.push(0);
    let mut samples = Vec::new();
    let mut valid = Vec::with_capacity(grid.len());
    let mut windows = Vec::new();
    for (ix, col) in columns.into_iter().enumerate() {
        for iz in 0..nz {
            values[[ix, iz]] = col.values[iz];
            coverage[[ix, iz]] = col.covered[iz];
            offsets.push(offsets.last().unwrap() + col.counts[iz]);
        }
        samples.extend(col.samples);
        valid.extend(col.valid);
        windows.extend(col.windows);
    }

    let mut image = BeamformedImage::new(grid.clone(), values, Method::Sa)?;
    image.f_number = Some(f_number);
    image.coverage = coverage;
    let aperture = ApertureSamples {
        grid: grid.clone(),
        offsets,
        samples,
        valid,
        window_len: p_len,
        windows,
    };
    Ok((image, aperture))
}

/// Lays each focused line into the grid column nearest its line centre, mapping
/// time to depth with `z = c (t - t_lead)`, where `t_lead` is the line's largest
/// transmit delay (the wave leaves the line centre at `t_lead`).
pub fn fus_line_map(
    data: &ChannelDataSet,
    grid: &PixelGrid,
    medium: &Medium,
) -> Result<BeamformedImage> {
    grid.validate()?;
    if !data.is_focused() {
        return Err(AeError::MethodMismatch(
            "FUS line mapping needs multi-element focused events".into(),
        ));
    }
    let c = medium.sos;
    // best (line index, lateral miss) per column
    let mut assigned: Vec<Option<(usize, f64)>> = vec![None; grid.nx];
    for (li, ev) in data.events.iter().enumerate() {
        let Some(xl) = ev.line_center(&data.geometry) else {
            continue;
        };
        let Some(ix) = grid.nearest_column(xl) else {
            continue;
        };
        let miss = (grid.x(ix) - xl).abs();
        if assigned[ix].is_none_or(|(_, m)| miss < m) {
            assigned[ix] = Some((li, miss));
        }
    }
    let mut values = Array2::zeros(grid.dim());
    let mut coverage = Array2::from_elem(grid.dim(), false);
    for (ix, slot) in assigned.iter().enumerate() {
        let Some((li, _)) = *slot else { continue };
        let t_lead = data.events[li].max_delay();
        for iz in 0..grid.nz {
            if let Some(v) = data.sample_at(li, grid.z(iz) / c + t_lead) {
                values[[ix, iz]] = v;
                coverage[[ix, iz]] = true;
            }
        }
    }
    let mut image = BeamformedImage::new(grid.clone(), values, Method::Fus)?;
    image.coverage = coverage;
    Ok(image)
}

/// Magnitude of the analytic signal of `x` (FFT-based Hilbert transform).
pub fn analytic_envelope(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    // one-sided spectrum: keep DC (and Nyquist), double positive frequencies
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= w;
    }
    inv.process(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

/// Fills the envelope: analytic-signal magnitude of every column along depth.
pub fn envelope(image: &BeamformedImage) -> Result<BeamformedImage> {
    let nz = image.grid.nz;
    if nz < 4 {
        return Err(AeError::DegenerateAxis(nz));
    }
    let mut planner = FftPlanner::new();
    let mut env = Array2::zeros(image.values.dim());
    for (src, mut dst) in image
        .values
        .axis_iter(Axis(0))
        .zip(env.axis_iter_mut(Axis(0)))
    {
        let col: Vec<f64> = src.iter().cloned().collect();
        for (d, v) in dst.iter_mut().zip(analytic_envelope(&col, &mut planner)) {
            *d = v;
        }
    }
    Ok(BeamformedImage {
        envelope: Some(env),
        ..image.clone()
    })
}
